#include "flowcausal/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowcausal/causal_api.hpp"
#include "flowcausal/cfm_train.hpp"
#include "flowcausal/config_io.hpp"
#include "flowcausal/errors.hpp"
#include "flowcausal/metrics.hpp"
#include "flowcausal/model_io.hpp"
#include "flowcausal/random.hpp"
#include "flowcausal/scm_data.hpp"
#include "flowcausal/text.hpp"

#ifndef FLOWCAUSAL_VERSION
#define FLOWCAUSAL_VERSION "0.0.0"
#endif

namespace flowcausal::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Collected by each command and written as the run manifest.
struct Manifest {
  std::string command;
  ordered_json configs = ordered_json::object();
  ordered_json seeds = ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

fs::path sibling(const fs::path& primary, const std::string& suffix) {
  fs::path p = primary;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

void write_manifest(const Manifest& m, const fs::path& primary, double wall_time_s) {
  ordered_json doc;
  doc["command"] = m.command;
  doc["tool_version"] = FLOWCAUSAL_VERSION;
  doc["configs"] = m.configs;
  doc["seeds"] = m.seeds;
  ordered_json in = ordered_json::object();
  for (const auto& p : m.inputs) in[p] = file_digest(p);
  ordered_json out = ordered_json::object();
  for (const auto& p : m.outputs) out[p] = file_digest(p);
  doc["inputs"] = in;
  doc["outputs"] = out;
  doc["wall_time_s"] = wall_time_s;
  write_text(fs::path(primary.string() + ".manifest.json"), doc.dump(2) + "\n");
}

data::DgpConfig load_dgp(const std::string& path) { return config::dgp_config_from(config::read_key_values(path)); }

causal::FlowModel flow_model_of(const model_io::ModelFile& m) {
  return causal::FlowModel(m.net_config, m.params, m.scaler);
}

void check_compatible(const causal::PotentialOutcomeModel& model, const data::CausalDataset& ds) {
  if (model.d_x() != ds.d_x()) {
    throw ConfigError("model expects d_x = " + std::to_string(model.d_x()) + " but data has d_x = " +
                      std::to_string(ds.d_x()));
  }
}

std::string loss_csv(const train::TrainReport& report) {
  std::string s = "iter,loss\n";
  for (const auto& [it, loss] : report.loss_history) s += std::to_string(it) + "," + text::format_double(loss) + "\n";
  return s;
}

struct Trained {
  model_io::ModelFile file;
  train::TrainReport report;
};

Trained fit(const data::CausalDataset& ds, const net::NetConfig& nc, const train::TrainConfig& tc) {
  auto [model_ds, scaler] = data::standardize(ds);
  train::TrainResult res = train::train(model_ds, nc, tc);
  Trained t;
  t.file.net_config = nc;
  t.file.net_config.hidden_dim = nc.hidden();
  t.file.params = std::move(res.params);
  t.file.scaler = std::move(scaler);
  t.file.train = {tc, res.report.iters_run, res.report.final_loss, ds.n()};
  t.report = std::move(res.report);
  return t;
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void cmd_generate(const GenerateArgs& g, Manifest& m) {
  data::DgpConfig cfg = load_dgp(g.config);
  if (g.seed) cfg.seed = *g.seed;
  const data::CausalDataset ds = data::generate_ihdp_like(cfg);
  data::save_csv(ds, g.out);
  m.configs["dgp"] = g.config;
  m.seeds["seed"] = cfg.seed;
  m.inputs = {g.config};
  m.outputs = {g.out};
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string net_config;
  std::string train_config;
  std::string model_out;
};

void cmd_train(const TrainArgs& t, Manifest& m) {
  const data::CausalDataset ds = data::load_csv(t.data);
  config::KeyValues net_kv;
  if (!t.net_config.empty()) net_kv = config::read_key_values(t.net_config);
  if (!net_kv.contains("d_x")) net_kv["d_x"] = std::to_string(ds.d_x());
  const net::NetConfig nc = config::net_config_from(net_kv);
  if (nc.d_x != ds.d_x()) {
    throw ConfigError("net config has d_x = " + std::to_string(nc.d_x) + " but data has d_x = " +
                      std::to_string(ds.d_x()));
  }
  const train::TrainConfig tc = t.train_config.empty() ? train::TrainConfig{}
                                                       : config::train_config_from(config::read_key_values(t.train_config));
  const Trained trained = fit(ds, nc, tc);
  model_io::save(trained.file, t.model_out);
  const fs::path loss_path = sibling(t.model_out, ".loss.csv");
  write_text(loss_path, loss_csv(trained.report));

  m.configs["net"] = t.net_config;
  m.configs["train"] = t.train_config;
  m.seeds["train_seed"] = tc.seed;
  m.seeds["init_seed"] = nc.init_seed;
  m.inputs = {t.data};
  if (!t.net_config.empty()) m.inputs.push_back(t.net_config);
  if (!t.train_config.empty()) m.inputs.push_back(t.train_config);
  m.outputs = {t.model_out, loss_path.string()};
}

// --- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string data;
  std::string mode;
  std::string out;
  std::size_t n_samples = causal::kDefaultMonteCarlo;
  std::uint64_t seed = 0;
};

void cmd_predict(const PredictArgs& p, Manifest& m) {
  const model_io::ModelFile file = model_io::load(p.model);
  const causal::FlowModel model = flow_model_of(file);
  const data::CausalDataset ds = data::load_csv(p.data);
  check_compatible(model, ds);
  if (p.n_samples < 1) throw ConfigError("--n-samples must be >= 1");

  const bool with_logp = p.mode == "po" || p.mode == "map" || p.mode == "density";
  std::ostringstream os;
  os << "row,mode,value" << (with_logp ? ",logp" : "") << '\n';
  auto line = [&](std::size_t row, double value, std::optional<double> logp) {
    os << row << ',' << p.mode << ',' << text::format_double(value);
    if (logp) os << ',' << text::format_double(*logp);
    os << '\n';
  };
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto x = ds.x_row(i);
    const int a = ds.a[i];
    const std::uint64_t s = metrics::row_seed(p.seed, i);
    if (p.mode == "po") {
      for (const auto& smp : causal::sample_po(model, x, a, p.n_samples, s).samples) line(i, smp.y, smp.log_p);
    } else if (p.mode == "cf") {
      line(i, causal::predict_counterfactual(model, ds.y[i], x, a), std::nullopt);
    } else if (p.mode == "cate") {
      line(i, causal::estimate_cate(model, x, p.n_samples, s), std::nullopt);
    } else if (p.mode == "map") {
      const double y = causal::map_po(model, x, a, p.n_samples, s);
      line(i, y, causal::log_density(model, y, x, a));
    } else {
      line(i, ds.y[i], causal::log_density(model, ds.y[i], x, a));
    }
  }
  write_text(p.out, os.str());
  m.seeds["seed"] = p.seed;
  m.configs["mode"] = p.mode;
  m.configs["n_samples"] = p.n_samples;
  m.inputs = {p.model, p.data};
  m.outputs = {p.out};
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string train;
  std::string test;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t folds = 1;
};

std::string fold_report_json(const std::vector<metrics::MetricsReport>& reports, std::uint64_t seed,
                             const std::string& model_id) {
  ordered_json doc;
  doc["metadata"] = {{"model_id", model_id}, {"folds", reports.size()}, {"seed", seed}};
  ordered_json ms = ordered_json::object();
  for (const auto& first : reports.front().metrics) {
    ordered_json entry;
    for (const char* side : {"in", "out"}) {
      std::vector<double> v;
      for (const auto& r : reports) {
        const auto* mv = r.find(first.name);
        const auto& val = std::string(side) == "in" ? mv->in_sample : mv->out_sample;
        if (val) v.push_back(*val);
      }
      if (v.size() != reports.size()) {
        entry[side] = nullptr;
        continue;
      }
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double e : v) ss += (e - mean) * (e - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      entry[side] = {{"mean", mean}, {"sd", sd}};
    }
    ms[first.name] = entry;
  }
  doc["metrics"] = ms;
  return doc.dump(2) + "\n";
}

std::string fold_report_csv(const std::string& json_text) {
  const auto doc = ordered_json::parse(json_text);
  std::string s = "metric,in_mean,in_sd,out_mean,out_sd\n";
  for (const auto& [name, entry] : doc["metrics"].items()) {
    s += name;
    for (const char* side : {"in", "out"}) {
      if (entry[side].is_null()) {
        s += ",NA,NA";
      } else {
        s += "," + text::format_double(entry[side]["mean"].get<double>()) + "," +
             text::format_double(entry[side]["sd"].get<double>());
      }
    }
    s += "\n";
  }
  return s;
}

void cmd_eval(const EvalArgs& e, Manifest& m) {
  const model_io::ModelFile file = model_io::load(e.model);
  const data::CausalDataset train_ds = data::load_csv(e.train);
  const data::CausalDataset test_ds = data::load_csv(e.test);
  const causal::FlowModel model = flow_model_of(file);
  check_compatible(model, train_ds);
  check_compatible(model, test_ds);
  if (e.folds < 1) throw ConfigError("--folds must be >= 1");

  metrics::EvalOptions opt;
  opt.seed = e.seed;
  opt.model_id = file_digest(e.model);
  const fs::path csv_path = sibling(e.out, ".csv");

  if (e.folds == 1) {
    const metrics::MetricsReport report = metrics::evaluate_all(model, train_ds, test_ds, opt);
    write_text(e.out, report.to_json());
    write_text(csv_path, report.to_csv());
  } else {
    // Pool both files and repeat split / train / evaluate over K folds, using
    // the network and training settings stored in the model file.
    std::vector<std::size_t> all(train_ds.n() + test_ds.n());
    std::iota(all.begin(), all.end(), 0);
    data::CausalDataset pooled = train_ds;
    {
      data::CausalDataset t = test_ds;
      const bool cf = pooled.ycf && t.ycf;
      const bool mu = pooled.has_mu() && t.has_mu();
      numkit::Matrix x(pooled.n() + t.n(), pooled.d_x());
      std::copy(pooled.x.data().begin(), pooled.x.data().end(), x.data().begin());
      std::copy(t.x.data().begin(), t.x.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(pooled.x.size()));
      pooled.x = std::move(x);
      pooled.a.insert(pooled.a.end(), t.a.begin(), t.a.end());
      pooled.y.insert(pooled.y.end(), t.y.begin(), t.y.end());
      auto join = [](std::optional<std::vector<double>>& dst, const std::optional<std::vector<double>>& src, bool keep) {
        if (!keep) {
          dst.reset();
          return;
        }
        dst->insert(dst->end(), src->begin(), src->end());
      };
      join(pooled.ycf, t.ycf, cf);
      join(pooled.mu0, t.mu0, mu);
      join(pooled.mu1, t.mu1, mu);
    }
    if (e.folds > pooled.n()) throw ConfigError("--folds exceeds the number of rows");
    Rng rng(e.seed);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<metrics::MetricsReport> reports;
    for (std::size_t k = 0; k < e.folds; ++k) {
      std::vector<std::size_t> tr, te;
      for (std::size_t p = 0; p < all.size(); ++p) (p % e.folds == k ? te : tr).push_back(all[p]);
      std::sort(tr.begin(), tr.end());
      std::sort(te.begin(), te.end());
      const data::CausalDataset fold_train = pooled.subset(tr);
      const data::CausalDataset fold_test = pooled.subset(te);
      const Trained t = fit(fold_train, file.net_config, file.train.config);
      const causal::FlowModel fold_model = flow_model_of(t.file);
      reports.push_back(metrics::evaluate_all(fold_model, fold_train, fold_test, opt));
    }
    const std::string json = fold_report_json(reports, e.seed, opt.model_id);
    write_text(e.out, json);
    write_text(csv_path, fold_report_csv(json));
  }
  m.seeds["seed"] = e.seed;
  m.configs["folds"] = e.folds;
  m.inputs = {e.model, e.train, e.test};
  m.outputs = {e.out, csv_path.string()};
}

// --- a3test -----------------------------------------------------------------

struct A3Args {
  std::string model;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
};

void cmd_a3test(const A3Args& a, Manifest& m) {
  const model_io::ModelFile file = model_io::load(a.model);
  const causal::FlowModel model = flow_model_of(file);
  const data::CausalDataset ds = data::load_csv(a.data);
  check_compatible(model, ds);
  const metrics::MmdResult r = metrics::mmd_a3_test(model, ds, a.seed);
  ordered_json doc = {{"mmd_model", r.mmd_model}, {"mmd_truth_baseline", r.mmd_truth_baseline}, {"n", ds.n()},
                      {"seed", a.seed}};
  write_text(a.out, doc.dump(2) + "\n");
  m.seeds["seed"] = a.seed;
  m.inputs = {a.model, a.data};
  m.outputs = {a.out};
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactual inference with conditional flow matching", "flowcausal"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FLOWCAUSAL_VERSION);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic dataset with oracle columns");
  g->add_option("--config", gen.config, "DGP key=value config")->required();
  g->add_option("--out", gen.out, "Output CSV")->required();
  g->add_option("--seed", gen.seed, "Overrides the config seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a velocity network");
  t->add_option("--data", tr.data, "Training CSV")->required();
  t->add_option("--net-config", tr.net_config, "Network key=value config (defaults if omitted)");
  t->add_option("--train-config", tr.train_config, "Training key=value config (defaults if omitted)");
  t->add_option("--model-out", tr.model_out, "Model file to write")->required();

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Per-row causal queries");
  p->add_option("--model", pr.model)->required();
  p->add_option("--data", pr.data)->required();
  p->add_option("--mode", pr.mode)->required()->check(CLI::IsMember({"po", "cf", "cate", "map", "density"}));
  p->add_option("--out", pr.out)->required();
  p->add_option("--n-samples", pr.n_samples, "Samples per row (po, map) or per arm (cate)")->capture_default_str();
  p->add_option("--seed", pr.seed)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics report on train and test data");
  e->add_option("--model", ev.model)->required();
  e->add_option("--train", ev.train)->required();
  e->add_option("--test", ev.test)->required();
  e->add_option("--out", ev.out, "Report JSON; a .csv with the same stem is written too")->required();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--folds", ev.folds, "K > 1 pools train and test and runs K-fold split/train/eval")
      ->capture_default_str();

  A3Args a3;
  auto* a = app.add_subcommand("a3test", "Latent independence check via joint MMD");
  a->add_option("--model", a3.model)->required();
  a->add_option("--data", a3.data)->required();
  a->add_option("--out", a3.out)->required();
  a->add_option("--seed", a3.seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const auto started = std::chrono::steady_clock::now();
  Manifest manifest;
  std::string primary;
  try {
    if (*g) {
      manifest.command = "generate";
      cmd_generate(gen, manifest);
      primary = gen.out;
    } else if (*t) {
      manifest.command = "train";
      cmd_train(tr, manifest);
      primary = tr.model_out;
    } else if (*p) {
      manifest.command = "predict";
      cmd_predict(pr, manifest);
      primary = pr.out;
    } else if (*e) {
      manifest.command = "eval";
      cmd_eval(ev, manifest);
      primary = ev.out;
    } else {
      manifest.command = "a3test";
      cmd_a3test(a3, manifest);
      primary = a3.out;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_manifest(manifest, primary, wall);
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace flowcausal::cli
