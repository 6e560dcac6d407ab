#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "flowcausal/causal_api.hpp"
#include "flowcausal/cli.hpp"
#include "flowcausal/metrics.hpp"
#include "flowcausal/model_io.hpp"
#include "flowcausal/text.hpp"

namespace fs = std::filesystem;
namespace cli = flowcausal::cli;
namespace data = flowcausal::data;
namespace net = flowcausal::net;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

// Per-test scratch directory holding a small generated dataset and a
// briefly trained model.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() / ("flowcausal_cli_" + std::to_string(counter()++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  static int& counter() {
    static int c = 0;
    return c;
  }

  void make_data(std::size_t n = 120, std::size_t d_x = 3, std::uint64_t seed = 1) {
    write(dir / "dgp.cfg", "n=" + std::to_string(n) + "\nd_x=" + std::to_string(d_x) + "\n");
    REQUIRE(run({"generate", "--config", path("dgp.cfg"), "--out", path("train.csv"), "--seed",
                 std::to_string(seed)}).code == 0);
    REQUIRE(run({"generate", "--config", path("dgp.cfg"), "--out", path("test.csv"), "--seed",
                 std::to_string(seed + 100)}).code == 0);
  }

  void make_model(std::size_t iters = 30) {
    write(dir / "train.cfg", "max_iters=" + std::to_string(iters) + "\nbatch_size=64\n");
    REQUIRE(run({"train", "--data", path("train.csv"), "--train-config", path("train.cfg"), "--model-out",
                 path("model.json")}).code == 0);
  }

  // A model whose velocity field is identically zero.
  void make_zero_model(std::size_t d_x) {
    flowcausal::model_io::ModelFile m;
    m.net_config.d_x = d_x;
    m.net_config.hidden_dim = d_x + 1;
    m.params = net::zero_params(m.net_config);
    m.scaler = {std::vector<double>(d_x, 0.0), std::vector<double>(d_x, 1.0), 0.0, 1.0};
    flowcausal::model_io::save(m, path("zero.json"));
  }
};

double number(const std::string& s) { return flowcausal::text::parse_double(s).value(); }

}  // namespace

TEST_CASE("generate writes the oracle header and is reproducible") {
  Workspace w;
  write(w.dir / "dgp.cfg", "n=40\nd_x=4\nseed=5\n");
  REQUIRE(run({"generate", "--config", w.path("dgp.cfg"), "--out", w.path("a.csv")}).code == 0);
  REQUIRE(run({"generate", "--config", w.path("dgp.cfg"), "--out", w.path("b.csv")}).code == 0);
  const std::string a = slurp(w.dir / "a.csv");
  CHECK(lines(a).front() == "x0,x1,x2,x3,a,y,mu0,mu1,ycf");
  CHECK(a == slurp(w.dir / "b.csv"));
  CHECK(fs::exists(w.dir / "a.csv.manifest.json"));

  REQUIRE(run({"generate", "--config", w.path("dgp.cfg"), "--out", w.path("c.csv"), "--seed", "6"}).code == 0);
  CHECK(slurp(w.dir / "c.csv") != a);
}

TEST_CASE("generate line count follows n") {
  Workspace w;
  write(w.dir / "dgp.cfg", "n=747\nd_x=25\n");
  REQUIRE(run({"generate", "--config", w.path("dgp.cfg"), "--out", w.path("d.csv")}).code == 0);
  const auto ls = lines(slurp(w.dir / "d.csv"));
  CHECK(ls.size() == 748);
  CHECK(fields(ls.front()).size() == 25 + 5);
}

TEST_CASE("run manifest records the run") {
  Workspace w;
  write(w.dir / "dgp.cfg", "n=10\nd_x=2\n");
  REQUIRE(run({"generate", "--config", w.path("dgp.cfg"), "--out", w.path("m.csv"), "--seed", "3"}).code == 0);
  const auto doc = json::parse(slurp(w.dir / "m.csv.manifest.json"));
  CHECK(doc["command"] == "generate");
  CHECK(doc["seeds"]["seed"] == 3);
  CHECK(doc.contains("tool_version"));
  CHECK(doc.contains("wall_time_s"));
  CHECK(doc["outputs"][w.path("m.csv")] == cli::file_digest(w.path("m.csv")));
  CHECK(cli::file_digest(w.path("m.csv")).size() == 64);
}

TEST_CASE("generate error exits") {
  Workspace w;
  write(w.dir / "bad.cfg", "n=10\ncolour=blue\n");
  const auto bad = run({"generate", "--config", w.path("bad.cfg"), "--out", w.path("x.csv")});
  CHECK(bad.code == cli::kExitConfig);
  CHECK(bad.err.find("colour") != std::string::npos);
  CHECK(run({"generate", "--config", w.path("missing.cfg"), "--out", w.path("x.csv")}).code == cli::kExitIo);
  write(w.dir / "ok.cfg", "n=5\nd_x=1\n");
  CHECK(run({"generate", "--config", w.path("ok.cfg"), "--out", w.path("no/such/dir/x.csv")}).code == cli::kExitIo);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == cli::kExitConfig);
  CHECK(run({"frobnicate"}).code == cli::kExitConfig);
  CHECK(run({"generate", "--config", "a.cfg", "--out", "b.csv", "--colour", "blue"}).code == cli::kExitConfig);
  CHECK(run({"generate", "--config", "a.cfg"}).code == cli::kExitConfig);
  CHECK(run({"predict", "--model", "m", "--data", "d", "--mode", "guess", "--out", "o"}).code == cli::kExitConfig);
  CHECK(run({"--version"}).code == cli::kExitOk);
}

TEST_CASE("train with one iteration writes a model and one loss row") {
  Workspace w;
  w.make_data();
  write(w.dir / "t.cfg", "max_iters=1\n");
  const auto r = run({"train", "--data", w.path("train.csv"), "--train-config", w.path("t.cfg"), "--model-out",
                      w.path("one.json")});
  REQUIRE(r.code == 0);
  const auto m = flowcausal::model_io::load(w.path("one.json"));
  CHECK(m.train.iters_run == 1);
  CHECK(m.net_config.d_x == 3);
  const auto loss = lines(slurp(w.dir / "one.loss.csv"));
  REQUIRE(loss.size() == 2);
  CHECK(loss[0] == "iter,loss");
  CHECK(fields(loss[1])[0] == "1");
  CHECK(fs::exists(w.dir / "one.json.manifest.json"));
}

TEST_CASE("train rejects data without an outcome column") {
  Workspace w;
  write(w.dir / "noy.csv", "x0,x1,a\n0.1,0.2,1\n0.3,0.4,0\n");
  const auto r = run({"train", "--data", w.path("noy.csv"), "--model-out", w.path("m.json")});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("'y'") != std::string::npos);
}

TEST_CASE("train config errors and numeric failure") {
  Workspace w;
  w.make_data();
  write(w.dir / "net.cfg", "d_x=5\n");
  const auto mismatch = run({"train", "--data", w.path("train.csv"), "--net-config", w.path("net.cfg"),
                             "--model-out", w.path("m.json")});
  CHECK(mismatch.code == cli::kExitConfig);
  CHECK(mismatch.err.find("5") != std::string::npos);

  // A step size this large sends the parameters to overflow on the next pass.
  write(w.dir / "boom.cfg", "max_iters=5\nlr=1e300\n");
  const auto boom = run({"train", "--data", w.path("train.csv"), "--train-config", w.path("boom.cfg"),
                         "--model-out", w.path("boom.json")});
  CHECK(boom.code == cli::kExitNumeric);
  CHECK(boom.err.find("iteration") != std::string::npos);
}

TEST_CASE("train output is byte-identical across runs") {
  Workspace w;
  w.make_data();
  write(w.dir / "t.cfg", "max_iters=20\nseed=4\n");
  for (const char* name : {"m1.json", "m2.json"}) {
    REQUIRE(run({"train", "--data", w.path("train.csv"), "--train-config", w.path("t.cfg"), "--model-out",
                 w.path(name)}).code == 0);
  }
  CHECK(slurp(w.dir / "m1.json") == slurp(w.dir / "m2.json"));
  CHECK(slurp(w.dir / "m1.loss.csv") == slurp(w.dir / "m2.loss.csv"));
}

TEST_CASE("predict cf on the zero-field model returns the factual outcome") {
  Workspace w;
  w.make_data(30);
  w.make_zero_model(3);
  REQUIRE(run({"predict", "--model", w.path("zero.json"), "--data", w.path("test.csv"), "--mode", "cf", "--out",
               w.path("cf.csv")}).code == 0);
  const auto ds = data::load_csv(w.path("test.csv"));
  const auto ls = lines(slurp(w.dir / "cf.csv"));
  REQUIRE(ls.size() == ds.n() + 1);
  CHECK(ls[0] == "row,mode,value");
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto f = fields(ls[i + 1]);
    CHECK(f[0] == std::to_string(i));
    CHECK(f[1] == "cf");
    CHECK(number(f[2]) == ds.y[i]);
  }
}

TEST_CASE("predict po with one sample is deterministic") {
  Workspace w;
  w.make_data(20);
  w.make_model();
  for (const char* out : {"po1.csv", "po2.csv"}) {
    REQUIRE(run({"predict", "--model", w.path("model.json"), "--data", w.path("test.csv"), "--mode", "po",
                 "--n-samples", "1", "--seed", "8", "--out", w.path(out)}).code == 0);
  }
  const std::string a = slurp(w.dir / "po1.csv");
  CHECK(a == slurp(w.dir / "po2.csv"));
  const auto ls = lines(a);
  CHECK(ls[0] == "row,mode,value,logp");
  CHECK(ls.size() == 21);
}

TEST_CASE("predict cate matches direct library calls") {
  Workspace w;
  w.make_data(15);
  w.make_model();
  REQUIRE(run({"predict", "--model", w.path("model.json"), "--data", w.path("test.csv"), "--mode", "cate",
               "--n-samples", "20", "--seed", "5", "--out", w.path("cate.csv")}).code == 0);
  const auto file = flowcausal::model_io::load(w.path("model.json"));
  const flowcausal::causal::FlowModel model(file.net_config, file.params, file.scaler);
  const auto ds = data::load_csv(w.path("test.csv"));
  const auto ls = lines(slurp(w.dir / "cate.csv"));
  REQUIRE(ls.size() == ds.n() + 1);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double direct = flowcausal::causal::estimate_cate(model, ds.x_row(i), 20, flowcausal::metrics::row_seed(5, i));
    CHECK(number(fields(ls[i + 1])[2]) == direct);
  }
}

TEST_CASE("predict map and density modes") {
  Workspace w;
  w.make_data(10);
  w.make_model();
  for (const char* mode : {"map", "density"}) {
    const std::string out = w.path(std::string(mode) + ".csv");
    REQUIRE(run({"predict", "--model", w.path("model.json"), "--data", w.path("test.csv"), "--mode", mode,
                 "--n-samples", "10", "--out", out}).code == 0);
    const auto ls = lines(slurp(out));
    REQUIRE(ls.size() == 11);
    CHECK(ls[0] == "row,mode,value,logp");
    for (std::size_t i = 1; i < ls.size(); ++i) CHECK(std::isfinite(number(fields(ls[i])[3])));
  }
}

TEST_CASE("predict with mismatched dimensions names both") {
  Workspace w;
  w.make_data(10);
  w.make_zero_model(5);
  const auto r = run({"predict", "--model", w.path("zero.json"), "--data", w.path("test.csv"), "--mode", "cf",
                      "--out", w.path("o.csv")});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("5") != std::string::npos);
  CHECK(r.err.find("3") != std::string::npos);
  CHECK(run({"predict", "--model", w.path("nope.json"), "--data", w.path("test.csv"), "--mode", "cf", "--out",
             w.path("o.csv")}).code == cli::kExitIo);
  write(w.dir / "broken.json", "{\"format_version\": 1}");
  CHECK(run({"predict", "--model", w.path("broken.json"), "--data", w.path("test.csv"), "--mode", "cf", "--out",
             w.path("o.csv")}).code == cli::kExitConfig);
}

TEST_CASE("eval report matches the library and is reproducible") {
  Workspace w;
  w.make_data(60, 2);
  w.make_model(20);
  for (const char* out : {"r1.json", "r2.json"}) {
    REQUIRE(run({"eval", "--model", w.path("model.json"), "--train", w.path("train.csv"), "--test",
                 w.path("test.csv"), "--seed", "2", "--out", w.path(out)}).code == 0);
  }
  const std::string report = slurp(w.dir / "r1.json");
  CHECK(report == slurp(w.dir / "r2.json"));
  CHECK(slurp(w.dir / "r1.csv") == slurp(w.dir / "r2.csv"));
  CHECK(lines(slurp(w.dir / "r1.csv")).front() == "metric,in_sample,out_sample");

  const auto file = flowcausal::model_io::load(w.path("model.json"));
  const flowcausal::causal::FlowModel model(file.net_config, file.params, file.scaler);
  flowcausal::metrics::EvalOptions opt;
  opt.seed = 2;
  opt.model_id = cli::file_digest(w.path("model.json"));
  const auto direct = flowcausal::metrics::evaluate_all(model, data::load_csv(w.path("train.csv")),
                                                        data::load_csv(w.path("test.csv")), opt);
  CHECK(report == direct.to_json());
}

TEST_CASE("eval without truth columns marks metrics absent") {
  Workspace w;
  w.make_data(40, 2);
  w.make_model(10);
  auto strip = [&](const std::string& in, const std::string& out) {
    auto ds = data::load_csv(w.path(in));
    ds.mu0.reset();
    ds.mu1.reset();
    ds.ycf.reset();
    data::save_csv(ds, w.path(out));
  };
  strip("train.csv", "train_bare.csv");
  strip("test.csv", "test_bare.csv");
  REQUIRE(run({"eval", "--model", w.path("model.json"), "--train", w.path("train_bare.csv"), "--test",
               w.path("test_bare.csv"), "--out", w.path("bare.json")}).code == 0);
  const auto doc = json::parse(slurp(w.dir / "bare.json"));
  const auto absent = doc["absent"].get<std::vector<std::string>>();
  for (const char* name : {"kl", "pehe", "cf_rmse"}) {
    CHECK(std::find(absent.begin(), absent.end(), name) != absent.end());
    CHECK(doc["metrics"][name]["out"].is_null());
  }
  CHECK(doc["metrics"]["po_rmse"]["out"].is_number());
}

TEST_CASE("eval with folds reports mean and sd") {
  Workspace w;
  w.make_data(40, 2);
  w.make_model(5);
  REQUIRE(run({"eval", "--model", w.path("model.json"), "--train", w.path("train.csv"), "--test",
               w.path("test.csv"), "--folds", "2", "--out", w.path("folds.json")}).code == 0);
  const auto doc = json::parse(slurp(w.dir / "folds.json"));
  CHECK(doc["metadata"]["folds"] == 2);
  CHECK(doc["metrics"]["pehe"]["out"]["mean"].is_number());
  CHECK(doc["metrics"]["pehe"]["out"]["sd"].get<double>() >= 0.0);
  CHECK(lines(slurp(w.dir / "folds.csv")).front() == "metric,in_mean,in_sd,out_mean,out_sd");
  CHECK(run({"eval", "--model", w.path("model.json"), "--train", w.path("train.csv"), "--test",
             w.path("test.csv"), "--folds", "0", "--out", w.path("f0.json")}).code == cli::kExitConfig);
}

TEST_CASE("a3test writes finite reproducible values") {
  Workspace w;
  w.make_data(50, 2);
  w.make_model(10);
  for (const char* out : {"a1.json", "a2.json"}) {
    REQUIRE(run({"a3test", "--model", w.path("model.json"), "--data", w.path("test.csv"), "--seed", "4", "--out",
                 w.path(out)}).code == 0);
  }
  const std::string text = slurp(w.dir / "a1.json");
  CHECK(text == slurp(w.dir / "a2.json"));
  const auto doc = json::parse(text);
  CHECK(std::isfinite(doc["mmd_model"].get<double>()));
  CHECK(std::isfinite(doc["mmd_truth_baseline"].get<double>()));
  CHECK(doc["n"] == 50);
}
