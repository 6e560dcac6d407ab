#include "flowcausal/config_io.hpp"

#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "flowcausal/errors.hpp"
#include "flowcausal/text.hpp"

namespace flowcausal::config {

namespace {

void reject_unknown(const KeyValues& kv, const std::set<std::string>& known, const char* what) {
  for (const auto& [k, v] : kv) {
    if (!known.contains(k)) throw ConfigError(std::string(what) + ": unknown key '" + k + "'");
  }
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = text::parse_double(it->second);
  if (!v) throw ConfigError("config: '" + key + "' = '" + it->second + "' is not a number");
  return *v;
}

std::uint64_t get_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string_view s = text::trim(it->second);
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("config: '" + key + "' = '" + it->second + "' is not a non-negative integer");
  }
  return v;
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string_view s = text::trim(it->second);
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError("config: '" + key + "' = '" + it->second + "' is not a boolean");
}

std::vector<double> get_list(const KeyValues& kv, const std::string& key) {
  std::vector<double> out;
  for (auto field : text::split(kv.at(key), ',')) {
    auto v = text::parse_double(field);
    if (!v) throw ConfigError("config: '" + key + "' has non-numeric entry '" + std::string(field) + "'");
    out.push_back(*v);
  }
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += text::format_double(v[i]);
  }
  return s;
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key(text::trim(s.substr(0, eq)));
    std::string value(text::trim(s.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return parse_key_values(in, path.string());
}

train::TrainConfig train_config_from(const KeyValues& kv) {
  reject_unknown(kv,
                 {"batch_size", "max_iters", "lr", "adam_beta1", "adam_beta2", "adam_eps", "ipw", "seed",
                  "loss_log_every"},
                 "train config");
  train::TrainConfig c;
  c.batch_size = get_uint(kv, "batch_size", c.batch_size);
  c.max_iters = get_uint(kv, "max_iters", c.max_iters);
  c.lr = get_double(kv, "lr", c.lr);
  c.adam_beta1 = get_double(kv, "adam_beta1", c.adam_beta1);
  c.adam_beta2 = get_double(kv, "adam_beta2", c.adam_beta2);
  c.adam_eps = get_double(kv, "adam_eps", c.adam_eps);
  c.ipw = get_bool(kv, "ipw", c.ipw);
  c.seed = get_uint(kv, "seed", c.seed);
  c.loss_log_every = get_uint(kv, "loss_log_every", c.loss_log_every);
  c.validate();
  return c;
}

net::NetConfig net_config_from(const KeyValues& kv) {
  reject_unknown(kv, {"d_x", "hidden_dim", "n_res_blocks", "time_encoding", "n_frequencies", "init_seed"},
                 "net config");
  net::NetConfig c;
  c.d_x = get_uint(kv, "d_x", c.d_x);
  c.hidden_dim = get_uint(kv, "hidden_dim", c.hidden_dim);
  c.n_res_blocks = get_uint(kv, "n_res_blocks", c.n_res_blocks);
  c.n_frequencies = get_uint(kv, "n_frequencies", c.n_frequencies);
  c.init_seed = get_uint(kv, "init_seed", c.init_seed);
  if (auto it = kv.find("time_encoding"); it != kv.end()) {
    if (it->second == "scalar-append") {
      c.time_encoding = net::TimeEncoding::ScalarAppend;
    } else if (it->second == "sinusoidal") {
      c.time_encoding = net::TimeEncoding::Sinusoidal;
    } else {
      throw ConfigError("net config: time_encoding must be scalar-append or sinusoidal, got '" + it->second + "'");
    }
  }
  c.validate();
  return c;
}

ode::OdeConfig ode_config_from(const KeyValues& kv) {
  reject_unknown(kv, {"n_steps", "divergence_mode", "fd_sigma", "n_probes", "hutchinson_sigma", "probe_seed"},
                 "ode config");
  ode::OdeConfig c;
  c.n_steps = get_uint(kv, "n_steps", c.n_steps);
  c.fd_sigma = get_double(kv, "fd_sigma", c.fd_sigma);
  c.n_probes = get_uint(kv, "n_probes", c.n_probes);
  c.hutchinson_sigma = get_double(kv, "hutchinson_sigma", c.hutchinson_sigma);
  c.probe_seed = get_uint(kv, "probe_seed", c.probe_seed);
  if (auto it = kv.find("divergence_mode"); it != kv.end()) {
    if (it->second == "exact-fd") {
      c.divergence = ode::DivergenceMode::ExactFd;
    } else if (it->second == "hutchinson") {
      c.divergence = ode::DivergenceMode::Hutchinson;
    } else {
      throw ConfigError("ode config: divergence_mode must be exact-fd or hutchinson");
    }
  }
  c.validate();
  return c;
}

data::DgpConfig dgp_config_from(const KeyValues& kv) {
  reject_unknown(kv,
                 {"n", "d_x", "beta", "omega", "w_shift", "noise_sd", "propensity", "propensity_coefficients", "seed"},
                 "dgp config");
  const std::uint64_t n = get_uint(kv, "n", 2000);
  const std::uint64_t d_x = get_uint(kv, "d_x", 10);
  const std::uint64_t seed = get_uint(kv, "seed", 0);
  if (n < 1 || d_x < 1) throw ConfigError("dgp config: n and d_x must be >= 1");
  data::DgpConfig c = data::default_dgp_config(n, d_x, seed);
  if (kv.contains("beta")) c.beta = get_list(kv, "beta");
  if (kv.contains("w_shift")) {
    c.w_shift = get_list(kv, "w_shift");
    if (c.w_shift.size() == 1 && d_x > 1) c.w_shift.assign(d_x, c.w_shift.front());
  }
  c.omega = get_double(kv, "omega", c.omega);
  c.noise_sd = get_double(kv, "noise_sd", c.noise_sd);
  if (auto it = kv.find("propensity"); it != kv.end()) {
    if (it->second == "balanced") {
      c.propensity = {data::PropensitySpec::Kind::Balanced, {}};
    } else if (it->second == "logistic") {
      c.propensity.kind = data::PropensitySpec::Kind::Logistic;
    } else {
      throw ConfigError("dgp config: propensity must be balanced or logistic");
    }
  }
  if (kv.contains("propensity_coefficients")) {
    c.propensity.kind = data::PropensitySpec::Kind::Logistic;
    c.propensity.coefficients = get_list(kv, "propensity_coefficients");
  }
  c.validate();
  return c;
}

std::string to_text(const train::TrainConfig& c) {
  std::ostringstream os;
  os << "batch_size=" << c.batch_size << "\nmax_iters=" << c.max_iters << "\nlr=" << text::format_double(c.lr)
     << "\nadam_beta1=" << text::format_double(c.adam_beta1) << "\nadam_beta2=" << text::format_double(c.adam_beta2)
     << "\nadam_eps=" << text::format_double(c.adam_eps) << "\nipw=" << (c.ipw ? "true" : "false")
     << "\nseed=" << c.seed << "\nloss_log_every=" << c.loss_log_every << '\n';
  return os.str();
}

std::string to_text(const net::NetConfig& c) {
  std::ostringstream os;
  os << "d_x=" << c.d_x << "\nhidden_dim=" << c.hidden() << "\nn_res_blocks=" << c.n_res_blocks
     << "\ntime_encoding=" << (c.time_encoding == net::TimeEncoding::ScalarAppend ? "scalar-append" : "sinusoidal")
     << "\nn_frequencies=" << c.n_frequencies << "\ninit_seed=" << c.init_seed << '\n';
  return os.str();
}

std::string to_text(const data::DgpConfig& c) {
  std::ostringstream os;
  os << "n=" << c.n << "\nd_x=" << c.d_x << "\nbeta=" << join(c.beta) << "\nomega=" << text::format_double(c.omega)
     << "\nw_shift=" << join(c.w_shift) << "\nnoise_sd=" << text::format_double(c.noise_sd);
  if (c.propensity.kind == data::PropensitySpec::Kind::Balanced) {
    os << "\npropensity=balanced";
  } else {
    os << "\npropensity=logistic\npropensity_coefficients=" << join(c.propensity.coefficients);
  }
  os << "\nseed=" << c.seed << '\n';
  return os.str();
}

}  // namespace flowcausal::config
