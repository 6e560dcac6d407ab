#include "flowcausal/scm_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"
#include "flowcausal/text.hpp"

namespace flowcausal::data {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_length(const char* what, std::size_t got, std::size_t n) {
  if (got != n) {
    throw ContractError(std::string("CausalDataset: ") + what + " has length " + std::to_string(got) +
                        ", expected " + std::to_string(n));
  }
}

std::vector<double> pick(const std::vector<double>& v, std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v.at(r));
  return out;
}

}  // namespace

void CausalDataset::validate() const {
  const std::size_t rows = n();
  check_length("x", x.rows(), rows);
  check_length("a", a.size(), rows);
  if (mu0) check_length("mu0", mu0->size(), rows);
  if (mu1) check_length("mu1", mu1->size(), rows);
  if (ycf) check_length("ycf", ycf->size(), rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (a[i] != 0 && a[i] != 1) {
      throw ContractError("CausalDataset: treatment at row " + std::to_string(i) + " is " +
                          std::to_string(a[i]));
    }
  }
}

CausalDataset CausalDataset::subset(std::span<const std::size_t> rows) const {
  CausalDataset out;
  out.name = name;
  out.seed = seed;
  out.x = Matrix(rows.size(), d_x());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = x.row(rows[k]);
    std::copy(src.begin(), src.end(), out.x.data().begin() + static_cast<std::ptrdiff_t>(k * d_x()));
    out.a.push_back(a.at(rows[k]));
  }
  out.y = pick(y, rows);
  if (mu0) out.mu0 = pick(*mu0, rows);
  if (mu1) out.mu1 = pick(*mu1, rows);
  if (ycf) out.ycf = pick(*ycf, rows);
  return out;
}

void DgpConfig::validate() const {
  if (n < 1) throw ConfigError("DgpConfig: n must be >= 1");
  if (d_x < 1) throw ConfigError("DgpConfig: d_x must be >= 1");
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) throw ConfigError("DgpConfig: noise_sd must be > 0");
  if (beta.size() != d_x) {
    throw ConfigError("DgpConfig: beta has " + std::to_string(beta.size()) + " entries, d_x is " +
                      std::to_string(d_x));
  }
  if (w_shift.size() != d_x) {
    throw ConfigError("DgpConfig: w_shift has " + std::to_string(w_shift.size()) + " entries, d_x is " +
                      std::to_string(d_x));
  }
  if (propensity.kind == PropensitySpec::Kind::Logistic && propensity.coefficients.size() != d_x) {
    throw ConfigError("DgpConfig: propensity coefficients must have d_x entries");
  }
}

DgpConfig default_dgp_config(std::size_t n, std::size_t d_x, std::uint64_t seed) {
  static constexpr double kPattern[] = {0.4, 0.3, 0.2, 0.1, 0.0, 0.0};
  static constexpr double kBetaNorm = 0.6;
  static constexpr double kAverageEffect = 4.0;

  DgpConfig cfg;
  cfg.n = n;
  cfg.d_x = d_x;
  cfg.seed = seed;
  cfg.beta.resize(d_x);
  for (std::size_t j = 0; j < d_x; ++j) cfg.beta[j] = kPattern[j % std::size(kPattern)];
  const double norm = std::sqrt(dot(cfg.beta, cfg.beta));  // > 0, pattern starts at 0.4
  for (double& b : cfg.beta) b *= kBetaNorm / norm;
  cfg.w_shift.assign(d_x, 0.5);

  // E[x beta] = 0 and E[exp((x + W) beta)] = exp(W beta + |beta|^2 / 2) for x ~ N(0, I).
  const double wb = dot(cfg.w_shift, cfg.beta);
  const double bb = dot(cfg.beta, cfg.beta);
  cfg.omega = -kAverageEffect - std::exp(wb + 0.5 * bb);

  cfg.propensity.kind = PropensitySpec::Kind::Logistic;
  cfg.propensity.coefficients = cfg.beta;
  return cfg;
}

double structural_mean(const DgpConfig& cfg, std::span<const double> x, int a) {
  if (a == 1) return dot(x, cfg.beta) - cfg.omega;
  double s = 0.0;
  for (std::size_t j = 0; j < cfg.d_x; ++j) s += (x[j] + cfg.w_shift[j]) * cfg.beta[j];
  return std::exp(s);
}

namespace {

CausalDataset generate(const DgpConfig& cfg, std::span<const int> forced) {
  cfg.validate();
  if (!forced.empty() && forced.size() != cfg.n) {
    throw ContractError("generate_under_intervention: " + std::to_string(forced.size()) +
                        " treatments for n = " + std::to_string(cfg.n));
  }
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  CausalDataset ds;
  ds.name = "ihdp_like";
  ds.seed = cfg.seed;
  ds.x = Matrix(cfg.n, cfg.d_x);
  ds.a.resize(cfg.n);
  ds.y.resize(cfg.n);
  std::vector<double> mu0(cfg.n), mu1(cfg.n), ycf(cfg.n);

  for (std::size_t i = 0; i < cfg.n; ++i) {
    // Draw order per row is fixed (x, treatment uniform, noise) so that
    // interventions reuse exactly the same x and noise.
    for (std::size_t j = 0; j < cfg.d_x; ++j) ds.x(i, j) = normal(rng);
    auto xi = ds.x.row(i);

    double p = 0.5;
    if (cfg.propensity.kind == PropensitySpec::Kind::Logistic) {
      p = std::clamp(logistic(dot(xi, cfg.propensity.coefficients)), PropensityModel::kLower,
                     PropensityModel::kUpper);
    }
    const double u = uniform(rng);
    const double eps = cfg.noise_sd * normal(rng);
    const int a = forced.empty() ? (u < p ? 1 : 0) : forced[i];

    mu0[i] = structural_mean(cfg, xi, 0);
    mu1[i] = structural_mean(cfg, xi, 1);
    ds.a[i] = a;
    ds.y[i] = (a == 1 ? mu1[i] : mu0[i]) + eps;
    ycf[i] = oracle_counterfactual(xi, a, ds.y[i], cfg);
    if (!std::isfinite(mu0[i]) || !std::isfinite(mu1[i]) || !std::isfinite(ds.y[i]) || !std::isfinite(ycf[i])) {
      throw NumericError("generate_ihdp_like: non-finite outcome at row " + std::to_string(i));
    }
  }
  ds.mu0 = std::move(mu0);
  ds.mu1 = std::move(mu1);
  ds.ycf = std::move(ycf);
  return ds;
}

}  // namespace

CausalDataset generate_ihdp_like(const DgpConfig& cfg) { return generate(cfg, {}); }

CausalDataset generate_under_intervention(const DgpConfig& cfg, std::span<const int> treatments) {
  if (treatments.empty() && cfg.n > 0) {
    throw ContractError("generate_under_intervention: empty treatment vector");
  }
  return generate(cfg, treatments);
}

double oracle_counterfactual(const StructuralFn& f, std::span<const double> x, int a, double y) {
  const double noise = y - f(x, a);
  return f(x, 1 - a) + noise;
}

double oracle_counterfactual(std::span<const double> x, int a, double y, const DgpConfig& cfg) {
  return oracle_counterfactual([&cfg](std::span<const double> xr, int arm) { return structural_mean(cfg, xr, arm); },
                               x, a, y);
}

// ---------------------------------------------------------------------------
// CSV

CausalDataset read_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": missing header row");
  std::vector<std::string> header;
  for (auto f : text::split(line, ',')) header.emplace_back(text::trim(f));

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) throw SchemaError(source + ": duplicate column '" + header[i] + "'");
  }
  std::size_t d_x = 0;
  while (col.contains("x" + std::to_string(d_x))) ++d_x;
  if (d_x == 0) throw SchemaError(source + ": missing mandatory column 'x0'");
  for (const auto& name : header) {
    if (name.size() > 1 && name[0] == 'x' && std::all_of(name.begin() + 1, name.end(), ::isdigit)) {
      const std::size_t idx = std::stoul(name.substr(1));
      if (idx >= d_x) throw SchemaError(source + ": missing mandatory column 'x" + std::to_string(d_x) + "'");
    }
  }
  for (const char* required : {"a", "y"}) {
    if (!col.contains(required)) throw SchemaError(source + ": missing mandatory column '" + std::string(required) + "'");
  }
  auto optional_col = [&](const char* name) -> std::optional<std::size_t> {
    auto it = col.find(name);
    if (it == col.end()) return std::nullopt;
    return it->second;
  };
  const auto c_mu0 = optional_col("mu0");
  const auto c_mu1 = optional_col("mu1");
  const auto c_ycf = optional_col("ycf");

  CausalDataset ds;
  ds.name = source;
  std::vector<double> xs;
  std::vector<double> mu0, mu1, ycf;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    ++row;
    auto fields = text::split(line, ',');
    if (fields.size() != header.size()) {
      throw SchemaError(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t c) {
      auto v = text::parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw ValueError(source + ": row " + std::to_string(row) + ", column '" + header[c] + "': '" +
                         std::string(fields[c]) + "' is not a finite number");
      }
      return *v;
    };
    for (std::size_t j = 0; j < d_x; ++j) xs.push_back(number(col["x" + std::to_string(j)]));
    const double a = number(col["a"]);
    if (a != 0.0 && a != 1.0) {
      throw ValueError(source + ": row " + std::to_string(row) + ": treatment a = " + std::string(text::trim(fields[col["a"]])) +
                       " is not 0 or 1");
    }
    ds.a.push_back(static_cast<int>(a));
    ds.y.push_back(number(col["y"]));
    if (c_mu0) mu0.push_back(number(*c_mu0));
    if (c_mu1) mu1.push_back(number(*c_mu1));
    if (c_ycf) ycf.push_back(number(*c_ycf));
  }
  ds.x = Matrix(ds.y.size(), d_x, std::move(xs));
  if (c_mu0) ds.mu0 = std::move(mu0);
  if (c_mu1) ds.mu1 = std::move(mu1);
  if (c_ycf) ds.ycf = std::move(ycf);
  return ds;
}

CausalDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  auto ds = read_csv(in, path.string());
  ds.name = path.stem().string();
  return ds;
}

void write_csv(const CausalDataset& ds, std::ostream& out) {
  ds.validate();
  for (std::size_t j = 0; j < ds.d_x(); ++j) out << 'x' << j << ',';
  out << "a,y";
  if (ds.mu0) out << ",mu0";
  if (ds.mu1) out << ",mu1";
  if (ds.ycf) out << ",ycf";
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (double v : ds.x.row(i)) out << text::format_double(v) << ',';
    out << ds.a[i] << ',' << text::format_double(ds.y[i]);
    if (ds.mu0) out << ',' << text::format_double((*ds.mu0)[i]);
    if (ds.mu1) out << ',' << text::format_double((*ds.mu1)[i]);
    if (ds.ycf) out << ',' << text::format_double((*ds.ycf)[i]);
    out << '\n';
  }
}

void save_csv(const CausalDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(ds, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Split / standardize

Split split(const CausalDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ContractError("split: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.n();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test >= n) {
    throw ContractError("split: n = " + std::to_string(n) + " with fraction " + text::format_double(test_fraction) +
                        " leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Split out;
  out.test_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  std::sort(out.train_rows.begin(), out.train_rows.end());
  out.train = ds.subset(out.train_rows);
  out.test = ds.subset(out.test_rows);
  return out;
}

namespace {

constexpr double kSdFloor = 1e-12;

std::pair<double, double> mean_sd(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  double sd = std::sqrt(s / static_cast<double>(v.size()));
  if (sd < kSdFloor) return {0.0, 1.0};
  return {m, sd};
}

template <class F>
void transform_outcomes(CausalDataset& ds, F f) {
  for (double& v : ds.y) v = f(v);
  for (auto* col : {&ds.mu0, &ds.mu1, &ds.ycf}) {
    if (*col) {
      for (double& v : **col) v = f(v);
    }
  }
}

}  // namespace

CausalDataset Scaler::apply(const CausalDataset& ds) const {
  if (ds.d_x() != x_mean.size()) {
    throw DimensionError("Scaler::apply: dataset has d_x = " + std::to_string(ds.d_x()) + ", scaler has " +
                         std::to_string(x_mean.size()));
  }
  CausalDataset out = ds;
  for (std::size_t i = 0; i < out.n(); ++i)
    for (std::size_t j = 0; j < out.d_x(); ++j) out.x(i, j) = (out.x(i, j) - x_mean[j]) / x_sd[j];
  transform_outcomes(out, [this](double v) { return y_to_model(v); });
  return out;
}

CausalDataset Scaler::invert(const CausalDataset& ds) const {
  if (ds.d_x() != x_mean.size()) throw DimensionError("Scaler::invert: width mismatch");
  CausalDataset out = ds;
  for (std::size_t i = 0; i < out.n(); ++i)
    for (std::size_t j = 0; j < out.d_x(); ++j) out.x(i, j) = out.x(i, j) * x_sd[j] + x_mean[j];
  transform_outcomes(out, [this](double v) { return y_from_model(v); });
  return out;
}

std::vector<double> Scaler::x_to_model(std::span<const double> x) const {
  if (x.size() != x_mean.size()) {
    throw DimensionError("Scaler: covariate vector has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(x_mean.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - x_mean[j]) / x_sd[j];
  return out;
}

std::pair<CausalDataset, Scaler> standardize(const CausalDataset& ds) {
  if (ds.n() < 2) throw ContractError("standardize: need at least 2 rows");
  Scaler s;
  std::vector<double> column(ds.n());
  for (std::size_t j = 0; j < ds.d_x(); ++j) {
    for (std::size_t i = 0; i < ds.n(); ++i) column[i] = ds.x(i, j);
    auto [m, sd] = mean_sd(column);
    s.x_mean.push_back(m);
    s.x_sd.push_back(sd);
  }
  std::tie(s.y_mean, s.y_sd) = mean_sd(ds.y);
  return {s.apply(ds), s};
}

// ---------------------------------------------------------------------------
// Propensity

double PropensityModel::operator()(std::span<const double> x) const {
  if (x.size() != coefficients_.size()) throw DimensionError("PropensityModel: covariate width mismatch");
  return std::clamp(logistic(intercept_ + dot(x, coefficients_)), kLower, kUpper);
}

PropensityModel fit_propensity(const CausalDataset& ds, PropensityFitInfo* info) {
  static constexpr double kTolerance = 1e-6;
  static constexpr std::size_t kMaxSteps = 10000;

  const std::size_t n = ds.n();
  const std::size_t d = ds.d_x();
  const auto treated = static_cast<std::size_t>(std::count(ds.a.begin(), ds.a.end(), 1));
  if (treated == 0 || treated == n) {
    throw ContractError("fit_propensity: only one treatment arm present (overlap violated)");
  }

  // Step 1/L with L = trace(Z^T Z / n) / 4 >= the Lipschitz constant of the
  // mean log-loss gradient, Z = [1, X].
  double trace = 1.0;
  for (double v : ds.x.data()) trace += v * v / static_cast<double>(n);
  const double step = 4.0 / trace;

  std::vector<double> w(d + 1, 0.0);  // w[0] is the intercept
  std::vector<double> grad(d + 1);
  std::size_t it = 0;
  double gnorm = 0.0;
  for (; it < kMaxSteps; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = ds.x.row(i);
      const double p = logistic(w[0] + dot(xi, std::span<const double>(w).subspan(1)));
      const double r = (p - ds.a[i]) / static_cast<double>(n);
      grad[0] += r;
      for (std::size_t j = 0; j < d; ++j) grad[j + 1] += r * xi[j];
    }
    gnorm = std::sqrt(dot(grad, grad));
    if (gnorm < kTolerance) break;
    for (std::size_t j = 0; j <= d; ++j) w[j] -= step * grad[j];
  }
  if (info) {
    info->steps = it;
    info->gradient_norm = gnorm;
  }
  return PropensityModel(w[0], std::vector<double>(w.begin() + 1, w.end()));
}

}  // namespace flowcausal::data
