#include "flowcausal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"
#include "flowcausal/text.hpp"

namespace flowcausal::metrics {

namespace {

void check_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw ContractError(std::string(what) + ": empty input");
}

double rbf(double sq_dist, double sigma) { return std::exp(-sq_dist / (2.0 * sigma * sigma)); }

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Half the median distance; a fully degenerate pool falls back to unit width.
double bandwidth_from(double median) { return median > 0.0 ? 0.5 * median : 1.0; }

// Seeds for the separate random streams of one evaluation.
constexpr std::uint64_t kKlStream = 1ull << 40;
constexpr std::uint64_t kMmdStream = (1ull << 40) + 1;

}  // namespace

std::uint64_t row_seed(std::uint64_t seed, std::size_t row) {
  Rng rng = substream(seed, row);
  return rng();
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_same_length(pred, truth, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double pehe(std::span<const double> tau_hat, std::span<const double> tau) {
  check_same_length(tau_hat, tau, "pehe");
  return rmse(tau_hat, tau);
}

double wasserstein1(std::span<const double> u, std::span<const double> v) {
  if (u.empty() || v.empty()) throw ContractError("wasserstein1: empty sample");
  std::vector<double> su(u.begin(), u.end());
  std::vector<double> sv(v.begin(), v.end());
  std::sort(su.begin(), su.end());
  std::sort(sv.begin(), sv.end());
  const std::size_t n = su.size();
  const std::size_t m = sv.size();
  if (n == m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(su[i] - sv[i]);
    return s / static_cast<double>(n);
  }
  // Integral over p in (0, 1) of |F_u^{-1}(p) - F_v^{-1}(p)|. The quantile
  // functions step at i/n and j/m; i*m vs j*n compares breakpoints exactly.
  double total = 0.0;
  double prev = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n && j < m) {
    const std::size_t ui = (i + 1) * m;
    const std::size_t vj = (j + 1) * n;
    const double next = static_cast<double>(std::min(ui, vj)) / static_cast<double>(n * m);
    total += (next - prev) * std::abs(su[i] - sv[j]);
    prev = next;
    if (ui <= vj) ++i;
    if (vj <= ui) ++j;
  }
  return total;
}

KlEstimate kl_vs_gaussian_truth(const causal::PotentialOutcomeModel& model, std::span<const KlRow> rows,
                                std::size_t n_mc, std::uint64_t seed, double truth_sd) {
  if (rows.empty()) throw ContractError("kl_vs_gaussian_truth: no rows");
  if (n_mc < 2) throw ContractError("kl_vs_gaussian_truth: n_mc must be >= 2");
  if (!(truth_sd > 0.0)) throw ContractError("kl_vs_gaussian_truth: truth_sd must be > 0");
  double sum_means = 0.0;
  double sum_var_of_mean = 0.0;
  const double log_sd = std::log(truth_sd);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto set = model.sample_po(rows[r].x, rows[r].a, n_mc, row_seed(seed, r));
    double s = 0.0;
    double s2 = 0.0;
    for (const auto& smp : set.samples) {
      const double z = (smp.y - rows[r].mu) / truth_sd;
      const double d = smp.log_p - (ode::standard_normal_logpdf(z) - log_sd);
      s += d;
      s2 += d * d;
    }
    const double k = static_cast<double>(n_mc);
    const double mean = s / k;
    const double var = std::max(0.0, (s2 - k * mean * mean) / (k - 1.0));
    sum_means += mean;
    sum_var_of_mean += var / k;
  }
  const double r = static_cast<double>(rows.size());
  return {sum_means / r, std::sqrt(sum_var_of_mean) / r};
}

double median_pairwise_distance(std::span<const double> values) {
  if (values.size() < 2) throw ContractError("median_pairwise_distance: need at least 2 values");
  std::vector<double> d;
  d.reserve(values.size() * (values.size() - 1) / 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) d.push_back(std::abs(values[i] - values[j]));
  }
  return median_of(d);
}

MmdKernel::MmdKernel(const numkit::Matrix& x, std::span<const int> a) : n_(x.rows()) {
  if (a.size() != n_) throw DimensionError("MmdKernel: x has " + std::to_string(n_) + " rows, a has " +
                                           std::to_string(a.size()));
  if (n_ < 2) throw ContractError("MmdKernel: need at least 2 rows");
  std::vector<double> sq(n_ * n_, 0.0);
  std::vector<double> dist;
  dist.reserve(n_ * (n_ - 1) / 2);
  for (std::size_t i = 0; i < n_; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = i + 1; j < n_; ++j) {
      const auto xj = x.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) s += (xi[k] - xj[k]) * (xi[k] - xj[k]);
      sq[i * n_ + j] = s;
      dist.push_back(std::sqrt(s));
    }
  }
  sigma_x_ = bandwidth_from(median_of(dist));
  kxa_.assign(n_ * n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double k = a[i] == a[j] ? rbf(sq[i * n_ + j], sigma_x_) : 0.0;
      kxa_[i * n_ + j] = k;
      kxa_[j * n_ + i] = k;
    }
  }
}

double MmdKernel::mmd2(std::span<const double> z_u, std::span<const double> z_v) const {
  if (z_u.size() != n_ || z_v.size() != n_) throw DimensionError("MmdKernel::mmd2: latent length mismatch");
  std::vector<double> pool(z_u.begin(), z_u.end());
  pool.insert(pool.end(), z_v.begin(), z_v.end());
  const double sz = bandwidth_from(median_pairwise_distance(pool));
  auto kz = [sz](double p, double q) { return rbf((p - q) * (p - q), sz); };

  // Ordered pairs (i, j) and (j, i) are folded into one term.
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double kxa = kxa_[i * n_ + j];
      if (kxa == 0.0) continue;
      s += kxa * (kz(z_u[i], z_u[j]) + kz(z_v[i], z_v[j]) - kz(z_u[i], z_v[j]) - kz(z_u[j], z_v[i]));
    }
  }
  const double n = static_cast<double>(n_);
  return 2.0 * s / (n * (n - 1.0));
}

MmdResult mmd_a3_test(const causal::PotentialOutcomeModel& model, const data::CausalDataset& ds, std::uint64_t seed) {
  if (ds.n() < 2) throw ContractError("mmd_a3_test: need at least 2 rows");
  const MmdKernel kernel(ds.x, ds.a);
  std::vector<double> z(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) z[i] = model.encode(ds.y[i], ds.x_row(i), ds.a[i]);
  Rng rng(seed);
  const std::vector<double> z1 = standard_normals(rng, ds.n());
  const std::vector<double> z2 = standard_normals(rng, ds.n());
  return {kernel.mmd2(z, z1), kernel.mmd2(z1, z2)};
}

std::vector<double> mmd_truth_baselines(const data::CausalDataset& ds, std::size_t repetitions, std::uint64_t seed) {
  if (ds.n() < 2) throw ContractError("mmd_truth_baselines: need at least 2 rows");
  const MmdKernel kernel(ds.x, ds.a);
  std::vector<double> out;
  out.reserve(repetitions);
  for (std::size_t r = 0; r < repetitions; ++r) {
    Rng rng = substream(seed, r);
    const std::vector<double> z1 = standard_normals(rng, ds.n());
    const std::vector<double> z2 = standard_normals(rng, ds.n());
    out.push_back(kernel.mmd2(z1, z2));
  }
  return out;
}

std::vector<std::pair<std::string, std::optional<double>>> evaluate_dataset(
    const causal::PotentialOutcomeModel& model, const data::CausalDataset& ds, const EvalOptions& opt) {
  ds.validate();
  if (ds.d_x() != model.d_x()) {
    throw DimensionError("evaluate: dataset has d_x = " + std::to_string(ds.d_x()) + ", model expects " +
                         std::to_string(model.d_x()));
  }
  const std::size_t n = ds.n();
  const bool has_mu = ds.has_mu();
  const bool has_cf = ds.ycf.has_value();

  std::vector<double> po_pred, map_pred, po_truth;
  std::vector<double> tau_hat, tau;
  std::vector<double> cf_pred, cf_truth;
  std::vector<double> w1_model[2], w1_truth[2];

  for (std::size_t i = 0; i < n; ++i) {
    const auto x = ds.x_row(i);
    const int a = ds.a[i];
    const std::uint64_t s = row_seed(opt.seed, i);
    const causal::PoSampleSet sets[2] = {model.sample_po(x, 0, opt.n_mc, s), model.sample_po(x, 1, opt.n_mc, s)};
    const double mean[2] = {sets[0].mean(), sets[1].mean()};

    po_pred.push_back(mean[a]);
    map_pred.push_back(causal::map_of(sets[a]));
    po_truth.push_back(ds.y[i]);
    if (has_cf) {
      po_pred.push_back(mean[1 - a]);
      map_pred.push_back(causal::map_of(sets[1 - a]));
      po_truth.push_back((*ds.ycf)[i]);
      cf_pred.push_back(model.predict_counterfactual(ds.y[i], x, a));
      cf_truth.push_back((*ds.ycf)[i]);
      for (int arm = 0; arm < 2; ++arm) {
        w1_model[arm].push_back(sets[arm].samples.front().y);
        w1_truth[arm].push_back(arm == a ? ds.y[i] : (*ds.ycf)[i]);
      }
    }
    if (has_mu) {
      tau_hat.push_back(mean[1] - mean[0]);
      tau.push_back((*ds.mu1)[i] - (*ds.mu0)[i]);
    }
  }

  std::vector<std::pair<std::string, std::optional<double>>> out;
  out.emplace_back("po_rmse", rmse(po_pred, po_truth));
  out.emplace_back("map_rmse", rmse(map_pred, po_truth));
  out.emplace_back("pehe", has_mu ? std::optional(pehe(tau_hat, tau)) : std::nullopt);

  if (has_mu) {
    std::vector<KlRow> rows;
    for (std::size_t i = 0; i < std::min(n, opt.kl_rows); ++i) {
      const auto x = ds.x_row(i);
      rows.push_back({{x.begin(), x.end()}, ds.a[i], ds.a[i] == 1 ? (*ds.mu1)[i] : (*ds.mu0)[i]});
    }
    const KlEstimate kl = kl_vs_gaussian_truth(model, rows, opt.kl_samples, row_seed(opt.seed, kKlStream));
    out.emplace_back("kl", kl.value);
    out.emplace_back("kl_se", kl.std_error);
  } else {
    out.emplace_back("kl", std::nullopt);
    out.emplace_back("kl_se", std::nullopt);
  }

  for (int arm = 0; arm < 2; ++arm) {
    out.emplace_back("w1_arm" + std::to_string(arm),
                     has_cf ? std::optional(wasserstein1(w1_model[arm], w1_truth[arm])) : std::nullopt);
  }
  out.emplace_back("cf_rmse", has_cf ? std::optional(rmse(cf_pred, cf_truth)) : std::nullopt);

  const bool both_arms = std::count(ds.a.begin(), ds.a.end(), 1) > 0 && std::count(ds.a.begin(), ds.a.end(), 0) > 0;
  if (n >= 2 && both_arms) {
    const MmdResult mmd = mmd_a3_test(model, ds, row_seed(opt.seed, kMmdStream));
    out.emplace_back("mmd_model", mmd.mmd_model);
    out.emplace_back("mmd_truth", mmd.mmd_truth_baseline);
  } else {
    out.emplace_back("mmd_model", std::nullopt);
    out.emplace_back("mmd_truth", std::nullopt);
  }
  for (const auto& [name, v] : out) {
    if (v && !std::isfinite(*v)) throw NumericError("evaluate: metric '" + name + "' is not finite");
  }
  return out;
}

MetricsReport evaluate_all(const causal::PotentialOutcomeModel& model, const data::CausalDataset& train_ds,
                           const data::CausalDataset& test_ds, const EvalOptions& opt) {
  if (opt.n_mc < 1) throw ContractError("evaluate_all: n_mc must be >= 1");
  MetricsReport report;
  report.n_train = train_ds.n();
  report.n_test = test_ds.n();
  report.seed = opt.seed;
  report.model_id = opt.model_id;

  data::CausalDataset in_ds = train_ds;
  if (opt.in_sample_cap > 0 && train_ds.n() > opt.in_sample_cap) {
    std::vector<std::size_t> rows(opt.in_sample_cap);
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = k * train_ds.n() / opt.in_sample_cap;
    in_ds = train_ds.subset(rows);
  }
  report.n_train_evaluated = in_ds.n();

  const auto in = evaluate_dataset(model, in_ds, opt);
  const auto out = evaluate_dataset(model, test_ds, opt);
  for (std::size_t k = 0; k < in.size(); ++k) report.metrics.push_back({in[k].first, in[k].second, out[k].second});
  return report;
}

const MetricValue* MetricsReport::find(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["metadata"] = {{"model_id", model_id},
                     {"n_train", n_train},
                     {"n_train_evaluated", n_train_evaluated},
                     {"n_test", n_test},
                     {"seed", seed}};
  nlohmann::ordered_json ms = nlohmann::ordered_json::object();
  nlohmann::ordered_json absent = nlohmann::ordered_json::array();
  for (const auto& m : metrics) {
    auto field = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nullptr; };
    ms[m.name] = {{"in", field(m.in_sample)}, {"out", field(m.out_sample)}};
    if (!m.in_sample && !m.out_sample) absent.push_back(m.name);
  }
  doc["metrics"] = ms;
  doc["absent"] = absent;
  return doc.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "metric,in_sample,out_sample\n";
  auto cell = [](const std::optional<double>& v) { return v ? text::format_double(*v) : std::string("NA"); };
  for (const auto& m : metrics) os << m.name << ',' << cell(m.in_sample) << ',' << cell(m.out_sample) << '\n';
  return os.str();
}

}  // namespace flowcausal::metrics
