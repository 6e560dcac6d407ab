#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "flowcausal/errors.hpp"
#include "flowcausal/metrics.hpp"
#include "flowcausal/random.hpp"

namespace metrics = flowcausal::metrics;
namespace causal = flowcausal::causal;
namespace data = flowcausal::data;
using flowcausal::numkit::Matrix;

namespace {

std::vector<double> uniform_sample(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double brute_force_w1(std::vector<double> u, const std::vector<double>& v) {
  std::vector<std::size_t> perm(v.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += std::abs(u[i] - v[perm[i]]);
    best = std::min(best, s / static_cast<double>(u.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Integral of |F_u - F_v| over the merged support.
double cdf_w1(const std::vector<double>& u, const std::vector<double>& v) {
  std::vector<double> pts(u);
  pts.insert(pts.end(), v.begin(), v.end());
  std::sort(pts.begin(), pts.end());
  auto cdf = [](const std::vector<double>& s, double t) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [t](double x) { return x <= t; })) /
           static_cast<double>(s.size());
  };
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    total += std::abs(cdf(u, pts[k]) - cdf(v, pts[k])) * (pts[k + 1] - pts[k]);
  }
  return total;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Straight transcription of the unbiased statistic over ordered pairs i != j.
double reference_mmd2(const Matrix& x, const std::vector<int>& a, const std::vector<double>& zu,
                      const std::vector<double>& zv) {
  const std::size_t n = zu.size();
  std::vector<double> xd, zd;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += std::pow(x(i, k) - x(j, k), 2);
      xd.push_back(std::sqrt(s));
    }
  }
  std::vector<double> pool(zu);
  pool.insert(pool.end(), zv.begin(), zv.end());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) zd.push_back(std::abs(pool[i] - pool[j]));
  }
  const double sx = median(xd) / 2.0;
  const double sz = median(zd) / 2.0;
  auto k = [&](double z1, std::size_t i, double z2, std::size_t j) {
    if (a[i] != a[j]) return 0.0;
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::pow(x(i, c) - x(j, c), 2);
    return std::exp(-(z1 - z2) * (z1 - z2) / (2 * sz * sz)) * std::exp(-s / (2 * sx * sx));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      total += k(zu[i], i, zu[j], j) + k(zv[i], i, zv[j], j) - k(zu[i], i, zv[j], j) - k(zv[i], i, zu[j], j);
    }
  }
  return total / static_cast<double>(n * (n - 1));
}

struct MmdSetup {
  Matrix x;
  std::vector<int> a;
};

MmdSetup mmd_setup(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MmdSetup s{Matrix(n, 2), std::vector<int>(n)};
  for (double& v : s.x.data()) v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) s.a[i] = static_cast<int>(rng() % 2);
  return s;
}

std::vector<double> normals(std::uint64_t seed, std::size_t n, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(shift, 1.0);
  std::vector<double> v(n);
  for (double& z : v) z = normal(rng);
  return v;
}

std::vector<metrics::KlRow> kl_rows(const data::DgpConfig& dgp, double mu_offset) {
  std::vector<metrics::KlRow> rows;
  const auto ds = data::generate_ihdp_like(dgp);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto x = ds.x.row(i);
    const int a = static_cast<int>(i % 2);
    rows.push_back({std::vector<double>(x.begin(), x.end()), a, data::structural_mean(dgp, x, a) + mu_offset});
  }
  return rows;
}

}  // namespace

TEST_CASE("rmse and pehe examples") {
  const std::vector<double> t{1.0, -2.0, 3.5};
  CHECK(metrics::rmse(t, t) == 0.0);
  CHECK(metrics::rmse(std::vector<double>{2.0, -1.0, 4.5}, t) == doctest::Approx(1.0));
  CHECK(metrics::rmse(std::vector<double>{1.0, 2.0}, std::vector<double>{2.0, 4.0}) == doctest::Approx(1.5811).epsilon(1e-4));
  CHECK(metrics::pehe(t, t) == 0.0);
  CHECK(metrics::pehe(std::vector<double>{3.0, 0.0, 5.5}, t) == doctest::Approx(2.0));
  CHECK(metrics::pehe(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 3.0}) == doctest::Approx(std::sqrt(2.5)));
  CHECK_THROWS_AS(metrics::rmse(t, std::vector<double>{1.0}), flowcausal::ContractError);
  CHECK_THROWS_AS(metrics::pehe(std::vector<double>{}, std::vector<double>{}), flowcausal::ContractError);
}

TEST_CASE("wasserstein examples") {
  const std::vector<double> u{1.0, 2.0, 3.0};
  CHECK(metrics::wasserstein1(u, u) == 0.0);
  CHECK(metrics::wasserstein1(std::vector<double>{0.0}, std::vector<double>{-2.5}) == 2.5);
  CHECK(metrics::wasserstein1(u, std::vector<double>{2.0, 3.0, 4.0}) == doctest::Approx(1.0));
  CHECK(metrics::wasserstein1(std::vector<double>{3.0, 1.0, 2.0}, std::vector<double>{4.0, 2.0, 3.0}) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(metrics::wasserstein1(std::vector<double>{}, u), flowcausal::ContractError);
}

TEST_CASE("wasserstein equals the brute-force optimal matching") {
  std::mt19937_64 rng(1);
  for (int pair = 0; pair < 100; ++pair) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng() % 6);
    const auto u = uniform_sample(rng, n);
    const auto v = uniform_sample(rng, n);
    CHECK(std::abs(metrics::wasserstein1(u, v) - brute_force_w1(u, v)) < 1e-12);
  }
}

TEST_CASE("wasserstein with unequal sizes equals the CDF integral") {
  std::mt19937_64 rng(2);
  for (int pair = 0; pair < 100; ++pair) {
    const auto u = uniform_sample(rng, 1 + rng() % 9);
    const auto v = uniform_sample(rng, 1 + rng() % 9);
    CHECK(std::abs(metrics::wasserstein1(u, v) - cdf_w1(u, v)) < 1e-12);
  }
  CHECK(metrics::wasserstein1(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 0.5, 1.0}) ==
        doctest::Approx(1.0 / 6.0));
}

TEST_CASE("wasserstein is a metric") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto u = uniform_sample(rng, 1 + rng() % 8);
    const auto v = uniform_sample(rng, 1 + rng() % 8);
    const auto w = uniform_sample(rng, 1 + rng() % 8);
    const double uv = metrics::wasserstein1(u, v);
    CHECK(uv >= 0.0);
    CHECK(std::abs(uv - metrics::wasserstein1(v, u)) < 1e-12);
    CHECK(uv <= metrics::wasserstein1(u, w) + metrics::wasserstein1(w, v) + 1e-12);
    std::vector<double> shuffled(u);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(metrics::wasserstein1(u, shuffled) == 0.0);
  }
}

TEST_CASE("median pairwise distance") {
  CHECK(metrics::median_pairwise_distance(std::vector<double>{0.0, 1.0, 3.0}) == 2.0);
  CHECK(metrics::median_pairwise_distance(std::vector<double>{0.0, 1.0, 3.0, 6.0}) == 3.0);
  CHECK(metrics::median_pairwise_distance(std::vector<double>{0.0, 1.0}) == 1.0);
  CHECK_THROWS_AS(metrics::median_pairwise_distance(std::vector<double>{1.0}), flowcausal::ContractError);
}

TEST_CASE("mmd of identical sets is exactly zero") {
  const auto s = mmd_setup(50, 4);
  const metrics::MmdKernel kernel(s.x, s.a);
  const auto z = normals(5, 50);
  CHECK(kernel.mmd2(z, z) == 0.0);
}

TEST_CASE("mmd matches an independent implementation") {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const auto s = mmd_setup(40, seed);
    const metrics::MmdKernel kernel(s.x, s.a);
    const auto zu = normals(seed + 100, 40, 0.3);
    const auto zv = normals(seed + 200, 40);
    CHECK(std::abs(kernel.mmd2(zu, zv) - reference_mmd2(s.x, s.a, zu, zv)) < 1e-12);
  }
}

TEST_CASE("mmd detects a shifted latent") {
  const auto s = mmd_setup(200, 9);
  const metrics::MmdKernel kernel(s.x, s.a);
  const double shifted = kernel.mmd2(normals(10, 200, 10.0), normals(11, 200));
  const double ref = reference_mmd2(s.x, s.a, normals(10, 200, 10.0), normals(11, 200));
  CHECK(shifted > 0.1);
  CHECK(std::abs(shifted - ref) < 1e-12);
}

TEST_CASE("degenerate covariate pool falls back to unit bandwidth") {
  const Matrix x(5, 2);
  const metrics::MmdKernel kernel(x, std::vector<int>{0, 1, 0, 1, 1});
  CHECK(kernel.x_bandwidth() == 1.0);
  CHECK_THROWS_AS(metrics::MmdKernel(x, std::vector<int>{0, 1}), flowcausal::DimensionError);
}

TEST_CASE("truth-vs-truth baselines are centred on zero") {
  data::CausalDataset ds = data::generate_ihdp_like(data::default_dgp_config(200, 3, 12));
  const auto b = metrics::mmd_truth_baselines(ds, 100, 3);
  REQUIRE(b.size() == 100);
  const double mean = std::accumulate(b.begin(), b.end(), 0.0) / 100.0;
  double ss = 0.0;
  for (double v : b) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / 99.0 / 100.0);
  CHECK(std::abs(mean) <= 3.0 * se);
  CHECK(metrics::mmd_truth_baselines(ds, 100, 3) == b);
}

TEST_CASE("a3 test on the oracle is deterministic and finite") {
  const data::DgpConfig dgp = data::default_dgp_config(150, 3, 13);
  const auto ds = data::generate_ihdp_like(dgp);
  const causal::OracleModel oracle(dgp);
  const auto r1 = metrics::mmd_a3_test(oracle, ds, 5);
  const auto r2 = metrics::mmd_a3_test(oracle, ds, 5);
  CHECK(std::isfinite(r1.mmd_model));
  CHECK(std::isfinite(r1.mmd_truth_baseline));
  CHECK(r1.mmd_model == r2.mmd_model);
  CHECK(r1.mmd_truth_baseline == r2.mmd_truth_baseline);
}

TEST_CASE("kl of the exact Gaussian model is zero") {
  const data::DgpConfig dgp = data::default_dgp_config(20, 3, 14);
  const causal::OracleModel oracle(dgp);
  const auto rows = kl_rows(dgp, 0.0);
  const auto kl = metrics::kl_vs_gaussian_truth(oracle, rows, 200, 1);
  CHECK(std::abs(kl.value) < 1e-12);
  CHECK(kl.std_error < 1e-12);
}

TEST_CASE("kl of a unit-shifted Gaussian is one half") {
  const data::DgpConfig dgp = data::default_dgp_config(20, 3, 15);
  const causal::OracleModel oracle(dgp);
  const auto kl = metrics::kl_vs_gaussian_truth(oracle, kl_rows(dgp, -1.0), 500, 2);
  CHECK(std::abs(kl.value - 0.5) <= 3.0 * kl.std_error);
  CHECK(kl.std_error > 0.0);
  CHECK(kl.std_error < 0.05);
  CHECK(kl.value >= -3.0 * kl.std_error);
}

TEST_CASE("kl with a wider truth matches the closed form") {
  // KL(N(m, 1) || N(m, 4)) = log 2 + 1/8 - 1/2
  const data::DgpConfig dgp = data::default_dgp_config(20, 2, 16);
  const causal::OracleModel oracle(dgp);
  const auto kl = metrics::kl_vs_gaussian_truth(oracle, kl_rows(dgp, 0.0), 2000, 3, 2.0);
  const double expected = std::log(2.0) + 0.125 - 0.5;
  CHECK(std::abs(kl.value - expected) <= 3.0 * kl.std_error + 1e-12);
}

TEST_CASE("row seeds differ by row and are stable") {
  CHECK(metrics::row_seed(1, 0) != metrics::row_seed(1, 1));
  CHECK(metrics::row_seed(1, 0) != metrics::row_seed(2, 0));
  CHECK(metrics::row_seed(7, 3) == metrics::row_seed(7, 3));
}

TEST_CASE("evaluate_all on the oracle model") {
  const data::DgpConfig dgp = data::default_dgp_config(300, 3, 17);
  const auto parts = data::split(data::generate_ihdp_like(dgp), 0.3, 4);
  const causal::OracleModel oracle(dgp);
  metrics::EvalOptions opt;
  opt.seed = 11;
  opt.kl_rows = 16;
  opt.kl_samples = 64;
  opt.model_id = "oracle";
  const auto report = metrics::evaluate_all(oracle, parts.train, parts.test, opt);

  CHECK(report.n_train == parts.train.n());
  CHECK(report.n_test == parts.test.n());
  CHECK(report.n_train_evaluated == std::min<std::size_t>(200, parts.train.n()));
  for (const char* name : {"po_rmse", "map_rmse", "pehe", "kl", "kl_se", "w1_arm0", "w1_arm1", "cf_rmse",
                           "mmd_model", "mmd_truth"}) {
    INFO(name);
    const auto* m = report.find(name);
    REQUIRE(m != nullptr);
    REQUIRE(m->out_sample.has_value());
    REQUIRE(m->in_sample.has_value());
    CHECK(std::isfinite(*m->out_sample));
  }
  // Mean of 100 noisy samples around mu against realized outcomes: the noise sd.
  CHECK(std::abs(*report.find("po_rmse")->out_sample - 1.0) < 0.15);
  CHECK(*report.find("pehe")->out_sample < 1e-12);
  CHECK(*report.find("pehe")->in_sample < 1e-12);
  CHECK(*report.find("cf_rmse")->out_sample < 1e-12);
  CHECK(std::abs(*report.find("kl")->out_sample) < 1e-12);
  CHECK(report.find("nonexistent") == nullptr);
}

TEST_CASE("metrics without ground truth are absent") {
  const data::DgpConfig dgp = data::default_dgp_config(120, 2, 18);
  auto parts = data::split(data::generate_ihdp_like(dgp), 0.5, 5);
  parts.test.mu0.reset();
  parts.test.mu1.reset();
  parts.test.ycf.reset();
  const causal::OracleModel oracle(dgp);
  metrics::EvalOptions opt;
  opt.kl_rows = 8;
  opt.kl_samples = 32;
  const auto report = metrics::evaluate_all(oracle, parts.train, parts.test, opt);
  for (const char* name : {"pehe", "kl", "kl_se", "w1_arm0", "w1_arm1", "cf_rmse"}) {
    INFO(name);
    CHECK_FALSE(report.find(name)->out_sample.has_value());
    CHECK(report.find(name)->in_sample.has_value());
  }
  CHECK(report.find("po_rmse")->out_sample.has_value());
  CHECK(report.find("mmd_model")->out_sample.has_value());

  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["metrics"]["pehe"]["out"].is_null());
  CHECK(j["metrics"]["pehe"]["in"].is_number());
  CHECK(j["absent"].empty());
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("metric,in_sample,out_sample\n", 0) == 0);
  CHECK(csv.find("\npehe,") != std::string::npos);
  CHECK(csv.find(",NA") != std::string::npos);

  parts.train.mu0.reset();
  parts.train.mu1.reset();
  parts.train.ycf.reset();
  const auto bare = nlohmann::json::parse(metrics::evaluate_all(oracle, parts.train, parts.test, opt).to_json());
  const auto absent = bare["absent"].get<std::vector<std::string>>();
  CHECK(absent == std::vector<std::string>{"pehe", "kl", "kl_se", "w1_arm0", "w1_arm1", "cf_rmse"});
}

TEST_CASE("evaluation reports are identical across runs with the same seed") {
  const data::DgpConfig dgp = data::default_dgp_config(160, 2, 19);
  const auto parts = data::split(data::generate_ihdp_like(dgp), 0.25, 6);
  const causal::OracleModel oracle(dgp);
  metrics::EvalOptions opt;
  opt.seed = 3;
  opt.kl_rows = 8;
  opt.kl_samples = 32;
  const std::string a = metrics::evaluate_all(oracle, parts.train, parts.test, opt).to_json();
  const std::string b = metrics::evaluate_all(oracle, parts.train, parts.test, opt).to_json();
  CHECK(a == b);
  opt.seed = 4;
  CHECK(metrics::evaluate_all(oracle, parts.train, parts.test, opt).to_json() != a);
}
