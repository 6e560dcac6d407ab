#pragma once

// Evaluation metrics for potential-outcome models.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowcausal/causal_api.hpp"
#include "flowcausal/numkit.hpp"
#include "flowcausal/scm_data.hpp"

namespace flowcausal::metrics {

double rmse(std::span<const double> pred, std::span<const double> truth);
// Square root of the mean squared CATE error.
double pehe(std::span<const double> tau_hat, std::span<const double> tau);

// W1 between the empirical distributions of u and v.
double wasserstein1(std::span<const double> u, std::span<const double> v);

struct KlRow {
  std::vector<double> x;
  int a = 0;
  double mu = 0.0;
};

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Monte Carlo estimate of KL(p_theta(. | x, a) || N(mu, truth_sd^2)) averaged
// over rows. Row r uses sample_po with seed derived from (seed, r).
KlEstimate kl_vs_gaussian_truth(const causal::PotentialOutcomeModel& model, std::span<const KlRow> rows,
                                std::size_t n_mc, std::uint64_t seed, double truth_sd = 1.0);

// Unbiased MMD^2 between {(z_u[i], x_i, a_i)} and {(z_v[i], x_i, a_i)} with
// the product kernel k_Z * k_X * 1[a = a']. k_Z and k_X are Gaussian RBF with
// bandwidth half the median pairwise distance; the z pool is z_u and z_v
// together, the x pool is the rows of x.
class MmdKernel {
 public:
  MmdKernel(const numkit::Matrix& x, std::span<const int> a);
  double mmd2(std::span<const double> z_u, std::span<const double> z_v) const;
  std::size_t n() const { return n_; }
  double x_bandwidth() const { return sigma_x_; }

 private:
  std::size_t n_;
  double sigma_x_;
  std::vector<double> kxa_;  // n x n, k_X(x_i, x_j) 1[a_i = a_j]
};

double median_pairwise_distance(std::span<const double> values);

struct MmdResult {
  double mmd_model = 0.0;
  double mmd_truth_baseline = 0.0;
};

// z_i = encode(y_i; x_i, a_i) against z'_i ~ N(0, 1); the baseline compares
// two fresh N(0, 1) draws z', z''. x is passed to the kernel as stored in ds.
MmdResult mmd_a3_test(const causal::PotentialOutcomeModel& model, const data::CausalDataset& ds, std::uint64_t seed);

// Truth-vs-truth MMD^2 for `repetitions` independent pairs of N(0, 1) draws.
std::vector<double> mmd_truth_baselines(const data::CausalDataset& ds, std::size_t repetitions, std::uint64_t seed);

struct MetricValue {
  std::string name;
  std::optional<double> in_sample;
  std::optional<double> out_sample;
};

struct MetricsReport {
  std::vector<MetricValue> metrics;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_train_evaluated = 0;
  std::uint64_t seed = 0;
  std::string model_id;

  const MetricValue* find(const std::string& name) const;
  std::string to_json() const;
  // metric,in_sample,out_sample with NA for absent values.
  std::string to_csv() const;
};

struct EvalOptions {
  std::size_t n_mc = causal::kDefaultMonteCarlo;  // samples per arm for PO, CATE and MAP
  std::size_t kl_rows = 64;
  std::size_t kl_samples = 256;
  // In-sample metrics use at most this many training rows, evenly spaced.
  std::size_t in_sample_cap = 200;
  std::uint64_t seed = 0;
  std::string model_id;
};

// Metrics on one dataset. Names: po_rmse, map_rmse, pehe, kl, kl_se,
// w1_arm0, w1_arm1, cf_rmse, mmd_model, mmd_truth. A metric whose ground
// truth columns are missing is absent.
std::vector<std::pair<std::string, std::optional<double>>> evaluate_dataset(
    const causal::PotentialOutcomeModel& model, const data::CausalDataset& ds, const EvalOptions& opt);

MetricsReport evaluate_all(const causal::PotentialOutcomeModel& model, const data::CausalDataset& train_ds,
                           const data::CausalDataset& test_ds, const EvalOptions& opt);

// Seed for row `row` of a per-row query.
std::uint64_t row_seed(std::uint64_t seed, std::size_t row);

}  // namespace flowcausal::metrics
