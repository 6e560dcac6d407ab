#pragma once

// Causal datasets: synthetic IHDP-style generation with oracle
// counterfactuals, CSV ingestion, train/test splitting, standardization and
// propensity fitting.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowcausal/numkit.hpp"

namespace flowcausal::data {

using numkit::Matrix;

struct CausalDataset {
  Matrix x;  // n x d_x
  std::vector<int> a;
  std::vector<double> y;
  std::optional<std::vector<double>> mu0;
  std::optional<std::vector<double>> mu1;
  std::optional<std::vector<double>> ycf;  // outcome under 1 - a[i]
  std::string name;
  std::uint64_t seed = 0;

  std::size_t n() const { return y.size(); }
  std::size_t d_x() const { return x.cols(); }
  bool has_mu() const { return mu0.has_value() && mu1.has_value(); }
  std::span<const double> x_row(std::size_t i) const { return x.row(i); }

  // Throws ContractError when the length / treatment invariants are broken.
  void validate() const;
  CausalDataset subset(std::span<const std::size_t> rows) const;
};

struct PropensitySpec {
  enum class Kind { Balanced, Logistic };
  Kind kind = Kind::Balanced;
  std::vector<double> coefficients;  // d_x, logistic only
};

// Y = A (X beta - omega) + (1 - A) exp((X + W) beta) + eps,  eps ~ N(0, noise_sd^2)
struct DgpConfig {
  std::size_t n = 2000;
  std::size_t d_x = 10;
  std::vector<double> beta;
  double omega = 0.0;
  std::vector<double> w_shift;
  double noise_sd = 1.0;
  PropensitySpec propensity;
  std::uint64_t seed = 0;

  void validate() const;
};

// Default response surface for a given width. Coefficients follow the IHDP
// support {0.4, 0.3, 0.2, 0.1, 0, 0} repeated over the covariates and scaled
// to norm 0.6, W = 0.5 everywhere, omega chosen so the population average
// effect is 4, and treatment is logistic in X beta (confounded assignment).
DgpConfig default_dgp_config(std::size_t n, std::size_t d_x, std::uint64_t seed);

// Noise-free structural function f(x, a).
double structural_mean(const DgpConfig& cfg, std::span<const double> x, int a);

CausalDataset generate_ihdp_like(const DgpConfig& cfg);

// Same units and noise draws as generate_ihdp_like(cfg), but with the
// treatment of row i forced to treatments[i].
CausalDataset generate_under_intervention(const DgpConfig& cfg, std::span<const int> treatments);

using StructuralFn = std::function<double(std::span<const double>, int)>;

// Abduction (eps' = y - f(x, a)), action (a -> 1 - a), prediction.
double oracle_counterfactual(const StructuralFn& f, std::span<const double> x, int a, double y);
double oracle_counterfactual(std::span<const double> x, int a, double y, const DgpConfig& cfg);

// CSV with header x0..x{d-1},a,y[,mu0][,mu1][,ycf].
CausalDataset read_csv(std::istream& in, const std::string& source = "<stream>");
CausalDataset load_csv(const std::filesystem::path& path);
void write_csv(const CausalDataset& ds, std::ostream& out);
void save_csv(const CausalDataset& ds, const std::filesystem::path& path);

struct Split {
  CausalDataset train;
  CausalDataset test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

// Test size is round(n * test_fraction); both index lists are sorted.
Split split(const CausalDataset& ds, double test_fraction, std::uint64_t seed);

struct Scaler {
  std::vector<double> x_mean;
  std::vector<double> x_sd;
  double y_mean = 0.0;
  double y_sd = 1.0;

  CausalDataset apply(const CausalDataset& ds) const;
  CausalDataset invert(const CausalDataset& ds) const;
  std::vector<double> x_to_model(std::span<const double> x) const;
  double y_to_model(double y) const { return (y - y_mean) / y_sd; }
  double y_from_model(double y) const { return y * y_sd + y_mean; }
};

// Population (divide-by-n) statistics; columns with sd below 1e-12 are
// passed through unchanged (mean 0, sd 1 in the record).
std::pair<CausalDataset, Scaler> standardize(const CausalDataset& ds);

class PropensityModel {
 public:
  static constexpr double kLower = 0.01;
  static constexpr double kUpper = 0.99;

  PropensityModel() = default;
  PropensityModel(double intercept, std::vector<double> coefficients)
      : intercept_(intercept), coefficients_(std::move(coefficients)) {}

  // Clipped estimate of P(A = 1 | x).
  double operator()(std::span<const double> x) const;
  double intercept() const { return intercept_; }
  const std::vector<double>& coefficients() const { return coefficients_; }

 private:
  double intercept_ = 0.0;
  std::vector<double> coefficients_;
};

struct PropensityFitInfo {
  std::size_t steps = 0;
  double gradient_norm = 0.0;
};

// Logistic regression by full-batch gradient descent; stops when the
// gradient norm drops below 1e-6 or after 10000 steps.
PropensityModel fit_propensity(const CausalDataset& ds, PropensityFitInfo* info = nullptr);

}  // namespace flowcausal::data
