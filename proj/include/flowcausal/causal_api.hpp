#pragma once

// Causal queries on a trained flow: potential-outcome sampling,
// counterfactual prediction, CATE, MAP selection and density evaluation.
//
// Every query is expressed against PotentialOutcomeModel so that metrics and
// the CLI can run on either a trained FlowModel or the closed-form OracleModel
// (used as a test double and as a ground-truth reference). All inputs and
// outputs are in original data units.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "flowcausal/ode_engine.hpp"
#include "flowcausal/scm_data.hpp"
#include "flowcausal/velocity_net.hpp"

namespace flowcausal::causal {

struct PoSample {
  double y = 0.0;
  double log_p = 0.0;
};

struct PoSampleSet {
  std::vector<double> x;
  int a = 0;
  std::vector<PoSample> samples;
  std::uint64_t seed = 0;

  std::vector<double> values() const;
  double mean() const;
};

class PotentialOutcomeModel {
 public:
  virtual ~PotentialOutcomeModel() = default;

  virtual std::size_t d_x() const = 0;
  // Latent draws z_1..z_n come from Rng(seed), so two calls with the same
  // seed and different arms share their base noise.
  virtual PoSampleSet sample_po(std::span<const double> x, int a, std::size_t n_samples, std::uint64_t seed) const = 0;
  virtual double predict_counterfactual(double y_a, std::span<const double> x, int a) const = 0;
  virtual double log_density(double y, std::span<const double> x, int a) const = 0;
  // Abduction step alone: the latent z that generates y under (x, a).
  virtual double encode(double y, std::span<const double> x, int a) const = 0;
};

// A trained velocity network with the standardization it was trained under.
class FlowModel final : public PotentialOutcomeModel {
 public:
  FlowModel(net::NetConfig net_cfg, net::VelocityNetParams params, data::Scaler scaler, ode::OdeConfig ode_cfg = {});

  std::size_t d_x() const override { return net_cfg_.d_x; }
  PoSampleSet sample_po(std::span<const double> x, int a, std::size_t n_samples, std::uint64_t seed) const override;
  double predict_counterfactual(double y_a, std::span<const double> x, int a) const override;
  double log_density(double y, std::span<const double> x, int a) const override;
  double encode(double y, std::span<const double> x, int a) const override;

  double decode(double z, std::span<const double> x, int a) const;

  const net::NetConfig& net_config() const { return net_cfg_; }
  const net::VelocityNetParams& params() const { return params_; }
  const data::Scaler& scaler() const { return scaler_; }
  const ode::OdeConfig& ode_config() const { return ode_cfg_; }
  void set_ode_config(const ode::OdeConfig& cfg);

 private:
  std::vector<double> model_x(std::span<const double> x) const;
  void check_query(std::span<const double> x, int a) const;

  net::NetConfig net_cfg_;
  net::VelocityNetParams params_;
  data::Scaler scaler_;
  ode::OdeConfig ode_cfg_;
};

// Y^(a) = mu_a(x) + noise_sd * z with mu_a from the structural equations.
class OracleModel final : public PotentialOutcomeModel {
 public:
  explicit OracleModel(data::DgpConfig cfg);

  std::size_t d_x() const override { return cfg_.d_x; }
  PoSampleSet sample_po(std::span<const double> x, int a, std::size_t n_samples, std::uint64_t seed) const override;
  double predict_counterfactual(double y_a, std::span<const double> x, int a) const override;
  double log_density(double y, std::span<const double> x, int a) const override;
  double encode(double y, std::span<const double> x, int a) const override;

 private:
  data::DgpConfig cfg_;
};

PoSampleSet sample_po(const PotentialOutcomeModel& model, std::span<const double> x, int a, std::size_t n_samples,
                      std::uint64_t seed);

double predict_counterfactual(const PotentialOutcomeModel& model, double y_a, std::span<const double> x, int a);

inline constexpr std::size_t kDefaultMonteCarlo = 100;

// Mean of n_mc samples under a = 1 minus mean under a = 0, both arms decoded
// from the same latent draws.
double estimate_cate(const PotentialOutcomeModel& model, std::span<const double> x, std::size_t n_mc,
                     std::uint64_t seed);

// Sample with the largest log density; ties go to the lowest index.
double map_po(const PotentialOutcomeModel& model, std::span<const double> x, int a,
              std::size_t n_samples = kDefaultMonteCarlo, std::uint64_t seed = 0);
double map_of(const PoSampleSet& set);

double log_density(const PotentialOutcomeModel& model, double y, std::span<const double> x, int a);

}  // namespace flowcausal::causal
