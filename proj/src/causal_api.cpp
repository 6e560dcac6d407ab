#include "flowcausal/causal_api.hpp"

#include <cmath>
#include <numeric>

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"

namespace flowcausal::causal {

std::vector<double> PoSampleSet::values() const {
  std::vector<double> v(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) v[i] = samples[i].y;
  return v;
}

double PoSampleSet::mean() const {
  if (samples.empty()) throw ContractError("PoSampleSet::mean: no samples");
  double s = 0.0;
  for (const auto& p : samples) s += p.y;
  return s / static_cast<double>(samples.size());
}

namespace {

void check_arm(int a) {
  if (a != 0 && a != 1) throw DomainError("treatment must be 0 or 1, got " + std::to_string(a));
}

}  // namespace

FlowModel::FlowModel(net::NetConfig net_cfg, net::VelocityNetParams params, data::Scaler scaler,
                     ode::OdeConfig ode_cfg)
    : net_cfg_(net_cfg), params_(std::move(params)), scaler_(std::move(scaler)), ode_cfg_(ode_cfg) {
  net_cfg_.validate();
  net::check_shapes(net_cfg_, params_);
  ode_cfg_.validate();
  if (scaler_.x_mean.size() != net_cfg_.d_x || scaler_.x_sd.size() != net_cfg_.d_x) {
    throw DimensionError("FlowModel: scaler has " + std::to_string(scaler_.x_mean.size()) +
                         " covariates, network expects " + std::to_string(net_cfg_.d_x));
  }
}

void FlowModel::set_ode_config(const ode::OdeConfig& cfg) {
  cfg.validate();
  ode_cfg_ = cfg;
}

void FlowModel::check_query(std::span<const double> x, int a) const {
  if (x.size() != net_cfg_.d_x) {
    throw DimensionError("FlowModel: x has " + std::to_string(x.size()) + " entries, model expects " +
                         std::to_string(net_cfg_.d_x));
  }
  check_arm(a);
}

std::vector<double> FlowModel::model_x(std::span<const double> x) const { return scaler_.x_to_model(x); }

PoSampleSet FlowModel::sample_po(std::span<const double> x, int a, std::size_t n_samples, std::uint64_t seed) const {
  check_query(x, a);
  Rng rng(seed);
  const std::vector<double> zs = standard_normals(rng, n_samples);
  std::vector<double> ys(n_samples);
  std::vector<double> lp(n_samples);
  ode::decode_batch(net_cfg_, params_, zs, model_x(x), a, ode_cfg_, ys, lp);

  const double log_sd = std::log(scaler_.y_sd);
  PoSampleSet out{{x.begin(), x.end()}, a, {}, seed};
  out.samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    out.samples.push_back({scaler_.y_from_model(ys[i]), lp[i] - log_sd});
    if (!std::isfinite(out.samples.back().log_p)) {
      throw NumericError("sample_po: non-finite log density for sample " + std::to_string(i));
    }
  }
  return out;
}

double FlowModel::encode(double y, std::span<const double> x, int a) const {
  check_query(x, a);
  return ode::encode(net_cfg_, params_, scaler_.y_to_model(y), model_x(x), a, ode_cfg_);
}

double FlowModel::decode(double z, std::span<const double> x, int a) const {
  check_query(x, a);
  return scaler_.y_from_model(ode::decode(net_cfg_, params_, z, model_x(x), a, ode_cfg_));
}

double FlowModel::predict_counterfactual(double y_a, std::span<const double> x, int a) const {
  check_query(x, a);
  const std::vector<double> mx = model_x(x);
  const double z = ode::encode(net_cfg_, params_, scaler_.y_to_model(y_a), mx, a, ode_cfg_);
  return scaler_.y_from_model(ode::decode(net_cfg_, params_, z, mx, 1 - a, ode_cfg_));
}

double FlowModel::log_density(double y, std::span<const double> x, int a) const {
  check_query(x, a);
  const double ym = scaler_.y_to_model(y);
  double z = 0.0;
  double lp = 0.0;
  ode::encode_batch(net_cfg_, params_, std::span<const double>(&ym, 1), model_x(x), a, ode_cfg_,
                    std::span<double>(&z, 1), std::span<double>(&lp, 1));
  return lp - std::log(scaler_.y_sd);
}

OracleModel::OracleModel(data::DgpConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

PoSampleSet OracleModel::sample_po(std::span<const double> x, int a, std::size_t n_samples, std::uint64_t seed) const {
  check_arm(a);
  const double mu = data::structural_mean(cfg_, x, a);
  Rng rng(seed);
  PoSampleSet out{{x.begin(), x.end()}, a, {}, seed};
  for (double z : standard_normals(rng, n_samples)) {
    out.samples.push_back({mu + cfg_.noise_sd * z, ode::standard_normal_logpdf(z) - std::log(cfg_.noise_sd)});
  }
  return out;
}

double OracleModel::predict_counterfactual(double y_a, std::span<const double> x, int a) const {
  check_arm(a);
  return data::oracle_counterfactual(x, a, y_a, cfg_);
}

double OracleModel::log_density(double y, std::span<const double> x, int a) const {
  return ode::standard_normal_logpdf(encode(y, x, a)) - std::log(cfg_.noise_sd);
}

double OracleModel::encode(double y, std::span<const double> x, int a) const {
  check_arm(a);
  return (y - data::structural_mean(cfg_, x, a)) / cfg_.noise_sd;
}

PoSampleSet sample_po(const PotentialOutcomeModel& model, std::span<const double> x, int a, std::size_t n_samples,
                      std::uint64_t seed) {
  return model.sample_po(x, a, n_samples, seed);
}

double predict_counterfactual(const PotentialOutcomeModel& model, double y_a, std::span<const double> x, int a) {
  return model.predict_counterfactual(y_a, x, a);
}

double estimate_cate(const PotentialOutcomeModel& model, std::span<const double> x, std::size_t n_mc,
                     std::uint64_t seed) {
  if (n_mc < 1) throw ContractError("estimate_cate: n_mc must be >= 1");
  return model.sample_po(x, 1, n_mc, seed).mean() - model.sample_po(x, 0, n_mc, seed).mean();
}

double map_of(const PoSampleSet& set) {
  if (set.samples.empty()) throw ContractError("map_of: no samples");
  std::size_t best = 0;
  for (std::size_t i = 1; i < set.samples.size(); ++i) {
    if (set.samples[i].log_p > set.samples[best].log_p) best = i;
  }
  return set.samples[best].y;
}

double map_po(const PotentialOutcomeModel& model, std::span<const double> x, int a, std::size_t n_samples,
              std::uint64_t seed) {
  if (n_samples < 1) throw ContractError("map_po: n_samples must be >= 1");
  return map_of(model.sample_po(x, a, n_samples, seed));
}

double log_density(const PotentialOutcomeModel& model, double y, std::span<const double> x, int a) {
  return model.log_density(y, x, a);
}

}  // namespace flowcausal::causal
