#pragma once

// Conditional flow-matching training of the velocity field.
//
// Each iteration draws a minibatch (with replacement) of factual rows
// (y0, x, a), base noise y1 ~ N(0, 1) and times t ~ U[0, 1], forms the
// linear interpolant phi_t = (1 - t) y0 + t y1 and regresses v(phi_t, t; x, a)
// onto the reference velocity y1 - y0. Parameters are updated with Adam.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcausal/numkit.hpp"
#include "flowcausal/scm_data.hpp"
#include "flowcausal/velocity_net.hpp"

namespace flowcausal::train {

using numkit::Matrix;

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t max_iters = 1000;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool ipw = false;
  std::uint64_t seed = 0;
  std::size_t loss_log_every = 1;

  void validate() const;
};

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> loss_history;  // (1-based iteration, minibatch loss)
  double final_loss = 0.0;
  std::size_t iters_run = 0;
  double wall_time_s = 0.0;
};

inline double interpolant(double y0, double y1, double t) { return (1.0 - t) * y0 + t * y1; }
inline double reference_velocity(double y0, double y1) { return y1 - y0; }

struct CfmBatch {
  Matrix x;                     // B x d_x
  std::vector<int> a;           // B
  std::vector<double> y0;       // factual outcomes
  std::vector<double> y1;       // base noise draws
  std::vector<double> t;        // interpolation times
  std::vector<double> weights;  // empty means all ones
};

struct LossEvaluation {
  double loss = 0.0;
  numkit::Tape tape;
  numkit::Var root;
};

// mean_i w_i (v(phi_t, t; x, a) - (y1 - y0))^2 recorded on a fresh tape.
LossEvaluation cfm_loss(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, const CfmBatch& batch);

// a / w(x) + (1 - a) / (1 - w(x)) per row.
std::vector<double> ipw_weights(const data::CausalDataset& ds, const data::PropensityModel& propensity);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(net::VelocityNetParams& params, const numkit::Gradients& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

struct TrainResult {
  net::VelocityNetParams params;
  TrainReport report;
};

// Trains from init(net_cfg), or from `start` when given. `ds` is expected in
// model units (see data::standardize).
TrainResult train(const data::CausalDataset& ds, const net::NetConfig& net_cfg, const TrainConfig& cfg,
                  const net::VelocityNetParams* start = nullptr);

}  // namespace flowcausal::train
