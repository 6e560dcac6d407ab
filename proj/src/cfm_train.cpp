#include "flowcausal/cfm_train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"

namespace flowcausal::train {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (max_iters < 1) throw ConfigError("TrainConfig: max_iters must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("TrainConfig: lr must be finite and >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("TrainConfig: adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("TrainConfig: adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("TrainConfig: adam_eps must be > 0");
  if (loss_log_every < 1) throw ConfigError("TrainConfig: loss_log_every must be >= 1");
}

LossEvaluation cfm_loss(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, const CfmBatch& batch) {
  const std::size_t n = batch.y0.size();
  if (n == 0) throw ContractError("cfm_loss: empty batch");
  if (batch.y1.size() != n || batch.t.size() != n || batch.a.size() != n || batch.x.rows() != n ||
      (!batch.weights.empty() && batch.weights.size() != n)) {
    throw DimensionError("cfm_loss: batch columns have inconsistent lengths");
  }

  Matrix phi(n, 1);
  Matrix neg_target(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    phi(i, 0) = interpolant(batch.y0[i], batch.y1[i], batch.t[i]);
    neg_target(i, 0) = -reference_velocity(batch.y0[i], batch.y1[i]);
  }
  const Matrix cond = net::conditioning_matrix(net_cfg, batch.x, batch.a, batch.t);

  LossEvaluation out;
  numkit::Tape& tape = out.tape;
  const numkit::Var v = net::velocity_on_tape(tape, net_cfg, params, phi, cond, batch.a);
  numkit::Var sq = tape.square(tape.add(v, tape.constant(std::move(neg_target))));
  if (!batch.weights.empty()) {
    sq = tape.multiply(sq, tape.constant(Matrix(n, 1, batch.weights)));
  }
  out.root = tape.mean(sq);
  out.loss = tape.scalar(out.root);
  return out;
}

std::vector<double> ipw_weights(const data::CausalDataset& ds, const data::PropensityModel& propensity) {
  std::vector<double> w(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double p = propensity(ds.x_row(i));
    w[i] = ds.a[i] == 1 ? 1.0 / p : 1.0 / (1.0 - p);
  }
  return w;
}

void Adam::step(net::VelocityNetParams& params, const numkit::Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  params.for_each([&](const std::string& name, Matrix& theta) {
    auto git = grads.find(name);
    if (git == grads.end()) return;
    const Matrix& g = git->second;
    auto [mit, m_new] = m_.try_emplace(name, theta.rows(), theta.cols());
    auto [vit, v_new] = v_.try_emplace(name, theta.rows(), theta.cols());
    auto th = theta.data();
    auto gd = g.data();
    auto md = mit->second.data();
    auto vd = vit->second.data();
    for (std::size_t i = 0; i < th.size(); ++i) {
      md[i] = b1_ * md[i] + (1.0 - b1_) * gd[i];
      vd[i] = b2_ * vd[i] + (1.0 - b2_) * gd[i] * gd[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      th[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  });
}

TrainResult train(const data::CausalDataset& ds, const net::NetConfig& net_cfg, const TrainConfig& cfg,
                  const net::VelocityNetParams* start) {
  cfg.validate();
  net_cfg.validate();
  ds.validate();
  if (ds.d_x() != net_cfg.d_x) {
    throw DimensionError("train: dataset has d_x = " + std::to_string(ds.d_x()) + ", network expects " +
                         std::to_string(net_cfg.d_x));
  }
  const auto treated = static_cast<std::size_t>(std::count(ds.a.begin(), ds.a.end(), 1));
  if (treated == 0 || treated == ds.n()) throw ContractError("train: dataset must contain both treatment arms");

  const auto started = std::chrono::steady_clock::now();
  TrainResult result{start ? *start : net::init(net_cfg), {}};
  net::check_shapes(net_cfg, result.params);

  std::vector<double> row_weights;
  if (cfg.ipw) row_weights = ipw_weights(ds, data::fit_propensity(ds));

  Adam adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, ds.n() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t b = cfg.batch_size;
  CfmBatch batch;
  batch.x = Matrix(b, ds.d_x());
  batch.a.resize(b);
  batch.y0.resize(b);
  batch.y1.resize(b);
  batch.t.resize(b);
  if (cfg.ipw) batch.weights.resize(b);

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t r = pick(rng);
      auto xr = ds.x_row(r);
      std::copy(xr.begin(), xr.end(), batch.x.data().begin() + static_cast<std::ptrdiff_t>(i * ds.d_x()));
      batch.a[i] = ds.a[r];
      batch.y0[i] = ds.y[r];
      if (cfg.ipw) batch.weights[i] = row_weights[r];
    }
    for (double& t : batch.t) t = unit(rng);
    for (double& y1 : batch.y1) y1 = normal(rng);

    const LossEvaluation eval = cfm_loss(net_cfg, result.params, batch);
    if (!std::isfinite(eval.loss)) {
      throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
    }
    if (it == 1 || it % cfg.loss_log_every == 0 || it == cfg.max_iters) {
      result.report.loss_history.emplace_back(it, eval.loss);
    }
    result.report.final_loss = eval.loss;
    result.report.iters_run = it;
    adam.step(result.params, eval.tape.backward(eval.root));
  }
  if (!result.params.all_finite()) throw NumericError("train: parameters became non-finite");

  result.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace flowcausal::train
