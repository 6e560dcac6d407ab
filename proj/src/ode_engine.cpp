#include "flowcausal/ode_engine.hpp"

#include <algorithm>

namespace flowcausal::ode {

void OdeConfig::validate() const {
  if (n_steps < 1) throw ConfigError("OdeConfig: n_steps must be >= 1");
  if (!(fd_sigma > 0.0)) throw ConfigError("OdeConfig: fd_sigma must be > 0");
  if (!(hutchinson_sigma > 0.0)) throw ConfigError("OdeConfig: hutchinson_sigma must be > 0");
  if (divergence == DivergenceMode::Hutchinson && n_probes < 1) {
    throw ConfigError("OdeConfig: hutchinson needs n_probes >= 1");
  }
}

BatchField as_batch_field(const net::ConditionedVelocity& v) {
  return [&v](std::span<const double> ys, double t, std::span<double> out) { v(ys, t, out); };
}

namespace {

void eval_checked(const BatchField& f, std::span<const double> ys, double t, std::span<double> out) {
  f(ys, t, out);
  for (std::size_t i = 0; i < ys.size(); ++i) check_finite_eval(out[i], t, ys[i]);
}

// Velocity and (optionally) divergence at one stage, sharing a single batched
// field call across the perturbed copies.
class StageEvaluator {
 public:
  StageEvaluator(const BatchField& f, const OdeConfig& cfg, std::size_t n, bool with_div)
      : f_(f), cfg_(cfg), n_(n), with_div_(with_div) {
    std::size_t copies = 1;
    if (with_div_) copies += cfg.divergence == DivergenceMode::ExactFd ? 2 : cfg.n_probes;
    in_.resize(copies * n);
    out_.resize(copies * n);
    if (with_div_ && cfg.divergence == DivergenceMode::Hutchinson) probes_.resize(cfg.n_probes * n);
    if (cfg.divergence == DivergenceMode::Hutchinson) rng_ = Rng(cfg.probe_seed);
  }

  void operator()(std::span<const double> ys, double t, std::span<double> v, std::span<double> div) {
    std::copy(ys.begin(), ys.end(), in_.begin());
    if (!with_div_) {
      eval_checked(f_, std::span<const double>(in_).first(n_), t, std::span<double>(out_).first(n_));
      std::copy_n(out_.begin(), n_, v.begin());
      return;
    }
    if (cfg_.divergence == DivergenceMode::ExactFd) {
      const double s = cfg_.fd_sigma;
      for (std::size_t i = 0; i < n_; ++i) {
        in_[n_ + i] = ys[i] + s;
        in_[2 * n_ + i] = ys[i] - s;
      }
      eval_checked(f_, in_, t, out_);
      for (std::size_t i = 0; i < n_; ++i) {
        v[i] = out_[i];
        div[i] = (out_[n_ + i] - out_[2 * n_ + i]) / (2.0 * s);
      }
      return;
    }
    const double s = cfg_.hutchinson_sigma;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t p = 0; p < cfg_.n_probes; ++p) {
      for (std::size_t i = 0; i < n_; ++i) {
        const double e = coin(rng_) ? 1.0 : -1.0;
        probes_[p * n_ + i] = e;
        in_[(p + 1) * n_ + i] = ys[i] + s * e;
      }
    }
    eval_checked(f_, in_, t, out_);
    for (std::size_t i = 0; i < n_; ++i) {
      v[i] = out_[i];
      double acc = 0.0;
      for (std::size_t p = 0; p < cfg_.n_probes; ++p) {
        acc += probes_[p * n_ + i] * (out_[(p + 1) * n_ + i] - out_[i]) / s;
      }
      div[i] = acc / static_cast<double>(cfg_.n_probes);
    }
  }

 private:
  const BatchField& f_;
  const OdeConfig& cfg_;
  std::size_t n_;
  bool with_div_;
  std::vector<double> in_, out_, probes_;
  Rng rng_;
};

void run(const BatchField& f, std::span<double> ys, Direction dir, const OdeConfig& cfg, std::span<double> logdet,
         std::vector<std::pair<double, double>>* trajectory) {
  cfg.validate();
  const std::size_t n = ys.size();
  const bool with_div = !logdet.empty();
  if (with_div && logdet.size() != n) throw DimensionError("integrate: logdet span size mismatch");
  if (n == 0) return;

  const std::size_t steps = cfg.n_steps;
  const double steps_d = static_cast<double>(steps);
  const double h = (dir == Direction::Forward ? 1.0 : -1.0) / steps_d;
  // Grid times are computed from integers so that every stage time lies in [0, 1].
  auto grid = [&](double k) { return dir == Direction::Forward ? k / steps_d : (steps_d - k) / steps_d; };

  StageEvaluator stage(f, cfg, n, with_div);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), d1(n), d2(n), d3(n), d4(n), tmp(n);
  std::vector<double> ell(n, 0.0);

  if (trajectory) trajectory->emplace_back(grid(0.0), ys[0]);
  for (std::size_t k = 0; k < steps; ++k) {
    const double kd = static_cast<double>(k);
    const double t0 = grid(kd);
    const double tm = grid(kd + 0.5);
    const double t1 = grid(kd + 1.0);

    stage(ys, t0, k1, d1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = ys[i] + 0.5 * h * k1[i];
    stage(tmp, tm, k2, d2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = ys[i] + 0.5 * h * k2[i];
    stage(tmp, tm, k3, d3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = ys[i] + h * k3[i];
    stage(tmp, t1, k4, d4);

    for (std::size_t i = 0; i < n; ++i) {
      ys[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (with_div) ell[i] += h / 6.0 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i]);
    }
    if (trajectory) trajectory->emplace_back(t1, ys[0]);
  }
  if (with_div) {
    // ell holds the integral in the direction of travel; report it over increasing time.
    for (std::size_t i = 0; i < n; ++i) logdet[i] = dir == Direction::Forward ? ell[i] : -ell[i];
  }
}

}  // namespace

void divergence(const BatchField& f, std::span<const double> ys, double t, const OdeConfig& cfg, Rng& rng,
                std::span<double> out) {
  cfg.validate();
  const std::size_t n = ys.size();
  if (out.size() != n) throw DimensionError("divergence: output span size mismatch");
  if (cfg.divergence == DivergenceMode::ExactFd) {
    std::vector<double> in(2 * n), vals(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      in[i] = ys[i] + cfg.fd_sigma;
      in[n + i] = ys[i] - cfg.fd_sigma;
    }
    eval_checked(f, in, t, vals);
    for (std::size_t i = 0; i < n; ++i) out[i] = (vals[i] - vals[n + i]) / (2.0 * cfg.fd_sigma);
    return;
  }
  const std::size_t probes = cfg.n_probes;
  const double s = cfg.hutchinson_sigma;
  std::vector<double> eps(probes * n), in((probes + 1) * n), vals((probes + 1) * n);
  std::bernoulli_distribution coin(0.5);
  std::copy(ys.begin(), ys.end(), in.begin());
  for (std::size_t p = 0; p < probes; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      eps[p * n + i] = coin(rng) ? 1.0 : -1.0;
      in[(p + 1) * n + i] = ys[i] + s * eps[p * n + i];
    }
  }
  eval_checked(f, in, t, vals);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < probes; ++p) acc += eps[p * n + i] * (vals[(p + 1) * n + i] - vals[i]) / s;
    out[i] = acc / static_cast<double>(probes);
  }
}

double divergence(const BatchField& f, double y, double t, const OdeConfig& cfg, Rng& rng) {
  double out = 0.0;
  divergence(f, std::span<const double>(&y, 1), t, cfg, rng, std::span<double>(&out, 1));
  return out;
}

void integrate(const BatchField& f, std::span<double> ys, Direction dir, const OdeConfig& cfg,
               std::span<double> logdet) {
  run(f, ys, dir, cfg, logdet, nullptr);
}

OdeResult integrate_one(const BatchField& f, double y0, Direction dir, const OdeConfig& cfg, bool with_logdet) {
  OdeResult res;
  double y = y0;
  double ld = 0.0;
  run(f, std::span<double>(&y, 1), dir, cfg, with_logdet ? std::span<double>(&ld, 1) : std::span<double>{},
      cfg.save_trajectory ? &res.trajectory : nullptr);
  res.y_end = y;
  if (with_logdet) res.logdet_integral = ld;
  return res;
}

// ---------------------------------------------------------------------------

double encode(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double y, std::span<const double> x,
              int a, const OdeConfig& cfg) {
  const net::ConditionedVelocity v(net_cfg, params, x, a);
  return integrate_one(as_batch_field(v), y, Direction::Forward, cfg, false).y_end;
}

double decode(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double z, std::span<const double> x,
              int a, const OdeConfig& cfg) {
  const net::ConditionedVelocity v(net_cfg, params, x, a);
  return integrate_one(as_batch_field(v), z, Direction::Backward, cfg, false).y_end;
}

double divergence(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double y, double t,
                  std::span<const double> x, int a, const OdeConfig& cfg) {
  const net::ConditionedVelocity v(net_cfg, params, x, a);
  Rng rng(cfg.probe_seed);
  return divergence(as_batch_field(v), y, t, cfg, rng);
}

DecodedSample decode_with_logdensity(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double z,
                                     std::span<const double> x, int a, const OdeConfig& cfg) {
  DecodedSample s;
  decode_batch(net_cfg, params, std::span<const double>(&z, 1), x, a, cfg, std::span<double>(&s.y, 1),
               std::span<double>(&s.log_p, 1));
  return s;
}

void decode_batch(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, std::span<const double> zs,
                  std::span<const double> x, int a, const OdeConfig& cfg, std::span<double> ys,
                  std::span<double> log_p) {
  if (ys.size() != zs.size() || (!log_p.empty() && log_p.size() != zs.size())) {
    throw DimensionError("decode_batch: output span size mismatch");
  }
  const net::ConditionedVelocity v(net_cfg, params, x, a);
  std::copy(zs.begin(), zs.end(), ys.begin());
  integrate(as_batch_field(v), ys, Direction::Backward, cfg, log_p);
  if (!log_p.empty()) {
    for (std::size_t i = 0; i < zs.size(); ++i) log_p[i] += standard_normal_logpdf(zs[i]);
  }
}

void encode_batch(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, std::span<const double> ys,
                  std::span<const double> x, int a, const OdeConfig& cfg, std::span<double> zs,
                  std::span<double> log_p) {
  if (zs.size() != ys.size() || (!log_p.empty() && log_p.size() != ys.size())) {
    throw DimensionError("encode_batch: output span size mismatch");
  }
  const net::ConditionedVelocity v(net_cfg, params, x, a);
  std::copy(ys.begin(), ys.end(), zs.begin());
  integrate(as_batch_field(v), zs, Direction::Forward, cfg, log_p);
  if (!log_p.empty()) {
    for (std::size_t i = 0; i < ys.size(); ++i) log_p[i] += standard_normal_logpdf(zs[i]);
  }
}

}  // namespace flowcausal::ode
