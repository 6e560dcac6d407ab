#pragma once

// Fixed-step classical RK4 for dy/dt = v(y, t) on [0, 1], with optional
// accumulation of the divergence integral for change-of-variables densities.
//
// Time grid: t_k = k / n_steps. Forward integration (encode) runs 0 -> 1,
// backward integration (decode) runs 1 -> 0 with h = -1 / n_steps. The
// divergence term is integrated as an extra state component through the same
// four stages as y.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"
#include "flowcausal/velocity_net.hpp"

namespace flowcausal::ode {

enum class DivergenceMode { ExactFd, Hutchinson };

struct OdeConfig {
  std::size_t n_steps = 64;
  DivergenceMode divergence = DivergenceMode::ExactFd;
  double fd_sigma = 1e-4;          // exact-fd central difference step
  std::size_t n_probes = 64;       // hutchinson
  double hutchinson_sigma = 1e-4;  // hutchinson
  std::uint64_t probe_seed = 0;    // hutchinson probes are drawn from Rng(probe_seed) per integration
  bool save_trajectory = false;

  void validate() const;
};

struct OdeResult {
  double y_end = 0.0;
  // Integral over [0, 1] of dv/dy along the path, in increasing-time
  // orientation regardless of the integration direction.
  std::optional<double> logdet_integral;
  std::vector<std::pair<double, double>> trajectory;  // (t, y), n_steps + 1 points when saved
};

enum class Direction { Forward, Backward };

// Batched field: out[i] = v(ys[i], t).
using BatchField = std::function<void(std::span<const double> ys, double t, std::span<double> out)>;

BatchField as_batch_field(const net::ConditionedVelocity& v);

inline void check_finite_eval(double v, double t, double y) {
  if (!std::isfinite(v)) {
    throw NumericError("integration: non-finite velocity at t = " + std::to_string(t) + ", y = " + std::to_string(y));
  }
}

// Classical RK4 update for a scalar field f(y, t); h may be negative.
template <class F>
double rk4_step(F&& f, double y, double t, double h) {
  if (h == 0.0) throw ContractError("rk4_step: step size must be non-zero");
  const double k1 = f(y, t);
  check_finite_eval(k1, t, y);
  const double k2 = f(y + 0.5 * h * k1, t + 0.5 * h);
  check_finite_eval(k2, t + 0.5 * h, y + 0.5 * h * k1);
  const double k3 = f(y + 0.5 * h * k2, t + 0.5 * h);
  check_finite_eval(k3, t + 0.5 * h, y + 0.5 * h * k2);
  const double k4 = f(y + h * k3, t + h);
  check_finite_eval(k4, t + h, y + h * k3);
  return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// n_steps RK4 steps of size (t1 - t0) / n_steps.
template <class F>
double rk4_integrate(F&& f, double y0, double t0, double t1, std::size_t n_steps) {
  if (n_steps < 1) throw ContractError("rk4_integrate: n_steps must be >= 1");
  const double h = (t1 - t0) / static_cast<double>(n_steps);
  double y = y0;
  for (std::size_t k = 0; k < n_steps; ++k) y = rk4_step(f, y, t0 + static_cast<double>(k) * h, h);
  return y;
}

// Divergence dv/dy at each ys[i] (the outcome is one-dimensional).
//   ExactFd:    (v(y + s) - v(y - s)) / (2 s)
//   Hutchinson: mean over probes e in {-1, +1} of e (v(y + s e) - v(y)) / s
// `rng` is only used in Hutchinson mode.
void divergence(const BatchField& f, std::span<const double> ys, double t, const OdeConfig& cfg, Rng& rng,
                std::span<double> out);
double divergence(const BatchField& f, double y, double t, const OdeConfig& cfg, Rng& rng);

// Integrates every entry of `ys` in place over [0, 1] in the given direction.
// When `logdet` is non-empty it receives the increasing-time integral of the
// divergence along each path.
void integrate(const BatchField& f, std::span<double> ys, Direction dir, const OdeConfig& cfg,
               std::span<double> logdet = {});

OdeResult integrate_one(const BatchField& f, double y0, Direction dir, const OdeConfig& cfg, bool with_logdet);

// log N(z; 0, 1)
inline double standard_normal_logpdf(double z) { return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z; }

// Network-level maps for fixed (x, a), working in model (standardized) units.
double encode(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double y, std::span<const double> x,
              int a, const OdeConfig& cfg);
double decode(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double z, std::span<const double> x,
              int a, const OdeConfig& cfg);
double divergence(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double y, double t,
                  std::span<const double> x, int a, const OdeConfig& cfg);

struct DecodedSample {
  double y = 0.0;
  double log_p = 0.0;
};

// y = decode(z) and log p(y | x, a) = log N(z; 0, 1) + integral of dv/dy.
DecodedSample decode_with_logdensity(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, double z,
                                     std::span<const double> x, int a, const OdeConfig& cfg);

// Batched decode of many latents under one (x, a); log_p may be empty.
void decode_batch(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, std::span<const double> zs,
                  std::span<const double> x, int a, const OdeConfig& cfg, std::span<double> ys,
                  std::span<double> log_p = {});

// Batched encode; log_p (optional) receives log p(y | x, a) via the forward path.
void encode_batch(const net::NetConfig& net_cfg, const net::VelocityNetParams& params, std::span<const double> ys,
                  std::span<const double> x, int a, const OdeConfig& cfg, std::span<double> zs,
                  std::span<double> log_p = {});

}  // namespace flowcausal::ode
