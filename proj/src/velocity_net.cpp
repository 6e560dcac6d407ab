#include "flowcausal/velocity_net.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "flowcausal/errors.hpp"
#include "flowcausal/random.hpp"

namespace flowcausal::net {

namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Affine zero_affine(std::size_t in, std::size_t out) { return Affine{Matrix(in, out), Matrix(1, out)}; }

ConditionedAffine zero_conditioned(std::size_t cond, std::size_t hidden) {
  return ConditionedAffine{Matrix(cond, hidden), Matrix(hidden, hidden), Matrix(1, hidden)};
}

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("velocity field: t = " + std::to_string(t) + " outside [0, 1]");
}

void check_treatment(int a) {
  if (a != 0 && a != 1) throw DomainError("velocity field: treatment must be 0 or 1, got " + std::to_string(a));
}

}  // namespace

void NetConfig::validate() const {
  if (d_x < 1) throw ConfigError("NetConfig: d_x must be >= 1");
  if (n_res_blocks != 2) {
    throw ConfigError("NetConfig: n_res_blocks must be 2, got " + std::to_string(n_res_blocks));
  }
  if (time_encoding == TimeEncoding::Sinusoidal && n_frequencies < 1) {
    throw ConfigError("NetConfig: sinusoidal time encoding needs n_frequencies >= 1");
  }
}

std::size_t VelocityNetParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool VelocityNetParams::all_finite() const {
  bool ok = true;
  for_each([&ok](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

VelocityNetParams zero_params(const NetConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden();
  const std::size_t c = cfg.cond_dim();
  VelocityNetParams p;
  p.embed = zero_affine(1, h);
  p.film_scale = zero_affine(c, h);
  p.film_shift = zero_affine(c, h);
  for (std::size_t i = 0; i < cfg.n_res_blocks; ++i) {
    p.blocks.push_back(GatedBlock{zero_conditioned(c, h), zero_affine(h, h), zero_conditioned(c, h), zero_affine(h, h)});
  }
  p.proj = zero_affine(h, 2);
  return p;
}

VelocityNetParams init(const NetConfig& cfg) {
  VelocityNetParams p = zero_params(cfg);
  const std::size_t h = cfg.hidden();
  const std::size_t c = cfg.cond_dim();
  Rng rng(cfg.init_seed);
  auto glorot = [&rng](Matrix& w, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& v : w.data()) v = u(rng);
  };
  glorot(p.embed.w, 1, h);
  glorot(p.film_scale.w, c, h);
  glorot(p.film_shift.w, c, h);
  for (auto& blk : p.blocks) {
    // The two weight blocks of a conditioned layer form one (c + h) x h map.
    glorot(blk.gate_in.w_cond, c + h, h);
    glorot(blk.gate_in.w_hidden, c + h, h);
    glorot(blk.gate_out.w, h, h);
    glorot(blk.value_in.w_cond, c + h, h);
    glorot(blk.value_in.w_hidden, c + h, h);
    glorot(blk.value_out.w, h, h);
  }
  glorot(p.proj.w, h, 2);
  return p;
}

void check_shapes(const NetConfig& cfg, const VelocityNetParams& params) {
  const VelocityNetParams ref = zero_params(cfg);
  if (params.blocks.size() != ref.blocks.size()) {
    throw DimensionError("velocity net: expected " + std::to_string(ref.blocks.size()) + " blocks, got " +
                         std::to_string(params.blocks.size()));
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> want;
  ref.for_each([&](const std::string& name, const Matrix& m) { want.push_back({name, {m.rows(), m.cols()}}); });
  std::size_t k = 0;
  params.for_each([&](const std::string& name, const Matrix& m) {
    const auto& [rows, cols] = want[k++].second;
    if (m.rows() != rows || m.cols() != cols) {
      throw DimensionError("velocity net: tensor '" + name + "' is " + numkit::shape_string(m) + ", expected " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
  });
}

std::vector<double> encode_time(const NetConfig& cfg, double t) {
  if (cfg.time_encoding == TimeEncoding::ScalarAppend) return {t};
  std::vector<double> enc;
  enc.reserve(2 * cfg.n_frequencies);
  for (std::size_t f = 1; f <= cfg.n_frequencies; ++f) {
    // Half-period multiples keep enc(0) != enc(1).
    const double w = std::numbers::pi * static_cast<double>(f);
    enc.push_back(std::sin(w * t));
    enc.push_back(std::cos(w * t));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Plain evaluator

ConditionedVelocity::ConditionedVelocity(const NetConfig& cfg, const VelocityNetParams& params,
                                         std::span<const double> x, int a)
    : cfg_(cfg), p_(params), a_(a) {
  check_treatment(a);
  if (x.size() != cfg.d_x) {
    throw DimensionError("velocity field: covariate vector has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(cfg.d_x));
  }
  const std::size_t h = cfg.hidden();
  auto make = [&](const Matrix& w, const Matrix& b) {
    CondLayer layer{std::vector<double>(b.data().begin(), b.data().end()), &w};
    for (std::size_t j = 0; j < cfg.d_x; ++j)
      for (std::size_t k = 0; k < h; ++k) layer.base[k] += x[j] * w(j, k);
    for (std::size_t k = 0; k < h; ++k) layer.base[k] += static_cast<double>(a) * w(cfg.d_x, k);
    return layer;
  };
  scale_ = make(p_.film_scale.w, p_.film_scale.b);
  shift_ = make(p_.film_shift.w, p_.film_shift.b);
  for (const auto& blk : p_.blocks) {
    gate_.push_back(make(blk.gate_in.w_cond, blk.gate_in.b));
    value_.push_back(make(blk.value_in.w_cond, blk.value_in.b));
  }
}

void ConditionedVelocity::conditioned(const CondLayer& layer, std::span<const double> enc,
                                      std::vector<double>& out) const {
  const std::size_t h = cfg_.hidden();
  out = layer.base;
  for (std::size_t e = 0; e < enc.size(); ++e) {
    const std::size_t row = cfg_.d_x + 1 + e;
    for (std::size_t k = 0; k < h; ++k) out[k] += enc[e] * (*layer.w_cond)(row, k);
  }
}

void ConditionedVelocity::operator()(std::span<const double> ys, double t, std::span<double> out) const {
  check_time(t);
  if (out.size() != ys.size()) throw DimensionError("velocity field: output span size mismatch");
  const std::size_t h = cfg_.hidden();
  const std::size_t nb = p_.blocks.size();
  const auto enc = encode_time(cfg_, t);

  std::vector<double> scale, shift;
  conditioned(scale_, enc, scale);
  conditioned(shift_, enc, shift);
  std::vector<std::vector<double>> gate_c(nb), value_c(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    conditioned(gate_[b], enc, gate_c[b]);
    conditioned(value_[b], enc, value_c[b]);
  }

  std::vector<double> hid(h), g1(h), u1(h), g(h), u(h);
  const double* we = p_.embed.w.data().data();
  const double* be = p_.embed.b.data().data();
  const std::size_t head = static_cast<std::size_t>(a_);

  for (std::size_t n = 0; n < ys.size(); ++n) {
    const double y = ys[n];
    for (std::size_t k = 0; k < h; ++k) hid[k] = scale[k] * (y * we[k] + be[k]) + shift[k];

    for (std::size_t b = 0; b < nb; ++b) {
      const GatedBlock& blk = p_.blocks[b];
      g1 = gate_c[b];
      u1 = value_c[b];
      const double* wg = blk.gate_in.w_hidden.data().data();
      const double* wv = blk.value_in.w_hidden.data().data();
      for (std::size_t j = 0; j < h; ++j) {
        const double hj = hid[j];
        const double* rg = wg + j * h;
        const double* rv = wv + j * h;
        for (std::size_t k = 0; k < h; ++k) {
          g1[k] += hj * rg[k];
          u1[k] += hj * rv[k];
        }
      }
      for (std::size_t k = 0; k < h; ++k) {
        g1[k] = std::tanh(g1[k]);
        u1[k] = std::tanh(u1[k]);
      }
      const double* go = blk.gate_out.w.data().data();
      const double* vo = blk.value_out.w.data().data();
      for (std::size_t k = 0; k < h; ++k) {
        g[k] = blk.gate_out.b(0, k);
        u[k] = blk.value_out.b(0, k);
      }
      for (std::size_t j = 0; j < h; ++j) {
        const double* rg = go + j * h;
        const double* rv = vo + j * h;
        for (std::size_t k = 0; k < h; ++k) {
          g[k] += g1[j] * rg[k];
          u[k] += u1[j] * rv[k];
        }
      }
      for (std::size_t k = 0; k < h; ++k) hid[k] = (hid[k] + logistic(g[k]) * u[k]) * 0.5;
    }

    double v = p_.proj.b(0, head);
    for (std::size_t k = 0; k < h; ++k) v += hid[k] * p_.proj.w(k, head);
    out[n] = v;
  }
}

double ConditionedVelocity::operator()(double y, double t) const {
  double out = 0.0;
  (*this)(std::span<const double>(&y, 1), t, std::span<double>(&out, 1));
  return out;
}

double forward(const NetConfig& cfg, const VelocityNetParams& params, double y, double t, std::span<const double> x,
               int a) {
  check_time(t);
  return ConditionedVelocity(cfg, params, x, a)(y, t);
}

std::vector<double> forward_batch(const NetConfig& cfg, const VelocityNetParams& params, std::span<const double> ys,
                                  std::span<const double> ts, const Matrix& x, std::span<const int> as) {
  const std::size_t n = ys.size();
  if (ts.size() != n || as.size() != n || x.rows() != n) {
    throw DimensionError("forward_batch: ys/ts/x/as lengths disagree");
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = forward(cfg, params, ys[i], ts[i], x.row(i), as[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Tape path

Matrix conditioning_matrix(const NetConfig& cfg, const Matrix& x, std::span<const int> as,
                           std::span<const double> ts) {
  const std::size_t n = x.rows();
  if (x.cols() != cfg.d_x) {
    throw DimensionError("conditioning_matrix: x has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(cfg.d_x));
  }
  if (as.size() != n || ts.size() != n) throw DimensionError("conditioning_matrix: row counts disagree");
  Matrix c(n, cfg.cond_dim());
  for (std::size_t i = 0; i < n; ++i) {
    check_treatment(as[i]);
    check_time(ts[i]);
    for (std::size_t j = 0; j < cfg.d_x; ++j) c(i, j) = x(i, j);
    c(i, cfg.d_x) = static_cast<double>(as[i]);
    const auto enc = encode_time(cfg, ts[i]);
    for (std::size_t e = 0; e < enc.size(); ++e) c(i, cfg.d_x + 1 + e) = enc[e];
  }
  return c;
}

numkit::Var velocity_on_tape(numkit::Tape& tape, const NetConfig& cfg, const VelocityNetParams& params,
                             const Matrix& ys, const Matrix& cond, std::span<const int> as) {
  using numkit::Var;
  const std::size_t n = ys.rows();
  if (ys.cols() != 1 || cond.rows() != n || cond.cols() != cfg.cond_dim() || as.size() != n) {
    throw DimensionError("velocity_on_tape: batch shapes disagree (ys " + numkit::shape_string(ys) + ", cond " +
                         numkit::shape_string(cond) + ")");
  }
  const std::size_t h = cfg.hidden();

  std::vector<Var> leaves;
  params.for_each([&](const std::string& name, const Matrix& m) { leaves.push_back(tape.parameter(name, m)); });
  std::size_t next = 0;
  auto take = [&]() { return leaves.at(next++); };

  const Var y = tape.constant(ys);
  const Var c = tape.constant(cond);

  const Var embed_w = take(), embed_b = take();
  const Var scale_w = take(), scale_b = take();
  const Var shift_w = take(), shift_b = take();

  Var hid = tape.add_row(tape.matmul(y, embed_w), embed_b);
  const Var scale = tape.add_row(tape.matmul(c, scale_w), scale_b);
  const Var shift = tape.add_row(tape.matmul(c, shift_w), shift_b);
  hid = tape.add(tape.multiply(scale, hid), shift);

  const Var half = tape.constant(Matrix(n, h, 0.5));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const Var gi_c = take(), gi_h = take(), gi_b = take(), go_w = take(), go_b = take();
    const Var vi_c = take(), vi_h = take(), vi_b = take(), vo_w = take(), vo_b = take();
    const Var g1 = tape.tanh(tape.add_row(tape.add(tape.matmul(c, gi_c), tape.matmul(hid, gi_h)), gi_b));
    const Var g = tape.add_row(tape.matmul(g1, go_w), go_b);
    const Var u1 = tape.tanh(tape.add_row(tape.add(tape.matmul(c, vi_c), tape.matmul(hid, vi_h)), vi_b));
    const Var u = tape.add_row(tape.matmul(u1, vo_w), vo_b);
    hid = tape.multiply(tape.add(hid, tape.multiply(tape.sigmoid(g), u)), half);
  }

  const Var proj_w = take(), proj_b = take();
  const Var heads = tape.add_row(tape.matmul(hid, proj_w), proj_b);

  Matrix mask(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    check_treatment(as[i]);
    mask(i, static_cast<std::size_t>(as[i])) = 1.0;
  }
  const Var selected = tape.multiply(heads, tape.constant(std::move(mask)));
  return tape.matmul(selected, tape.constant(Matrix(2, 1, 1.0)));
}

}  // namespace flowcausal::net
