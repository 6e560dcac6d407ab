#pragma once

// Conditional velocity field v(y, t; x, a) for a univariate outcome.
//
//   h = embed(y)
//   c = [x, a, enc(t)]
//   h = film_scale(c) * h + film_shift(c)
//   repeat for each block:
//     g = gate_out(tanh(gate_in(c, h)))
//     u = value_out(tanh(value_in(c, h)))
//     h = (h + sigmoid(g) * u) / 2
//   (v0, v1) = proj(h);  return v_a
//
// Two evaluation paths exist: ConditionedVelocity, a plain batched evaluator
// used by the ODE solver, and velocity_on_tape(), which records the same
// computation for training gradients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowcausal/numkit.hpp"

namespace flowcausal::net {

using numkit::Matrix;

enum class TimeEncoding { ScalarAppend, Sinusoidal };

struct NetConfig {
  std::size_t d_x = 1;
  std::size_t hidden_dim = 0;  // 0 selects d_x + 1
  std::size_t n_res_blocks = 2;
  TimeEncoding time_encoding = TimeEncoding::ScalarAppend;
  std::size_t n_frequencies = 4;  // sinusoidal only
  std::uint64_t init_seed = 0;

  std::size_t hidden() const { return hidden_dim == 0 ? d_x + 1 : hidden_dim; }
  std::size_t time_dim() const { return time_encoding == TimeEncoding::ScalarAppend ? 1 : 2 * n_frequencies; }
  std::size_t cond_dim() const { return d_x + 1 + time_dim(); }
  void validate() const;
};

struct Affine {
  Matrix w;  // in x out
  Matrix b;  // 1 x out
};

// Affine map over the concatenation [c, h], stored as two weight blocks.
struct ConditionedAffine {
  Matrix w_cond;    // cond_dim x hidden
  Matrix w_hidden;  // hidden x hidden
  Matrix b;         // 1 x hidden
};

struct GatedBlock {
  ConditionedAffine gate_in;
  Affine gate_out;
  ConditionedAffine value_in;
  Affine value_out;
};

struct VelocityNetParams {
  Affine embed;       // 1 -> hidden
  Affine film_scale;  // cond -> hidden
  Affine film_shift;  // cond -> hidden
  std::vector<GatedBlock> blocks;
  Affine proj;  // hidden -> 2 (heads v0, v1)

  // Visits every tensor as (name, matrix) in a fixed order.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f(std::string("embed.w"), p.embed.w);
    f(std::string("embed.b"), p.embed.b);
    f(std::string("film_scale.w"), p.film_scale.w);
    f(std::string("film_scale.b"), p.film_scale.b);
    f(std::string("film_shift.w"), p.film_shift.w);
    f(std::string("film_shift.b"), p.film_shift.b);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      const std::string pre = "block" + std::to_string(i) + ".";
      auto& blk = p.blocks[i];
      f(pre + "gate_in.w_cond", blk.gate_in.w_cond);
      f(pre + "gate_in.w_hidden", blk.gate_in.w_hidden);
      f(pre + "gate_in.b", blk.gate_in.b);
      f(pre + "gate_out.w", blk.gate_out.w);
      f(pre + "gate_out.b", blk.gate_out.b);
      f(pre + "value_in.w_cond", blk.value_in.w_cond);
      f(pre + "value_in.w_hidden", blk.value_in.w_hidden);
      f(pre + "value_in.b", blk.value_in.b);
      f(pre + "value_out.w", blk.value_out.w);
      f(pre + "value_out.b", blk.value_out.b);
    }
    f(std::string("proj.w"), p.proj.w);
    f(std::string("proj.b"), p.proj.b);
  }
};

// All tensors at their configured shapes, filled with zeros (v == 0).
VelocityNetParams zero_params(const NetConfig& cfg);

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
VelocityNetParams init(const NetConfig& cfg);

// Throws DimensionError when a tensor does not have the shape cfg implies.
void check_shapes(const NetConfig& cfg, const VelocityNetParams& params);

std::vector<double> encode_time(const NetConfig& cfg, double t);

// v evaluated for fixed (x, a); callable on a batch of outcome values at a
// single time. Holds a reference to `params`, which must outlive it.
// Conditioning contributions are precomputed at construction.
class ConditionedVelocity {
 public:
  ConditionedVelocity(const NetConfig& cfg, const VelocityNetParams& params, std::span<const double> x, int a);

  void operator()(std::span<const double> ys, double t, std::span<double> out) const;
  double operator()(double y, double t) const;

 private:
  struct CondLayer {
    std::vector<double> base;  // bias + [x, a] part, length hidden
    const Matrix* w_cond;      // rows d_x + 1 .. are the time rows
  };
  void conditioned(const CondLayer& layer, std::span<const double> enc, std::vector<double>& out) const;

  NetConfig cfg_;
  const VelocityNetParams& p_;
  int a_;
  CondLayer scale_;
  CondLayer shift_;
  std::vector<CondLayer> gate_;
  std::vector<CondLayer> value_;
};

double forward(const NetConfig& cfg, const VelocityNetParams& params, double y, double t, std::span<const double> x,
               int a);

std::vector<double> forward_batch(const NetConfig& cfg, const VelocityNetParams& params, std::span<const double> ys,
                                  std::span<const double> ts, const Matrix& x, std::span<const int> as);

// Rows [x_i, a_i, enc(t_i)].
Matrix conditioning_matrix(const NetConfig& cfg, const Matrix& x, std::span<const int> as, std::span<const double> ts);

// Records the batched forward pass on `tape`; every tensor becomes a
// parameter leaf named as in for_each. Returns a B x 1 node.
numkit::Var velocity_on_tape(numkit::Tape& tape, const NetConfig& cfg, const VelocityNetParams& params,
                             const Matrix& ys, const Matrix& cond, std::span<const int> as);

}  // namespace flowcausal::net
