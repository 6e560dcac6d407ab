#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace flowcausal {

using Rng = std::mt19937_64;

// Independent generator for (seed, stream); used to give each row of a
// per-row query its own reproducible draws regardless of evaluation order.
inline Rng substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline std::vector<double> standard_normals(Rng& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = normal(rng);
  return out;
}

}  // namespace flowcausal
