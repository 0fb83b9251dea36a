#pragma once

#include <cstdint>

namespace cvnn {

/// PCG32 (XSH-RR output, 64-bit LCG state; O'Neill 2014). Every sampling
/// routine below is written out here rather than taken from <random> so
/// that a seed replays the same stream on every platform and toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814fULL);

  std::uint32_t next_u32();
  /// 53-bit uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, bound).
  std::uint32_t below(std::uint32_t bound);
  /// Standard normal via Box-Muller; the spare value is cached.
  double normal();

  /// Independent child generator; used to give each parameter its own stream.
  Rng split();

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cvnn
