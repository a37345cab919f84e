#pragma once

#include <cstdint>
#include <vector>

namespace cxs {

/// Counter-free seeded stream: splitmix64 expands (seed, stream_id) into the
/// xoshiro256** state, so identical (seed, stream_id) reproduce identical
/// sequences on every platform and distinct stream ids give independent
/// streams. Draw costs are fixed: uniform01 and bernoulli consume one raw
/// draw, standard normal consumes two (Box-Muller, cosine branch),
/// permutation(n) consumes n-1.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream_id = 0);

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

  uint64_t next_u64();
  double uniform01();  // [0, 1)
  double normal();     // standard normal
  int bernoulli(double p);  // throws std::invalid_argument outside [0,1]
  std::vector<int> permutation(int n);
  /// Uniform integer in [0, n); one raw draw.
  int uniform_int(int n);

 private:
  uint64_t seed_ = 0;
  uint64_t stream_id_ = 0;
  uint64_t s_[4];
};

}  // namespace cxs
