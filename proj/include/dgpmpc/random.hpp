#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "dgpmpc/common.hpp"

namespace dgpmpc {

// Mixes a base seed with a key path into an independent stream seed.
// Streams derived from distinct keys are statistically independent, so
// work split across threads can be keyed by (particle, batch, step) and
// the results stay identical for any number of workers.
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> key);

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }

  // Fresh independent stream keyed off the next output of this one.
  RngStream split(std::initializer_list<std::uint64_t> key);

  Matrix normal_matrix(Index rows, Index cols);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dgpmpc
