#include "dgpmpc/random.hpp"

namespace dgpmpc {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t k : key) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

std::size_t RngStream::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

RngStream RngStream::split(std::initializer_list<std::uint64_t> key) {
  return RngStream(derive_seed(engine_(), key));
}

Matrix RngStream::normal_matrix(Index rows, Index cols) {
  Matrix out(rows, cols);
  // Row-major fill order so the draws for a row do not depend on the
  // number of rows.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = normal();
  return out;
}

}  // namespace dgpmpc
