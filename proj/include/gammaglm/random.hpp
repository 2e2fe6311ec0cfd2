#pragma once

#include <cstddef>
#include <algorithm>
#include <concepts>
#include <cstdint>
#include <random>
#include <vector>

#include "gammaglm/types.hpp"

namespace gammaglm {

using Rng = std::mt19937_64;

// splitmix64 finaliser; derives independent sub-seeds from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mini-batches drawn uniformly with replacement from a fixed dataset.
class ResamplingStream {
 public:
  ResamplingStream(const Dataset& data, std::uint64_t seed) : data_(&data), rng_(seed) {
    if (data.empty()) throw ConfigError("cannot stream from an empty dataset");
  }

  std::vector<std::size_t> next(std::size_t m) {
    std::uniform_int_distribution<std::size_t> pick(0, data_->size() - 1);
    std::vector<std::size_t> rows(m);
    for (auto& r : rows) r = pick(rng_);
    return rows;
  }

  const Dataset& data() const { return *data_; }

 private:
  const Dataset* data_;
  Rng rng_;
};

template <typename S>
concept BatchStream = requires(S s, std::size_t m) {
  { s.next(m) } -> std::convertible_to<std::vector<std::size_t>>;
  { s.data() } -> std::convertible_to<const Dataset&>;
};

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace gammaglm
