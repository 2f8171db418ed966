#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "fedtrace/common.hpp"

namespace fedtrace {

// splitmix64 step, used to whiten seeds before feeding mt19937_64.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a label, so that
// unrelated components never share a stream even when given the same base.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t s = base ^ 0x6a09e667f3bcc908ULL;
  splitmix64(s);
  for (unsigned char c : tag) {
    s ^= static_cast<std::uint64_t>(c);
    splitmix64(s);
  }
  std::uint64_t out = s;
  return splitmix64(out);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  std::uint64_t s = derive_seed(base, tag) ^ (index * 0x2545f4914f6cdd1dULL + 1);
  return splitmix64(s);
}

inline std::mt19937_64 make_engine(std::uint64_t base, std::string_view tag) {
  return std::mt19937_64(derive_seed(base, tag));
}

inline std::mt19937_64 make_engine(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  return std::mt19937_64(derive_seed(base, tag, index));
}

inline Vec gaussian_vec(std::mt19937_64& eng, int n, double sigma = 1.0) {
  std::normal_distribution<double> d(0.0, sigma);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = d(eng);
  return v;
}

}  // namespace fedtrace
