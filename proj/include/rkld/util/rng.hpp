// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace rkld {

// Seeded generator whose distributions produce the same stream on every
// platform (the std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean, double stddev) {
    return boost::random::normal_distribution<double>(mean, stddev)(engine_);
  }

  double uniform() { return boost::random::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t next() { return engine_(); }

 private:
  boost::random::mt19937_64 engine_;
};

}  // namespace rkld
