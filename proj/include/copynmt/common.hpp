#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace copynmt {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Reserved vocabulary ids. Fixed positions, shared by every module.
enum ReservedId : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kAnnotOpen = 3,   // surface "#"
  kAnnotSep = 4,    // surface "##"
  kAnnotClose = 5,  // surface "#" (same surface as open; ids drive parsing)
  kNumReserved = 6
};

// splitmix64-based generator. We roll our own draws instead of using
// <random> distributions so that sequences are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform index in [0, n)
  std::size_t index(std::size_t n) { return std::size_t(next_u64() % n); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  // categorical draw from a probability vector (entries >= 0, sum ~ 1)
  int categorical(const Vec& p) {
    double u = next_double();
    double c = 0.0;
    for (int i = 0; i < p.size(); ++i) {
      c += p[i];
      if (u < c) return i;
    }
    return int(p.size()) - 1;
  }

 private:
  std::uint64_t state_;
};

// FNV-1a over bytes; used for input/content hashes in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace copynmt
