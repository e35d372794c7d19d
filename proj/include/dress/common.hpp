#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dress {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Violation of an operation's preconditions (shape mismatch, bad argument).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input files or records that break domain invariants.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure (NaN loss, diverging training, failed certification).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

/// Deterministic RNG. The generator is the (fully specified) mt19937_64;
/// all distributions are implemented here explicitly so that streams are
/// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(splitmix64(seed)) {}

  /// Independent stream keyed by (seed, stream id), e.g. one per episode.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
  }

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no cached spare; stream stays simple).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * EIGEN_PI * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % uint64_t(n);
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return int(v % uint64_t(n));
  }

  /// Index drawn from a probability vector (CDF scan).
  int categorical(const Vector& probs) {
    double u = uniform01();
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return int(probs.size()) - 1;
  }

  /// k distinct indices from [0, n), order randomized (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw ContractError("sample_without_replacement: k > n");
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_int(n - i)]);
    idx.resize(k);
    return idx;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[i], v[uniform_int(i + 1)]);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dress
