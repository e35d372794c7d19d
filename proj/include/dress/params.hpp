#pragma once

#include <map>
#include <string>
#include <vector>

#include "dress/common.hpp"

namespace dress::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct CheckpointHeader {
  int version = 1;
  uint64_t seed = 0;
  std::string config_hash;
};

/// Named parameter container with per-parameter Adam state. Names are
/// slash-free dotted paths ("gru.W_z"). Iteration order is the ordered map's,
/// so reductions over parameters are deterministic.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Matrix init);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const Matrix& value(const std::string& name) const;
  Matrix& mutable_value(const std::string& name);
  const Matrix& grad(const std::string& name) const;
  std::vector<std::string> names() const;
  int total_size() const;

  void zero_grads();
  void accumulate_grad(const std::string& name, const Matrix& g);
  double grad_norm() const;
  /// Scales all gradients so their global L2 norm is at most max_norm.
  void clip_grad_norm(double max_norm);
  /// One Adam update with bias correction over every parameter.
  /// Deterministic; requires gradients to have been populated at least once.
  void adam_step(const AdamConfig& cfg);

  void save(const std::string& path, const CheckpointHeader& header) const;
  static std::pair<ParamStore, CheckpointHeader> load(const std::string& path);

 private:
  struct Entry {
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
    long long step = 0;
  };
  std::map<std::string, Entry> entries_;
  bool grads_ready_ = false;
};

/// Glorot-uniform weight matrix: uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)).
Matrix glorot_uniform(int rows, int cols, Rng& rng);

/// Registers W (in x out) and b (1 x out) under prefix.{W,b}.
void init_dense(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng);

/// Registers the six weight matrices and three biases of a GRU cell under
/// prefix.{W_z,U_z,b_z,W_r,U_r,b_r,W_h,U_h,b_h}.
void init_gru(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng);

}  // namespace dress::nn
