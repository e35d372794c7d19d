#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dress/common.hpp"

namespace dress::nn {

class ParamStore;
class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid for the tape that
/// produced it.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

enum class Activation { identity, relu, tanh, sigmoid };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Reverse-mode tape over dense double matrices. Each operation appends a
/// node holding its value and a pullback that scatters the node's gradient
/// into its parents. backward() walks the tape once, in reverse; leaves
/// bound to a ParamStore accumulate their gradients there.
///
/// The tape is single-use: build a graph, call backward() at most once,
/// then discard. Row vectors are 1xN matrices throughout.
class Tape {
 public:
  Tape();

  // ---- leaves ----
  Var input(Matrix value);
  Var constant(Matrix value) { return input(std::move(value)); }
  Var scalar(double value);
  /// Leaf bound to a named parameter; repeated calls with the same
  /// (store, name) return the same node so gradients accumulate in one place.
  Var param(ParamStore& store, const std::string& name);

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);  // elementwise product
  Var matmul(Var a, Var b);
  Var scale(Var a, double c);
  Var affine_scalar(Var a, double mul, double add);  // mul * a + add, elementwise
  Var add_rowvec(Var a, Var row);                    // broadcast a 1xN row over rows of a
  Var sum_vars(const std::vector<Var>& vs);          // elementwise sum of same-shape vars

  // ---- shape ----
  Var concat_cols(const std::vector<Var>& vs);
  Var stack_rows(const std::vector<Var>& vs);
  Var pick(Var a, int r, int c);          // 1x1 extraction
  Var rows(Var a, int start, int count);  // contiguous row block
  Var transpose(Var a);

  // ---- nonlinearities and reductions ----
  Var activation(Var a, Activation act);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);
  Var min_scalar(Var a, Var b);  // both 1x1
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var square_norm(Var a);              // sum of squared entries, 1x1
  Var softmax_row(Var logits);         // 1xN, max-subtracted
  Var entropy_row(Var dist);           // -sum p log p of a 1xN distribution
  Var rows_mean(Var table, std::vector<int> ids);  // mean of selected rows

  // ---- access ----
  const Matrix& value(Var v) const;
  double scalar_value(Var v) const { return value_at(v, 0, 0); }
  /// Gradient of the last backward()'s loss w.r.t. this node.
  const Matrix& grad(Var v) const;
  int size() const { return int(nodes_.size()); }

  /// Reverse pass from a 1x1 loss node. Accumulates parameter gradients
  /// into their bound stores. A second call without a fresh forward pass
  /// is an error.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&)> pull;  // empty for leaves
  };

  double value_at(Var v, int r, int c) const { return value(v)(r, c); }
  Var push(Matrix value, std::function<void(Tape&)> pull);
  Matrix& grad_ref(int idx) { return nodes_[idx].grad; }
  void check(Var v) const;

  std::vector<Node> nodes_;
  struct Binding {
    int node;
    ParamStore* store;
    std::string name;
  };
  std::vector<Binding> bindings_;
  std::map<std::pair<const void*, std::string>, int> param_cache_;
  bool backward_done_ = false;
};

}  // namespace dress::nn
