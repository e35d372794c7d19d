#include "dress/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dress/params.hpp"

namespace dress::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Tape::Tape() { nodes_.reserve(256); }

void Tape::check(Var v) const {
  if (!v.valid() || v.idx >= int(nodes_.size()))
    throw ContractError("tape: invalid Var handle");
}

Var Tape::push(Matrix value, std::function<void(Tape&)> pull) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(pull)});
  return Var{int(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return input(std::move(m));
}

Var Tape::param(ParamStore& store, const std::string& name) {
  auto key = std::make_pair(static_cast<const void*>(&store), name);
  auto it = param_cache_.find(key);
  if (it != param_cache_.end()) return Var{it->second};
  Var v = input(store.value(name));
  param_cache_.emplace(key, v.idx);
  bindings_.push_back(Binding{v.idx, &store, name});
  return v;
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Matrix &va = nodes_[a.idx].value, &vb = nodes_[b.idx].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw ContractError("add: shape mismatch " + shape_str(va) + " vs " + shape_str(vb));
  return push(va + vb, [a, b, self = size()](Tape& t) {
    t.grad_ref(a.idx) += t.nodes_[self].grad;
    t.grad_ref(b.idx) += t.nodes_[self].grad;
  });
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Matrix &va = nodes_[a.idx].value, &vb = nodes_[b.idx].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw ContractError("sub: shape mismatch " + shape_str(va) + " vs " + shape_str(vb));
  return push(va - vb, [a, b, self = size()](Tape& t) {
    t.grad_ref(a.idx) += t.nodes_[self].grad;
    t.grad_ref(b.idx) -= t.nodes_[self].grad;
  });
}

Var Tape::cmul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix &va = nodes_[a.idx].value, &vb = nodes_[b.idx].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw ContractError("cmul: shape mismatch " + shape_str(va) + " vs " + shape_str(vb));
  return push(va.cwiseProduct(vb), [a, b, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    t.grad_ref(a.idx) += g.cwiseProduct(t.nodes_[b.idx].value);
    t.grad_ref(b.idx) += g.cwiseProduct(t.nodes_[a.idx].value);
  });
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix &va = nodes_[a.idx].value, &vb = nodes_[b.idx].value;
  if (va.cols() != vb.rows())
    throw ContractError("matmul: shape mismatch " + shape_str(va) + " * " + shape_str(vb));
  return push(va * vb, [a, b, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    t.grad_ref(a.idx).noalias() += g * t.nodes_[b.idx].value.transpose();
    t.grad_ref(b.idx).noalias() += t.nodes_[a.idx].value.transpose() * g;
  });
}

Var Tape::scale(Var a, double c) {
  check(a);
  return push(nodes_[a.idx].value * c, [a, c, self = size()](Tape& t) {
    t.grad_ref(a.idx) += c * t.nodes_[self].grad;
  });
}

Var Tape::affine_scalar(Var a, double mul, double add) {
  check(a);
  return push((nodes_[a.idx].value.array() * mul + add).matrix(),
              [a, mul, self = size()](Tape& t) {
                t.grad_ref(a.idx) += mul * t.nodes_[self].grad;
              });
}

Var Tape::add_rowvec(Var a, Var row) {
  check(a);
  check(row);
  const Matrix &va = nodes_[a.idx].value, &vr = nodes_[row.idx].value;
  if (vr.rows() != 1 || va.cols() != vr.cols())
    throw ContractError("add_rowvec: shape mismatch " + shape_str(va) + " + " + shape_str(vr));
  return push(va.rowwise() + vr.row(0), [a, row, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    t.grad_ref(a.idx) += g;
    t.grad_ref(row.idx).row(0) += g.colwise().sum();
  });
}

Var Tape::sum_vars(const std::vector<Var>& vs) {
  if (vs.empty()) throw ContractError("sum_vars: empty input");
  check(vs.front());
  Matrix acc = nodes_[vs.front().idx].value;
  for (size_t i = 1; i < vs.size(); ++i) {
    check(vs[i]);
    const Matrix& vi = nodes_[vs[i].idx].value;
    if (vi.rows() != acc.rows() || vi.cols() != acc.cols())
      throw ContractError("sum_vars: shape mismatch " + shape_str(acc) + " vs " + shape_str(vi));
    acc += vi;
  }
  return push(std::move(acc), [vs, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    for (Var v : vs) t.grad_ref(v.idx) += g;
  });
}

Var Tape::concat_cols(const std::vector<Var>& vs) {
  if (vs.empty()) throw ContractError("concat_cols: empty input");
  Eigen::Index rows = nodes_[vs.front().idx].value.rows();
  Eigen::Index cols = 0;
  for (Var v : vs) {
    check(v);
    if (nodes_[v.idx].value.rows() != rows)
      throw ContractError("concat_cols: row count mismatch");
    cols += nodes_[v.idx].value.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var v : vs) {
    const Matrix& m = nodes_[v.idx].value;
    out.middleCols(at, m.cols()) = m;
    at += m.cols();
  }
  return push(std::move(out), [vs, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index at = 0;
    for (Var v : vs) {
      Eigen::Index w = t.nodes_[v.idx].value.cols();
      t.grad_ref(v.idx) += g.middleCols(at, w);
      at += w;
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& vs) {
  if (vs.empty()) throw ContractError("stack_rows: empty input");
  Eigen::Index cols = nodes_[vs.front().idx].value.cols();
  Eigen::Index rows = 0;
  for (Var v : vs) {
    check(v);
    if (nodes_[v.idx].value.cols() != cols)
      throw ContractError("stack_rows: column count mismatch");
    rows += nodes_[v.idx].value.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var v : vs) {
    const Matrix& m = nodes_[v.idx].value;
    out.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return push(std::move(out), [vs, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index at = 0;
    for (Var v : vs) {
      Eigen::Index h = t.nodes_[v.idx].value.rows();
      t.grad_ref(v.idx) += g.middleRows(at, h);
      at += h;
    }
  });
}

Var Tape::rows(Var a, int start, int count) {
  check(a);
  const Matrix& va = nodes_[a.idx].value;
  if (start < 0 || count < 1 || start + count > va.rows())
    throw ContractError("rows: block [" + std::to_string(start) + ", +" +
                        std::to_string(count) + ") out of range for " + shape_str(va));
  return push(va.middleRows(start, count), [a, start, count, self = size()](Tape& t) {
    t.grad_ref(a.idx).middleRows(start, count) += t.nodes_[self].grad;
  });
}

Var Tape::transpose(Var a) {
  check(a);
  return push(nodes_[a.idx].value.transpose(), [a, self = size()](Tape& t) {
    t.grad_ref(a.idx) += t.nodes_[self].grad.transpose();
  });
}

Var Tape::pick(Var a, int r, int c) {
  check(a);
  const Matrix& va = nodes_[a.idx].value;
  if (r < 0 || r >= va.rows() || c < 0 || c >= va.cols())
    throw ContractError("pick: index out of range for " + shape_str(va));
  Matrix out(1, 1);
  out(0, 0) = va(r, c);
  return push(std::move(out), [a, r, c, self = size()](Tape& t) {
    t.grad_ref(a.idx)(r, c) += t.nodes_[self].grad(0, 0);
  });
}

Var Tape::activation(Var a, Activation act) {
  check(a);
  const Matrix& va = nodes_[a.idx].value;
  Matrix out;
  switch (act) {
    case Activation::identity: out = va; break;
    case Activation::relu: out = va.cwiseMax(0.0); break;
    case Activation::tanh: out = va.array().tanh().matrix(); break;
    case Activation::sigmoid:
      out = (1.0 / (1.0 + (-va.array()).exp())).matrix();
      break;
  }
  return push(std::move(out), [a, act, self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].value;
    switch (act) {
      case Activation::identity: t.grad_ref(a.idx) += g; break;
      case Activation::relu: {
        const Matrix& x = t.nodes_[a.idx].value;
        t.grad_ref(a.idx).array() += g.array() * (x.array() > 0.0).cast<double>();
        break;
      }
      case Activation::tanh:
        t.grad_ref(a.idx).array() += g.array() * (1.0 - y.array().square());
        break;
      case Activation::sigmoid:
        t.grad_ref(a.idx).array() += g.array() * y.array() * (1.0 - y.array());
        break;
    }
  });
}

Var Tape::log(Var a) {
  check(a);
  return push(nodes_[a.idx].value.array().log().matrix(), [a, self = size()](Tape& t) {
    t.grad_ref(a.idx).array() +=
        t.nodes_[self].grad.array() / t.nodes_[a.idx].value.array();
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  check(a);
  return push(nodes_[a.idx].value.cwiseMax(lo).cwiseMin(hi),
              [a, lo, hi, self = size()](Tape& t) {
                const Matrix& x = t.nodes_[a.idx].value;
                const Matrix& g = t.nodes_[self].grad;
                t.grad_ref(a.idx).array() +=
                    g.array() * ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
              });
}

Var Tape::min_scalar(Var a, Var b) {
  check(a);
  check(b);
  if (nodes_[a.idx].value.size() != 1 || nodes_[b.idx].value.size() != 1)
    throw ContractError("min_scalar: both operands must be 1x1");
  double va = scalar_value(a), vb = scalar_value(b);
  Matrix out(1, 1);
  out(0, 0) = std::min(va, vb);
  bool pick_a = va <= vb;  // ties route to the first argument
  return push(std::move(out), [a, b, pick_a, self = size()](Tape& t) {
    t.grad_ref(pick_a ? a.idx : b.idx)(0, 0) += t.nodes_[self].grad(0, 0);
  });
}

Var Tape::sum_all(Var a) {
  check(a);
  Matrix out(1, 1);
  out(0, 0) = nodes_[a.idx].value.sum();
  return push(std::move(out), [a, self = size()](Tape& t) {
    t.grad_ref(a.idx).array() += t.nodes_[self].grad(0, 0);
  });
}

Var Tape::mean_all(Var a) {
  check(a);
  double n = double(nodes_[a.idx].value.size());
  Matrix out(1, 1);
  out(0, 0) = nodes_[a.idx].value.mean();
  return push(std::move(out), [a, n, self = size()](Tape& t) {
    t.grad_ref(a.idx).array() += t.nodes_[self].grad(0, 0) / n;
  });
}

Var Tape::square_norm(Var a) {
  check(a);
  Matrix out(1, 1);
  out(0, 0) = nodes_[a.idx].value.squaredNorm();
  return push(std::move(out), [a, self = size()](Tape& t) {
    t.grad_ref(a.idx) += 2.0 * t.nodes_[self].grad(0, 0) * t.nodes_[a.idx].value;
  });
}

Var Tape::softmax_row(Var logits) {
  check(logits);
  const Matrix& x = nodes_[logits.idx].value;
  if (x.rows() != 1 || x.cols() < 1)
    throw ContractError("softmax_row: expected non-empty row vector, got " + shape_str(x));
  Eigen::ArrayXd shifted = x.row(0).array() - x.row(0).maxCoeff();
  Eigen::ArrayXd e = shifted.exp();
  Matrix out = (e / e.sum()).matrix().transpose();
  return push(std::move(out), [logits, self = size()](Tape& t) {
    const Matrix& y = t.nodes_[self].value;
    const Matrix& g = t.nodes_[self].grad;
    double dot = (g.array() * y.array()).sum();
    t.grad_ref(logits.idx).array() += y.array() * (g.array() - dot);
  });
}

Var Tape::entropy_row(Var dist) {
  check(dist);
  const Matrix& p = nodes_[dist.idx].value;
  if (p.rows() != 1) throw ContractError("entropy_row: expected row vector");
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.cols(); ++i)
    if (p(0, i) > 0.0) h -= p(0, i) * std::log(p(0, i));
  Matrix out(1, 1);
  out(0, 0) = h;
  return push(std::move(out), [dist, self = size()](Tape& t) {
    const Matrix& p = t.nodes_[dist.idx].value;
    double g = t.nodes_[self].grad(0, 0);
    for (Eigen::Index i = 0; i < p.cols(); ++i)
      if (p(0, i) > 0.0) t.grad_ref(dist.idx)(0, i) += g * (-(std::log(p(0, i)) + 1.0));
  });
}

Var Tape::rows_mean(Var table, std::vector<int> ids) {
  check(table);
  const Matrix& tab = nodes_[table.idx].value;
  if (ids.empty()) throw ContractError("rows_mean: empty id list");
  for (int id : ids)
    if (id < 0 || id >= tab.rows())
      throw ContractError("rows_mean: row id " + std::to_string(id) + " out of range for " +
                          shape_str(tab));
  Matrix out = Matrix::Zero(1, tab.cols());
  for (int id : ids) out.row(0) += tab.row(id);
  out /= double(ids.size());
  return push(std::move(out), [table, ids = std::move(ids), self = size()](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    double w = 1.0 / double(ids.size());
    for (int id : ids) t.grad_ref(table.idx).row(id) += w * g.row(0);
  });
}

const Matrix& Tape::value(Var v) const {
  check(v);
  return nodes_[v.idx].value;
}

const Matrix& Tape::grad(Var v) const {
  check(v);
  if (!backward_done_) throw ContractError("tape: grad() before backward()");
  return nodes_[v.idx].grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (backward_done_)
    throw ContractError("tape: backward() called twice without a fresh forward pass");
  if (nodes_.empty()) throw ContractError("tape: backward() before any forward pass");
  const Matrix& lv = nodes_[loss.idx].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("tape: backward() needs a 1x1 loss, got " + shape_str(lv));

  for (Node& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_[loss.idx].grad(0, 0) = 1.0;
  for (int i = loss.idx; i >= 0; --i)
    if (nodes_[i].pull) nodes_[i].pull(*this);
  backward_done_ = true;

  for (const Binding& b : bindings_) {
    check_finite(nodes_[b.node].grad, "parameter gradient");
    b.store->accumulate_grad(b.name, nodes_[b.node].grad);
  }
}

}  // namespace dress::nn
