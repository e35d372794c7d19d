#include "dress/nn.hpp"

#include <cmath>

namespace dress::nn {

Var dense_forward(Tape& t, Var x, Var W, Var b, Activation act) {
  return t.activation(t.add_rowvec(t.matmul(x, W), b), act);
}

GruVars lease_gru(Tape& t, ParamStore& store, const std::string& prefix) {
  GruVars g;
  g.W_z = t.param(store, prefix + ".W_z");
  g.U_z = t.param(store, prefix + ".U_z");
  g.b_z = t.param(store, prefix + ".b_z");
  g.W_r = t.param(store, prefix + ".W_r");
  g.U_r = t.param(store, prefix + ".U_r");
  g.b_r = t.param(store, prefix + ".b_r");
  g.W_h = t.param(store, prefix + ".W_h");
  g.U_h = t.param(store, prefix + ".U_h");
  g.b_h = t.param(store, prefix + ".b_h");
  return g;
}

Var gru_step(Tape& t, Var x, Var h, const GruVars& g) {
  Var z = t.activation(t.add_rowvec(t.add(t.matmul(x, g.W_z), t.matmul(h, g.U_z)), g.b_z),
                       Activation::sigmoid);
  Var r = t.activation(t.add_rowvec(t.add(t.matmul(x, g.W_r), t.matmul(h, g.U_r)), g.b_r),
                       Activation::sigmoid);
  Var hc = t.activation(
      t.add_rowvec(t.add(t.matmul(x, g.W_h), t.matmul(t.cmul(r, h), g.U_h)), g.b_h),
      Activation::tanh);
  // h' = (1 - z) . h + z . hc
  Var one_minus_z = t.affine_scalar(z, -1.0, 1.0);
  return t.add(t.cmul(one_minus_z, h), t.cmul(z, hc));
}

Var softmax(Tape& t, Var logits) { return t.softmax_row(logits); }

Var cross_entropy(Tape& t, Var p_hat, int y) {
  if (y != 0 && y != 1)
    throw ContractError("cross_entropy: label must be 0 or 1, got " + std::to_string(y));
  Var p = t.clamp(p_hat, kEpsProb, 1.0 - kEpsProb);
  if (y == 1) return t.scale(t.log(p), -1.0);
  return t.scale(t.log(t.affine_scalar(p, -1.0, 1.0)), -1.0);
}

Var mse(Tape& t, Var y_hat, Var y) { return t.square_norm(t.sub(y_hat, y)); }

// ---- plain path ----

Matrix dense_forward(const Matrix& x, const Matrix& W, const Matrix& b, Activation act) {
  if (x.cols() != W.rows())
    throw ContractError("dense_forward: shape mismatch " + shape_str(x) + " * " +
                        shape_str(W));
  Matrix y = (x * W).rowwise() + b.row(0);
  switch (act) {
    case Activation::identity: return y;
    case Activation::relu: return y.cwiseMax(0.0);
    case Activation::tanh: return y.array().tanh().matrix();
    case Activation::sigmoid: return (1.0 / (1.0 + (-y.array()).exp())).matrix();
  }
  return y;
}

Matrix gru_step(const Matrix& x, const Matrix& h, const ParamStore& s,
                const std::string& p) {
  auto sig = [](const Matrix& m) { return (1.0 / (1.0 + (-m.array()).exp())).matrix(); };
  Matrix z = sig(((x * s.value(p + ".W_z") + h * s.value(p + ".U_z")).rowwise() +
                  s.value(p + ".b_z").row(0)));
  Matrix r = sig(((x * s.value(p + ".W_r") + h * s.value(p + ".U_r")).rowwise() +
                  s.value(p + ".b_r").row(0)));
  Matrix hc = ((x * s.value(p + ".W_h") + r.cwiseProduct(h) * s.value(p + ".U_h"))
                   .rowwise() +
               s.value(p + ".b_h").row(0))
                  .array()
                  .tanh()
                  .matrix();
  return (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(hc);
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw ContractError("softmax: empty input");
  Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

double cross_entropy(double p_hat, int y) {
  if (y != 0 && y != 1)
    throw ContractError("cross_entropy: label must be 0 or 1, got " + std::to_string(y));
  double p = std::min(std::max(p_hat, kEpsProb), 1.0 - kEpsProb);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double mse(const Matrix& y_hat, const Matrix& y) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw ContractError("mse: shape mismatch " + shape_str(y_hat) + " vs " + shape_str(y));
  return (y_hat - y).squaredNorm();
}

double entropy(const Vector& dist) {
  double sum = dist.sum();
  if (std::abs(sum - 1.0) > 1e-9 || dist.minCoeff() < 0.0)
    throw ContractError("entropy: input is not a probability vector");
  double h = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i)
    if (dist[i] > 0.0) h -= dist[i] * std::log(dist[i]);
  return h;
}

}  // namespace dress::nn
