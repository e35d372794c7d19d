#pragma once

#include <string>

#include "dress/params.hpp"
#include "dress/tape.hpp"

namespace dress::nn {

/// Probabilities are clamped to [kEpsProb, 1 - kEpsProb] before logarithms.
inline constexpr double kEpsProb = 1e-7;

// ---- differentiable (tape) path ----

/// y = activation(x W + b). x is (m x in), W (in x out), b (1 x out).
Var dense_forward(Tape& t, Var x, Var W, Var b, Activation act);

/// The nine GRU weight leaves of one cell, leased from a store.
struct GruVars {
  Var W_z, U_z, b_z;
  Var W_r, U_r, b_r;
  Var W_h, U_h, b_h;
};
GruVars lease_gru(Tape& t, ParamStore& store, const std::string& prefix);

/// One GRU step:
///   z = sigmoid(x W_z + h U_z + b_z)
///   r = sigmoid(x W_r + h U_r + b_r)
///   hc = tanh(x W_h + (r . h) U_h + b_h)
///   h' = (1 - z) . h + z . hc
Var gru_step(Tape& t, Var x, Var h, const GruVars& g);

Var softmax(Tape& t, Var logits);

/// -y log p - (1-y) log(1-p) on the clamped probability; y must be 0 or 1.
Var cross_entropy(Tape& t, Var p_hat, int y);

/// Squared L2 norm of the difference (no division by dimension).
Var mse(Tape& t, Var y_hat, Var y);

// ---- plain (inference) path ----
// Same math as the tape ops, without graph bookkeeping. Used where the
// involved parameters are frozen (rollouts, evaluation). Cross-checked
// against the tape path in the test suite.

Matrix dense_forward(const Matrix& x, const Matrix& W, const Matrix& b, Activation act);
Matrix gru_step(const Matrix& x, const Matrix& h, const ParamStore& store,
                const std::string& prefix);
Vector softmax(const Vector& logits);
double cross_entropy(double p_hat, int y);
double mse(const Matrix& y_hat, const Matrix& y);
/// -sum p log p with 0 log 0 := 0. Errors if the vector is not a
/// distribution (sum off by more than 1e-9 or negative entries).
double entropy(const Vector& dist);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace dress::nn
