#include "dress/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dress {

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace dress

namespace dress::nn {

Matrix& ParamStore::add(const std::string& name, Matrix init) {
  auto [it, inserted] = entries_.emplace(name, Entry{});
  if (!inserted) throw ContractError("ParamStore: duplicate parameter name " + name);
  it->second.value = std::move(init);
  it->second.grad = Matrix::Zero(it->second.value.rows(), it->second.value.cols());
  it->second.m = it->second.grad;
  it->second.v = it->second.grad;
  return it->second.value;
}

const Matrix& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second.value;
}

Matrix& ParamStore::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second.value;
}

const Matrix& ParamStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second.grad;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

int ParamStore::total_size() const {
  int n = 0;
  for (const auto& [_, e] : entries_) n += int(e.value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, e] : entries_) e.grad.setZero();
  grads_ready_ = true;
}

void ParamStore::accumulate_grad(const std::string& name, const Matrix& g) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  Entry& e = it->second;
  if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
    throw ContractError("ParamStore: gradient shape " + shape_str(g) + " does not match " +
                        name + " " + shape_str(e.value));
  e.grad += g;
  grads_ready_ = true;
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, e] : entries_) sq += e.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParamStore::clip_grad_norm(double max_norm) {
  double n = grad_norm();
  if (n > max_norm && n > 0.0) {
    double s = max_norm / n;
    for (auto& [_, e] : entries_) e.grad *= s;
  }
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  if (!grads_ready_)
    throw ContractError("ParamStore: adam_step with no gradients populated");
  for (auto& [name, e] : entries_) {
    e.step += 1;
    e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
    e.v = cfg.beta2 * e.v.array().matrix() +
          (1.0 - cfg.beta2) * e.grad.cwiseProduct(e.grad);
    double bc1 = 1.0 - std::pow(cfg.beta1, double(e.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(e.step));
    Matrix m_hat = e.m / bc1;
    Matrix v_hat = e.v / bc2;
    e.value.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
    check_finite(e.value, name.c_str());
  }
}

void ParamStore::save(const std::string& path, const CheckpointHeader& header) const {
  nlohmann::ordered_json j;
  j["format"] = "dress-checkpoint";
  j["version"] = header.version;
  j["seed"] = header.seed;
  j["config_hash"] = header.config_hash;
  nlohmann::ordered_json params;
  for (const auto& [name, e] : entries_) {
    nlohmann::ordered_json p;
    p["shape"] = {e.value.rows(), e.value.cols()};
    std::vector<double> vals;
    vals.reserve(e.value.size());
    for (Eigen::Index r = 0; r < e.value.rows(); ++r)
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) vals.push_back(e.value(r, c));
    p["values"] = vals;
    params[name] = std::move(p);
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out << j.dump() << "\n";
}

std::pair<ParamStore, CheckpointHeader> ParamStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != "dress-checkpoint")
    throw DataError("not a dress checkpoint: " + path);
  CheckpointHeader header;
  header.version = j.value("version", 0);
  if (header.version != 1)
    throw DataError("unsupported checkpoint version in " + path);
  header.seed = j.value("seed", uint64_t(0));
  header.config_hash = j.value("config_hash", "");
  ParamStore store;
  for (const auto& [name, p] : j.at("params").items()) {
    auto shape = p.at("shape").get<std::vector<Eigen::Index>>();
    auto vals = p.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || Eigen::Index(vals.size()) != shape[0] * shape[1])
      throw DataError("checkpoint parameter " + name + " has inconsistent shape");
    Matrix m(shape[0], shape[1]);
    size_t k = 0;
    for (Eigen::Index r = 0; r < shape[0]; ++r)
      for (Eigen::Index c = 0; c < shape[1]; ++c) m(r, c) = vals[k++];
    store.add(name, std::move(m));
  }
  return {std::move(store), std::move(header)};
}

Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  double a = std::sqrt(6.0 / double(rows + cols));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

void init_dense(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
  store.add(prefix + ".W", glorot_uniform(in, out, rng));
  store.add(prefix + ".b", Matrix::Zero(1, out));
}

void init_gru(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    store.add(prefix + ".W_" + gate, glorot_uniform(in, hidden, rng));
    store.add(prefix + ".U_" + gate, glorot_uniform(hidden, hidden, rng));
    store.add(prefix + ".b_" + gate, Matrix::Zero(1, hidden));
  }
}

}  // namespace dress::nn
