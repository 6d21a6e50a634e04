#include "selm/parameters.h"

#include <cmath>

#include "selm/errors.h"

namespace selm {

Matrix::Matrix(std::int64_t r, std::int64_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != r * c) {
    throw ShapeError("matrix " + std::to_string(r) + "x" + std::to_string(c) +
                     " given " + std::to_string(data.size()) + " values");
  }
}

Matrix Matrix::from_tensor(const Tensor& t) {
  Matrix m(t.rows(), t.cols());
  const float* src = t.raw();
  for (std::int64_t i = 0; i < m.size(); ++i) m.data[i] = src[i];
  return m;
}

Tensor Matrix::to_tensor() const { return to_tensor({rows, cols}); }

Tensor Matrix::to_tensor(const std::vector<std::int64_t>& shape) const {
  if (shape_product(shape) != size()) throw ShapeError("reshape size mismatch");
  std::vector<float> values(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) values[i] = static_cast<float>(data[i]);
  return Tensor(shape, std::move(values));
}

bool Matrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ParameterTree::add(const std::string& name, Tensor value, bool frozen) {
  if (name.empty()) throw ConfigError("parameter name must be non-empty");
  auto [it, inserted] = entries_.emplace(name, Parameter{std::move(value), frozen});
  if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
}

const Parameter& ParameterTree::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParameterTree::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterTree::set_frozen(const std::string& name, bool frozen) { at(name).frozen = frozen; }

std::set<std::string> ParameterTree::names() const {
  std::set<std::string> out;
  for (const auto& [name, _] : entries_) out.insert(name);
  return out;
}

std::set<std::string> ParameterTree::trainable_names() const {
  std::set<std::string> out;
  for (const auto& [name, p] : entries_) {
    if (!p.frozen) out.insert(name);
  }
  return out;
}

std::set<std::string> ParameterTree::frozen_names() const {
  std::set<std::string> out;
  for (const auto& [name, p] : entries_) {
    if (p.frozen) out.insert(name);
  }
  return out;
}

std::set<std::string> ParameterTree::names_with_prefix(const std::string& prefix) const {
  std::set<std::string> out;
  for (auto it = entries_.lower_bound(prefix);
       it != entries_.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it) {
    out.insert(it->first);
  }
  return out;
}

std::int64_t ParameterTree::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [_, p] : entries_) n += p.value.size();
  return n;
}

bool ParameterTree::bit_equal(const ParameterTree& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.value.bit_equal(b->second.value)) return false;
  }
  return true;
}

void adam_step(ParameterTree& params, const Gradients& grads, AdamState& state) {
  // Validate everything before touching any parameter.
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ShapeError("gradient for unknown parameter '" + name + "'");
    const Parameter& p = params.at(name);
    if (p.frozen) throw ShapeError("gradient supplied for frozen parameter '" + name + "'");
    if (p.value.size() != g.size()) {
      throw ShapeError("gradient for '" + name + "' has " + std::to_string(g.size()) +
                       " values, parameter has " + std::to_string(p.value.size()));
    }
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name).value;
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(g.data.size(), 0.0);
      v.assign(g.data.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double gi = g.data[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      const double updated = static_cast<double>(w[i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps);
      w[i] = static_cast<float>(updated);
    }
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.data) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_by_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (double& v : g.data) v *= s;
    }
  }
  return norm;
}

void accumulate(Gradients& dst, const Gradients& src, double scale) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      Matrix m(g.rows, g.cols);
      for (std::size_t i = 0; i < g.data.size(); ++i) m.data[i] = scale * g.data[i];
      dst.emplace(name, std::move(m));
    } else {
      for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += scale * g.data[i];
    }
  }
}

}  // namespace selm
