#ifndef SELM_PARAMETERS_H_
#define SELM_PARAMETERS_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "selm/matrix.h"
#include "selm/tensor.h"

namespace selm {

struct Parameter {
  Tensor value;
  bool frozen = false;
};

// Named parameters in lexicographic order. Names are dot-separated paths such
// as "audio_projection.linear1.weight".
class ParameterTree {
 public:
  using Map = std::map<std::string, Parameter>;

  void add(const std::string& name, Tensor value, bool frozen);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  void set_frozen(const std::string& name, bool frozen);
  void erase(const std::string& name) { entries_.erase(name); }

  std::size_t size() const { return entries_.size(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  std::set<std::string> names() const;
  std::set<std::string> trainable_names() const;
  std::set<std::string> frozen_names() const;
  // Names beginning with `prefix`.
  std::set<std::string> names_with_prefix(const std::string& prefix) const;

  std::int64_t scalar_count() const;
  bool bit_equal(const ParameterTree& other) const;

 private:
  Map entries_;
};

// Gradients keyed by parameter name, aligned with trainable entries.
using Gradients = std::map<std::string, Matrix>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

// One bias-corrected Adam update. Only names present in `grads` move; each
// must be a trainable entry of matching size. Frozen entries are never
// written.
void adam_step(ParameterTree& params, const Gradients& grads, AdamState& state);

double global_norm(const Gradients& grads);

// Rescales so the global L2 norm is at most max_norm; returns the norm before
// clipping.
double clip_by_global_norm(Gradients& grads, double max_norm);

// Adds `scale * src` into `dst`, creating entries as needed.
void accumulate(Gradients& dst, const Gradients& src, double scale);

}  // namespace selm

#endif  // SELM_PARAMETERS_H_
