#include "selm/formulation.h"

#include <cmath>

#include "selm/errors.h"
#include "selm/tensor.h"

namespace selm {

namespace {

// Scores within this relative distance count as tied, so the lowest index
// wins regardless of which algebraic route produced the rounding.
constexpr double kTieTolerance = 1e-12;

bool beats(double score, double best) { return score > best + kTieTolerance * std::abs(best); }

}  // namespace

JointDistribution::JointDistribution(std::size_t n_e, std::size_t n_x, std::size_t n_w,
                                     std::vector<double> weights)
    : n_e_(n_e), n_x_(n_x), n_w_(n_w), table_(std::move(weights)) {
  if (n_e == 0 || n_x == 0 || n_w == 0) throw InputError("joint needs non-empty E, X and W");
  if (table_.size() != n_e * n_x * n_w) throw ShapeError("joint table size mismatch");
  double sum = 0.0;
  for (double v : table_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidValueError("joint weights must be finite and >= 0");
    sum += v;
  }
  if (!(sum > 0.0)) throw InvalidValueError("joint weights sum to zero");
  for (double& v : table_) v /= sum;
}

JointDistribution JointDistribution::random(std::size_t n_e, std::size_t n_x, std::size_t n_w,
                                            std::uint64_t seed, double zero_fraction) {
  Rng rng(seed);
  std::vector<double> w(n_e * n_x * n_w);
  for (double& v : w) v = rng.uniform(0.0, 1.0) < zero_fraction ? 0.0 : rng.uniform(0.0, 1.0);
  bool any = false;
  for (double v : w) any = any || v > 0.0;
  if (!any) w[0] = 1.0;
  return JointDistribution(n_e, n_x, n_w, std::move(w));
}

double JointDistribution::p(std::size_t e, std::size_t x, std::size_t w) const {
  if (e >= n_e_ || x >= n_x_ || w >= n_w_) throw InputError("joint index out of range");
  return table_[(e * n_x_ + x) * n_w_ + w];
}

double JointDistribution::total() const {
  double s = 0.0;
  for (double v : table_) s += v;
  return s;
}

double JointDistribution::p_xw(std::size_t x, std::size_t w) const {
  double s = 0.0;
  for (std::size_t e = 0; e < n_e_; ++e) s += p(e, x, w);
  return s;
}

double JointDistribution::p_ew(std::size_t e, std::size_t w) const {
  double s = 0.0;
  for (std::size_t x = 0; x < n_x_; ++x) s += p(e, x, w);
  return s;
}

double JointDistribution::p_w(std::size_t w) const {
  double s = 0.0;
  for (std::size_t e = 0; e < n_e_; ++e) s += p_ew(e, w);
  return s;
}

std::size_t posterior_rank(const JointDistribution& j, std::size_t x, std::size_t w) {
  const double evidence = j.p_xw(x, w);
  if (!(evidence > 0.0)) throw UndefinedConditionalError("p(x, w) = 0: posterior undefined");
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t e = 0; e < j.n_e(); ++e) {
    const double score = j.p(e, x, w) / evidence;
    if (beats(score, best_score)) {
      best = e;
      best_score = score;
    }
  }
  return best;
}

std::size_t factored_rank(const JointDistribution& j, std::size_t x, std::size_t w) {
  if (!(j.p_xw(x, w) > 0.0)) throw UndefinedConditionalError("p(x, w) = 0: posterior undefined");
  const double pw = j.p_w(w);
  if (!(pw > 0.0)) throw UndefinedConditionalError("p(w) = 0: prior undefined");
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t e = 0; e < j.n_e(); ++e) {
    const double pew = j.p_ew(e, w);
    if (!(pew > 0.0)) continue;
    const double likelihood = j.p(e, x, w) / pew;  // p(x | e, w)
    const double prior = pew / pw;                  // p(e | w)
    const double score = likelihood * prior;
    if (beats(score, best_score)) {
      best = e;
      best_score = score;
    }
  }
  return best;
}

}  // namespace selm
