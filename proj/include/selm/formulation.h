#ifndef SELM_FORMULATION_H_
#define SELM_FORMULATION_H_

#include <cstddef>
#include <cstdint>
#include <vector>

namespace selm {

// Finite joint p(e, x, w) over index sets E, X, W, stored e-major.
class JointDistribution {
 public:
  // Normalizes `weights` (non-negative, positive sum) to sum to one.
  JointDistribution(std::size_t n_e, std::size_t n_x, std::size_t n_w, std::vector<double> weights);

  // Random joint with roughly `zero_fraction` of cells set to zero.
  static JointDistribution random(std::size_t n_e, std::size_t n_x, std::size_t n_w,
                                  std::uint64_t seed, double zero_fraction = 0.2);

  std::size_t n_e() const { return n_e_; }
  std::size_t n_x() const { return n_x_; }
  std::size_t n_w() const { return n_w_; }
  double p(std::size_t e, std::size_t x, std::size_t w) const;
  double total() const;

  // Marginals and conditionals derived from the table.
  double p_xw(std::size_t x, std::size_t w) const;
  double p_ew(std::size_t e, std::size_t w) const;
  double p_w(std::size_t w) const;

 private:
  std::size_t n_e_, n_x_, n_w_;
  std::vector<double> table_;
};

// argmax_e p(e | x, w) by normalizing the joint. Ties (scores within a
// relative 1e-12) go to the lowest e.
std::size_t posterior_rank(const JointDistribution& j, std::size_t x, std::size_t w);

// argmax_e p(x | e, w) p(e | w), dropping the evidence term p(x | w).
// Hypotheses with p(e, w) = 0 have an undefined likelihood and are skipped.
std::size_t factored_rank(const JointDistribution& j, std::size_t x, std::size_t w);

}  // namespace selm

#endif  // SELM_FORMULATION_H_
