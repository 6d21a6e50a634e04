#ifndef SELM_TENSOR_H_
#define SELM_TENSOR_H_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace selm {

// Dense row-major float32 array. This is the storage type for parameters,
// features and checkpoints; autograd activations live in Matrix (autograd.h).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<float> data);

  static Tensor matrix(std::int64_t rows, std::int64_t cols) {
    return Tensor({rows, cols});
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rank-2 views; a rank-1 tensor reads as a single row.
  std::int64_t rows() const;
  std::int64_t cols() const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  float& at(std::int64_t r, std::int64_t c) { return data_[r * cols() + c]; }
  float at(std::int64_t r, std::int64_t c) const { return data_[r * cols() + c]; }

  std::span<const float> row(std::int64_t r) const {
    return std::span<const float>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const;

  // Byte-level equality: shape and every bit of every value.
  bool bit_equal(const Tensor& other) const;

  std::string shape_string() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<float> data_;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);

// Seeded generator shared by initialization, synthesis and shuffling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Mixes a base seed with a stream index so derived streams are independent.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng);
Tensor normal_tensor(std::vector<std::int64_t> shape, double stddev, Rng& rng);
Tensor filled(std::vector<std::int64_t> shape, float value);

}  // namespace selm

#endif  // SELM_TENSOR_H_
