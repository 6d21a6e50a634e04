#ifndef SELM_AUDIO_FEATURE_H_
#define SELM_AUDIO_FEATURE_H_

#include <cstdint>

#include "selm/tensor.h"

namespace selm {

// Frames x dim acoustic feature sequence (encoder hidden states).
class AudioFeature {
 public:
  AudioFeature() = default;
  // Requires a rank-2 tensor with at least one frame and finite values.
  explicit AudioFeature(Tensor frames);

  std::int64_t frames() const { return data_.rows(); }
  std::int64_t dim() const { return data_.cols(); }
  const Tensor& data() const { return data_; }

 private:
  Tensor data_;
};

}  // namespace selm

#endif  // SELM_AUDIO_FEATURE_H_
