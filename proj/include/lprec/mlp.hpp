// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "lprec/formats.hpp"
#include "lprec/optim.hpp"
#include "lprec/qtensor.hpp"
#include "lprec/rng.hpp"

namespace lprec {

// Where the trainable weights live: on the 16-bit grid, or on a binary32
// master (in which case weight updates are not rounded to the 16-bit grid).
enum class WeightsPrecision { Fmt16, Master32 };

// How quantization is applied across a training run: whether every operator
// output in the forward/backward graph is rounded, how weight updates are
// rounded, and the weight carrier precision.  weights_precision Master32
// forces exact (unrounded-to-16-bit) weight updates regardless of
// weight_update.
struct QuantPolicy {
  bool round_forward_backward = true;
  UpdatePolicy weight_update = UpdatePolicy::Nearest;
  WeightsPrecision weights_precision = WeightsPrecision::Fmt16;
};

// One-hidden-layer classifier: input -> ReLU(W1 x + b1) -> W2 h + b2 over
// two classes with logistic loss.  The smallest model that exercises
// multi-operator output rounding without a general autodiff engine.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  static constexpr std::size_t kClasses = 2;
};

// Every parameter tensor carries its own update policy.
struct MlpParam {
  QTensor value;
  UpdatePolicy policy = UpdatePolicy::Nearest;
};

struct MlpParams {
  MlpParam w1;  // hidden_dim x input_dim
  MlpParam b1;  // hidden_dim
  MlpParam w2;  // kClasses x hidden_dim
  MlpParam b2;  // kClasses
};

struct MlpGrads {
  QTensor w1, b1, w2, b2;
};

// a single training example (batch size 1 throughout)
struct MlpBatch {
  std::vector<double> x;
  int label = 0;  // 0 or 1
};

// all-zero parameters (uniform prediction: loss = log 2 on any sample)
MlpParams mlp_zero_params(const MlpSpec& spec, const FloatFormat& fmt);

// small random init: weights ~ N(0, 1/fan_in), biases 0, nearest-rounded to
// fmt; streams (seed, "mlp/w1") and (seed, "mlp/w2")
MlpParams mlp_init_params(const MlpSpec& spec, const FloatFormat& fmt,
                          std::uint64_t seed);

// Synthetic two-class data: x entries ~ N(0,1) nearest-rounded to fmt,
// labeled by the sign of a fixed random linear teacher.  Streams
// (seed, "mlp/data") and (seed, "mlp/teacher").
struct MlpDataset {
  MlpSpec spec;
  std::size_t n = 0;
  std::vector<double> x;    // n x input_dim, row-major, fmt-representable
  std::vector<int> labels;  // n entries in {0, 1}

  MlpBatch sample(std::size_t i) const;
};

MlpDataset gen_mlp_data(const MlpSpec& spec, std::size_t n, std::uint64_t seed,
                        const FloatFormat& fmt);

struct MlpResult {
  double loss = 0.0;
  MlpGrads grads;
};

// Forward and backward pass on one sample.  When
// policy.round_forward_backward is set, every operator output is rounded
// once in `mode` to fmt, in this fixed order (one draw per element under
// stochastic rounding):
//   forward:  W1*x (wide dot per row), +b1, ReLU, W2*h, +b2 (the logits),
//             loss (margin + softplus, fused as one operator)
//   backward: softmax probabilities, logits gradient, W2 gradient (row-major),
//             hidden activation gradient (wide dot per column), ReLU mask,
//             W1 gradient (row-major)
// Bias gradients are pass-through copies of the logits/mask gradients (no
// arithmetic, no extra rounding).  With round_forward_backward unset the
// whole graph runs in binary64 and the gradients come back on the exact
// carrier.  Inner dot products accumulate in binary64 either way; parameter
// tensors enter them unrounded, so 16-bit and binary32-master weight
// carriers share this code path.  Non-finite loss throws NumericError.
MlpResult mlp_forward_backward(const MlpParams& params, const MlpBatch& batch,
                               const FloatFormat& fmt, RoundingMode mode,
                               const QuantPolicy& policy,
                               RngStream* rng = nullptr);

}  // namespace lprec
