#pragma once

#include "forler/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace forler {

enum class Activation : std::uint8_t { tanh = 0, relu = 1, identity = 2 };

struct LayerSpec {
  int input_dim;
  int output_dim;
  Activation activation;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Dense feedforward network stored as a flat parameter vector.
/// Per layer the layout is the weight matrix W (output_dim x input_dim,
/// column-major) followed by the bias (output_dim).
struct ApproximatorParams {
  std::vector<LayerSpec> shape;
  Vector values;
};

/// Throws std::invalid_argument on dimension chain breaks, non-positive dims,
/// or an identity activation before the final layer.
void validate_shape(const std::vector<LayerSpec>& shape);

/// Total flat parameter count: sum of in*out + out over layers.
Eigen::Index param_count(const std::vector<LayerSpec>& shape);

std::vector<LayerSpec> mlp_shape(int input_dim, const std::vector<int>& hidden,
                                 int output_dim, Activation hidden_activation,
                                 Activation final_activation);

ApproximatorParams zero_params(std::vector<LayerSpec> shape);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
ApproximatorParams random_params(std::vector<LayerSpec> shape, Rng& rng);

bool same_shape(const ApproximatorParams& a, const ApproximatorParams& b);

/// Evaluates a batch of inputs (one row per sample). Throws on width mismatch.
Matrix forward_batch(const ApproximatorParams& params, const Matrix& inputs);

Vector forward(const ApproximatorParams& params, const Vector& input);

struct BackpropResult {
  Vector param_grad;  // d(sum_rows upstream . output)/d params
  Matrix input_grad;  // per-row gradient w.r.t. the input
};

/// Reverse-mode gradient of sum_j upstream_j . f(input_j) for a row batch.
BackpropResult backprop_batch(const ApproximatorParams& params,
                              const Matrix& inputs, const Matrix& upstream);

/// Gradient of upstream . f(input) w.r.t. the flat parameter vector.
Vector grad(const ApproximatorParams& params, const Vector& input,
            const Vector& upstream);

enum class OptimizerMode : std::uint8_t { adam = 0, sgd = 1 };

struct OptimizerState {
  Scalar step_size = 3e-4;
  OptimizerMode mode = OptimizerMode::adam;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
};

OptimizerState make_optimizer(Eigen::Index n_params, Scalar step_size,
                              OptimizerMode mode = OptimizerMode::adam);

/// One first-order update on a raw parameter vector (used for the server's
/// log-std vector, which is not an ApproximatorParams).
void optimizer_step_raw(Vector& values, OptimizerState& state,
                        const Vector& gradient);

/// Throws on length mismatch or any non-finite gradient entry.
void optimizer_step(ApproximatorParams& params, OptimizerState& state,
                    const Vector& gradient);

/// target <- (1 - tau) * target + tau * online, elementwise.
void polyak_update(ApproximatorParams& target, const ApproximatorParams& online,
                   Scalar tau);

}  // namespace forler
