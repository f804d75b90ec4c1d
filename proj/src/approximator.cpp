#include "forler/approximator.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace forler {

namespace {

void apply_activation(Matrix& z, Activation act) {
  switch (act) {
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::relu:
      z = z.array().max(0.0).matrix();
      break;
    case Activation::identity:
      break;
  }
}

// Derivative expressed through the post-activation value.
Matrix activation_deriv(const Matrix& a, Activation act) {
  switch (act) {
    case Activation::tanh:
      return (1.0 - a.array().square()).matrix();
    case Activation::relu:
      return (a.array() > 0.0).cast<Scalar>().matrix();
    case Activation::identity:
      return Matrix::Ones(a.rows(), a.cols());
  }
  return Matrix();
}

}  // namespace

void validate_shape(const std::vector<LayerSpec>& shape) {
  if (shape.empty()) {
    throw std::invalid_argument("approximator: empty layer list");
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const LayerSpec& layer = shape[i];
    if (layer.input_dim < 1 || layer.output_dim < 1) {
      throw std::invalid_argument("approximator: layer dims must be >= 1");
    }
    if (layer.activation == Activation::identity && i + 1 != shape.size()) {
      throw std::invalid_argument(
          "approximator: identity activation only allowed on the final layer");
    }
    if (i > 0 && shape[i - 1].output_dim != layer.input_dim) {
      std::ostringstream msg;
      msg << "approximator: layer " << i << " input_dim " << layer.input_dim
          << " != previous output_dim " << shape[i - 1].output_dim;
      throw std::invalid_argument(msg.str());
    }
  }
}

Eigen::Index param_count(const std::vector<LayerSpec>& shape) {
  Eigen::Index n = 0;
  for (const LayerSpec& layer : shape) {
    n += static_cast<Eigen::Index>(layer.input_dim) * layer.output_dim +
         layer.output_dim;
  }
  return n;
}

std::vector<LayerSpec> mlp_shape(int input_dim, const std::vector<int>& hidden,
                                 int output_dim, Activation hidden_activation,
                                 Activation final_activation) {
  std::vector<LayerSpec> shape;
  int in = input_dim;
  for (int width : hidden) {
    shape.push_back({in, width, hidden_activation});
    in = width;
  }
  shape.push_back({in, output_dim, final_activation});
  validate_shape(shape);
  return shape;
}

ApproximatorParams zero_params(std::vector<LayerSpec> shape) {
  validate_shape(shape);
  Vector values = Vector::Zero(param_count(shape));
  return {std::move(shape), std::move(values)};
}

ApproximatorParams random_params(std::vector<LayerSpec> shape, Rng& rng) {
  validate_shape(shape);
  Vector values(param_count(shape));
  Eigen::Index offset = 0;
  for (const LayerSpec& layer : shape) {
    const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(layer.input_dim));
    std::uniform_real_distribution<Scalar> dist(-bound, bound);
    const Eigen::Index n = static_cast<Eigen::Index>(layer.input_dim) *
                               layer.output_dim +
                           layer.output_dim;
    for (Eigen::Index i = 0; i < n; ++i) {
      values[offset + i] = dist(rng);
    }
    offset += n;
  }
  return {std::move(shape), std::move(values)};
}

bool same_shape(const ApproximatorParams& a, const ApproximatorParams& b) {
  return a.shape == b.shape && a.values.size() == b.values.size();
}

Matrix forward_batch(const ApproximatorParams& params, const Matrix& inputs) {
  validate_shape(params.shape);
  if (params.values.size() != param_count(params.shape)) {
    throw std::invalid_argument("approximator: value vector length mismatch");
  }
  if (inputs.cols() != params.shape.front().input_dim) {
    std::ostringstream msg;
    msg << "approximator: input width " << inputs.cols() << " != expected "
        << params.shape.front().input_dim;
    throw std::invalid_argument(msg.str());
  }
  Matrix a = inputs;
  Eigen::Index offset = 0;
  for (const LayerSpec& layer : params.shape) {
    Eigen::Map<const Matrix> w(params.values.data() + offset, layer.output_dim,
                               layer.input_dim);
    offset += static_cast<Eigen::Index>(layer.output_dim) * layer.input_dim;
    Eigen::Map<const Vector> b(params.values.data() + offset, layer.output_dim);
    offset += layer.output_dim;
    Matrix z = a * w.transpose();
    z.rowwise() += b.transpose();
    apply_activation(z, layer.activation);
    a = std::move(z);
  }
  return a;
}

Vector forward(const ApproximatorParams& params, const Vector& input) {
  Matrix out = forward_batch(params, input.transpose());
  return out.row(0).transpose();
}

BackpropResult backprop_batch(const ApproximatorParams& params,
                              const Matrix& inputs, const Matrix& upstream) {
  validate_shape(params.shape);
  if (inputs.cols() != params.shape.front().input_dim) {
    throw std::invalid_argument("approximator: input width mismatch");
  }
  if (upstream.cols() != params.shape.back().output_dim ||
      upstream.rows() != inputs.rows()) {
    throw std::invalid_argument("approximator: upstream shape mismatch");
  }

  const std::size_t n_layers = params.shape.size();
  std::vector<Matrix> acts;
  acts.reserve(n_layers + 1);
  acts.push_back(inputs);

  std::vector<Eigen::Index> weight_offsets(n_layers);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSpec& layer = params.shape[l];
    weight_offsets[l] = offset;
    Eigen::Map<const Matrix> w(params.values.data() + offset, layer.output_dim,
                               layer.input_dim);
    offset += static_cast<Eigen::Index>(layer.output_dim) * layer.input_dim;
    Eigen::Map<const Vector> b(params.values.data() + offset, layer.output_dim);
    offset += layer.output_dim;
    Matrix z = acts.back() * w.transpose();
    z.rowwise() += b.transpose();
    apply_activation(z, layer.activation);
    acts.push_back(std::move(z));
  }

  BackpropResult result;
  result.param_grad = Vector::Zero(params.values.size());
  Matrix g = upstream;
  for (std::size_t l = n_layers; l-- > 0;) {
    const LayerSpec& layer = params.shape[l];
    g = g.cwiseProduct(activation_deriv(acts[l + 1], layer.activation));
    const Eigen::Index w_off = weight_offsets[l];
    const Eigen::Index b_off =
        w_off + static_cast<Eigen::Index>(layer.output_dim) * layer.input_dim;
    Eigen::Map<Matrix> gw(result.param_grad.data() + w_off, layer.output_dim,
                          layer.input_dim);
    gw = g.transpose() * acts[l];
    Eigen::Map<Vector> gb(result.param_grad.data() + b_off, layer.output_dim);
    gb = g.colwise().sum().transpose();
    Eigen::Map<const Matrix> w(params.values.data() + w_off, layer.output_dim,
                               layer.input_dim);
    g = g * w;
  }
  result.input_grad = std::move(g);
  return result;
}

Vector grad(const ApproximatorParams& params, const Vector& input,
            const Vector& upstream) {
  return backprop_batch(params, input.transpose(), upstream.transpose())
      .param_grad;
}

OptimizerState make_optimizer(Eigen::Index n_params, Scalar step_size,
                              OptimizerMode mode) {
  OptimizerState state;
  state.step_size = step_size;
  state.mode = mode;
  state.first_moment = Vector::Zero(n_params);
  state.second_moment = Vector::Zero(n_params);
  return state;
}

void optimizer_step_raw(Vector& values, OptimizerState& state,
                        const Vector& gradient) {
  if (gradient.size() != values.size() ||
      state.first_moment.size() != values.size() ||
      state.second_moment.size() != values.size()) {
    throw std::invalid_argument("optimizer: length mismatch");
  }
  if (!gradient.allFinite()) {
    Eigen::Index bad = 0;
    for (Eigen::Index i = 0; i < gradient.size(); ++i) {
      if (!std::isfinite(gradient[i])) {
        bad = i;
        break;
      }
    }
    std::ostringstream msg;
    msg << "optimizer: non-finite gradient entry " << gradient[bad]
        << " at index " << bad << " (step " << state.step_count << ")";
    throw std::runtime_error(msg.str());
  }

  state.step_count += 1;
  if (state.mode == OptimizerMode::sgd) {
    values -= state.step_size * gradient;
  } else {
    state.first_moment =
        state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient;
    state.second_moment =
        state.beta2 * state.second_moment +
        (1.0 - state.beta2) * gradient.array().square().matrix();
    const Scalar c1 =
        1.0 - std::pow(state.beta1, static_cast<Scalar>(state.step_count));
    const Scalar c2 =
        1.0 - std::pow(state.beta2, static_cast<Scalar>(state.step_count));
    values.array() -= state.step_size * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() +
                       state.epsilon);
  }
  if (!values.allFinite()) {
    throw std::runtime_error("optimizer: parameters became non-finite");
  }
}

void optimizer_step(ApproximatorParams& params, OptimizerState& state,
                    const Vector& gradient) {
  optimizer_step_raw(params.values, state, gradient);
}

void polyak_update(ApproximatorParams& target, const ApproximatorParams& online,
                   Scalar tau) {
  if (!same_shape(target, online)) {
    throw std::invalid_argument("polyak_update: shape mismatch");
  }
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("polyak_update: tau must be in (0, 1]");
  }
  target.values = (1.0 - tau) * target.values + tau * online.values;
}

}  // namespace forler
