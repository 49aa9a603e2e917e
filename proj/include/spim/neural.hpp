#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spim/dataset.hpp"

namespace spim {

struct NetworkArch {
  int n_rx = 9;
  int n_tx = 128;
  int channels = 3;
  int conv_layers = 3;
  int filters = 128;
  int kernel_x = 3;
  int kernel_y = 3;
  int fc_units = 1024;
  double dropout_prob = 0.5;
  int output_dim = 0;

  void validate() const;
  // Adaptive pooling target is kernel_x x kernel_y.
  int pool_x() const { return kernel_x; }
  int pool_y() const { return kernel_y; }
  int fc_inputs() const { return filters * kernel_x * kernel_y; }
  double keep() const { return 1.0 - dropout_prob; }
};

/// P = N_CL (C N_SF W_x W_y) + kappa N_SF W_x W_y N_FCL, with kappa the kept
/// fraction of FC weights (1 = no dropout). Biases, normalization and the
/// output layer are not counted.
std::uint64_t param_count(const NetworkArch &arch, double kappa);

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<int> shape;
};

struct Layout {
  std::vector<Segment> segments;
  std::size_t total = 0;
  const Segment &at(const std::string &name) const;
};
Layout make_layout(const NetworkArch &arch);

/// Running mean/variance of each normalization layer, [layer * filters + c].
/// Not part of theta and never differentiated.
template <typename T> struct NormStats {
  std::vector<T> mean;
  std::vector<T> var;
  std::uint64_t updates = 0;
};

template <typename T> struct Model {
  NetworkArch arch;
  Layout layout;
  std::vector<T> theta;
  NormStats<T> stats;
};

template <typename T> Model<T> init_model(const NetworkArch &arch, std::uint64_t seed);
template <typename T> Model<T> zero_model(const NetworkArch &arch);

/// Keep-flags over FC input features. Exactly round(keep * F) features are
/// kept, chosen from (seed, round) alone.
struct DropoutMask {
  std::vector<std::uint8_t> keep;
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
  std::size_t active() const;
  std::uint64_t hash() const;
};
DropoutMask make_mask(const NetworkArch &arch, std::uint64_t seed, std::uint64_t round);
DropoutMask full_mask(const NetworkArch &arch);

enum class Mode { train, infer };

/// Sums of pre-normalization activations per (layer, channel), for the
/// running-statistics update.
struct BatchStats {
  std::vector<double> sum;
  std::vector<double> sumsq;
  double count = 0.0; // positions per channel
  void merge(const BatchStats &other);
};

/// In train mode the mask is applied with inverted scaling F / active; a null
/// mask means no dropout. Infer mode ignores the mask.
template <typename T>
std::vector<T> forward(const Model<T> &model, std::span<const T> x, const DropoutMask *mask,
                       Mode mode, BatchStats *stats = nullptr);

template <typename T> T loss_mse(std::span<const T> pred, std::span<const T> label);

template <typename T> struct SampleGradient {
  std::vector<T> grad;
  T loss = 0;
};
/// Exact reverse-mode gradient of loss_mse(forward(x), label) in train mode.
template <typename T>
SampleGradient<T> backward(const Model<T> &model, std::span<const T> x, std::span<const T> label,
                           const DropoutMask *mask, BatchStats *stats = nullptr);

template <typename T> struct BatchGradient {
  std::vector<T> grad; // mean over the batch
  double loss = 0.0;   // mean over the batch
  BatchStats stats;
};
/// Mean gradient over samples[indices]. Samples are processed in fixed
/// chunks whose partial sums are combined in chunk order, so the result is
/// identical for any worker count.
template <typename T>
BatchGradient<T> batch_gradient(const Model<T> &model, std::span<const Sample> samples,
                                std::span<const std::size_t> indices, const DropoutMask *mask,
                                int workers = 1);
/// Plain sequential accumulation; reference for batch_gradient.
template <typename T>
BatchGradient<T> batch_gradient_serial(const Model<T> &model, std::span<const Sample> samples,
                                       std::span<const std::size_t> indices,
                                       const DropoutMask *mask);

/// rho = max(0.1, 1/(updates+1)) blend of the running statistics toward the
/// batch statistics.
template <typename T> void update_norm_stats(Model<T> &model, const BatchStats &batch);

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int batch_size = 128;
  void validate() const;
};

/// v' = momentum v + g; theta' = theta - lr v'.
template <typename T>
void sgd_momentum_step(std::vector<T> &theta, std::vector<T> &velocity, std::span<const T> grad,
                       const TrainConfig &config);

/// Mean infer-mode loss over samples[indices].
template <typename T>
double evaluate_mse(const Model<T> &model, std::span<const Sample> samples,
                    std::span<const std::size_t> indices, int workers = 1);

void save_checkpoint(const Model<float> &model, const std::vector<float> &velocity,
                     const std::string &path);
struct Checkpoint {
  Model<float> model;
  std::vector<float> velocity;
};
Checkpoint load_checkpoint(const std::string &path);

template <typename To, typename From> Model<To> convert_model(const Model<From> &m);

} // namespace spim
