#pragma once

// Network data model: architecture, per-neuron operator assignments and the
// trainable parameters (kernels and biases).

#include <cstdint>
#include <random>
#include <vector>

#include "onn/feature_map.hpp"
#include "onn/operators.hpp"

namespace onn {

enum class Resample : std::uint8_t { none = 0, down2, up2 };

std::string to_string(Resample r);
Resample resample_from_string(const std::string& s);

struct Kernel {
  int rows = 3;
  int cols = 3;
  std::vector<double> weights;

  Kernel() = default;
  Kernel(int r, int c, double fill = 0.0)
      : rows(r), cols(c), weights(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  double at(int r, int c) const noexcept { return weights[static_cast<std::size_t>(r * cols + c)]; }
  double& at(int r, int c) noexcept { return weights[static_cast<std::size_t>(r * cols + c)]; }

  bool operator==(const Kernel&) const = default;
};

struct LayerSpec {
  int neurons = 1;
  Resample resample = Resample::none;
  bool assignable = false;

  bool operator==(const LayerSpec&) const = default;
};

// Layer 0 is the input layer; the last layer is the output layer.
struct Architecture {
  std::vector<LayerSpec> layers;
  int kernel_rows = 3;
  int kernel_cols = 3;

  // In x hidden1 x hidden2 x Out with down2 on the first hidden layer and up2
  // on the second.
  static Architecture standard(int inputs = 1, int hidden1 = 12, int hidden2 = 12,
                               int outputs = 1);

  void validate() const;
  int layer_count() const noexcept { return static_cast<int>(layers.size()); }
  int neurons(int l) const { return layers.at(static_cast<std::size_t>(l)).neurons; }
  std::vector<int> hidden_layers() const;
  // Product of the resampling factors; inputs must be divisible by it.
  int spatial_divisor() const;

  bool operator==(const Architecture&) const = default;
};

// Kernels and biases, indexed [layer][k * N_{l-1} + i] and [layer][k].
// Layer 0 entries are empty. Also serves as the gradient container.
struct Parameters {
  std::vector<std::vector<Kernel>> kernels;
  std::vector<std::vector<double>> biases;

  bool operator==(const Parameters&) const = default;
};

using GradientSet = Parameters;

struct OnnModel {
  Architecture arch;
  OperatorConstants constants;
  int output_set = 0;
  // assignments[l][k]: operator set index; layer 0 empty.
  std::vector<std::vector<int>> assignments;
  Parameters params;

  const Kernel& kernel(int l, int k, int i) const {
    return params.kernels[static_cast<std::size_t>(l)]
                         [static_cast<std::size_t>(k * arch.neurons(l - 1) + i)];
  }
  Kernel& kernel(int l, int k, int i) {
    return params.kernels[static_cast<std::size_t>(l)]
                         [static_cast<std::size_t>(k * arch.neurons(l - 1) + i)];
  }
  int set_of(int l, int k) const {
    return assignments[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)];
  }

  // Shape and range consistency; throws onn::Error on violation.
  void validate() const;

  bool operator==(const OnnModel&) const = default;
};

// All-zero parameters, hidden layers assigned to set 0.
OnnModel make_model(const Architecture& arch, const OperatorConstants& constants = {});

// Zero-filled parameter container shaped like the model's.
Parameters zeros_like(const OnnModel& model);

// Kernel weights ~ U(-range, range), biases zero.
void init_weights(OnnModel& model, std::mt19937_64& rng, double range = 0.1);

// Replaces the operator sets of a hidden layer; weights are kept.
void assign_operators(OnnModel& model, int layer, const std::vector<int>& sets,
                      const OperatorSubLibrary& sublib);

}  // namespace onn
