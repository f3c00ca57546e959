#include "onn/model.hpp"

#include <cmath>

#include "onn/error.hpp"

namespace onn {

std::string to_string(Resample r) {
  switch (r) {
    case Resample::none: return "none";
    case Resample::down2: return "down2";
    case Resample::up2: return "up2";
  }
  return "none";
}

Resample resample_from_string(const std::string& s) {
  if (s == "none") return Resample::none;
  if (s == "down2") return Resample::down2;
  if (s == "up2") return Resample::up2;
  fail_usage("unknown resampling mode '" + s + "'");
}

Architecture Architecture::standard(int inputs, int hidden1, int hidden2, int outputs) {
  Architecture a;
  a.layers = {LayerSpec{inputs, Resample::none, false},
              LayerSpec{hidden1, Resample::down2, true},
              LayerSpec{hidden2, Resample::up2, true},
              LayerSpec{outputs, Resample::none, false}};
  return a;
}

void Architecture::validate() const {
  if (layers.size() < 2) fail_usage("architecture needs an input and an output layer");
  if (kernel_rows <= 0 || kernel_cols <= 0 || kernel_rows % 2 == 0 || kernel_cols % 2 == 0) {
    fail_usage("kernel dimensions must be positive and odd");
  }
  for (const auto& l : layers) {
    if (l.neurons <= 0) fail_usage("every layer needs at least one neuron");
  }
  if (layers.front().resample != Resample::none || layers.front().assignable) {
    fail_usage("the input layer has no operators or resampling");
  }
  if (layers.back().assignable) fail_usage("the output layer is not assignable");
  int scale = 0;  // log2 of the current spatial scale relative to the input
  for (const auto& l : layers) {
    if (l.resample == Resample::down2) --scale;
    if (l.resample == Resample::up2) ++scale;
  }
  if (scale != 0) fail_usage("resampling must restore the input size at the output");
}

std::vector<int> Architecture::hidden_layers() const {
  std::vector<int> out;
  for (int l = 1; l + 1 < layer_count(); ++l) out.push_back(l);
  return out;
}

int Architecture::spatial_divisor() const {
  int depth = 0;
  int worst = 0;
  for (const auto& l : layers) {
    if (l.resample == Resample::down2) --depth;
    if (l.resample == Resample::up2) ++depth;
    worst = std::min(worst, depth);
  }
  return 1 << (-worst);
}

void OnnModel::validate() const {
  arch.validate();
  constants.validate();
  set_from_index(output_set);
  const auto L = static_cast<std::size_t>(arch.layer_count());
  if (assignments.size() != L || params.kernels.size() != L || params.biases.size() != L) {
    fail_data("model tensors do not match the layer count");
  }
  for (std::size_t l = 1; l < L; ++l) {
    const auto n = static_cast<std::size_t>(arch.layers[l].neurons);
    const auto p = static_cast<std::size_t>(arch.layers[l - 1].neurons);
    if (assignments[l].size() != n || params.biases[l].size() != n ||
        params.kernels[l].size() != n * p) {
      fail_data("model tensors do not match layer " + std::to_string(l));
    }
    for (int s : assignments[l]) set_from_index(s);
    for (const auto& k : params.kernels[l]) {
      if (k.rows != arch.kernel_rows || k.cols != arch.kernel_cols ||
          k.weights.size() != static_cast<std::size_t>(k.rows * k.cols)) {
        fail_data("kernel shape mismatch in layer " + std::to_string(l));
      }
    }
  }
}

Parameters zeros_like(const OnnModel& model) {
  Parameters p;
  const auto L = static_cast<std::size_t>(model.arch.layer_count());
  p.kernels.resize(L);
  p.biases.resize(L);
  for (std::size_t l = 1; l < L; ++l) {
    const auto n = static_cast<std::size_t>(model.arch.layers[l].neurons);
    const auto prev = static_cast<std::size_t>(model.arch.layers[l - 1].neurons);
    p.kernels[l].assign(n * prev, Kernel(model.arch.kernel_rows, model.arch.kernel_cols));
    p.biases[l].assign(n, 0.0);
  }
  return p;
}

OnnModel make_model(const Architecture& arch, const OperatorConstants& constants) {
  arch.validate();
  constants.validate();
  OnnModel m;
  m.arch = arch;
  m.constants = constants;
  m.assignments.resize(arch.layers.size());
  for (std::size_t l = 1; l < arch.layers.size(); ++l) {
    m.assignments[l].assign(static_cast<std::size_t>(arch.layers[l].neurons), 0);
  }
  m.params = zeros_like(m);
  return m;
}

void init_weights(OnnModel& model, std::mt19937_64& rng, double range) {
  if (!(range >= 0.0) || !std::isfinite(range)) fail_usage("weight range must be >= 0");
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& layer : model.params.kernels) {
    for (auto& k : layer) {
      for (double& w : k.weights) w = range == 0.0 ? 0.0 : dist(rng);
    }
  }
  for (auto& layer : model.params.biases) {
    for (double& b : layer) b = 0.0;
  }
}

void assign_operators(OnnModel& model, int layer, const std::vector<int>& sets,
                      const OperatorSubLibrary& sublib) {
  if (layer <= 0 || layer >= model.arch.layer_count() ||
      !model.arch.layers[static_cast<std::size_t>(layer)].assignable) {
    fail_usage("layer " + std::to_string(layer) + " is not an assignable hidden layer");
  }
  if (sets.size() != static_cast<std::size_t>(model.arch.neurons(layer))) {
    fail_usage("assignment count does not match the neuron count");
  }
  for (int s : sets) {
    if (!sublib.contains(s)) {
      fail_usage("operator set " + std::to_string(s) + " is not in the active sub-library");
    }
  }
  model.assignments[static_cast<std::size_t>(layer)] = sets;
}

}  // namespace onn
