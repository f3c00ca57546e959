#pragma once

// Operational forward pass and its adjoint. Layer loops are OpenMP-parallel
// over neurons; every neuron's reductions run in a fixed serial order, so
// results do not depend on the thread count.

#include <cstdint>
#include <vector>

#include "onn/feature_map.hpp"
#include "onn/model.hpp"

namespace onn {

// Argmedian tap (r * cols + c) per output pixel; empty for summation pools.
using MedianRoute = std::vector<std::uint8_t>;

struct LayerTrace {
  std::vector<FeatureMap> pre;   // x_k: pooled sum plus bias
  std::vector<FeatureMap> act;   // f(x_k), before resampling
  std::vector<FeatureMap> out;   // resampled output fed to the next layer
  std::vector<MedianRoute> routes;  // [k * N_{l-1} + i]
};

// layers[0].out holds the network inputs.
struct ForwardTrace {
  std::vector<LayerTrace> layers;

  const FeatureMap& output(int k = 0) const { return layers.back().out[static_cast<std::size_t>(k)]; }
};

// One kernel applied to one map with zero padding of floor(k/2); output has
// the input's size. route receives argmedian taps when the pool is median.
FeatureMap oper2d(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                  const OperatorConstants& c, MedianRoute* route = nullptr);

// acc += oper2d(kernel, input, set).
void oper2d_accumulate(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                       const OperatorConstants& c, FeatureMap& acc, MedianRoute* route);

// Adjoint of oper2d_accumulate for one (kernel, input) pair: adds the kernel
// sensitivities to grad and, when delta_input is non-null, the input delta.
void oper2d_backward(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                     const OperatorConstants& c, const FeatureMap& delta_x,
                     const MedianRoute& route, Kernel& grad, FeatureMap* delta_input);

ForwardTrace forward(const OnnModel& model, const std::vector<FeatureMap>& inputs);
ForwardTrace forward(const OnnModel& model, const FeatureMap& input);

// Mean squared error over pixels.
double mse(const FeatureMap& output, const FeatureMap& target);

// dE/dx at the output neurons for E = scale * mse(output, target); pass
// scale = 1/B when averaging over a batch of B pairs.
std::vector<FeatureMap> output_delta(const OnnModel& model, const ForwardTrace& trace,
                                     const std::vector<FeatureMap>& targets, double scale = 1.0);

struct BackwardResult {
  GradientSet grads;
  // dE/dx for every neuron of every layer >= 1.
  std::vector<std::vector<FeatureMap>> deltas;
};

BackwardResult backward(const OnnModel& model, const ForwardTrace& trace,
                        const std::vector<FeatureMap>& output_delta);

// Adds src into dst (congruent shapes).
void accumulate(GradientSet& dst, const GradientSet& src);

namespace reference {

// Serial per-pixel implementations built on the scalar operator functions;
// kept as a cross-check for the optimized kernels.
FeatureMap oper2d(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                  const OperatorConstants& c);
ForwardTrace forward(const OnnModel& model, const std::vector<FeatureMap>& inputs);
BackwardResult backward(const OnnModel& model, const ForwardTrace& trace,
                        const std::vector<FeatureMap>& output_delta);

}  // namespace reference

}  // namespace onn
