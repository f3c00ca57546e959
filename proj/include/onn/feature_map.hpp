#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace onn {

// Row-major H x W grid of doubles: images, activations and deltas.
struct FeatureMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
  FeatureMap(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {}

  std::size_t size() const noexcept { return values.size(); }
  bool same_shape(const FeatureMap& o) const noexcept {
    return height == o.height && width == o.width;
  }

  double& at(int r, int c) noexcept {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
  }
  double at(int r, int c) const noexcept {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
  }

  std::span<double> row(int r) noexcept {
    return {values.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(width),
            static_cast<std::size_t>(width)};
  }
  std::span<const double> row(int r) const noexcept {
    return {values.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(width),
            static_cast<std::size_t>(width)};
  }

  bool operator==(const FeatureMap&) const = default;
};

// 2x2 non-overlapping average pooling; H and W must be even.
FeatureMap downsample2(const FeatureMap& in);
// Adjoint of downsample2: spreads delta/4 over each 2x2 cell.
FeatureMap downsample2_adjoint(const FeatureMap& delta);
// 2x2 nearest-neighbour replication.
FeatureMap upsample2(const FeatureMap& in);
// Adjoint of upsample2: sums each replicated 2x2 block.
FeatureMap upsample2_adjoint(const FeatureMap& delta);

bool all_finite(const FeatureMap& m) noexcept;

}  // namespace onn
