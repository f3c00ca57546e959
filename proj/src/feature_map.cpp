#include "onn/feature_map.hpp"

#include <cmath>

#include "onn/error.hpp"

namespace onn {

FeatureMap downsample2(const FeatureMap& in) {
  if (in.height % 2 != 0 || in.width % 2 != 0) {
    fail_data("down-sampling needs even map dimensions");
  }
  FeatureMap out(in.height / 2, in.width / 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      out.at(r, c) = 0.25 * (in.at(2 * r, 2 * c) + in.at(2 * r, 2 * c + 1) +
                             in.at(2 * r + 1, 2 * c) + in.at(2 * r + 1, 2 * c + 1));
    }
  }
  return out;
}

FeatureMap downsample2_adjoint(const FeatureMap& delta) {
  FeatureMap out(delta.height * 2, delta.width * 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) out.at(r, c) = 0.25 * delta.at(r / 2, c / 2);
  }
  return out;
}

FeatureMap upsample2(const FeatureMap& in) {
  FeatureMap out(in.height * 2, in.width * 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) out.at(r, c) = in.at(r / 2, c / 2);
  }
  return out;
}

FeatureMap upsample2_adjoint(const FeatureMap& delta) {
  if (delta.height % 2 != 0 || delta.width % 2 != 0) {
    fail_data("up-sampling adjoint needs even map dimensions");
  }
  FeatureMap out(delta.height / 2, delta.width / 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      out.at(r, c) = delta.at(2 * r, 2 * c) + delta.at(2 * r, 2 * c + 1) +
                     delta.at(2 * r + 1, 2 * c) + delta.at(2 * r + 1, 2 * c + 1);
    }
  }
  return out;
}

bool all_finite(const FeatureMap& m) noexcept {
  for (double v : m.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace onn
