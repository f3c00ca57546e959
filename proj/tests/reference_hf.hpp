#pragma once

// Published final health factors of the 14-set transformation library
// (pool sum, acts tanh/lin-cut), indexed by operator set.

#include <vector>

#include "onn/spm.hpp"

namespace reference_hf {

// First transformation fold.
inline const std::vector<double> kFold1L1{1.15, 1.15, 0.97, 1.26, 0.82, 1.31, 0.74, 0.85, 1.09, 0.88, 0.74, 0.33, 1.12, 0.80};
inline const std::vector<double> kFold1L2{0.09, 0.22, 0.20, 0.18, 0.02, 0.13, 0.67, 0.04, 0.20, 0.17, 0.04, 0.00, 0.17, 0.23};
// Third transformation fold.
inline const std::vector<double> kFold3L1{2.03, 1.70, 1.37, 1.24, 1.59, 1.39, 0.90, 1.80, 2.10, 1.79, 2.01, 0.39, 1.72, 0.53};
inline const std::vector<double> kFold3L2{0.13, 0.12, 0.16, 0.13, 0.06, 0.24, 0.72, 0.16, 0.20, 0.26, 0.10, 0.01, 0.13, 0.24};

inline const onn::OperatorSubLibrary& transform_library() {
  static const onn::OperatorSubLibrary lib = onn::make_sublibrary({0}, {0, 1}, {0, 1, 2, 3, 4, 5, 6});
  return lib;
}

// One sample per set, so each cell's mean is the published value.
inline onn::HealthLedger ledger_from(const std::vector<double>& l1, const std::vector<double>& l2) {
  onn::HealthLedger ledger(transform_library(), {1, 2});
  for (int s = 0; s < 14; ++s) {
    ledger.record(1, s, l1[static_cast<std::size_t>(s)]);
    ledger.record(2, s, l2[static_cast<std::size_t>(s)]);
  }
  return ledger;
}

}  // namespace reference_hf
