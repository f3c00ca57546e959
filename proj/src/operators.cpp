#include "onn/operators.hpp"

#include <algorithm>

#include "onn/error.hpp"

namespace onn {

std::string to_string(NodalOp op) {
  static constexpr std::array<const char*, kNodalCount> names{
      "linear", "cubic", "sine", "exp", "sinh", "sinc", "chirp"};
  return names[static_cast<std::size_t>(op)];
}

std::string to_string(PoolOp op) { return op == PoolOp::sum ? "sum" : "median"; }

std::string to_string(ActOp op) { return op == ActOp::tanh ? "tanh" : "lin-cut"; }

void OperatorConstants::validate() const {
  if (!(k_nodal > 0.0) || !(k_chirp > 0.0) || !(cut > 0.0) || !(sinc_guard > 0.0) ||
      !(arg_clip > 0.0)) {
    fail_usage("operator constants must all be positive");
  }
}

int set_index(int pool, int act, int nodal) {
  if (pool < 0 || pool >= kPoolCount || act < 0 || act >= kActCount || nodal < 0 ||
      nodal >= kNodalCount) {
    fail_usage("operator id out of range");
  }
  return pool * kActCount * kNodalCount + act * kNodalCount + nodal;
}

OperatorSet set_from_index(int index) {
  if (index < 0 || index >= kSetCount) {
    fail_usage("operator set index " + std::to_string(index) + " outside 0.." +
               std::to_string(kSetCount - 1));
  }
  return OperatorSet{static_cast<PoolOp>(index / (kActCount * kNodalCount)),
                     static_cast<ActOp>((index / kNodalCount) % kActCount),
                     static_cast<NodalOp>(index % kNodalCount)};
}

bool OperatorSubLibrary::contains(int set) const {
  return std::binary_search(sets.begin(), sets.end(), set);
}

namespace {

std::vector<int> normalized_ids(std::vector<int> ids, int limit, const char* what) {
  if (ids.empty()) fail_usage(std::string("empty ") + what + " id list");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.front() < 0 || ids.back() >= limit) {
    fail_usage(std::string(what) + " id out of range");
  }
  return ids;
}

}  // namespace

OperatorSubLibrary make_sublibrary(std::vector<int> pools, std::vector<int> acts,
                                   std::vector<int> nodals) {
  OperatorSubLibrary lib;
  lib.pools_used = normalized_ids(std::move(pools), kPoolCount, "pool");
  lib.acts_used = normalized_ids(std::move(acts), kActCount, "activation");
  lib.nodals_used = normalized_ids(std::move(nodals), kNodalCount, "nodal");
  for (int p : lib.pools_used) {
    for (int a : lib.acts_used) {
      for (int n : lib.nodals_used) lib.sets.push_back(set_index(p, a, n));
    }
  }
  std::sort(lib.sets.begin(), lib.sets.end());
  return lib;
}

OperatorSubLibrary full_library() {
  return make_sublibrary({0, 1}, {0, 1}, {0, 1, 2, 3, 4, 5, 6});
}

double nodal_eval(NodalOp op, double w, double y, const OperatorConstants& c) {
  return dispatch_nodal(op, [&](auto n) { return n.eval(w, y, c); });
}

double nodal_grad_w(NodalOp op, double w, double y, const OperatorConstants& c) {
  return dispatch_nodal(op, [&](auto n) { return n.grads(w, y, c).dw; });
}

double nodal_grad_y(NodalOp op, double w, double y, const OperatorConstants& c) {
  return dispatch_nodal(op, [&](auto n) { return n.grads(w, y, c).dy; });
}

std::size_t argmedian(std::span<const double> terms) {
  if (terms.empty()) fail_usage("empty pool window");
  std::vector<double> sorted(terms.begin(), terms.end());
  const std::size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid),
                   sorted.end());
  const double v = sorted[mid];
  for (std::size_t j = 0; j < terms.size(); ++j) {
    if (terms[j] == v) return j;
  }
  return mid;  // unreachable for finite terms
}

PoolResult pool_eval(PoolOp op, std::span<const double> terms) {
  if (terms.empty()) fail_usage("empty pool window");
  if (op == PoolOp::sum) {
    double s = 0.0;
    for (double t : terms) s += t;
    return {s, std::nullopt};
  }
  const std::size_t j = argmedian(terms);
  return {terms[j], j};
}

double pool_grad(PoolOp op, std::span<const double> terms, std::size_t j) {
  if (j >= terms.size()) fail_usage("pool term index out of range");
  if (op == PoolOp::sum) return 1.0;
  return argmedian(terms) == j ? 1.0 : 0.0;
}

}  // namespace onn
