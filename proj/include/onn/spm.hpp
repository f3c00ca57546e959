#pragma once

// Synaptic plasticity monitoring: health factors of operator sets measured
// from the variance change of each hidden neuron's outgoing weights, the
// prior training run that collects them, and elite/worst network assembly.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "onn/backprop.hpp"
#include "onn/model.hpp"

namespace onn {

struct SpmConfig {
  int iterations_per_session = 80;
  int sessions = 30;
  // Health-factor sampling switches on for a layer once every set in the
  // sub-library has at least this many samples.
  int warmup_min_samples = 2;

  void validate() const;
  bool operator==(const SpmConfig&) const = default;
};

struct HfCell {
  long count = 0;
  double sum = 0.0;

  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
  bool operator==(const HfCell&) const = default;
};

// Per hidden layer, per operator set running statistics of instantaneous
// health factors.
struct HealthLedger {
  OperatorSubLibrary sublibrary;
  std::map<int, std::vector<HfCell>> layers;  // layer -> cells indexed by set
  int sessions_completed = 0;
  int sessions_diverged = 0;
  long samples_skipped = 0;
  std::map<int, bool> warm;

  // Run metadata carried into exports.
  std::uint64_t seed = 0;
  SpmConfig config;

  HealthLedger() = default;
  HealthLedger(OperatorSubLibrary lib, std::vector<int> hidden_layers);

  void record(int layer, int set, double hf);
  const HfCell& cell(int layer, int set) const;
  // Final health factor: mean of all recorded samples (nullopt if none).
  std::optional<double> hf(int layer, int set) const;
  long total_samples(int layer) const;
  bool coverage_complete(int layer, int min_samples) const;

  bool operator==(const HealthLedger&) const = default;
};

// Mean over next-layer neurons of the population variance of the kernel
// connecting neuron k of layer l to them.
double weight_power(const Architecture& arch, const std::vector<std::vector<Kernel>>& kernels,
                    int layer, int neuron);
double weight_power(const OnnModel& model, int layer, int neuron);

inline constexpr double kDegeneratePower = 1e-12;

// |prev - now| / prev; nullopt when prev is (numerically) zero.
std::optional<double> instantaneous_hf(double prev, double now);

// Draws one operator set for a neuron. Before the layer is warm: uniform among
// the sets with the fewest samples (counting `pending` draws already made this
// session). Afterwards: probability proportional to the mean health factor.
int sample_operator(const HealthLedger& ledger, int layer, const OperatorSubLibrary& sublib,
                    std::mt19937_64& rng, const std::vector<long>* pending = nullptr);

// Assignment for all neurons of a hidden layer.
std::vector<int> assign_layer(const HealthLedger& ledger, int layer,
                              const OperatorSubLibrary& sublib, int neurons,
                              std::mt19937_64& rng);

struct HfSample {
  int session = 0;
  int layer = 0;
  int neuron = 0;
  int set = 0;
  double hf = 0.0;
};

// Outgoing-weight snapshots taken around one session, for offline replay.
struct SessionRecord {
  int session = 0;
  bool diverged = false;
  std::vector<std::vector<int>> assignments;  // during the session
  std::vector<std::vector<Kernel>> before;    // model kernels at session start
  std::vector<std::vector<Kernel>> after;     // model kernels at session end
  std::vector<HfSample> samples;
};

struct SpmRecorder {
  std::vector<SessionRecord> sessions;
  LossTrace loss;
};

// One monitoring window: snapshot powers, train M iterations, record one
// health-factor sample per hidden neuron, reassign every hidden neuron.
void spm_session(OnnModel& model, Trainer& trainer, HealthLedger& ledger,
                 const OperatorSubLibrary& sublib, const SpmConfig& cfg, std::mt19937_64& rng,
                 SpmRecorder* recorder = nullptr);

struct PriorBpResult {
  HealthLedger ledger;
  OnnModel model;  // network state at the end of the run
};

PriorBpResult prior_bp(std::span<const ImagePair> pairs, const OperatorSubLibrary& sublib,
                       const SpmConfig& cfg, const TrainConfig& train_cfg,
                       const Architecture& arch, const OperatorConstants& constants,
                       std::uint64_t seed, SpmRecorder* recorder = nullptr,
                       double weight_range = 0.1);

struct RankedSet {
  int set = 0;
  double hf = 0.0;
  bool operator==(const RankedSet&) const = default;
};

// Sets of the ledger's sub-library by descending health factor (unsampled
// sets count as 0), ties by ascending index.
std::vector<RankedSet> rank_operators(const HealthLedger& ledger, int layer);

// Neuron counts for the top-S sets given in rank order.
std::vector<int> allocate(std::span<const double> hfs, int neurons);

// Uniform split with the remainder to the first entry.
std::vector<int> allocate_uniform(int sets, int neurons);

struct LayerAllocation {
  int layer = 0;
  std::vector<RankedSet> chosen;
  std::vector<int> counts;
};

struct EliteSpec {
  int top = 0;
  bool worst = false;
  std::vector<LayerAllocation> layers;
};

EliteSpec elite_spec(const HealthLedger& ledger, const Architecture& arch, int top);
EliteSpec worst_spec(const HealthLedger& ledger, const Architecture& arch, int bottom);

// Model with the spec's assignments and fresh weights from rng.
OnnModel build_from_spec(const EliteSpec& spec, const Architecture& arch,
                         const OperatorConstants& constants, std::mt19937_64& rng,
                         double weight_range = 0.1);

OnnModel build_elite(const HealthLedger& ledger, int top, const Architecture& arch,
                     const OperatorConstants& constants, std::mt19937_64& rng,
                     double weight_range = 0.1);
OnnModel build_worst(const HealthLedger& ledger, int bottom, const Architecture& arch,
                     const OperatorConstants& constants, std::mt19937_64& rng,
                     double weight_range = 0.1);

}  // namespace onn
