#pragma once

// Multi-run training with best-run selection, and the per-fold experiment
// pipeline (prior run, candidate construction, training, evaluation) with
// on-disk resumability.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "onn/backprop.hpp"
#include "onn/serialize.hpp"
#include "onn/spm.hpp"
#include "onn/tasks.hpp"

namespace onn {

struct RunOutcome {
  int run = 0;
  bool diverged = false;
  long diverged_at = -1;
  double train_snr = 0.0;  // mean per-pair SNR after the last iteration
  double train_mse = 0.0;
  LossTrace trace;
};

struct MultiRunResult {
  std::vector<RunOutcome> runs;
  std::optional<int> best_run;  // highest train SNR, ties to the lower index
  OnnModel best_model;

  bool any_survivor() const noexcept { return best_run.has_value(); }
};

// Run 0 starts from the given weights; run r > 0 re-draws them from
// derive_seed(seed, {r}). Operator assignments are kept. Divergent runs are
// recorded and skipped.
MultiRunResult train_runs(const OnnModel& initial, std::span<const ImagePair> pairs,
                          const TrainConfig& cfg, int runs, std::uint64_t seed,
                          double weight_range = 0.1);

// Header `run,iter,E,lr`; one row per completed iteration of every run.
void write_runs_csv(std::ostream& os, const MultiRunResult& result);

inline constexpr std::array<const char*, 5> kCandidates = {"elite1", "elite3", "cnn", "worst3",
                                                           "worst1"};

struct ExperimentConfig {
  TaskSpec task;
  Architecture arch = Architecture::standard();
  OperatorConstants constants;
  SpmConfig spm;
  TrainConfig train;
  int folds = 10;
  int runs = 10;
  double weight_range = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct CandidateResult {
  std::string name;
  std::vector<std::vector<int>> assignments;
  bool diverged = false;  // every run diverged
  int best_run = -1;
  int runs_diverged = 0;
  double train_snr = 0.0;
  double train_mse = 0.0;
  std::optional<double> test_snr;
  std::optional<double> test_mse;
};

struct FoldResult {
  FoldPlan plan;
  HealthLedger ledger;
  std::vector<CandidateResult> candidates;  // kCandidates order
};

struct ExperimentReport {
  TaskKind kind = TaskKind::transform;
  std::vector<FoldResult> folds;  // fold order
};

// Fold plans and per-fold data/seeds shared by the pipeline and the CLI.
std::vector<FoldPlan> experiment_folds(const ExperimentConfig& cfg, const Corpus& corpus);
std::uint64_t fold_seed(const ExperimentConfig& cfg, int fold);
FoldData fold_data(const ExperimentConfig& cfg, const Corpus& corpus, const FoldPlan& plan);
std::uint64_t prior_bp_seed(const ExperimentConfig& cfg, int fold);

// Per-pair and mean metrics: {pairs: [{id, snr, mse}], snr, mse}. Infinite
// SNR is written as "inf".
Json eval_json(const EvalSummary& summary, const std::vector<ImagePair>& pairs);
// Header `split,pair,snr,mse`; the last row of each split is `mean`.
void write_eval_csv(std::ostream& os, const std::string& split, const EvalSummary& summary,
                    const std::vector<ImagePair>& pairs, bool header = true);

// Candidate model for one fold: elite/worst from the ledger, or the CNN.
OnnModel build_candidate(const std::string& name, const HealthLedger& ledger,
                         const ExperimentConfig& cfg, std::mt19937_64& rng);

// One complete fold. When dir is set, writes hf.json, hf.csv, the best model
// of each candidate, per-candidate metrics and finally state.json.
FoldResult run_fold(const ExperimentConfig& cfg, const Corpus& corpus, const FoldPlan& plan,
                    const std::optional<std::filesystem::path>& dir);

using FoldCallback = std::function<void(const FoldResult&, bool resumed)>;

// Folds run on `jobs` worker threads; each fold's results land in
// out_dir/fold_NN. Completed folds (state.json present and matching the
// config) are loaded instead of recomputed.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                                const std::optional<std::filesystem::path>& out_dir,
                                int jobs = 1, const FoldCallback& on_fold = {});

Json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const Json& j);
Json to_json(const FoldResult& fold);
FoldResult fold_result_from_json(const Json& j);
Json to_json(const ExperimentReport& report);

// Header `fold,split,metric,elite1,elite3,cnn,worst3,worst1`, one row per
// fold and metric, then the `mean` rows.
void write_report_csv(std::ostream& os, const ExperimentReport& report);

}  // namespace onn
