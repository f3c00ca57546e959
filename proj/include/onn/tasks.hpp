#pragma once

// Image-regression tasks: normalization, corruption generators, the SNR
// metric, fold plans and the per-fold training pairs.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "onn/backprop.hpp"
#include "onn/feature_map.hpp"
#include "onn/operators.hpp"

namespace onn {

enum class TaskKind { denoise, synth, transform };

std::string to_string(TaskKind k);
TaskKind task_from_string(const std::string& s);

// Affine map of the image's own [min, max] onto [-1, 1].
FeatureMap normalize(const FeatureMap& raw);

// 10 log10(var(target) / var(target - output)); +inf for a perfect output.
double snr(const FeatureMap& target, const FeatureMap& output);

// Each pixel independently replaced, with probability p, by -1 or +1.
FeatureMap salt_pepper(const FeatureMap& image, double p, std::mt19937_64& rng);

// I.i.d. standard normal samples normalized onto [-1, 1].
FeatureMap wgn(int height, int width, std::mt19937_64& rng);

struct CorpusImage {
  std::string id;
  FeatureMap pixels;  // raw intensities
};

using Corpus = std::vector<CorpusImage>;

// Procedural textures and shapes, integer intensities in 0..255.
Corpus synthetic_corpus(int count, int size, std::uint64_t seed);

// PGM/PNG files of a directory (manifest.json order when present, otherwise
// sorted file names), each centre-cropped and resized to size x size.
Corpus load_corpus(const std::filesystem::path& dir, int size);

struct TaskSpec {
  TaskKind kind = TaskKind::transform;
  int pairs_per_fold = 4;
  double noise_p = 0.4;
  double train_fraction = 0.1;  // denoise only
  OperatorSubLibrary sublibrary;

  bool operator==(const TaskSpec&) const = default;
};

// Pair counts and sub-library used for each task kind.
TaskSpec default_task_spec(TaskKind kind);

struct FoldPlan {
  int fold = 1;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  bool operator==(const FoldPlan&) const = default;
};

std::vector<FoldPlan> build_folds(const std::vector<std::string>& ids, const TaskSpec& spec,
                                  int folds, std::uint64_t seed);

// A->B, B->A, C->D, E->F, ... (one pair per two images, at least four images).
std::vector<ImagePair> transform_pairs(const std::vector<CorpusImage>& images);

struct FoldData {
  std::vector<ImagePair> train;
  std::vector<ImagePair> test;
};

// Materializes a fold's pairs. Corruption noise is seeded per image.
FoldData make_fold_data(const TaskSpec& spec, const Corpus& corpus, const FoldPlan& plan,
                        std::uint64_t seed);

// Mean per-pair SNR and MSE of a model over a pair list.
struct EvalSummary {
  double snr = 0.0;
  double mse = 0.0;
  std::vector<double> pair_snr;
  std::vector<double> pair_mse;
};

EvalSummary evaluate(const OnnModel& model, const std::vector<ImagePair>& pairs);

}  // namespace onn
