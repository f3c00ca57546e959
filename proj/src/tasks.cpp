#include "onn/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include <fstream>

#include "onn/error.hpp"
#include "onn/image_io.hpp"
#include "onn/network.hpp"
#include "onn/rng.hpp"

namespace onn {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::denoise: return "denoise";
    case TaskKind::synth: return "synth";
    case TaskKind::transform: return "transform";
  }
  return "transform";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "denoise") return TaskKind::denoise;
  if (s == "synth") return TaskKind::synth;
  if (s == "transform") return TaskKind::transform;
  fail_usage("unknown task kind '" + s + "' (expected denoise, synth or transform)");
}

FeatureMap normalize(const FeatureMap& raw) {
  if (raw.size() == 0) fail_data("cannot normalize an empty image");
  const auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
  const double mn = *lo;
  const double mx = *hi;
  if (!(mx > mn)) fail_data("degenerate range");
  FeatureMap out(raw.height, raw.width);
  for (std::size_t p = 0; p < raw.size(); ++p) {
    out.values[p] = 2.0 * (raw.values[p] - mn) / (mx - mn) - 1.0;
  }
  return out;
}

namespace {

double variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

}  // namespace

double snr(const FeatureMap& target, const FeatureMap& output) {
  if (!target.same_shape(output)) fail_data("snr: shape mismatch");
  if (target.size() == 0) fail_data("snr: empty maps");
  const double signal = variance(target.values);
  if (!(signal > 0.0)) fail_data("snr: constant target has no signal power");
  std::vector<double> noise(target.size());
  for (std::size_t p = 0; p < target.size(); ++p) noise[p] = target.values[p] - output.values[p];
  const double nv = variance(noise);
  if (nv == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / nv);
}

FeatureMap salt_pepper(const FeatureMap& image, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p <= 1.0)) fail_usage("salt-and-pepper probability must lie in [0, 1]");
  FeatureMap out = image;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : out.values) {
    const double hit = u(rng);
    const double coin = u(rng);
    if (hit < p) v = coin < 0.5 ? -1.0 : 1.0;
  }
  return out;
}

FeatureMap wgn(int height, int width, std::mt19937_64& rng) {
  if (height <= 0 || width <= 0) fail_usage("noise image needs a positive shape");
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMap raw(height, width);
  for (double& v : raw.values) v = g(rng);
  return normalize(raw);
}

Corpus synthetic_corpus(int count, int size, std::uint64_t seed) {
  if (count <= 0 || size <= 0) fail_usage("synthetic corpus needs positive count and size");
  Corpus corpus;
  for (int n = 0; n < count; ++n) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FeatureMap img(size, size);
    const double s = size;

    // Smooth gradient background.
    const double ga = u(rng) * 2.0 * std::numbers::pi;
    const double gs = 0.5 + u(rng);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        img.at(r, c) = gs * (std::cos(ga) * c + std::sin(ga) * r) / s;
      }
    }
    // Gratings.
    const int gratings = 1 + static_cast<int>(u(rng) * 3);
    for (int g = 0; g < gratings; ++g) {
      const double f = 0.04 + 0.25 * u(rng);
      const double th = u(rng) * std::numbers::pi;
      const double ph = u(rng) * 2.0 * std::numbers::pi;
      const double amp = 0.2 + 0.6 * u(rng);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          img.at(r, c) += amp * std::sin(2.0 * std::numbers::pi * f *
                                             (std::cos(th) * c + std::sin(th) * r) + ph);
        }
      }
    }
    // Filled discs and rectangles.
    const int shapes = 2 + static_cast<int>(u(rng) * 4);
    for (int k = 0; k < shapes; ++k) {
      const double level = 3.0 * (u(rng) - 0.5);
      const double cy = u(rng) * s;
      const double cx = u(rng) * s;
      const double ext = s * (0.08 + 0.25 * u(rng));
      const bool disc = u(rng) < 0.5;
      const double aspect = 0.5 + u(rng);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double dy = r - cy;
          const double dx = c - cx;
          const bool inside = disc ? dx * dx + dy * dy <= ext * ext
                                   : std::fabs(dx) <= ext && std::fabs(dy) <= ext * aspect;
          if (inside) img.at(r, c) = level + 0.3 * img.at(r, c);
        }
      }
    }
    const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
    const double mn = *lo;
    const double span = std::max(*hi - mn, 1e-9);
    for (double& v : img.values) v = std::round(255.0 * (v - mn) / span);
    char id[32];
    std::snprintf(id, sizeof id, "synthetic_%04d", n);
    corpus.push_back({id, std::move(img)});
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& dir, int size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail_data("corpus directory not found: " + dir.string());
  std::vector<std::pair<std::string, fs::path>> files;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    nlohmann::json j;
    try {
      in >> j;
      for (const auto& e : j.at("images")) {
        files.emplace_back(e.at("id").get<std::string>(), dir / e.at("file").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      fail_data("malformed corpus manifest " + manifest.string() + ": " + e.what());
    }
  } else {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".png")) {
        files.emplace_back(e.path().stem().string(), e.path());
      }
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) fail_data("no images in " + dir.string());
  Corpus corpus;
  for (const auto& [id, path] : files) {
    FeatureMap img = read_image(path);
    if (img.height != size || img.width != size) img = center_crop_resize(img, size);
    corpus.push_back({id, std::move(img)});
  }
  return corpus;
}

TaskSpec default_task_spec(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  const std::vector<int> nodals{0, 1, 2, 3, 4, 5, 6};
  switch (kind) {
    case TaskKind::denoise:
      s.pairs_per_fold = 0;  // sized by the corpus and train_fraction
      s.sublibrary = make_sublibrary({0, 1}, {0}, nodals);
      break;
    case TaskKind::synth:
      s.pairs_per_fold = 8;
      s.sublibrary = make_sublibrary({0}, {0, 1}, nodals);
      break;
    case TaskKind::transform:
      s.pairs_per_fold = 4;
      s.sublibrary = make_sublibrary({0}, {0, 1}, nodals);
      break;
  }
  return s;
}

std::vector<FoldPlan> build_folds(const std::vector<std::string>& ids, const TaskSpec& spec,
                                  int folds, std::uint64_t seed) {
  if (folds < 1) fail_usage("folds must be >= 1");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    fail_data("duplicate image ids in corpus");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = order.size();

  std::size_t group = 0;
  switch (spec.kind) {
    case TaskKind::denoise:
      if (n < 10) fail_data("corpus too small: denoising needs at least 10 images");
      group = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                           static_cast<double>(n) * spec.train_fraction)));
      break;
    case TaskKind::synth:
      group = static_cast<std::size_t>(spec.pairs_per_fold);
      break;
    case TaskKind::transform:
      if (spec.pairs_per_fold < 2) fail_usage("transformation needs at least 2 pairs per fold");
      group = static_cast<std::size_t>(2 * spec.pairs_per_fold);
      break;
  }
  if (group == 0 || group * static_cast<std::size_t>(folds) > n) {
    fail_data("corpus too small: " + std::to_string(n) + " images for " +
              std::to_string(folds) + " folds of " + std::to_string(group));
  }

  std::vector<FoldPlan> plans;
  for (int f = 0; f < folds; ++f) {
    FoldPlan p;
    p.fold = f + 1;
    const std::size_t b = static_cast<std::size_t>(f) * group;
    for (std::size_t j = 0; j < n; ++j) {
      if (j >= b && j < b + group) {
        p.train_ids.push_back(order[j]);
      } else if (spec.kind == TaskKind::denoise) {
        p.test_ids.push_back(order[j]);
      }
    }
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<ImagePair> transform_pairs(const std::vector<CorpusImage>& images) {
  if (images.size() < 4) fail_data("transformation pairs need at least 4 images");
  auto target = [&](std::size_t j) { return normalize(images[j].pixels); };
  auto pair = [&](std::size_t a, std::size_t b) {
    return ImagePair{images[a].id + "->" + images[b].id, target(a), target(b)};
  };
  const std::size_t count = images.size() / 2;
  std::vector<ImagePair> out{pair(0, 1), pair(1, 0)};
  for (std::size_t k = 2; k < count; ++k) out.push_back(pair(2 * k - 2, 2 * k - 1));
  return out;
}

FoldData make_fold_data(const TaskSpec& spec, const Corpus& corpus, const FoldPlan& plan,
                        std::uint64_t seed) {
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < corpus.size(); ++j) index[corpus[j].id] = j;
  auto lookup = [&](const std::string& id) -> std::size_t {
    const auto it = index.find(id);
    if (it == index.end()) fail_data("image id '" + id + "' not in corpus");
    return it->second;
  };
  auto image_rng = [&](std::size_t j) {
    return std::mt19937_64(derive_seed(seed, {static_cast<std::uint64_t>(plan.fold), j}));
  };

  FoldData data;
  switch (spec.kind) {
    case TaskKind::denoise: {
      auto corrupt = [&](const std::string& id) {
        const std::size_t j = lookup(id);
        FeatureMap clean = normalize(corpus[j].pixels);
        auto rng = image_rng(j);
        FeatureMap noisy = salt_pepper(clean, spec.noise_p, rng);
        return ImagePair{id, std::move(noisy), std::move(clean)};
      };
      for (const auto& id : plan.train_ids) data.train.push_back(corrupt(id));
      for (const auto& id : plan.test_ids) data.test.push_back(corrupt(id));
      break;
    }
    case TaskKind::synth:
      for (const auto& id : plan.train_ids) {
        const std::size_t j = lookup(id);
        auto rng = image_rng(j);
        const FeatureMap& px = corpus[j].pixels;
        data.train.push_back({"wgn->" + id, wgn(px.height, px.width, rng), normalize(px)});
      }
      break;
    case TaskKind::transform: {
      std::vector<CorpusImage> imgs;
      for (const auto& id : plan.train_ids) imgs.push_back(corpus[lookup(id)]);
      data.train = transform_pairs(imgs);
      break;
    }
  }
  return data;
}

EvalSummary evaluate(const OnnModel& model, const std::vector<ImagePair>& pairs) {
  EvalSummary s;
  if (pairs.empty()) return s;
  for (const auto& p : pairs) {
    const ForwardTrace t = forward(model, p.input);
    s.pair_snr.push_back(snr(p.target, t.output()));
    s.pair_mse.push_back(mse(t.output(), p.target));
  }
  const double n = static_cast<double>(pairs.size());
  s.snr = std::accumulate(s.pair_snr.begin(), s.pair_snr.end(), 0.0) / n;
  s.mse = std::accumulate(s.pair_mse.begin(), s.pair_mse.end(), 0.0) / n;
  return s;
}

}  // namespace onn
