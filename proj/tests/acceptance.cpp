// Acceptance suite: one PASS/FAIL line per criterion. With arguments, runs
// only the listed criterion numbers. Exit status is non-zero if any fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "onn/backprop.hpp"
#include "onn/experiment.hpp"
#include "onn/rng.hpp"
#include "onn/serialize.hpp"
#include "onn/spm.hpp"
#include "onn/tasks.hpp"
#include "oracles.hpp"
#include "reference_hf.hpp"

using namespace onn;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kCnnTol = 1e-9;
constexpr double kFdStep = 1e-6;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdFloor = 1e-5;         // relative-error denominator floor
constexpr double kFdMaxSkipFraction = 0.1;  // median route flips, non-differentiable
constexpr double kReplayTol = 1e-12;
constexpr double kSamplingTol = 0.01;
constexpr double kLrLow = 3.5e-5;
constexpr double kLrHigh = 0.5;
constexpr double kTransformGapDb = 3.0;
constexpr int kTransformWins = 7;
constexpr int kSynthWins = 6;
constexpr int kRankRuns = 3;
constexpr int kTrials = 10;

constexpr int kDeskSize = 60;
constexpr std::uint64_t kCorpusSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

OnnModel random_model(const Architecture& arch, std::mt19937_64& rng, double range) {
  OnnModel m = make_model(arch);
  init_weights(m, rng, range);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (std::size_t l = 1; l < m.params.biases.size(); ++l)
    for (double& b : m.params.biases[l]) b = u(rng);
  return m;
}

GradientSet analytic(const OnnModel& m, const FeatureMap& x, const FeatureMap& t) {
  const auto tr = forward(m, x);
  return backward(m, tr, output_delta(m, tr, {t})).grads;
}

double max_abs_diff(const GradientSet& a, const Parameters& b) {
  double worst = 0.0;
  for (std::size_t l = 1; l < a.kernels.size(); ++l) {
    for (std::size_t j = 0; j < a.kernels[l].size(); ++j)
      for (std::size_t q = 0; q < a.kernels[l][j].weights.size(); ++q)
        worst = std::max(worst, std::fabs(a.kernels[l][j].weights[q] - b.kernels[l][j].weights[q]));
    for (std::size_t k = 0; k < a.biases[l].size(); ++k)
      worst = std::max(worst, std::fabs(a.biases[l][k] - b.biases[l][k]));
  }
  return worst;
}

std::vector<ImagePair> transform_task() {
  return transform_pairs(synthetic_corpus(8, kDeskSize, kCorpusSeed));
}

double train_snr(const OnnModel& initial, std::span<const ImagePair> pairs, std::uint64_t seed) {
  const MultiRunResult r = train_runs(initial, pairs, TrainConfig{}, 1, seed);
  if (!r.any_survivor()) return -std::numeric_limits<double>::infinity();
  return r.runs.front().train_snr;
}

// ---------------------------------------------------------------------------

Outcome cnn_equivalence() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const OnnModel m = random_model(Architecture::standard(), rng, 0.3);
    const FeatureMap x = oracle::random_map(16, 16, rng);
    const FeatureMap t = oracle::random_map(16, 16, rng, -0.8, 0.8);
    const auto ref = oracle::cnn(m, x, t);
    const FeatureMap y = forward(m, x).output();
    for (int r = 0; r < 16; ++r)
      for (int s = 0; s < 16; ++s) worst = std::max(worst, std::fabs(y.at(r, s) - ref.output[r][s]));
    worst = std::max(worst, max_abs_diff(analytic(m, x, t), ref.grads));
  }
  return {worst <= kCnnTol, "20 cases, max abs diff " + fmt(worst) + " (tol " + fmt(kCnnTol) + ")"};
}

std::vector<std::uint8_t> routes_of(const ForwardTrace& tr) {
  std::vector<std::uint8_t> all;
  for (const auto& lt : tr.layers)
    for (const auto& r : lt.routes) all.insert(all.end(), r.begin(), r.end());
  return all;
}

Outcome gradient_suite() {
  const auto lib = full_library();
  long checked = 0, skipped = 0, bad = 0;
  double worst = 0.0;
  std::string first_bad;
  for (int s = 0; s < kSetCount; ++s) {
    std::mt19937_64 rng(derive_seed(202, {static_cast<std::uint64_t>(s)}));
    OnnModel m = random_model(Architecture::standard(), rng, 0.3);
    for (int l : m.arch.hidden_layers()) assign_operators(m, l, std::vector<int>(12, s), lib);
    const FeatureMap x = oracle::random_map(8, 8, rng);
    const FeatureMap t = oracle::random_map(8, 8, rng, -0.8, 0.8);
    const GradientSet g = analytic(m, x, t);
    const auto base = routes_of(forward(m, x));
    const auto probe = [&](double& p, double a, const std::string& what) {
      const double p0 = p;
      p = p0 + kFdStep;
      const auto up = forward(m, x);
      p = p0 - kFdStep;
      const auto dn = forward(m, x);
      p = p0;
      if (routes_of(up) != base || routes_of(dn) != base) {
        ++skipped;
        return;
      }
      const double fd = (mse(up.output(), t) - mse(dn.output(), t)) / (2 * kFdStep);
      const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), kFdFloor});
      worst = std::max(worst, rel);
      ++checked;
      if (rel > kFdRelTol) {
        if (bad++ == 0) first_bad = "set " + std::to_string(s) + ' ' + what;
      }
    };
    for (std::size_t l = 1; l < m.params.kernels.size(); ++l) {
      for (std::size_t j = 0; j < m.params.kernels[l].size(); ++j)
        for (std::size_t q = 0; q < m.params.kernels[l][j].weights.size(); ++q)
          probe(m.params.kernels[l][j].weights[q], g.kernels[l][j].weights[q], "weight");
      for (std::size_t k = 0; k < m.params.biases[l].size(); ++k) probe(m.params.biases[l][k], g.biases[l][k], "bias");
    }
  }
  const double skip_fraction = static_cast<double>(skipped) / static_cast<double>(checked + skipped);
  std::string d = "28 sets, " + std::to_string(checked) + " parameters checked, " + std::to_string(skipped) +
                  " skipped at median route flips, max rel err " + fmt(worst) + " (tol " + fmt(kFdRelTol) + ")";
  if (bad) d += ", " + std::to_string(bad) + " over tolerance, first: " + first_bad;
  return {bad == 0 && skip_fraction <= kFdMaxSkipFraction, d};
}

Outcome hf_replay() {
  const auto pairs = transform_pairs(synthetic_corpus(8, 16, kCorpusSeed));
  SpmRecorder rec;
  const PriorBpResult r = prior_bp(pairs, reference_hf::transform_library(), SpmConfig{}, TrainConfig{},
                                   Architecture::standard(), {}, 303, &rec);
  const fs::path dir = fs::temp_directory_path() / ("onn_accept_replay_" + std::to_string(::getpid()));
  write_file_atomic(dir / "snapshots.json", dump_json(to_json(rec.sessions)));
  save_ledger(dir / "hf.json", r.ledger);
  const auto sessions = sessions_from_json(read_json(dir / "snapshots.json"));
  const HealthLedger ledger = load_ledger(dir / "hf.json");
  fs::remove_all(dir);

  const Architecture arch = Architecture::standard();
  std::map<std::pair<int, int>, HfCell> replay;
  double worst = 0.0;
  long samples = 0;
  bool mismatch = false;
  for (const auto& s : sessions) {
    if (s.diverged) continue;
    for (const auto& smp : s.samples) {
      const auto hf = instantaneous_hf(weight_power(arch, s.before, smp.layer, smp.neuron),
                                       weight_power(arch, s.after, smp.layer, smp.neuron));
      if (!hf) {
        mismatch = true;
        continue;
      }
      worst = std::max(worst, std::fabs(*hf - smp.hf));
      auto& c = replay[std::make_pair(smp.layer, smp.set)];
      ++c.count;
      c.sum += *hf;
      ++samples;
    }
  }
  for (int l : arch.hidden_layers())
    for (int set : ledger.sublibrary.sets) {
      const HfCell& c = ledger.cell(l, set);
      const HfCell& rc = replay[std::make_pair(l, set)];
      if (rc.count != c.count) mismatch = true;
      if (c.count > 0) worst = std::max(worst, std::fabs(rc.sum / rc.count - *ledger.hf(l, set)));
    }
  return {!mismatch && samples > 0 && worst <= kReplayTol,
          std::to_string(sessions.size()) + " sessions, " + std::to_string(samples) +
              " samples replayed from persisted snapshots, max diff " + fmt(worst) + " (tol " + fmt(kReplayTol) + ")"};
}

Outcome allocation() {
  const auto example = allocate(std::vector<double>{0.67, 0.23, 0.22}, 12);
  const bool example_ok = example == std::vector<int>{8, 2, 2};
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> hd(1e-3, 5.0);
  std::uniform_int_distribution<int> sd(1, 3), nd(3, 64);
  int failures = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int s = sd(rng), n = nd(rng);
    std::vector<double> h(static_cast<std::size_t>(s));
    for (double& v : h) v = hd(rng);
    std::sort(h.rbegin(), h.rend());
    const auto counts = allocate(h, n);
    if (std::accumulate(counts.begin(), counts.end(), 0) != n) ++failures;
  }
  return {example_ok && failures == 0, "(0.67, 0.23, 0.22), N=12 -> (" + std::to_string(example[0]) + ", " +
                                           std::to_string(example[1]) + ", " + std::to_string(example[2]) +
                                           "); 10000 random vectors, " + std::to_string(failures) +
                                           " with sum != N"};
}

Outcome bijection() {
  int failures = 0;
  std::set<int> seen;
  for (int i = 0; i < kSetCount; ++i) {
    const OperatorSet s = set_from_index(i);
    const int back = set_index(static_cast<int>(s.pool), static_cast<int>(s.act), static_cast<int>(s.nodal));
    if (back != i || s.index() != i) ++failures;
    seen.insert(static_cast<int>(s.pool) * 100 + static_cast<int>(s.act) * 10 + static_cast<int>(s.nodal));
  }
  const OperatorSet s26 = set_from_index(26);
  const bool example = set_index(1, 1, 5) == 26 && s26.pool == PoolOp::median && s26.act == ActOp::lincut &&
                       s26.nodal == NodalOp::sinc;
  return {failures == 0 && seen.size() == 28 && example,
          "28 round trips, " + std::to_string(failures) + " failures, " + std::to_string(seen.size()) +
              " distinct triples, (1,1,5) <-> " + std::to_string(set_index(1, 1, 5))};
}

Outcome lr_schedule() {
  const bool examples = adapt_lr(1.0, 2.0, 0.1) == 1.05 * 0.1 && adapt_lr(2.0, 1.0, 0.1) == 0.7 * 0.1 &&
                        adapt_lr(1.0, 2.0, 0.49) == 0.49 && adapt_lr(2.0, 1.0, 6e-5) == 6e-5;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> start(5e-5, 0.5), step(0.5, 1.5);
  double lo = 1.0, hi = 0.0;
  for (int seq = 0; seq < 1000; ++seq) {
    double lr = start(rng), prev = 1.0;
    for (int t = 0; t < 1000; ++t) {
      const double now = prev * step(rng);
      lr = adapt_lr(now, prev, lr);
      prev = now;
      lo = std::min(lo, lr);
      hi = std::max(hi, lr);
    }
  }
  return {examples && lo >= kLrLow && hi <= kLrHigh,
          std::string("examples ") + (examples ? "exact" : "WRONG") + "; 1000 random sequences, lr in [" + fmt(lo) +
              ", " + fmt(hi) + "]"};
}

Outcome sampling() {
  HealthLedger l(reference_hf::transform_library(), {2});
  for (int s = 0; s < 14; ++s) l.record(2, s, reference_hf::kFold1L2[static_cast<std::size_t>(s)]);
  l.warm[2] = true;
  const double total = std::accumulate(reference_hf::kFold1L2.begin(), reference_hf::kFold1L2.end(), 0.0);
  std::mt19937_64 rng(707);
  std::vector<double> f(kSetCount, 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    f[static_cast<std::size_t>(sample_operator(l, 2, reference_hf::transform_library(), rng))] += 1.0;
  double worst = 0.0;
  for (int s = 0; s < kSetCount; ++s) {
    const double want = s < 14 ? reference_hf::kFold1L2[static_cast<std::size_t>(s)] / total : 0.0;
    worst = std::max(worst, std::fabs(f[static_cast<std::size_t>(s)] / draws - want));
  }
  return {worst <= kSamplingTol, "100000 draws, max abs deviation " + fmt(worst) + " (tol " + fmt(kSamplingTol) + ")"};
}

Outcome transform_gap() {
  const auto pairs = transform_task();
  const HealthLedger ledger = reference_hf::ledger_from(reference_hf::kFold1L1, reference_hf::kFold1L2);
  int wins = 0;
  std::string gaps;
  for (int t = 0; t < kTrials; ++t) {
    const std::uint64_t seed = derive_seed(808, {static_cast<std::uint64_t>(t)});
    std::mt19937_64 er(seed), cr(seed);
    const OnnModel elite = build_elite(ledger, 1, Architecture::standard(), {}, er);
    OnnModel cnn = make_model(Architecture::standard());
    init_weights(cnn, cr, 0.1);
    const double e = train_snr(elite, pairs, seed), c = train_snr(cnn, pairs, seed);
    if (e - c >= kTransformGapDb) ++wins;
    gaps += (t ? " " : "") + fmt(e, 3) + "/" + fmt(c, 3);
  }
  return {wins >= kTransformWins, std::to_string(wins) + "/10 trials with elite - cnn >= 3 dB (need " +
                                      std::to_string(kTransformWins) + "); elite/cnn dB: " + gaps};
}

Outcome synthesis() {
  const Corpus corpus = synthetic_corpus(2, kDeskSize, kCorpusSeed);
  TaskSpec spec = default_task_spec(TaskKind::synth);
  spec.pairs_per_fold = 2;
  FoldPlan plan;
  plan.train_ids = {corpus[0].id, corpus[1].id};
  const FoldData data = make_fold_data(spec, corpus, plan, 909);
  const PriorBpResult prior = prior_bp(data.train, spec.sublibrary, SpmConfig{}, TrainConfig{},
                                       Architecture::standard(), {}, 910);
  int wins = 0;
  std::string scores;
  for (int t = 0; t < kTrials; ++t) {
    const std::uint64_t seed = derive_seed(911, {static_cast<std::uint64_t>(t)});
    std::mt19937_64 er(seed), cr(seed);
    const OnnModel elite = build_elite(prior.ledger, 1, Architecture::standard(), {}, er);
    OnnModel cnn = make_model(Architecture::standard());
    init_weights(cnn, cr, 0.1);
    const double e = train_snr(elite, data.train, seed), c = train_snr(cnn, data.train, seed);
    if (e > c) ++wins;
    scores += (t ? " " : "") + fmt(e, 3) + "/" + fmt(c, 3);
  }
  const auto top = [&](int l) { return std::to_string(rank_operators(prior.ledger, l).front().set); };
  return {wins >= kSynthWins, std::to_string(wins) + "/10 seeds elite S=1 (layer sets " + top(1) + ", " + top(2) +
                                  ") beats cnn (need " + std::to_string(kSynthWins) + "); elite/cnn dB: " + scores};
}

Outcome denoising() {
  ExperimentConfig cfg;
  cfg.task = default_task_spec(TaskKind::denoise);
  cfg.folds = 3;
  const Corpus corpus = synthetic_corpus(10, kDeskSize, kCorpusSeed);
  const ExperimentReport report = run_experiment(cfg, corpus, std::nullopt, 1);
  std::map<std::string, double> mean;
  for (const auto& f : report.folds)
    for (const auto& c : f.candidates)
      mean[c.name] += (c.diverged ? -std::numeric_limits<double>::infinity() : c.train_snr) / cfg.folds;
  const bool pass = mean["elite3"] >= mean["cnn"] && mean["worst1"] < mean["cnn"];
  return {pass, "3 folds, mean train SNR dB: elite3 " + fmt(mean["elite3"]) + ", cnn " + fmt(mean["cnn"]) +
                    ", worst1 " + fmt(mean["worst1"])};
}

Outcome ranking() {
  const auto pairs = transform_task();
  int hits = 0;
  std::string tops;
  for (int r = 0; r < 5; ++r) {
    const PriorBpResult prior = prior_bp(pairs, reference_hf::transform_library(), SpmConfig{}, TrainConfig{},
                                         Architecture::standard(), {}, derive_seed(1111, {static_cast<std::uint64_t>(r)}));
    const auto ranked = rank_operators(prior.ledger, 2);
    std::size_t pos = 0;
    while (ranked[pos].set != 6) ++pos;
    if (pos < 3) ++hits;
    tops += std::string(r ? "; " : "") + "run " + std::to_string(r) + " top3 " + std::to_string(ranked[0].set) + "," +
            std::to_string(ranked[1].set) + "," + std::to_string(ranked[2].set) + " (set 6 at " +
            std::to_string(pos + 1) + ")";
  }
  return {hits >= kRankRuns, std::to_string(hits) + "/5 runs with set 6 in layer-2 top 3 (need " +
                                 std::to_string(kRankRuns) + "); " + tops};
}

std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".json" || ext == ".csv" || ext == ".toml") {
      files[fs::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return files;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("onn_accept_det_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string config = (dir / "run.toml").string();
  std::ofstream(config) << "[task]\nkind = \"transform\"\nfolds = 4\npairs_per_fold = 2\nseed = 12\n\n"
                           "[corpus]\nsize = 16\n\n[spm]\nsessions = 6\niterations_per_session = 10\n\n"
                           "[train]\niterations = 30\nruns = 2\n\n[output]\ndir = \"onn_out\"\n";
  std::vector<std::map<std::string, std::string>> runs;
  std::string failure;
  for (const auto& [name, jobs] : std::vector<std::pair<std::string, std::string>>{{"a", "1"}, {"b", "1"}, {"c", "4"}}) {
    std::ostringstream out, err;
    const int code = cli::run({"experiment", "-c", config, "-o", (dir / name).string(), "--jobs", jobs}, out, err);
    if (code != 0) failure = "exit " + std::to_string(code) + ": " + err.str();
    runs.push_back(artifacts(dir / name));
  }
  fs::remove_all(dir);
  if (!failure.empty()) return {false, failure};
  const bool same = runs[0] == runs[1] && runs[0] == runs[2];
  std::string diff;
  if (!same) {
    for (const auto& [f, content] : runs[0]) {
      if (runs[2][f] != content || runs[1][f] != content) diff += " " + f;
    }
  }
  return {same && runs[0].count("report.json") && runs[0].count("report.csv"),
          std::to_string(runs[0].size()) + " JSON/CSV artifacts, --jobs 1 twice and --jobs 4 " +
              (same ? "byte-identical" : "differ:" + diff)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "cnn equivalence", cnn_equivalence},
      {2, "gradient suite", gradient_suite},
      {3, "health-factor replay", hf_replay},
      {4, "elite allocation", allocation},
      {5, "operator-set bijection", bijection},
      {6, "learning-rate schedule", lr_schedule},
      {7, "operator sampling", sampling},
      {8, "transformation learning gap", transform_gap},
      {9, "synthesis sanity", synthesis},
      {10, "denoising sanity", denoising},
      {11, "ranking sanity", ranking},
      {12, "end-to-end determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s criterion %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
