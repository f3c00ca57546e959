#include "onn/experiment.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "onn/error.hpp"
#include "onn/rng.hpp"

namespace onn {

namespace fs = std::filesystem;

MultiRunResult train_runs(const OnnModel& initial, std::span<const ImagePair> pairs,
                          const TrainConfig& cfg, int runs, std::uint64_t seed,
                          double weight_range) {
  if (runs < 1) fail_usage("runs must be >= 1");
  cfg.validate();
  const std::vector<ImagePair> pair_list(pairs.begin(), pairs.end());
  MultiRunResult result;
  for (int r = 0; r < runs; ++r) {
    OnnModel model = initial;
    if (r > 0) {
      std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
      init_weights(model, rng, weight_range);
    }
    TrainConfig tc = cfg;
    tc.seed = derive_seed(seed, {static_cast<std::uint64_t>(r), 1});
    RunOutcome out;
    out.run = r;
    Trainer trainer(model, pairs, tc);
    try {
      for (int t = 0; t < tc.iterations; ++t) out.trace.records.push_back(trainer.step());
      const EvalSummary e = evaluate(model, pair_list);
      out.train_snr = e.snr;
      out.train_mse = e.mse;
      if (!result.best_run || out.train_snr > result.runs[static_cast<std::size_t>(*result.best_run)].train_snr) {
        result.best_run = r;
        result.best_model = model;
      }
    } catch (const DivergenceError& e) {
      out.diverged = true;
      out.diverged_at = e.iteration();
    }
    result.runs.push_back(std::move(out));
  }
  return result;
}

void write_runs_csv(std::ostream& os, const MultiRunResult& result) {
  os << "run,iter,E,lr\n" << std::setprecision(17);
  for (const auto& r : result.runs) {
    for (const auto& rec : r.trace.records) {
      os << r.run << ',' << rec.iter << ',' << rec.loss << ',' << rec.lr << '\n';
    }
  }
}

void ExperimentConfig::validate() const {
  arch.validate();
  constants.validate();
  spm.validate();
  train.validate();
  if (folds < 1) fail_usage("task.folds must be >= 1");
  if (runs < 1) fail_usage("train.runs must be >= 1");
  if (!(weight_range >= 0.0)) fail_usage("train.weight_range must be >= 0");
  if (task.sublibrary.sets.empty()) fail_usage("operators: empty sub-library");
  for (int l : arch.hidden_layers()) {
    if (static_cast<int>(task.sublibrary.size()) < 3 || arch.neurons(l) < 3) {
      fail_usage("candidates with S=3 need at least 3 sets and 3 neurons per hidden layer");
    }
  }
}

OnnModel build_candidate(const std::string& name, const HealthLedger& ledger,
                         const ExperimentConfig& cfg, std::mt19937_64& rng) {
  if (name == "elite1") return build_elite(ledger, 1, cfg.arch, cfg.constants, rng, cfg.weight_range);
  if (name == "elite3") return build_elite(ledger, 3, cfg.arch, cfg.constants, rng, cfg.weight_range);
  if (name == "worst1") return build_worst(ledger, 1, cfg.arch, cfg.constants, rng, cfg.weight_range);
  if (name == "worst3") return build_worst(ledger, 3, cfg.arch, cfg.constants, rng, cfg.weight_range);
  if (name == "cnn") {
    OnnModel m = make_model(cfg.arch, cfg.constants);
    init_weights(m, rng, cfg.weight_range);
    return m;
  }
  fail_usage("unknown candidate '" + name + "'");
}

namespace {

std::string fold_dir_name(int fold) {
  std::ostringstream ss;
  ss << "fold_" << std::setw(2) << std::setfill('0') << fold;
  return ss.str();
}

std::string to_csv(const MultiRunResult& r) {
  std::ostringstream ss;
  write_runs_csv(ss, r);
  return ss.str();
}

std::string ledger_csv(const HealthLedger& l) {
  std::ostringstream ss;
  write_ledger_csv(ss, l);
  return ss.str();
}

Json optional_number(const std::optional<double>& v) {
  return v ? number_or_sentinel(*v) : Json(nullptr);
}

std::optional<double> optional_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return number_from_sentinel(j);
}

}  // namespace

std::vector<FoldPlan> experiment_folds(const ExperimentConfig& cfg, const Corpus& corpus) {
  std::vector<std::string> ids;
  for (const auto& img : corpus) ids.push_back(img.id);
  return build_folds(ids, cfg.task, cfg.folds, derive_seed(cfg.seed, {0}));
}

std::uint64_t fold_seed(const ExperimentConfig& cfg, int fold) {
  return derive_seed(cfg.seed, {static_cast<std::uint64_t>(fold)});
}

FoldData fold_data(const ExperimentConfig& cfg, const Corpus& corpus, const FoldPlan& plan) {
  return make_fold_data(cfg.task, corpus, plan, derive_seed(fold_seed(cfg, plan.fold), {0}));
}

std::uint64_t prior_bp_seed(const ExperimentConfig& cfg, int fold) {
  return derive_seed(fold_seed(cfg, fold), {1});
}

Json eval_json(const EvalSummary& summary, const std::vector<ImagePair>& pairs) {
  Json list = Json::array();
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    list.push_back({{"id", pairs[j].id},
                    {"snr", number_or_sentinel(summary.pair_snr[j])},
                    {"mse", number_or_sentinel(summary.pair_mse[j])}});
  }
  return {{"pairs", list},
          {"snr", number_or_sentinel(summary.snr)},
          {"mse", number_or_sentinel(summary.mse)}};
}

void write_eval_csv(std::ostream& os, const std::string& split, const EvalSummary& summary,
                    const std::vector<ImagePair>& pairs, bool header) {
  if (header) os << "split,pair,snr,mse\n";
  os << std::setprecision(17);
  auto num = [&](double v) {
    if (std::isinf(v)) {
      os << (v > 0 ? "inf" : "-inf");
    } else {
      os << v;
    }
  };
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    os << split << ',' << pairs[j].id << ',';
    num(summary.pair_snr[j]);
    os << ',';
    num(summary.pair_mse[j]);
    os << '\n';
  }
  os << split << ",mean,";
  num(summary.snr);
  os << ',';
  num(summary.mse);
  os << '\n';
}

FoldResult run_fold(const ExperimentConfig& cfg, const Corpus& corpus, const FoldPlan& plan,
                    const std::optional<fs::path>& dir) {
  const FoldData data = fold_data(cfg, corpus, plan);

  FoldResult out;
  out.plan = plan;
  out.ledger = prior_bp(data.train, cfg.task.sublibrary, cfg.spm, cfg.train, cfg.arch,
                        cfg.constants, prior_bp_seed(cfg, plan.fold), nullptr, cfg.weight_range)
                   .ledger;
  if (dir) {
    save_ledger(*dir / "hf.json", out.ledger);
    write_file_atomic(*dir / "hf.csv", ledger_csv(out.ledger));
  }

  for (std::size_t c = 0; c < kCandidates.size(); ++c) {
    const std::string name = kCandidates[c];
    const std::uint64_t cand_seed = derive_seed(fold_seed(cfg, plan.fold), {2, c});
    std::mt19937_64 rng(derive_seed(cand_seed, {0}));
    const OnnModel initial = build_candidate(name, out.ledger, cfg, rng);
    const MultiRunResult runs =
        train_runs(initial, data.train, cfg.train, cfg.runs, derive_seed(cand_seed, {1}),
                   cfg.weight_range);

    CandidateResult cr;
    cr.name = name;
    cr.assignments = initial.assignments;
    for (const auto& r : runs.runs) cr.runs_diverged += r.diverged ? 1 : 0;
    if (!runs.any_survivor()) {
      cr.diverged = true;
    } else {
      const RunOutcome& best = runs.runs[static_cast<std::size_t>(*runs.best_run)];
      cr.best_run = best.run;
      cr.train_snr = best.train_snr;
      cr.train_mse = best.train_mse;
      if (!data.test.empty()) {
        const EvalSummary e = evaluate(runs.best_model, data.test);
        cr.test_snr = e.snr;
        cr.test_mse = e.mse;
      }
      if (dir) save_model(*dir / (name + ".json"), runs.best_model);
    }
    if (dir) write_file_atomic(*dir / (name + "_metrics.csv"), to_csv(runs));
    out.candidates.push_back(std::move(cr));
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                                const std::optional<fs::path>& out_dir, int jobs,
                                const FoldCallback& on_fold) {
  cfg.validate();
  if (jobs < 1) fail_usage("--jobs must be >= 1");
  const std::vector<FoldPlan> plans = experiment_folds(cfg, corpus);
  const Json cfg_json = to_json(cfg);

  ExperimentReport report;
  report.kind = cfg.task.kind;
  report.folds.resize(plans.size());
  std::vector<std::exception_ptr> errors(plans.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mu;

  auto worker = [&] {
    for (std::size_t f = next++; f < plans.size(); f = next++) {
      try {
        std::optional<fs::path> dir;
        bool resumed = false;
        if (out_dir) {
          dir = *out_dir / fold_dir_name(plans[f].fold);
          const fs::path state = *dir / "state.json";
          if (fs::exists(state)) {
            const Json s = read_json(state);
            if (s.value("complete", false) && s.at("config") == cfg_json) {
              report.folds[f] = fold_result_from_json(s.at("result"));
              resumed = true;
            }
          }
        }
        if (!resumed) {
          report.folds[f] = run_fold(cfg, corpus, plans[f], dir);
          if (dir) {
            write_file_atomic(*dir / "state.json",
                              dump_json({{"complete", true},
                                         {"config", cfg_json},
                                         {"result", to_json(report.folds[f])}}));
          }
        }
        if (on_fold) {
          std::lock_guard lock(callback_mu);
          on_fold(report.folds[f], resumed);
        }
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };

  const int threads = std::min<int>(jobs, static_cast<int>(plans.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return report;
}

Json to_json(const ExperimentConfig& cfg) {
  return {{"task",
           {{"kind", to_string(cfg.task.kind)},
            {"pairs_per_fold", cfg.task.pairs_per_fold},
            {"noise_p", cfg.task.noise_p},
            {"train_fraction", cfg.task.train_fraction},
            {"sublibrary", to_json(cfg.task.sublibrary)}}},
          {"architecture", to_json(cfg.arch)},
          {"constants", to_json(cfg.constants)},
          {"spm", to_json(cfg.spm)},
          {"train", to_json(cfg.train)},
          {"folds", cfg.folds},
          {"runs", cfg.runs},
          {"weight_range", cfg.weight_range},
          {"seed", cfg.seed}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  try {
    ExperimentConfig c;
    const Json& t = j.at("task");
    c.task.kind = task_from_string(t.at("kind").get<std::string>());
    c.task.pairs_per_fold = t.at("pairs_per_fold").get<int>();
    c.task.noise_p = t.at("noise_p").get<double>();
    c.task.train_fraction = t.at("train_fraction").get<double>();
    c.task.sublibrary = sublibrary_from_json(t.at("sublibrary"));
    c.arch = architecture_from_json(j.at("architecture"));
    c.constants = constants_from_json(j.at("constants"));
    c.spm = spm_config_from_json(j.at("spm"));
    c.train = train_config_from_json(j.at("train"));
    c.folds = j.at("folds").get<int>();
    c.runs = j.at("runs").get<int>();
    c.weight_range = j.at("weight_range").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("malformed experiment config: ") + e.what());
  }
}

Json to_json(const FoldResult& fold) {
  Json cands = Json::array();
  for (const auto& c : fold.candidates) {
    cands.push_back({{"name", c.name},
                     {"assignments", c.assignments},
                     {"diverged", c.diverged},
                     {"best_run", c.best_run},
                     {"runs_diverged", c.runs_diverged},
                     {"train_snr", c.diverged ? Json(nullptr) : number_or_sentinel(c.train_snr)},
                     {"train_mse", c.diverged ? Json(nullptr) : Json(c.train_mse)},
                     {"test_snr", optional_number(c.test_snr)},
                     {"test_mse", optional_number(c.test_mse)}});
  }
  return {{"fold", fold.plan.fold},
          {"train_ids", fold.plan.train_ids},
          {"test_ids", fold.plan.test_ids},
          {"ledger", to_json(fold.ledger)},
          {"candidates", cands}};
}

FoldResult fold_result_from_json(const Json& j) {
  try {
    FoldResult f;
    f.plan.fold = j.at("fold").get<int>();
    f.plan.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    f.plan.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    f.ledger = ledger_from_json(j.at("ledger"));
    for (const auto& c : j.at("candidates")) {
      CandidateResult r;
      r.name = c.at("name").get<std::string>();
      r.assignments = c.at("assignments").get<std::vector<std::vector<int>>>();
      r.diverged = c.at("diverged").get<bool>();
      r.best_run = c.at("best_run").get<int>();
      r.runs_diverged = c.at("runs_diverged").get<int>();
      if (!r.diverged) {
        r.train_snr = number_from_sentinel(c.at("train_snr"));
        r.train_mse = c.at("train_mse").get<double>();
      }
      r.test_snr = optional_from_json(c.at("test_snr"));
      r.test_mse = optional_from_json(c.at("test_mse"));
      f.candidates.push_back(std::move(r));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("malformed fold state: ") + e.what());
  }
}

namespace {

struct Means {
  std::optional<double> train_snr, train_mse, test_snr, test_mse;
};

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Per-candidate means over the folds where the candidate survived.
std::vector<Means> candidate_means(const ExperimentReport& report) {
  std::vector<Means> out(kCandidates.size());
  for (std::size_t c = 0; c < kCandidates.size(); ++c) {
    std::vector<double> trs, trm, tes, tem;
    for (const auto& f : report.folds) {
      const CandidateResult& r = f.candidates[c];
      if (r.diverged) continue;
      trs.push_back(r.train_snr);
      trm.push_back(r.train_mse);
      if (r.test_snr) tes.push_back(*r.test_snr);
      if (r.test_mse) tem.push_back(*r.test_mse);
    }
    out[c] = {mean_of(trs), mean_of(trm), mean_of(tes), mean_of(tem)};
  }
  return out;
}

void csv_cell(std::ostream& os, const std::optional<double>& v) {
  os << ',';
  if (!v) return;
  if (std::isinf(*v)) {
    os << (*v > 0 ? "inf" : "-inf");
  } else {
    os << *v;
  }
}

}  // namespace

Json to_json(const ExperimentReport& report) {
  Json folds = Json::array();
  for (const auto& f : report.folds) {
    Json j = to_json(f);
    j.erase("ledger");
    folds.push_back(std::move(j));
  }
  const auto means = candidate_means(report);
  Json summary = Json::object();
  for (std::size_t c = 0; c < kCandidates.size(); ++c) {
    summary[kCandidates[c]] = {{"train_snr", optional_number(means[c].train_snr)},
                               {"train_mse", optional_number(means[c].train_mse)},
                               {"test_snr", optional_number(means[c].test_snr)},
                               {"test_mse", optional_number(means[c].test_mse)}};
  }
  return {{"task", to_string(report.kind)},
          {"candidates", kCandidates},
          {"folds", folds},
          {"summary", summary}};
}

void write_report_csv(std::ostream& os, const ExperimentReport& report) {
  os << "fold,split,metric";
  for (const char* c : kCandidates) os << ',' << c;
  os << '\n' << std::setprecision(17);
  const bool has_test = report.kind == TaskKind::denoise;
  using Getter = std::optional<double> (*)(const CandidateResult&);
  struct Row {
    const char* split;
    const char* metric;
    Getter get;
  };
  const std::vector<Row> rows = [&] {
    std::vector<Row> r{
        {"train", "snr", [](const CandidateResult& c) { return c.diverged ? std::nullopt : std::optional(c.train_snr); }},
        {"train", "mse", [](const CandidateResult& c) { return c.diverged ? std::nullopt : std::optional(c.train_mse); }}};
    if (has_test) {
      r.push_back({"test", "snr", [](const CandidateResult& c) { return c.test_snr; }});
      r.push_back({"test", "mse", [](const CandidateResult& c) { return c.test_mse; }});
    }
    return r;
  }();
  for (const auto& f : report.folds) {
    for (const auto& row : rows) {
      os << f.plan.fold << ',' << row.split << ',' << row.metric;
      for (const auto& c : f.candidates) csv_cell(os, row.get(c));
      os << '\n';
    }
  }
  const auto means = candidate_means(report);
  for (const auto& row : rows) {
    os << "mean," << row.split << ',' << row.metric;
    for (const auto& m : means) {
      const std::string key = std::string(row.split) + "_" + row.metric;
      const std::optional<double> v = key == "train_snr"  ? m.train_snr
                                      : key == "train_mse" ? m.train_mse
                                      : key == "test_snr"  ? m.test_snr
                                                           : m.test_mse;
      csv_cell(os, v);
    }
    os << '\n';
  }
}

}  // namespace onn
