#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "onn/config.hpp"
#include "onn/error.hpp"
#include "onn/experiment.hpp"
#include "onn/image_io.hpp"
#include "onn/rng.hpp"
#include "onn/serialize.hpp"

namespace onn::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
};

std::string fold_dir(int fold) {
  std::ostringstream ss;
  ss << "fold_" << std::setw(2) << std::setfill('0') << fold;
  return ss.str();
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

RunConfig config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? default_run_config() : load_config(path);
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

FoldPlan select_fold(const std::vector<FoldPlan>& plans, int fold) {
  for (const auto& p : plans) {
    if (p.fold == fold) return p;
  }
  fail_usage("fold " + std::to_string(fold) + " outside 1.." + std::to_string(plans.size()));
}

std::string csv_text(const auto& writer) {
  std::ostringstream ss;
  writer(ss);
  return ss.str();
}

// ---------------------------------------------------------------------------
// import

struct ImportArgs {
  std::vector<std::string> paths;
  int size = 60;
  int synthetic = 0;
  std::uint64_t seed = 7;
};

int cmd_import(const ImportArgs& a, Context& ctx) {
  if (a.size < 1) fail_usage("--size must be positive");
  const std::size_t want = a.synthetic > 0 ? 1 : 2;
  if (a.paths.size() != want) {
    fail_usage(a.synthetic > 0 ? "usage: onn import --synthetic N DST"
                               : "usage: onn import SRC DST");
  }
  const fs::path dst = a.paths.back();

  struct Entry {
    std::string id;
    FeatureMap pixels;
    std::string source;
  };
  std::vector<Entry> entries;
  Json failed = Json::array();

  if (a.synthetic > 0) {
    for (auto& img : synthetic_corpus(a.synthetic, a.size, a.seed)) {
      entries.push_back({img.id, std::move(img.pixels), "synthetic"});
    }
  } else {
    const fs::path src = a.paths.front();
    if (!fs::is_directory(src)) fail_usage("source directory not found: " + src.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(src)) {
      const std::string ext = lower(e.path().extension().string());
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail_usage("no .pgm or .png images in " + src.string());
    std::map<std::string, fs::path> seen;
    for (const auto& f : files) {
      const std::string id = f.stem().string();
      try {
        if (seen.count(id)) fail_data("id '" + id + "' already taken by " + seen[id].string());
        FeatureMap img = center_crop_resize(read_image(f), a.size);
        seen[id] = f;
        entries.push_back({id, std::move(img), f.filename().string()});
      } catch (const Error& e) {
        ctx.err << "skipped " << f.string() << ": " << e.what() << '\n';
        failed.push_back({{"file", f.filename().string()}, {"error", e.what()}});
      }
    }
    if (entries.empty()) fail_data("none of the " + std::to_string(files.size()) + " images could be read");
  }

  fs::create_directories(dst);
  Json images = Json::array();
  for (const auto& e : entries) {
    const std::string file = e.id + ".pgm";
    const fs::path tmp = dst / (file + ".tmp");
    write_pgm(tmp, e.pixels);
    fs::rename(tmp, dst / file);
    images.push_back({{"id", e.id}, {"file", file}, {"sha256", sha256_file(dst / file)}, {"source", e.source}});
  }
  write_file_atomic(dst / "manifest.json", dump_json({{"version", 1},
                                                      {"size", a.size},
                                                      {"images", images},
                                                      {"failed", failed}}));
  ctx.out << "imported " << entries.size() << " images into " << dst.string();
  if (!failed.empty()) ctx.out << " (" << failed.size() << " skipped)";
  ctx.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// spm

struct SpmArgs {
  std::string config;
  std::string out;
  int fold = 0;  // 0: all folds
  bool snapshots = false;
};

int cmd_spm(const SpmArgs& a, Context& ctx) {
  const RunConfig cfg = config_or_default(a.config);
  const ExperimentConfig& e = cfg.experiment;
  const Corpus corpus = load_run_corpus(cfg);
  const auto plans = experiment_folds(e, corpus);
  std::vector<FoldPlan> chosen = plans;
  if (a.fold != 0) chosen = {select_fold(plans, a.fold)};
  const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);

  for (const auto& plan : chosen) {
    const FoldData data = fold_data(e, corpus, plan);
    SpmRecorder rec;
    const PriorBpResult r = prior_bp(data.train, e.task.sublibrary, e.spm, e.train, e.arch,
                                     e.constants, prior_bp_seed(e, plan.fold),
                                     a.snapshots ? &rec : nullptr, e.weight_range);
    const fs::path dir = out / fold_dir(plan.fold);
    save_ledger(dir / "hf.json", r.ledger);
    write_file_atomic(dir / "hf.csv", csv_text([&](std::ostream& os) { write_ledger_csv(os, r.ledger); }));
    if (a.snapshots) {
      write_file_atomic(dir / "snapshots.json", dump_json(to_json(rec.sessions)));
      write_file_atomic(dir / "loss.csv", csv_text([&](std::ostream& os) { write_csv(os, rec.loss); }));
    }
    ctx.out << "fold " << plan.fold << ": " << r.ledger.sessions_completed << " sessions ("
            << r.ledger.sessions_diverged << " diverged) -> " << (dir / "hf.json").string() << '\n';
    for (int l : e.arch.hidden_layers()) {
      const auto ranked = rank_operators(r.ledger, l);
      ctx.out << "  layer " << l << " top:";
      for (std::size_t j = 0; j < std::min<std::size_t>(3, ranked.size()); ++j) {
        ctx.out << ' ' << ranked[j].set << " (" << ranked[j].hf << ')';
      }
      ctx.out << '\n';
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// build

struct BuildArgs {
  std::string ledger;
  std::string config;
  std::string out;
  int top = 0;
  int bottom = 0;
  bool cnn = false;
  std::optional<std::uint64_t> seed;
};

int cmd_build(const BuildArgs& a, Context& ctx) {
  const int modes = (a.top > 0) + (a.bottom > 0) + (a.cnn ? 1 : 0);
  if (modes != 1) fail_usage("choose exactly one of --top S, --bottom S, --cnn");
  const RunConfig cfg = config_or_default(a.config);
  const ExperimentConfig& e = cfg.experiment;
  const std::uint64_t seed = a.seed.value_or(derive_seed(e.seed, {0xb1d}));
  std::mt19937_64 rng(seed);

  OnnModel model;
  if (a.cnn) {
    model = make_model(e.arch, e.constants);
    init_weights(model, rng, e.weight_range);
  } else {
    if (a.ledger.empty()) fail_usage("--ledger is required with --top/--bottom");
    const HealthLedger ledger = load_ledger(a.ledger);
    for (int l : e.arch.hidden_layers()) {
      if (!ledger.layers.count(l)) fail_data("ledger has no entries for hidden layer " + std::to_string(l));
    }
    const int s = a.top > 0 ? a.top : a.bottom;
    if (s > static_cast<int>(ledger.sublibrary.size())) {
      fail_usage("S = " + std::to_string(s) + " exceeds the sub-library size " +
                 std::to_string(ledger.sublibrary.size()));
    }
    model = a.top > 0 ? build_elite(ledger, s, e.arch, e.constants, rng, e.weight_range)
                      : build_worst(ledger, s, e.arch, e.constants, rng, e.weight_range);
  }
  save_model(a.out, model);
  for (int l : e.arch.hidden_layers()) {
    std::map<int, int> counts;
    for (int s : model.assignments[static_cast<std::size_t>(l)]) ++counts[s];
    ctx.out << "layer " << l << ":";
    for (const auto& [s, n] : counts) ctx.out << " theta" << s << " x" << n;
    ctx.out << '\n';
  }
  ctx.out << "wrote " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string model;
  std::string config;
  std::string out;
  int fold = 1;
  std::optional<int> runs;
  std::optional<int> iters;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, Context& ctx) {
  const RunConfig cfg = config_or_default(a.config);
  const ExperimentConfig& e = cfg.experiment;
  const OnnModel initial = load_model(a.model);
  const Corpus corpus = load_run_corpus(cfg);
  const FoldPlan plan = select_fold(experiment_folds(e, corpus), a.fold);
  const FoldData data = fold_data(e, corpus, plan);
  TrainConfig tc = e.train;
  if (a.iters) tc.iterations = *a.iters;
  const int runs = a.runs.value_or(e.runs);
  const std::uint64_t seed = a.seed.value_or(derive_seed(e.seed, {0x7a1, static_cast<std::uint64_t>(a.fold)}));

  const MultiRunResult r = train_runs(initial, data.train, tc, runs, seed, e.weight_range);
  const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  write_file_atomic(out / "metrics.csv", csv_text([&](std::ostream& os) { write_runs_csv(os, r); }));

  Json run_list = Json::array();
  for (const auto& run : r.runs) {
    run_list.push_back({{"run", run.run},
                        {"diverged", run.diverged},
                        {"diverged_at", run.diverged ? Json(run.diverged_at) : Json(nullptr)},
                        {"train_snr", run.diverged ? Json(nullptr) : number_or_sentinel(run.train_snr)},
                        {"train_mse", run.diverged ? Json(nullptr) : Json(run.train_mse)}});
    if (run.diverged) ctx.err << "run " << run.run << " diverged at iteration " << run.diverged_at << '\n';
  }
  Json summary = {{"fold", a.fold}, {"iterations", tc.iterations}, {"runs", run_list}};
  if (!r.any_survivor()) {
    summary["best_run"] = nullptr;
    write_file_atomic(out / "train.json", dump_json(summary));
    ctx.err << "all " << runs << " runs diverged\n";
    return kExitDivergence;
  }
  const RunOutcome& best = r.runs[static_cast<std::size_t>(*r.best_run)];
  summary["best_run"] = best.run;
  summary["best_train_snr"] = number_or_sentinel(best.train_snr);
  summary["best_model_sha256"] = sha256_hex(dump_json(to_json(r.best_model)));
  save_model(out / "best.json", r.best_model);
  write_file_atomic(out / "train.json", dump_json(summary));
  ctx.out << "best run " << best.run << ": train SNR " << best.train_snr << " dB -> "
          << (out / "best.json").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string model;
  std::string config;
  std::string out;
  std::string metric = "snr";
  int fold = 1;
};

int cmd_eval(const EvalArgs& a, Context& ctx) {
  const RunConfig cfg = config_or_default(a.config);
  const ExperimentConfig& e = cfg.experiment;
  const OnnModel model = load_model(a.model);
  const Corpus corpus = load_run_corpus(cfg);
  const FoldPlan plan = select_fold(experiment_folds(e, corpus), a.fold);
  const FoldData data = fold_data(e, corpus, plan);
  if (!data.train.empty()) {
    const FeatureMap& x = data.train.front().input;
    const int div = model.arch.spatial_divisor();
    if (x.height % div != 0 || x.width % div != 0 || model.arch.neurons(0) != 1 ||
        model.arch.layers.back().neurons != 1) {
      fail_data("model shape does not match the data");
    }
  }

  Json report = {{"fold", a.fold}, {"model", a.model}};
  std::ostringstream csv;
  const EvalSummary tr = evaluate(model, data.train);
  report["train"] = eval_json(tr, data.train);
  write_eval_csv(csv, "train", tr, data.train, true);
  std::optional<EvalSummary> te;
  if (!data.test.empty()) {
    te = evaluate(model, data.test);
    report["test"] = eval_json(*te, data.test);
    write_eval_csv(csv, "test", *te, data.test, false);
  }
  const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  write_file_atomic(out / "eval.json", dump_json(report));
  write_file_atomic(out / "eval.csv", csv.str());

  const bool snr_metric = a.metric == "snr";
  auto show = [&](const char* split, const EvalSummary& s) {
    ctx.out << split << ' ' << a.metric << ' ' << (snr_metric ? s.snr : s.mse) << '\n';
  };
  show("train", tr);
  if (te) show("test", *te);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment

struct ExperimentArgs {
  std::string config;
  std::string out;
  int jobs = 1;
};

int cmd_experiment(const ExperimentArgs& a, Context& ctx) {
  const RunConfig cfg = config_or_default(a.config);
  const Corpus corpus = load_run_corpus(cfg);
  const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  fs::create_directories(out);
  write_file_atomic(out / "config.toml", serialize_config(cfg));

  const ExperimentReport report =
      run_experiment(cfg.experiment, corpus, out, a.jobs, [&](const FoldResult& f, bool resumed) {
        ctx.out << "fold " << f.plan.fold << (resumed ? " (resumed)" : "") << ':';
        for (const auto& c : f.candidates) {
          ctx.out << ' ' << c.name << '=';
          if (c.diverged) {
            ctx.out << "diverged";
          } else {
            ctx.out << c.train_snr;
          }
        }
        ctx.out << '\n';
      });
  write_file_atomic(out / "report.json", dump_json(to_json(report)));
  write_file_atomic(out / "report.csv", csv_text([&](std::ostream& os) { write_report_csv(os, report); }));
  ctx.out << "report: " << (out / "report.json").string() << '\n';

  bool survivor = false;
  for (const auto& f : report.folds) {
    for (const auto& c : f.candidates) survivor = survivor || !c.diverged;
  }
  return survivor ? kExitOk : kExitDivergence;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return kExitUsage;
    case ErrorKind::data: return kExitData;
    case ErrorKind::divergence: return kExitDivergence;
  }
  return kExitData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"Operational neural networks with synaptic plasticity monitoring", "onn"};
  app.require_subcommand(1);

  ImportArgs ia;
  auto* imp = app.add_subcommand("import", "Convert images to size x size grayscale PGMs with a manifest");
  imp->add_option("paths", ia.paths, "SRC DST, or DST with --synthetic")->required();
  imp->add_option("--size", ia.size, "Output side length")->capture_default_str();
  imp->add_option("--synthetic", ia.synthetic, "Generate N procedural images instead of reading SRC");
  imp->add_option("--seed", ia.seed, "Seed of the synthetic images")->capture_default_str();

  SpmArgs sa;
  auto* spm = app.add_subcommand("spm", "Prior training run with plasticity monitoring; writes hf.json per fold");
  spm->add_option("-c,--config", sa.config, "Config file");
  spm->add_option("-o,--out", sa.out, "Output directory (default: output.dir)");
  spm->add_option("--fold", sa.fold, "Only this fold (1-based)");
  spm->add_flag("--snapshots", sa.snapshots, "Also write per-session weight snapshots and the loss trace");

  BuildArgs ba;
  std::uint64_t build_seed = 0;
  auto* bld = app.add_subcommand("build", "Elite, worst or CNN model from a ledger");
  bld->add_option("-l,--ledger", ba.ledger, "hf.json from `onn spm`");
  bld->add_option("-c,--config", ba.config, "Config file (architecture, constants)");
  bld->add_option("-o,--out", ba.out, "Model checkpoint to write")->required();
  bld->add_option("--top", ba.top, "Elite network with the top S sets");
  bld->add_option("--bottom", ba.bottom, "Worst network with the bottom S sets");
  bld->add_flag("--cnn", ba.cnn, "All-linear baseline");
  auto* bld_seed = bld->add_option("--seed", build_seed, "Weight initialization seed");

  TrainArgs ta;
  int train_runs_opt = 0, train_iters_opt = 0;
  std::uint64_t train_seed = 0;
  auto* trn = app.add_subcommand("train", "Several training runs; keeps the best by train SNR");
  trn->add_option("-m,--model", ta.model, "Model checkpoint")->required();
  trn->add_option("-c,--config", ta.config, "Config file (task, corpus, training)");
  trn->add_option("-o,--out", ta.out, "Output directory");
  trn->add_option("--fold", ta.fold, "Fold whose training pairs are used")->capture_default_str();
  auto* trn_runs = trn->add_option("--runs", train_runs_opt, "Runs (default: train.runs)");
  auto* trn_iters = trn->add_option("--iters", train_iters_opt, "Iterations per run (default: train.iterations)");
  auto* trn_seed = trn->add_option("--seed", train_seed, "Seed of the runs");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Per-pair and mean SNR/MSE of a model");
  evl->add_option("-m,--model", ea.model, "Model checkpoint")->required();
  evl->add_option("-c,--config", ea.config, "Config file");
  evl->add_option("-o,--out", ea.out, "Output directory");
  evl->add_option("--fold", ea.fold, "Fold to evaluate")->capture_default_str();
  evl->add_option("--metric", ea.metric, "Printed metric")->check(CLI::IsMember({"snr", "mse"}))->capture_default_str();

  ExperimentArgs xa;
  auto* exp = app.add_subcommand("experiment", "Full pipeline over all folds; resumable");
  exp->add_option("-c,--config", xa.config, "Config file");
  exp->add_option("-o,--out", xa.out, "Output directory (default: output.dir)");
  exp->add_option("-j,--jobs", xa.jobs, "Folds processed in parallel")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "onn: " << e.what() << '\n';
    if (e.get_exit_code() == 0) return kExitOk;
    return kExitUsage;
  }

  try {
    if (*imp) return cmd_import(ia, ctx);
    if (*spm) return cmd_spm(sa, ctx);
    if (*bld) {
      if (*bld_seed) ba.seed = build_seed;
      return cmd_build(ba, ctx);
    }
    if (*trn) {
      if (*trn_runs) ta.runs = train_runs_opt;
      if (*trn_iters) ta.iters = train_iters_opt;
      if (*trn_seed) ta.seed = train_seed;
      return cmd_train(ta, ctx);
    }
    if (*evl) return cmd_eval(ea, ctx);
    if (*exp) return cmd_experiment(xa, ctx);
  } catch (const Error& e) {
    err << "onn: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "onn: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace onn::cli
