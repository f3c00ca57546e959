#include "onn/spm.hpp"

#include <algorithm>
#include <climits>
#include <cmath>

#include "onn/error.hpp"
#include "onn/rng.hpp"

namespace onn {

void SpmConfig::validate() const {
  if (iterations_per_session < 1) fail_usage("spm.iterations_per_session must be >= 1");
  if (sessions < 1) fail_usage("spm.sessions must be >= 1");
  if (warmup_min_samples < 1) fail_usage("spm.warmup_min_samples must be >= 1");
}

HealthLedger::HealthLedger(OperatorSubLibrary lib, std::vector<int> hidden_layers)
    : sublibrary(std::move(lib)) {
  for (int l : hidden_layers) {
    layers[l] = std::vector<HfCell>(kSetCount);
    warm[l] = false;
  }
}

void HealthLedger::record(int layer, int set, double hf) {
  if (!(hf >= 0.0) || !std::isfinite(hf)) fail_data("health factor must be finite and >= 0");
  auto& c = layers.at(layer).at(static_cast<std::size_t>(set));
  ++c.count;
  c.sum += hf;
}

const HfCell& HealthLedger::cell(int layer, int set) const {
  return layers.at(layer).at(static_cast<std::size_t>(set));
}

std::optional<double> HealthLedger::hf(int layer, int set) const { return cell(layer, set).mean(); }

long HealthLedger::total_samples(int layer) const {
  long n = 0;
  for (const auto& c : layers.at(layer)) n += c.count;
  return n;
}

bool HealthLedger::coverage_complete(int layer, int min_samples) const {
  const auto& cells = layers.at(layer);
  return std::all_of(sublibrary.sets.begin(), sublibrary.sets.end(), [&](int s) {
    return cells[static_cast<std::size_t>(s)].count >= min_samples;
  });
}

double weight_power(const Architecture& arch, const std::vector<std::vector<Kernel>>& kernels,
                    int layer, int neuron) {
  if (layer < 1 || layer + 1 >= arch.layer_count()) {
    fail_usage("weight power needs a layer with outgoing kernels");
  }
  const int next = arch.neurons(layer + 1);
  const int here = arch.neurons(layer);
  double total = 0.0;
  for (int i = 0; i < next; ++i) {
    const auto& w = kernels[static_cast<std::size_t>(layer + 1)]
                           [static_cast<std::size_t>(i * here + neuron)].weights;
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    total += var / static_cast<double>(w.size());
  }
  return total / static_cast<double>(next);
}

double weight_power(const OnnModel& model, int layer, int neuron) {
  return weight_power(model.arch, model.params.kernels, layer, neuron);
}

std::optional<double> instantaneous_hf(double prev, double now) {
  if (prev < kDegeneratePower) return std::nullopt;
  return std::fabs(prev - now) / prev;
}

int sample_operator(const HealthLedger& ledger, int layer, const OperatorSubLibrary& sublib,
                    std::mt19937_64& rng, const std::vector<long>* pending) {
  if (sublib.sets.empty()) fail_usage("empty sub-library");
  const auto& cells = ledger.layers.at(layer);
  const auto warm_it = ledger.warm.find(layer);
  const bool warm = warm_it != ledger.warm.end() && warm_it->second;

  if (!warm) {
    long best = LONG_MAX;
    std::vector<int> candidates;
    for (int s : sublib.sets) {
      const long n = cells[static_cast<std::size_t>(s)].count +
                     (pending ? (*pending)[static_cast<std::size_t>(s)] : 0);
      if (n < best) {
        best = n;
        candidates.clear();
      }
      if (n == best) candidates.push_back(s);
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
  }

  std::vector<double> weights;
  double total = 0.0;
  for (int s : sublib.sets) {
    const double w = cells[static_cast<std::size_t>(s)].mean().value_or(0.0);
    weights.push_back(w);
    total += w;
  }
  if (!(total > 0.0)) std::fill(weights.begin(), weights.end(), 1.0);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return sublib.sets[pick(rng)];
}

std::vector<int> assign_layer(const HealthLedger& ledger, int layer,
                              const OperatorSubLibrary& sublib, int neurons,
                              std::mt19937_64& rng) {
  std::vector<long> pending(kSetCount, 0);
  std::vector<int> out;
  for (int k = 0; k < neurons; ++k) {
    const int s = sample_operator(ledger, layer, sublib, rng, &pending);
    ++pending[static_cast<std::size_t>(s)];
    out.push_back(s);
  }
  return out;
}

void spm_session(OnnModel& model, Trainer& trainer, HealthLedger& ledger,
                 const OperatorSubLibrary& sublib, const SpmConfig& cfg, std::mt19937_64& rng,
                 SpmRecorder* recorder) {
  const auto hidden = model.arch.hidden_layers();
  std::vector<std::vector<double>> before(static_cast<std::size_t>(model.arch.layer_count()));
  for (int l : hidden) {
    for (int k = 0; k < model.arch.neurons(l); ++k) {
      before[static_cast<std::size_t>(l)].push_back(weight_power(model, l, k));
    }
  }

  SessionRecord rec;
  rec.session = ledger.sessions_completed;
  if (recorder) {
    rec.assignments = model.assignments;
    rec.before = model.params.kernels;
  }

  try {
    LossTrace t = trainer.run(cfg.iterations_per_session);
    if (recorder) {
      recorder->loss.records.insert(recorder->loss.records.end(), t.records.begin(),
                                    t.records.end());
    }
  } catch (const DivergenceError&) {
    rec.diverged = true;
  }

  if (rec.diverged) {
    ++ledger.sessions_diverged;
    init_weights(model, rng);
    trainer.restart();
  } else {
    for (int l : hidden) {
      for (int k = 0; k < model.arch.neurons(l); ++k) {
        const auto hf = instantaneous_hf(before[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)],
                                         weight_power(model, l, k));
        if (!hf) {
          ++ledger.samples_skipped;
          continue;
        }
        const int set = model.set_of(l, k);
        ledger.record(l, set, *hf);
        rec.samples.push_back(HfSample{rec.session, l, k, set, *hf});
      }
    }
  }
  if (recorder) {
    rec.after = model.params.kernels;
    recorder->sessions.push_back(std::move(rec));
  }

  for (int l : hidden) {
    ledger.warm[l] = ledger.coverage_complete(l, cfg.warmup_min_samples);
    assign_operators(model, l, assign_layer(ledger, l, sublib, model.arch.neurons(l), rng), sublib);
  }
  ++ledger.sessions_completed;
}

PriorBpResult prior_bp(std::span<const ImagePair> pairs, const OperatorSubLibrary& sublib,
                       const SpmConfig& cfg, const TrainConfig& train_cfg,
                       const Architecture& arch, const OperatorConstants& constants,
                       std::uint64_t seed, SpmRecorder* recorder, double weight_range) {
  cfg.validate();
  if (pairs.empty()) fail_data("prior training needs at least one pair");
  std::mt19937_64 rng(seed);
  OnnModel model = make_model(arch, constants);
  init_weights(model, rng, weight_range);

  HealthLedger ledger(sublib, arch.hidden_layers());
  ledger.seed = seed;
  ledger.config = cfg;
  for (int l : arch.hidden_layers()) {
    assign_operators(model, l, assign_layer(ledger, l, sublib, arch.neurons(l), rng), sublib);
  }

  TrainConfig tc = train_cfg;
  tc.seed = derive_seed(seed, {1});
  Trainer trainer(model, pairs, tc);
  for (int s = 0; s < cfg.sessions; ++s) spm_session(model, trainer, ledger, sublib, cfg, rng, recorder);
  return {std::move(ledger), std::move(model)};
}

std::vector<RankedSet> rank_operators(const HealthLedger& ledger, int layer) {
  std::vector<RankedSet> out;
  for (int s : ledger.sublibrary.sets) out.push_back({s, ledger.hf(layer, s).value_or(0.0)});
  std::stable_sort(out.begin(), out.end(), [](const RankedSet& a, const RankedSet& b) {
    if (a.hf != b.hf) return a.hf > b.hf;
    return a.set < b.set;
  });
  return out;
}

std::vector<int> allocate_uniform(int sets, int neurons) {
  if (sets < 1 || sets > neurons) fail_usage("cannot split " + std::to_string(neurons) +
                                             " neurons over " + std::to_string(sets) + " sets");
  std::vector<int> counts(static_cast<std::size_t>(sets), neurons / sets);
  counts[0] += neurons % sets;
  return counts;
}

std::vector<int> allocate(std::span<const double> hfs, int neurons) {
  const int S = static_cast<int>(hfs.size());
  if (S < 1 || S > neurons) fail_usage("top-S must be between 1 and the neuron count");
  double total = 0.0;
  for (double h : hfs) {
    if (!(h > 0.0) || !std::isfinite(h)) return allocate_uniform(S, neurons);
    total += h;
  }
  std::vector<int> counts(static_cast<std::size_t>(S), 0);
  int rest = 0;
  for (int i = 1; i < S; ++i) {
    const double density = hfs[static_cast<std::size_t>(i)] / total;
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(neurons * density));
    rest += counts[static_cast<std::size_t>(i)];
  }
  counts[0] = neurons - rest;
  return counts;
}

namespace {

void check_top(const HealthLedger& ledger, int s) {
  if (s < 1 || static_cast<std::size_t>(s) > ledger.sublibrary.size()) {
    fail_usage("S=" + std::to_string(s) + " exceeds the sub-library size " +
               std::to_string(ledger.sublibrary.size()));
  }
}

}  // namespace

EliteSpec elite_spec(const HealthLedger& ledger, const Architecture& arch, int top) {
  check_top(ledger, top);
  EliteSpec spec;
  spec.top = top;
  for (int l : arch.hidden_layers()) {
    const auto ranked = rank_operators(ledger, l);
    LayerAllocation la;
    la.layer = l;
    la.chosen.assign(ranked.begin(), ranked.begin() + top);
    std::vector<double> hfs;
    for (const auto& r : la.chosen) hfs.push_back(r.hf);
    la.counts = allocate(hfs, arch.neurons(l));
    spec.layers.push_back(std::move(la));
  }
  return spec;
}

EliteSpec worst_spec(const HealthLedger& ledger, const Architecture& arch, int bottom) {
  check_top(ledger, bottom);
  EliteSpec spec;
  spec.top = bottom;
  spec.worst = true;
  for (int l : arch.hidden_layers()) {
    const auto ranked = rank_operators(ledger, l);
    LayerAllocation la;
    la.layer = l;
    la.chosen.assign(ranked.rbegin(), ranked.rbegin() + bottom);
    la.counts = allocate_uniform(bottom, arch.neurons(l));
    spec.layers.push_back(std::move(la));
  }
  return spec;
}

OnnModel build_from_spec(const EliteSpec& spec, const Architecture& arch,
                         const OperatorConstants& constants, std::mt19937_64& rng,
                         double weight_range) {
  OnnModel model = make_model(arch, constants);
  init_weights(model, rng, weight_range);
  for (const auto& la : spec.layers) {
    std::vector<int> sets;
    for (std::size_t j = 0; j < la.chosen.size(); ++j) {
      set_from_index(la.chosen[j].set);
      sets.insert(sets.end(), static_cast<std::size_t>(la.counts[j]), la.chosen[j].set);
    }
    if (sets.size() != static_cast<std::size_t>(arch.neurons(la.layer))) {
      fail_usage("allocation does not cover layer " + std::to_string(la.layer));
    }
    model.assignments[static_cast<std::size_t>(la.layer)] = std::move(sets);
  }
  return model;
}

OnnModel build_elite(const HealthLedger& ledger, int top, const Architecture& arch,
                     const OperatorConstants& constants, std::mt19937_64& rng,
                     double weight_range) {
  return build_from_spec(elite_spec(ledger, arch, top), arch, constants, rng, weight_range);
}

OnnModel build_worst(const HealthLedger& ledger, int bottom, const Architecture& arch,
                     const OperatorConstants& constants, std::mt19937_64& rng,
                     double weight_range) {
  return build_from_spec(worst_spec(ledger, arch, bottom), arch, constants, rng, weight_range);
}

}  // namespace onn
