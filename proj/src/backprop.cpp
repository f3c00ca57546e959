#include "onn/backprop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "onn/error.hpp"

namespace onn {

void TrainConfig::validate() const {
  if (iterations < 0) fail_usage("train.iterations must be >= 0");
  if (!(alpha > 1.0) || !(beta > 0.0) || !(beta < 1.0)) {
    fail_usage("learning-rate factors need alpha > 1 > beta > 0");
  }
  if (!(lr_min > 0.0) || !(lr_min < lr0) || !(lr0 <= lr_max)) {
    fail_usage("learning rates need 0 < lr_min < lr0 <= lr_max");
  }
  if (batch < 0) fail_usage("train.batch must be >= 0");
}

namespace {

void write_optional(std::ostream& os, const std::optional<double>& v) {
  os << ',';
  if (!v) return;
  if (std::isinf(*v)) {
    os << (*v > 0 ? "inf" : "-inf");
  } else {
    os << *v;
  }
}

}  // namespace

void write_csv(std::ostream& os, const LossTrace& trace) {
  const bool snr = std::any_of(trace.records.begin(), trace.records.end(), [](const auto& r) {
    return r.snr_train.has_value() || r.snr_test.has_value();
  });
  os << "iter,E,lr" << (snr ? ",snr_train,snr_test" : "") << '\n';
  const auto old = os.precision(17);
  for (const auto& r : trace.records) {
    os << r.iter << ',' << r.loss << ',' << r.lr;
    if (snr) {
      write_optional(os, r.snr_train);
      write_optional(os, r.snr_test);
    }
    os << '\n';
  }
  os.precision(old);
}

double adapt_lr(double loss_now, double loss_prev, double lr, const TrainConfig& cfg) {
  if (loss_now < loss_prev && cfg.alpha * lr <= cfg.lr_max) return cfg.alpha * lr;
  if (loss_now >= loss_prev && cfg.beta * lr >= cfg.lr_min) return cfg.beta * lr;
  return lr;
}

void sgd_step(OnnModel& model, const GradientSet& grads, double lr, long iteration) {
  if (grads.kernels.size() != model.params.kernels.size() ||
      grads.biases.size() != model.params.biases.size()) {
    fail_data("gradient shape does not match the model");
  }
  for (std::size_t l = 0; l < grads.kernels.size(); ++l) {
    if (grads.kernels[l].size() != model.params.kernels[l].size() ||
        grads.biases[l].size() != model.params.biases[l].size()) {
      fail_data("gradient shape does not match the model");
    }
    for (const auto& k : grads.kernels[l]) {
      for (double g : k.weights) {
        if (!std::isfinite(g)) {
          throw DivergenceError(iteration, "divergence: non-finite gradient at iteration " +
                                               std::to_string(iteration));
        }
      }
    }
    for (double g : grads.biases[l]) {
      if (!std::isfinite(g)) {
        throw DivergenceError(iteration, "divergence: non-finite gradient at iteration " +
                                             std::to_string(iteration));
      }
    }
  }
  for (std::size_t l = 0; l < grads.kernels.size(); ++l) {
    for (std::size_t j = 0; j < grads.kernels[l].size(); ++j) {
      auto& w = model.params.kernels[l][j].weights;
      const auto& g = grads.kernels[l][j].weights;
      for (std::size_t p = 0; p < w.size(); ++p) w[p] -= lr * g[p];
    }
    for (std::size_t k = 0; k < grads.biases[l].size(); ++k) {
      model.params.biases[l][k] -= lr * grads.biases[l][k];
    }
  }
}

BatchResult batch_gradient(const OnnModel& model, std::span<const ImagePair> pairs,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) fail_data("empty training batch");
  BatchResult res;
  res.grads = zeros_like(model);
  const double scale = 1.0 / static_cast<double>(indices.size());
  for (std::size_t idx : indices) {
    const ImagePair& p = pairs[idx];
    const ForwardTrace trace = forward(model, p.input);
    res.loss += scale * mse(trace.output(), p.target);
    const auto delta = output_delta(model, trace, {p.target}, scale);
    accumulate(res.grads, backward(model, trace, delta).grads);
  }
  return res;
}

Trainer::Trainer(OnnModel& model, std::span<const ImagePair> pairs, TrainConfig cfg)
    : model_(model), pairs_(pairs), cfg_(cfg), rng_(cfg.seed), lr_(cfg.lr0) {
  cfg_.validate();
  if (pairs_.empty()) fail_data("no training pairs");
  for (const auto& p : pairs_) {
    if (!p.input.same_shape(pairs_.front().input) || !p.target.same_shape(p.input)) {
      fail_data("training pairs must share one shape");
    }
  }
  order_.resize(pairs_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

void Trainer::restart() noexcept {
  lr_ = cfg_.lr0;
  prev_loss_.reset();
}

std::vector<std::size_t> Trainer::next_batch() {
  if (cfg_.batch == 0 || static_cast<std::size_t>(cfg_.batch) >= pairs_.size()) return order_;
  std::vector<std::size_t> batch;
  while (batch.size() < static_cast<std::size_t>(cfg_.batch)) {
    if (cursor_ == 0) std::shuffle(order_.begin(), order_.end(), rng_);
    batch.push_back(order_[cursor_]);
    cursor_ = (cursor_ + 1) % order_.size();
  }
  return batch;
}

IterationRecord Trainer::step() {
  const auto batch = next_batch();
  BatchResult br = batch_gradient(model_, pairs_, batch);
  if (!std::isfinite(br.loss)) {
    throw DivergenceError(iter_, "divergence: non-finite loss at iteration " +
                                     std::to_string(iter_));
  }
  if (prev_loss_) lr_ = adapt_lr(br.loss, *prev_loss_, lr_, cfg_);
  sgd_step(model_, br.grads, lr_, iter_);
  prev_loss_ = br.loss;
  IterationRecord rec;
  rec.iter = iter_++;
  rec.loss = br.loss;
  rec.lr = lr_;
  return rec;
}

LossTrace Trainer::run(int iterations, const IterationHook& hook) {
  LossTrace trace;
  trace.records.reserve(static_cast<std::size_t>(std::max(iterations, 0)));
  for (int t = 0; t < iterations; ++t) {
    IterationRecord rec = step();
    if (hook) hook(rec, model_);
    trace.records.push_back(rec);
  }
  return trace;
}

LossTrace train(OnnModel& model, std::span<const ImagePair> pairs, const TrainConfig& cfg,
                const IterationHook& hook) {
  if (cfg.iterations == 0) {
    cfg.validate();
    return {};
  }
  Trainer trainer(model, pairs, cfg);
  return trainer.run(cfg.iterations, hook);
}

}  // namespace onn
