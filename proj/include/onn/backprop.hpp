#pragma once

// Gradient-descent training with the global adaptive learning-rate rule.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "onn/model.hpp"
#include "onn/network.hpp"

namespace onn {

struct ImagePair {
  std::string id;
  FeatureMap input;
  FeatureMap target;
};

struct TrainConfig {
  int iterations = 240;
  double lr0 = 0.01;
  double alpha = 1.05;
  double beta = 0.7;
  double lr_max = 5e-1;
  double lr_min = 5e-5;
  int batch = 0;  // 0: full batch
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct IterationRecord {
  long iter = 0;
  double loss = 0.0;  // E(t): batch-mean MSE before the update
  double lr = 0.0;    // learning rate used for the update at t
  std::optional<double> snr_train;
  std::optional<double> snr_test;
};

struct LossTrace {
  std::vector<IterationRecord> records;
};

// Header is `iter,E,lr`, plus `snr_train,snr_test` when any record has them.
void write_csv(std::ostream& os, const LossTrace& trace);

// Learning-rate update from the current and previous batch losses.
double adapt_lr(double loss_now, double loss_prev, double lr, const TrainConfig& cfg = {});

// w -= lr * dE/dw, b -= lr * dE/db. Throws DivergenceError on non-finite
// gradients, leaving the model untouched.
void sgd_step(OnnModel& model, const GradientSet& grads, double lr, long iteration = -1);

struct BatchResult {
  double loss = 0.0;
  GradientSet grads;
};

// Mean loss and mean gradient over the given pairs.
BatchResult batch_gradient(const OnnModel& model, std::span<const ImagePair> pairs,
                           std::span<const std::size_t> indices);

// Called after each iteration's update; may fill the optional SNR columns.
using IterationHook = std::function<void(IterationRecord&, const OnnModel&)>;

// Stateful training loop. The learning-rate schedule and the previous loss
// persist across step() calls, so a run may be split into sessions.
class Trainer {
 public:
  Trainer(OnnModel& model, std::span<const ImagePair> pairs, TrainConfig cfg);

  IterationRecord step();
  LossTrace run(int iterations, const IterationHook& hook = {});

  // Resets the learning rate to lr0 and forgets the previous loss.
  void restart() noexcept;

  double lr() const noexcept { return lr_; }
  long iteration() const noexcept { return iter_; }

 private:
  std::vector<std::size_t> next_batch();

  OnnModel& model_;
  std::span<const ImagePair> pairs_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  double lr_;
  std::optional<double> prev_loss_;
  long iter_ = 0;
};

LossTrace train(OnnModel& model, std::span<const ImagePair> pairs, const TrainConfig& cfg,
                const IterationHook& hook = {});

}  // namespace onn
