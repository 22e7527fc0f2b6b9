#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flowcast/model.hpp"
#include "flowcast/trajectory_io.hpp"

namespace flowcast {

struct TrainConfig {
  double lr0 = 1e-3;
  double decay_factor = 0.75;
  int decay_every = 50;       // epochs
  double weight_decay = 1e-5;
  double mae_weight = 0.01;
  std::vector<double> channel_weights = {1.0, 1.0, 0.1};
  int tau_max = 5;
  int epochs = 100;
  int batch_size = 4;
  uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct LossParts {
  double loss = 0, mse = 0, mae = 0;

  LossParts& operator+=(const LossParts& o) {
    loss += o.loss;
    mse += o.mse;
    mae += o.mae;
    return *this;
  }
  void scale(double s) {
    loss *= s;
    mse *= s;
    mae *= s;
  }
};

/// Teacher-forced loss: sum over predictions and channels of
/// w_c * (mean squared error + mae_weight * mean absolute error).
/// When d_preds is non-null, writes per-prediction gradients scaled by
/// grad_scale. mse/mae report the unweighted-by-mae_weight partial sums.
LossParts loss_forward(std::span<const FlowState> preds,
                       std::span<const FlowState> targets, const TrainConfig& cfg,
                       std::vector<Tensor>* d_preds = nullptr, double grad_scale = 1.0);

double lr_schedule(int epoch, const TrainConfig& cfg);

/// AdamW with decoupled weight decay and bias correction.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-5;
  int64_t step = 0;

  void update(const std::vector<nn::Param*>& params, double lr);
};

struct TrainStats {
  double first_loss = 0;         // first optimizer step's batch loss
  double last_loss = 0;          // final step's batch loss
  double last_epoch_loss = 0;    // mean over the final epoch
  int steps = 0;
  int epochs = 0;
};

/// Owns the optimization loop state so callers can run epochs piecemeal
/// (early stopping, wall-clock budgets).
class Trainer {
public:
  Trainer(Model& model, const Dataset& data, const TrainConfig& cfg,
          const std::string& loss_csv_path);

  /// One pass over the shuffled dataset. Returns the mean batch loss.
  double run_epoch();

  const TrainStats& stats() const { return stats_; }
  int epoch() const { return epoch_; }

private:
  Model& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  AdamW opt_;
  Rng rng_;
  std::ofstream csv_;
  int epoch_ = 0;
  int step_ = 0;
  TrainStats stats_;
};

/// Full run: cfg.epochs epochs, checkpoint written after every epoch, loss
/// curve appended per optimizer step, train config echoed beside the
/// checkpoint as <checkpoint>.train.json.
TrainStats train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::string& checkpoint_path, const std::string& loss_csv_path,
                 bool verbose = false);

}  // namespace flowcast
