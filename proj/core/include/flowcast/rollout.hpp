#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowcast/model.hpp"
#include "flowcast/trajectory_io.hpp"

namespace flowcast {

struct RolloutConfig {
  int tau_init = 5;
  int tau_max = 5;
  int n_steps = 10;
  bool use_cache = true;

  void validate() const;
};

/// Autoregressive prediction: repeatedly feed the most recent
/// min(history, tau_max) states, decode the final block, append. Returns
/// the n_steps predicted states (context not included).
Trajectory rollout(const Model& model, std::span<const FlowState> init_states,
                   const RolloutConfig& cfg);

/// Zero-skill reference: repeats the last context state.
Trajectory persistence_baseline(std::span<const FlowState> init_states, int n_steps);

/// sqrt of the mean squared error over predictions 1..N (all cells and
/// channels). pred[k] aligns with truth[k].
double n_rmse(std::span<const FlowState> pred, std::span<const FlowState> truth, int N);

/// Per-channel RMSE over the same horizon.
std::vector<double> per_channel_rmse(std::span<const FlowState> pred,
                                     std::span<const FlowState> truth, int N);

/// One metric row; sample -1 marks a dataset-mean row.
struct EvalRow {
  int sample = 0;
  int tau_init = 0;
  int horizon = 0;
  double rmse = 0;
  std::vector<double> per_channel;
};

struct EvalOptions {
  std::vector<int> tau_inits = {5};
  std::vector<int> horizons = {1, 10};
  int start = 5;       // first predicted state index, fixed across tau_init
  int tau_max = 5;
  bool use_cache = true;
  int threads = 1;
};

/// Context-length sweep: for each sample and tau_init, context is
/// states[start - tau_init, start), prediction horizon max(horizons)
/// steps; per-sample rows then dataset-mean rows. Samples too short for
/// (start, max horizon) are skipped with a warning on stderr; throws if
/// none remain.
std::vector<EvalRow> icl_sweep(const Model& model, const Dataset& data,
                               const EvalOptions& opts);

/// "sample,tau_init,horizon,n_rmse,rmse_vx,rmse_vy,rmse_p"; mean rows write
/// "mean" in the sample column.
void write_metric_csv(const std::string& path, const std::vector<EvalRow>& rows);

}  // namespace flowcast
