#include "flowcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "flowcast/checkpoint.hpp"

namespace flowcast {

void TrainConfig::validate() const {
  if (lr0 <= 0 || decay_factor <= 0 || decay_every <= 0)
    throw ValidationError("train config: learning-rate schedule values must be positive");
  if (weight_decay < 0 || mae_weight < 0)
    throw ValidationError("train config: weights must be non-negative");
  if (tau_max < 1 || epochs < 1 || batch_size < 1)
    throw ValidationError("train config: tau_max, epochs, batch_size must be positive");
  if (channel_weights.empty())
    throw ValidationError("train config: channel_weights must be non-empty");
  for (double w : channel_weights)
    if (w <= 0) throw ValidationError("train config: channel weights must be positive");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j{{"lr0", lr0},
                   {"decay_factor", decay_factor},
                   {"decay_every", decay_every},
                   {"weight_decay", weight_decay},
                   {"mae_weight", mae_weight},
                   {"channel_weights", channel_weights},
                   {"tau_max", tau_max},
                   {"epochs", epochs},
                   {"batch_size", batch_size},
                   {"seed", seed}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  c.lr0 = j.at("lr0").get<double>();
  c.decay_factor = j.at("decay_factor").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.mae_weight = j.at("mae_weight").get<double>();
  c.channel_weights = j.at("channel_weights").get<std::vector<double>>();
  c.tau_max = j.at("tau_max").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

LossParts loss_forward(std::span<const FlowState> preds,
                       std::span<const FlowState> targets, const TrainConfig& cfg,
                       std::vector<Tensor>* d_preds, double grad_scale) {
  if (preds.size() != targets.size())
    throw ValidationError("loss: prediction/target count mismatch");
  if (preds.empty()) throw ValidationError("loss: empty prediction list");
  LossParts out;
  if (d_preds) d_preds->assign(preds.size(), Tensor{});
  for (size_t t = 0; t < preds.size(); ++t) {
    const FlowState& p = preds[t];
    const FlowState& s = targets[t];
    if (!p.shape_equals(s)) throw ValidationError("loss: shape mismatch at step " +
                                                  std::to_string(t));
    if (static_cast<size_t>(p.channels) != cfg.channel_weights.size())
      throw ValidationError("loss: channel weight count mismatch");
    const int64_t cells = p.cell_count();
    Tensor* grad = nullptr;
    if (d_preds) {
      (*d_preds)[t] = Tensor({p.height, p.width, p.channels});
      grad = &(*d_preds)[t];
    }
    for (int c = 0; c < p.channels; ++c) {
      const double w = cfg.channel_weights[static_cast<size_t>(c)];
      double sq = 0, ab = 0;
      for (int64_t i = 0; i < cells; ++i) {
        const double e = static_cast<double>(p.values[i * p.channels + c]) -
                         static_cast<double>(s.values[i * p.channels + c]);
        sq += e * e;
        ab += std::abs(e);
        if (grad) {
          const double sign = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
          (*grad)[i * p.channels + c] = static_cast<Real>(
              grad_scale * w * (2.0 * e + cfg.mae_weight * sign) / cells);
        }
      }
      out.mse += w * sq / cells;
      out.mae += w * ab / cells;
    }
  }
  out.loss = out.mse + cfg.mae_weight * out.mae;
  return out;
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("lr_schedule: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

void AdamW::update(const std::vector<nn::Param*>& params, double lr) {
  ++step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (nn::Param* p : params) {
    if (p->m.size() != p->value.size()) {
      p->m = Tensor(p->value.shape());
      p->v = Tensor(p->value.shape());
    }
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double m = beta1 * p->m[i] + (1.0 - beta1) * g;
      const double v = beta2 * p->v[i] + (1.0 - beta2) * g * g;
      p->m[i] = static_cast<Real>(m);
      p->v[i] = static_cast<Real>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value[i] = static_cast<Real>(
          p->value[i] - lr * (mhat / (std::sqrt(vhat) + eps) +
                              weight_decay * p->value[i]));
    }
  }
}

Trainer::Trainer(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::string& loss_csv_path)
    : model_(model), data_(data), cfg_(cfg),
      rng_(Rng::substream(cfg.seed, 7)) {
  cfg_.validate();
  opt_.weight_decay = cfg_.weight_decay;
  if (data_.samples.empty()) throw ValidationError("train: empty dataset");
  const int need = cfg_.tau_max + 1;
  for (size_t i = 0; i < data_.samples.size(); ++i) {
    const auto& traj = data_.samples[i];
    if (static_cast<int>(traj.states.size()) < need)
      throw ValidationError("train: sample " + std::to_string(i) + " has " +
                            std::to_string(traj.states.size()) + " states, needs " +
                            std::to_string(need));
    if (traj.states[0].width != model_.cfg.grid_px ||
        traj.states[0].height != model_.cfg.grid_py)
      throw ValidationError("train: sample grid does not match model config");
  }
  if (!loss_csv_path.empty()) {
    csv_.open(loss_csv_path);
    if (!csv_) throw RuntimeFailure("train: cannot open loss csv '" + loss_csv_path + "'");
    csv_ << "step,epoch,lr,loss,mse,mae\n";
  }
}

double Trainer::run_epoch() {
  const int n = static_cast<int>(data_.samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(rng_.uniform_int(0, i))]);

  const double lr = lr_schedule(epoch_, cfg_);
  const int window = cfg_.tau_max + 1;
  double epoch_loss = 0;
  int batches = 0;
  for (int b0 = 0; b0 < n; b0 += cfg_.batch_size) {
    const int bn = std::min(cfg_.batch_size, n - b0);
    model_.zero_grads();
    LossParts batch_parts;
    for (int k = 0; k < bn; ++k) {
      const Trajectory& traj = data_.samples[static_cast<size_t>(order[b0 + k])];
      const int max_start = static_cast<int>(traj.states.size()) - window;
      const int start = max_start > 0 ? rng_.uniform_int(0, max_start) : 0;
      std::span<const FlowState> states(traj.states.data() + start,
                                        static_cast<size_t>(window));
      WindowActs acts;
      std::vector<FlowState> preds = model_.forward_window(states, acts);
      std::vector<Tensor> d_preds;
      LossParts parts = loss_forward(preds, states.subspan(1), cfg_, &d_preds, 1.0 / bn);
      batch_parts += parts;
      model_.backward_window(d_preds, states, acts);
    }
    batch_parts.scale(1.0 / bn);
    if (!std::isfinite(batch_parts.loss))
      throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch_) +
                           ", step " + std::to_string(step_));
    for (nn::Param* p : model_.params())
      if (!all_finite(p->grad))
        throw RuntimeFailure("non-finite gradient in " + p->name + " at epoch " +
                             std::to_string(epoch_) + ", step " + std::to_string(step_));
    opt_.update(model_.params(), lr);
    if (csv_.is_open()) {
      char line[160];
      std::snprintf(line, sizeof(line), "%d,%d,%.8g,%.8g,%.8g,%.8g\n", step_, epoch_, lr,
                    batch_parts.loss, batch_parts.mse, batch_parts.mae);
      csv_ << line;
      csv_.flush();
    }
    if (stats_.steps == 0) stats_.first_loss = batch_parts.loss;
    stats_.last_loss = batch_parts.loss;
    ++stats_.steps;
    ++step_;
    epoch_loss += batch_parts.loss;
    ++batches;
  }
  ++epoch_;
  stats_.epochs = epoch_;
  stats_.last_epoch_loss = epoch_loss / batches;
  return stats_.last_epoch_loss;
}

TrainStats train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::string& checkpoint_path, const std::string& loss_csv_path,
                 bool verbose) {
  Trainer trainer(model, data, cfg, loss_csv_path);
  if (!checkpoint_path.empty()) {
    std::ofstream echo(checkpoint_path + ".train.json");
    echo << cfg.to_json() << "\n";
  }
  for (int e = 0; e < cfg.epochs; ++e) {
    const double mean_loss = trainer.run_epoch();
    if (!checkpoint_path.empty()) write_checkpoint(checkpoint_path, model);
    if (verbose)
      std::cout << "epoch " << e << " lr " << lr_schedule(e, cfg) << " loss " << mean_loss
                << std::endl;
  }
  return trainer.stats();
}

}  // namespace flowcast
