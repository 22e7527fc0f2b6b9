#include "flowcast/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <iostream>
#include <thread>

namespace flowcast {

void RolloutConfig::validate() const {
  if (tau_init < 1 || tau_max < 1 || tau_init > tau_max)
    throw ValidationError("rollout config: need 1 <= tau_init <= tau_max");
  if (n_steps < 1) throw ValidationError("rollout config: n_steps must be positive");
}

namespace {

bool state_finite(const FlowState& s) {
  for (Real v : s.values)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace

Trajectory rollout(const Model& model, std::span<const FlowState> init_states,
                   const RolloutConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(init_states.size()) != cfg.tau_init)
    throw ValidationError("rollout: expected " + std::to_string(cfg.tau_init) +
                          " context states, got " + std::to_string(init_states.size()));
  if (cfg.tau_max != model.cfg.tau_max)
    throw ValidationError("rollout: tau_max differs from the model's context window");

  std::vector<FlowState> history(init_states.begin(), init_states.end());
  Trajectory out;
  out.states.reserve(static_cast<size_t>(cfg.n_steps));

  if (!cfg.use_cache) {
    for (int step = 0; step < cfg.n_steps; ++step) {
      const size_t w = std::min(history.size(), static_cast<size_t>(cfg.tau_max));
      std::span<const FlowState> window(history.data() + history.size() - w, w);
      FlowState pred = model.predict_next(window);
      if (!state_finite(pred))
        throw RuntimeFailure("rollout diverged at step " + std::to_string(step));
      history.push_back(pred);
      out.states.push_back(std::move(pred));
    }
    return out;
  }

  // Cached path: K/V entries are appended while the window still starts at
  // the first context state; once the window slides every token's timestep
  // index changes, so the cache is rebuilt from the new window.
  BackboneCache cache;
  cache.reset(model.backbone.cfg);
  const int n = model.cfg.n_patches();
  SequenceActs sacts;
  Tensor outs = model.backbone.forward_incremental(
      model.embed.build_sequence(history, sacts), cache);
  for (int step = 0; step < cfg.n_steps; ++step) {
    Tensor block({n, model.cfg.d_model});
    std::memcpy(block.data(),
                outs.data() + static_cast<size_t>(outs.dim(0) - n) * model.cfg.d_model,
                static_cast<size_t>(n) * model.cfg.d_model * sizeof(Real));
    DecodeActs dacts;
    FlowState pred = model.decoder.decode(block, history.back(), dacts);
    if (!state_finite(pred))
      throw RuntimeFailure("rollout diverged at step " + std::to_string(step));
    history.push_back(pred);
    out.states.push_back(history.back());
    if (step + 1 == cfg.n_steps) break;
    if (history.size() <= static_cast<size_t>(cfg.tau_max)) {
      Tensor fresh = model.embed.embed_block(history.back(),
                                             static_cast<int>(history.size()));
      outs = model.backbone.forward_incremental(fresh, cache);
    } else {
      std::span<const FlowState> window(history.data() + history.size() - cfg.tau_max,
                                        static_cast<size_t>(cfg.tau_max));
      cache.reset(model.backbone.cfg);
      SequenceActs tmp;
      outs = model.backbone.forward_incremental(model.embed.build_sequence(window, tmp),
                                                cache);
    }
  }
  return out;
}

Trajectory persistence_baseline(std::span<const FlowState> init_states, int n_steps) {
  if (init_states.empty()) throw ValidationError("persistence: empty context");
  if (n_steps < 1) throw ValidationError("persistence: n_steps must be positive");
  Trajectory out;
  out.states.assign(static_cast<size_t>(n_steps), init_states.back());
  return out;
}

double n_rmse(std::span<const FlowState> pred, std::span<const FlowState> truth, int N) {
  if (N < 1) throw ValidationError("n_rmse: N must be positive");
  if (static_cast<int>(pred.size()) < N || static_cast<int>(truth.size()) < N)
    throw ValidationError("n_rmse: fewer than N states supplied");
  double sum = 0;
  int64_t count = 0;
  for (int k = 0; k < N; ++k) {
    if (!pred[k].shape_equals(truth[k])) throw ValidationError("n_rmse: shape mismatch");
    for (size_t i = 0; i < pred[k].values.size(); ++i) {
      const double e = static_cast<double>(pred[k].values[i]) -
                       static_cast<double>(truth[k].values[i]);
      sum += e * e;
    }
    count += pred[k].value_count();
  }
  return std::sqrt(sum / static_cast<double>(count));
}

std::vector<double> per_channel_rmse(std::span<const FlowState> pred,
                                     std::span<const FlowState> truth, int N) {
  if (N < 1) throw ValidationError("n_rmse: N must be positive");
  if (static_cast<int>(pred.size()) < N || static_cast<int>(truth.size()) < N)
    throw ValidationError("n_rmse: fewer than N states supplied");
  const int c = pred[0].channels;
  std::vector<double> sum(static_cast<size_t>(c), 0.0);
  int64_t cells = 0;
  for (int k = 0; k < N; ++k) {
    if (!pred[k].shape_equals(truth[k])) throw ValidationError("n_rmse: shape mismatch");
    const int64_t n = pred[k].cell_count();
    for (int64_t i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const double e =
            static_cast<double>(pred[k].values[i * c + ch]) -
            static_cast<double>(truth[k].values[i * c + ch]);
        sum[static_cast<size_t>(ch)] += e * e;
      }
    cells += n;
  }
  std::vector<double> out(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    out[static_cast<size_t>(ch)] = std::sqrt(sum[static_cast<size_t>(ch)] /
                                             static_cast<double>(cells));
  return out;
}

std::vector<EvalRow> icl_sweep(const Model& model, const Dataset& data,
                               const EvalOptions& opts) {
  if (opts.tau_inits.empty() || opts.horizons.empty())
    throw ValidationError("icl_sweep: empty tau_init or horizon list");
  for (int t : opts.tau_inits)
    if (t < 1 || t > opts.start)
      throw ValidationError("icl_sweep: tau_init " + std::to_string(t) +
                            " incompatible with start index " +
                            std::to_string(opts.start));
  const int max_h = *std::max_element(opts.horizons.begin(), opts.horizons.end());
  const int n_samples = static_cast<int>(data.samples.size());
  const int need = opts.start + max_h;

  std::vector<char> usable(static_cast<size_t>(n_samples), 0);
  int n_usable = 0;
  for (int s = 0; s < n_samples; ++s) {
    if (static_cast<int>(data.samples[static_cast<size_t>(s)].states.size()) >= need) {
      usable[static_cast<size_t>(s)] = 1;
      ++n_usable;
    } else {
      std::cerr << "warning: sample " << s << " too short for start " << opts.start
                << " + horizon " << max_h << ", skipped\n";
    }
  }
  if (n_usable == 0) throw ValidationError("icl_sweep: every sample is too short");

  std::vector<std::vector<EvalRow>> per_sample(static_cast<size_t>(n_samples));
  auto eval_sample = [&](int s) {
    if (!usable[static_cast<size_t>(s)]) return;
    const auto& states = data.samples[static_cast<size_t>(s)].states;
    std::span<const FlowState> truth(states.data() + opts.start,
                                     static_cast<size_t>(max_h));
    for (int tau : opts.tau_inits) {
      std::span<const FlowState> context(states.data() + opts.start - tau,
                                         static_cast<size_t>(tau));
      RolloutConfig rc;
      rc.tau_init = tau;
      rc.tau_max = opts.tau_max;
      rc.n_steps = max_h;
      rc.use_cache = opts.use_cache;
      Trajectory pred = rollout(model, context, rc);
      for (int h : opts.horizons) {
        EvalRow row;
        row.sample = s;
        row.tau_init = tau;
        row.horizon = h;
        row.rmse = n_rmse(pred.states, truth, h);
        row.per_channel = per_channel_rmse(pred.states, truth, h);
        per_sample[static_cast<size_t>(s)].push_back(std::move(row));
      }
    }
  };

  if (opts.threads <= 1) {
    for (int s = 0; s < n_samples; ++s) eval_sample(s);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(opts.threads));
    for (int w = 0; w < opts.threads; ++w)
      pool.emplace_back([&, w]() {
        try {
          for (int s = w; s < n_samples; s += opts.threads) eval_sample(s);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<EvalRow> rows;
  for (auto& v : per_sample)
    for (EvalRow& r : v) rows.push_back(std::move(r));

  // Dataset means, one row per (tau_init, horizon) in listed order.
  for (int tau : opts.tau_inits)
    for (int h : opts.horizons) {
      EvalRow mean;
      mean.sample = -1;
      mean.tau_init = tau;
      mean.horizon = h;
      int count = 0;
      for (const EvalRow& r : rows) {
        if (r.sample < 0 || r.tau_init != tau || r.horizon != h) continue;
        mean.rmse += r.rmse;
        if (mean.per_channel.size() < r.per_channel.size())
          mean.per_channel.resize(r.per_channel.size(), 0.0);
        for (size_t c = 0; c < r.per_channel.size(); ++c)
          mean.per_channel[c] += r.per_channel[c];
        ++count;
      }
      mean.rmse /= count;
      for (double& v : mean.per_channel) v /= count;
      rows.push_back(std::move(mean));
    }
  return rows;
}

void write_metric_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open metric csv '" + path + "'");
  os << "sample,tau_init,horizon,n_rmse,rmse_vx,rmse_vy,rmse_p\n";
  for (const EvalRow& r : rows) {
    const double c0 = r.per_channel.size() > 0 ? r.per_channel[0] : 0.0;
    const double c1 = r.per_channel.size() > 1 ? r.per_channel[1] : 0.0;
    const double c2 = r.per_channel.size() > 2 ? r.per_channel[2] : 0.0;
    char line[200];
    if (r.sample < 0)
      std::snprintf(line, sizeof(line), "mean,%d,%d,%.8g,%.8g,%.8g,%.8g\n", r.tau_init,
                    r.horizon, r.rmse, c0, c1, c2);
    else
      std::snprintf(line, sizeof(line), "%d,%d,%d,%.8g,%.8g,%.8g,%.8g\n", r.sample,
                    r.tau_init, r.horizon, r.rmse, c0, c1, c2);
    os << line;
  }
  if (!os) throw RuntimeFailure("write failed for metric csv '" + path + "'");
}

}  // namespace flowcast
