#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowcast/checkpoint.hpp"
#include "flowcast/config.hpp"
#include "flowcast/pgm.hpp"
#include "flowcast/rollout.hpp"
#include "flowcast/training.hpp"
#include "flowcast/trajectory_io.hpp"
#include "flowcast/wave_sim.hpp"

namespace {

using namespace flowcast;

struct GenArgs {
  int n_samples = 0;
  uint64_t seed = 0;
  std::string out;
  int grid = 100;
  int steps = 20;
  int threads = 1;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string loss_csv;  // default <out>.loss.csv
  bool verbose = false;
};

struct RolloutArgs {
  std::string checkpoint;
  std::string data;
  int sample = 0;
  int tau_init = 5;
  int steps = 10;
  bool no_cache = false;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::vector<int> tau_inits = {5};
  std::vector<int> horizons = {1, 10};
  int start = 5;
  bool no_cache = false;
  int threads = 1;
  std::string csv;
};

struct PlotArgs {
  std::string traj;
  std::string channel = "vx";
  int step = 0;
  std::string out;
  std::string cmp;
  std::string out_diff;
};

int channel_index(const std::string& name) {
  static const std::map<std::string, int> idx = {{"vx", 0}, {"vy", 1}, {"p", 2}};
  auto it = idx.find(name);
  if (it == idx.end())
    throw ValidationError("unknown channel '" + name + "' (expected vx, vy or p)");
  return it->second;
}

void print_mean_rows(const std::vector<EvalRow>& rows, const char* label) {
  for (const EvalRow& r : rows) {
    if (r.sample >= 0) continue;
    std::printf("%s tau_init=%d horizon=%d n_rmse=%.6g\n", label, r.tau_init, r.horizon,
                r.rmse);
  }
}

int run_gen(const GenArgs& a) {
  wave::WaveConfig cfg;
  cfg.grid = a.grid;
  cfg.n_record = a.steps;
  DatasetMeta meta = wave::generate_dataset(a.n_samples, a.seed, a.out, cfg, a.threads);
  std::printf("wrote %d samples (%dx%d, %d records) to %s\n", a.n_samples, a.grid,
              a.grid, a.steps, a.out.c_str());
  std::printf("mean = [%.6g, %.6g, %.6g], std = [%.6g, %.6g, %.6g]\n",
              meta.stats.mean[0], meta.stats.mean[1], meta.stats.mean[2],
              meta.stats.std[0], meta.stats.std[1], meta.stats.std[2]);
  return 0;
}

int run_train(const TrainArgs& a) {
  CliConfig cfg = load_cli_config(a.config);
  Dataset data = load_dataset(a.data);
  if (data.samples.empty() || data.samples[0].states.empty())
    throw ValidationError("dataset '" + a.data + "' is empty");
  const FlowState& s0 = data.samples[0].states[0];
  Model model(cfg.model_config(s0.width, s0.height));
  model.init(cfg.train.seed);
  const std::string loss_csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  save_cli_config(a.out + ".config.json", cfg);
  TrainStats st = train(model, data, cfg.train, a.out, loss_csv, a.verbose);
  std::printf("trained %d epochs (%d steps): loss %.6g -> %.6g\n", st.epochs, st.steps,
              st.first_loss, st.last_loss);
  std::printf("checkpoint: %s\nloss curve: %s\n", a.out.c_str(), loss_csv.c_str());
  return 0;
}

int run_rollout(const RolloutArgs& a) {
  Model model = read_checkpoint(a.checkpoint);
  Dataset data = load_dataset(a.data);
  if (a.sample < 0 || a.sample >= static_cast<int>(data.samples.size()))
    throw ValidationError("sample index " + std::to_string(a.sample) + " out of range");
  const Trajectory& truth = data.samples[static_cast<size_t>(a.sample)];
  if (static_cast<int>(truth.states.size()) < a.tau_init)
    throw ValidationError("sample too short for tau_init " + std::to_string(a.tau_init));

  RolloutConfig rc;
  rc.tau_init = a.tau_init;
  rc.tau_max = model.cfg.tau_max;
  rc.n_steps = a.steps;
  rc.use_cache = !a.no_cache;
  std::span<const FlowState> context(truth.states.data(),
                                     static_cast<size_t>(a.tau_init));
  Trajectory pred = rollout(model, context, rc);
  pred.pde_constant = truth.pde_constant;
  pred.seed = truth.seed;

  const int avail =
      static_cast<int>(truth.states.size()) - a.tau_init;
  if (avail > 0) {
    const int n = std::min(avail, a.steps);
    std::span<const FlowState> ref(truth.states.data() + a.tau_init,
                                   static_cast<size_t>(avail));
    std::printf("n_rmse over %d steps: %.6g\n", n, n_rmse(pred.states, ref, n));
  }
  if (!a.out.empty()) {
    write_fldt(a.out, pred);
    std::printf("predicted trajectory: %s\n", a.out.c_str());
  }
  return 0;
}

int run_eval(const EvalArgs& a, bool sweep) {
  Model model = read_checkpoint(a.checkpoint);
  Dataset data = load_dataset(a.data);
  EvalOptions opts;
  opts.tau_inits = a.tau_inits;
  opts.horizons = a.horizons;
  opts.start = a.start;
  opts.tau_max = model.cfg.tau_max;
  opts.use_cache = !a.no_cache;
  opts.threads = a.threads;
  std::vector<EvalRow> rows = icl_sweep(model, data, opts);
  write_metric_csv(a.csv, rows);
  print_mean_rows(rows, "model");
  std::printf("metrics: %s\n", a.csv.c_str());

  if (!sweep) {
    // Persistence baseline over the same contexts and horizons.
    const int max_h = *std::max_element(a.horizons.begin(), a.horizons.end());
    std::vector<EvalRow> base;
    for (int s = 0; s < static_cast<int>(data.samples.size()); ++s) {
      const auto& states = data.samples[static_cast<size_t>(s)].states;
      if (static_cast<int>(states.size()) < a.start + max_h) continue;
      std::span<const FlowState> truth(states.data() + a.start,
                                       static_cast<size_t>(max_h));
      for (int tau : a.tau_inits) {
        std::span<const FlowState> context(states.data() + a.start - tau,
                                           static_cast<size_t>(tau));
        Trajectory pred = persistence_baseline(context, max_h);
        for (int h : a.horizons) {
          EvalRow row;
          row.sample = s;
          row.tau_init = tau;
          row.horizon = h;
          row.rmse = n_rmse(pred.states, truth, h);
          row.per_channel = per_channel_rmse(pred.states, truth, h);
          base.push_back(std::move(row));
        }
      }
    }
    if (!base.empty()) {
      for (int tau : a.tau_inits)
        for (int h : a.horizons) {
          EvalRow mean;
          mean.sample = -1;
          mean.tau_init = tau;
          mean.horizon = h;
          int count = 0;
          for (const EvalRow& r : base) {
            if (r.tau_init != tau || r.horizon != h) continue;
            mean.rmse += r.rmse;
            if (mean.per_channel.size() < r.per_channel.size())
              mean.per_channel.resize(r.per_channel.size(), 0.0);
            for (size_t c = 0; c < r.per_channel.size(); ++c)
              mean.per_channel[c] += r.per_channel[c];
            ++count;
          }
          mean.rmse /= count;
          for (double& v : mean.per_channel) v /= count;
          base.push_back(std::move(mean));
        }
      const std::string base_csv = a.csv + ".persistence.csv";
      write_metric_csv(base_csv, base);
      print_mean_rows(base, "persistence");
      std::printf("persistence metrics: %s\n", base_csv.c_str());
    }
  }
  return 0;
}

int run_plot(const PlotArgs& a) {
  const int ch = channel_index(a.channel);
  Trajectory traj = read_fldt(a.traj);
  if (a.step < 0 || a.step >= static_cast<int>(traj.states.size()))
    throw ValidationError("step " + std::to_string(a.step) + " out of range (file has " +
                          std::to_string(traj.states.size()) + " states)");
  const FlowState& st = traj.states[static_cast<size_t>(a.step)];
  std::vector<double> plane = channel_plane(st, ch);
  GrayRange r = write_pgm(a.out, plane, st.width, st.height);
  std::printf("%s: %dx%d, range [%.6g, %.6g]\n", a.out.c_str(), st.width, st.height,
              r.lo, r.hi);

  if (!a.cmp.empty()) {
    if (a.out_diff.empty())
      throw ValidationError("--cmp requires --out-diff");
    Trajectory other = read_fldt(a.cmp);
    if (a.step >= static_cast<int>(other.states.size()))
      throw ValidationError("step " + std::to_string(a.step) +
                            " out of range in comparison file");
    const FlowState& st2 = other.states[static_cast<size_t>(a.step)];
    if (!st.shape_equals(st2))
      throw ValidationError("trajectories differ in shape");
    std::vector<double> plane2 = channel_plane(st2, ch);
    GrayRange d = write_pgm_diff(a.out_diff, plane, plane2, st.width, st.height);
    std::printf("%s: %dx%d, |diff| range [0, %.6g]\n", a.out_diff.c_str(), st.width,
                st.height, d.hi);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoregressive transformer surrogate for 2D wave fields"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-wave", "Generate a synthetic dataset");
  cmd_gen->add_option("--n-samples", gen.n_samples, "Number of trajectories")
      ->required()
      ->check(CLI::PositiveNumber);
  cmd_gen->add_option("--seed", gen.seed, "Dataset seed");
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();
  cmd_gen->add_option("--grid", gen.grid, "Grid side, cells")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--steps", gen.steps, "Records per trajectory")
      ->check(CLI::Range(2, 1 << 20));
  cmd_gen->add_option("--threads", gen.threads, "Worker threads")
      ->check(CLI::PositiveNumber);

  TrainArgs tr;
  CLI::App* cmd_train = app.add_subcommand("train", "Train on a dataset directory");
  cmd_train->add_option("--config", tr.config, "Run config JSON")->required();
  cmd_train->add_option("--data", tr.data, "Dataset directory")->required();
  cmd_train->add_option("--out", tr.out, "Checkpoint output path")->required();
  cmd_train->add_option("--loss-csv", tr.loss_csv, "Loss curve path");
  cmd_train->add_flag("--verbose", tr.verbose, "Log every epoch");

  RolloutArgs ro;
  CLI::App* cmd_ro = app.add_subcommand("rollout", "Roll one sample forward");
  cmd_ro->add_option("--checkpoint", ro.checkpoint, "FLCK checkpoint")->required();
  cmd_ro->add_option("--data", ro.data, "Dataset directory")->required();
  cmd_ro->add_option("--sample", ro.sample, "Sample index");
  cmd_ro->add_option("--tau-init", ro.tau_init, "Context states")
      ->check(CLI::PositiveNumber);
  cmd_ro->add_option("--steps", ro.steps, "Prediction steps")
      ->check(CLI::PositiveNumber);
  cmd_ro->add_flag("--no-cache", ro.no_cache, "Disable incremental decoding");
  cmd_ro->add_option("--out", ro.out, "Write predictions (trajectory format)");

  EvalArgs ev;
  CLI::App* cmd_ev = app.add_subcommand("eval", "Dataset metrics vs persistence");
  EvalArgs ic;
  ic.tau_inits = {1, 2, 3, 4, 5};
  CLI::App* cmd_ic = app.add_subcommand("icl-eval", "Context-length sweep");
  for (auto [cmd, args] : {std::pair{cmd_ev, &ev}, std::pair{cmd_ic, &ic}}) {
    cmd->add_option("--checkpoint", args->checkpoint, "FLCK checkpoint")->required();
    cmd->add_option("--data", args->data, "Dataset directory")->required();
    cmd->add_option("--tau-init", args->tau_inits, "Context lengths")->delimiter(',');
    cmd->add_option("--horizons", args->horizons, "Evaluation horizons")
        ->delimiter(',');
    cmd->add_option("--start", args->start, "First predicted state index");
    cmd->add_flag("--no-cache", args->no_cache, "Disable incremental decoding");
    cmd->add_option("--threads", args->threads, "Worker threads")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--csv", args->csv, "Metric CSV path")->required();
  }

  PlotArgs pl;
  CLI::App* cmd_pl = app.add_subcommand("plot", "Render one state channel as PGM");
  cmd_pl->add_option("--traj", pl.traj, "Trajectory file")->required();
  cmd_pl->add_option("--channel", pl.channel, "vx, vy or p");
  cmd_pl->add_option("--step", pl.step, "State index");
  cmd_pl->add_option("--out", pl.out, "Output image")->required();
  cmd_pl->add_option("--cmp", pl.cmp, "Second trajectory for a diff image");
  cmd_pl->add_option("--out-diff", pl.out_diff, "Diff image path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(cmd_gen)) return run_gen(gen);
    if (app.got_subcommand(cmd_train)) return run_train(tr);
    if (app.got_subcommand(cmd_ro)) return run_rollout(ro);
    if (app.got_subcommand(cmd_ev)) return run_eval(ev, false);
    if (app.got_subcommand(cmd_ic)) return run_eval(ic, true);
    if (app.got_subcommand(cmd_pl)) return run_plot(pl);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
