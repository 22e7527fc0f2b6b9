#include "flowcast/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace flowcast {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ValidationError("config: unknown key '" +
                            (section.empty() ? item.key() : section + "." + item.key()) +
                            "'");
  }
}

template <typename T>
void read_field(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: bad value for '" + section + "." + key + "'");
  }
}

}  // namespace

void DataConfig::validate() const {
  if (grid < 8) throw ValidationError("config: data.grid must be at least 8");
  if (steps < 2) throw ValidationError("config: data.steps must be at least 2");
  if (n_samples < 1) throw ValidationError("config: data.n_samples must be positive");
}

void CliConfig::validate() const {
  if (d_model < 3 || d_model % 3 != 0)
    throw ValidationError("config: model.d_model must be a positive multiple of 3");
  if (n_layers < 0) throw ValidationError("config: model.n_layers must be >= 0");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ValidationError("config: model.n_heads must divide d_model");
  if (d_ff < 1) throw ValidationError("config: model.d_ff must be positive");
  train.validate();
  data.validate();
  rollout.validate();
}

ModelConfig CliConfig::model_config(int grid_px, int grid_py) const {
  ModelConfig m;
  m.d_model = d_model;
  m.n_layers = n_layers;
  m.n_heads = n_heads;
  m.d_ff = d_ff;
  m.tau_max = train.tau_max;
  m.grid_px = grid_px;
  m.grid_py = grid_py;
  m.validate();
  return m;
}

std::string CliConfig::to_json() const {
  json j;
  j["model"] = {{"d_model", d_model},
                {"n_layers", n_layers},
                {"n_heads", n_heads},
                {"d_ff", d_ff},
                {"patch", 16}};
  j["train"] = {{"lr0", train.lr0},
                {"decay_every", train.decay_every},
                {"decay_factor", train.decay_factor},
                {"weight_decay", train.weight_decay},
                {"mae_weight", train.mae_weight},
                {"channel_weights", train.channel_weights},
                {"tau_max", train.tau_max},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed}};
  j["data"] = {{"grid", data.grid},
               {"steps", data.steps},
               {"n_samples", data.n_samples},
               {"seed", data.seed}};
  j["rollout"] = {{"tau_init", rollout.tau_init},
                  {"tau_max", rollout.tau_max},
                  {"steps", rollout.n_steps},
                  {"use_cache", rollout.use_cache}};
  return j.dump(2) + "\n";
}

CliConfig CliConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  check_keys(j, "", {"model", "train", "data", "rollout"});

  CliConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"d_model", "n_layers", "n_heads", "d_ff", "patch"});
    read_field(m, "model", "d_model", c.d_model);
    read_field(m, "model", "n_layers", c.n_layers);
    read_field(m, "model", "n_heads", c.n_heads);
    read_field(m, "model", "d_ff", c.d_ff);
    int patch = 16;
    read_field(m, "model", "patch", patch);
    if (patch != 16)
      throw ValidationError("config: model.patch is fixed at 16, got " +
                            std::to_string(patch));
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"lr0", "decay_every", "decay_factor", "weight_decay", "mae_weight",
                "channel_weights", "tau_max", "epochs", "batch_size", "seed"});
    read_field(t, "train", "lr0", c.train.lr0);
    read_field(t, "train", "decay_every", c.train.decay_every);
    read_field(t, "train", "decay_factor", c.train.decay_factor);
    read_field(t, "train", "weight_decay", c.train.weight_decay);
    read_field(t, "train", "mae_weight", c.train.mae_weight);
    read_field(t, "train", "channel_weights", c.train.channel_weights);
    read_field(t, "train", "tau_max", c.train.tau_max);
    read_field(t, "train", "epochs", c.train.epochs);
    read_field(t, "train", "batch_size", c.train.batch_size);
    read_field(t, "train", "seed", c.train.seed);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"grid", "steps", "n_samples", "seed"});
    read_field(d, "data", "grid", c.data.grid);
    read_field(d, "data", "steps", c.data.steps);
    read_field(d, "data", "n_samples", c.data.n_samples);
    read_field(d, "data", "seed", c.data.seed);
  }
  if (j.contains("rollout")) {
    const json& r = j.at("rollout");
    check_keys(r, "rollout", {"tau_init", "tau_max", "steps", "use_cache"});
    read_field(r, "rollout", "tau_init", c.rollout.tau_init);
    read_field(r, "rollout", "tau_max", c.rollout.tau_max);
    read_field(r, "rollout", "steps", c.rollout.n_steps);
    read_field(r, "rollout", "use_cache", c.rollout.use_cache);
  }
  c.validate();
  return c;
}

CliConfig load_cli_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return CliConfig::from_json(buf.str());
}

void save_cli_config(const std::string& path, const CliConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write config '" + path + "'");
  os << cfg.to_json();
  if (!os) throw RuntimeFailure("write failed for config '" + path + "'");
}

}  // namespace flowcast
