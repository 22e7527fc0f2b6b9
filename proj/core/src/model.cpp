#include "flowcast/model.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

namespace flowcast {

void ModelConfig::validate() const {
  if (grid_px % kPatch != 0 || grid_py % kPatch != 0)
    throw ValidationError("model config: grid extents must be divisible by 16");
  if (channels != 3) throw ValidationError("model config: pipeline expects 3 channels");
  if (tau_max < 1) throw ValidationError("model config: tau_max must be positive");
  embed_config().validate();
  backbone_config().validate();
}

EmbedConfig ModelConfig::embed_config() const {
  EmbedConfig e;
  e.d_model = d_model;
  e.max_px = grid_px;
  e.max_py = grid_py;
  e.tau_max = tau_max;
  e.channels = channels;
  e.order = order;
  return e;
}

BackboneConfig ModelConfig::backbone_config() const {
  BackboneConfig b;
  b.d_model = d_model;
  b.n_layers = n_layers;
  b.n_heads = n_heads;
  b.d_ff = d_ff;
  b.max_seq_len = max_seq_len();
  return b;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j{{"d_model", d_model},   {"n_layers", n_layers},
                   {"n_heads", n_heads},   {"d_ff", d_ff},
                   {"tau_max", tau_max},   {"grid_px", grid_px},
                   {"grid_py", grid_py},   {"channels", channels},
                   {"order", order == PatchOrder::x_major ? "x_major" : "y_major"}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.tau_max = j.at("tau_max").get<int>();
  c.grid_px = j.at("grid_px").get<int>();
  c.grid_py = j.at("grid_py").get<int>();
  c.channels = j.at("channels").get<int>();
  const std::string order = j.at("order").get<std::string>();
  if (order == "x_major")
    c.order = PatchOrder::x_major;
  else if (order == "y_major")
    c.order = PatchOrder::y_major;
  else
    throw ValidationError("model config: unknown patch order '" + order + "'");
  c.validate();
  return c;
}

Model::Model(const ModelConfig& config)
    : cfg(config), embed(config.embed_config()), backbone(config.backbone_config()),
      decoder(config.d_model, config.order) {
  cfg.validate();
}

void Model::init(uint64_t seed) {
  Rng re = Rng::substream(seed, 0);
  Rng rb = Rng::substream(seed, 1);
  Rng rd = Rng::substream(seed, 2);
  embed.init(re);
  backbone.init(rb);
  decoder.init(rd);
}

std::vector<FlowState> Model::forward_window(std::span<const FlowState> states,
                                             WindowActs& acts) const {
  if (states.size() < 2)
    throw ValidationError("forward_window: need a context state and a target");
  const int tau = static_cast<int>(states.size()) - 1;
  acts.tau = tau;
  Tensor tokens = embed.build_sequence(states.first(static_cast<size_t>(tau)), acts.seq);
  Tensor e_out = backbone.forward(tokens, acts.bb);
  acts.blocks = split_outputs(e_out, tau, acts.seq.n_patches);
  acts.dec.assign(static_cast<size_t>(tau), DecodeActs{});
  std::vector<FlowState> preds;
  preds.reserve(static_cast<size_t>(tau));
  for (int t = 0; t < tau; ++t)
    preds.push_back(decoder.decode(acts.blocks[static_cast<size_t>(t)], states[t],
                                   acts.dec[static_cast<size_t>(t)]));
  return preds;
}

void Model::backward_window(const std::vector<Tensor>& d_preds,
                            std::span<const FlowState> states, const WindowActs& acts) {
  const int tau = acts.tau, n = acts.seq.n_patches, d = cfg.d_model;
  if (static_cast<int>(d_preds.size()) != tau)
    throw ValidationError("backward_window: gradient count mismatch");
  Tensor d_e_out({(tau + 1) * n, d});
  for (int t = 0; t < tau; ++t) {
    const FlowState& base = states[t];
    Tensor d_block = decoder.backward(d_preds[static_cast<size_t>(t)],
                                      acts.blocks[static_cast<size_t>(t)], base.width,
                                      base.height, acts.dec[static_cast<size_t>(t)]);
    std::memcpy(d_e_out.data() + (static_cast<size_t>(t) + 1) * n * d, d_block.data(),
                static_cast<size_t>(n) * d * sizeof(Real));
  }
  Tensor d_tokens = backbone.backward(d_e_out, acts.bb);
  embed.backward(d_tokens, acts.seq);
}

FlowState Model::predict_next(std::span<const FlowState> window) const {
  if (window.empty()) throw ValidationError("predict_next: empty window");
  WindowActs acts;
  const int tau = static_cast<int>(window.size());
  acts.tau = tau;
  Tensor tokens = embed.build_sequence(window, acts.seq);
  Tensor e_out = backbone.forward(tokens, acts.bb);
  std::vector<Tensor> blocks = split_outputs(e_out, tau, acts.seq.n_patches);
  DecodeActs dec;
  return decoder.decode(blocks.back(), window.back(), dec);
}

std::vector<nn::Param*> Model::params() {
  std::vector<nn::Param*> out = embed.params();
  for (nn::Param* p : backbone.params()) out.push_back(p);
  for (nn::Param* p : decoder.params()) out.push_back(p);
  return out;
}

void Model::zero_grads() {
  for (nn::Param* p : params()) p->zero_grad();
}

int64_t Model::param_count() {
  int64_t n = 0;
  for (nn::Param* p : params()) n += p->value.size();
  return n;
}

}  // namespace flowcast
