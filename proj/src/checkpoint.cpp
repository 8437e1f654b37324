#include "contrastlab/checkpoint.hpp"

#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "contrastlab/io.hpp"

namespace contrastlab {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

json dims_to_json(const ModelDims& d) {
  return {{"d_img", d.d_img},           {"vocab_size", d.vocab_size},
          {"d_txt", d.d_txt},           {"vision_hidden", d.vision_hidden},
          {"text_hidden", d.text_hidden}, {"vision_feat", d.vision_feat},
          {"text_feat", d.text_feat},   {"embed_dim", d.embed_dim}};
}

ModelDims dims_from_json(const json& node) {
  ModelDims d;
  d.d_img = node.at("d_img").get<int>();
  d.vocab_size = node.at("vocab_size").get<int>();
  d.d_txt = node.at("d_txt").get<int>();
  d.vision_hidden = node.at("vision_hidden").get<int>();
  d.text_hidden = node.at("text_hidden").get<int>();
  d.vision_feat = node.at("vision_feat").get<int>();
  d.text_feat = node.at("text_feat").get<int>();
  d.embed_dim = node.at("embed_dim").get<int>();
  return d;
}

json tensors_to_json(const EncoderParams& params) {
  json node;
  params.for_each_tensor([&](const char* name, const double* data, Eigen::Index size) {
    node[name] = std::vector<double>(data, data + size);
  });
  return node;
}

void tensors_from_json(const json& node, EncoderParams& params) {
  params.for_each_tensor([&](const char* name, double* data, Eigen::Index size) {
    const auto values = node.at(name).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != size)
      throw std::runtime_error(std::string("checkpoint tensor '") + name +
                               "' has wrong size");
    std::copy(values.begin(), values.end(), data);
  });
}

}  // namespace

void save_checkpoint_state(const CheckpointState& state, const std::string& path) {
  json root;
  root["version"] = kCheckpointVersion;
  root["epoch"] = state.epoch;
  root["global_step"] = state.global_step;
  root["config_hash"] = state.config_hash;
  root["dims"] = dims_to_json(state.params.dims);
  root["params"] = tensors_to_json(state.params);
  root["optimizer"] = {{"step", state.optimizer.step},
                       {"beta1", state.optimizer.config.beta1},
                       {"beta2", state.optimizer.config.beta2},
                       {"epsilon", state.optimizer.config.epsilon},
                       {"weight_decay", state.optimizer.config.weight_decay},
                       {"first_moment", tensors_to_json(state.optimizer.first_moment)},
                       {"second_moment", tensors_to_json(state.optimizer.second_moment)}};
  write_file(path, root.dump());
}

CheckpointState load_checkpoint_state(const std::string& path) {
  const std::string text = read_file(path);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint parse error in " + path + ": " + e.what());
  }
  const int version = root.at("version").get<int>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  CheckpointState state;
  const ModelDims dims = dims_from_json(root.at("dims"));
  state.params = init_params(dims, 0);  // shapes only; values overwritten below
  tensors_from_json(root.at("params"), state.params);
  state.epoch = root.at("epoch").get<int>();
  state.global_step = root.at("global_step").get<std::int64_t>();
  state.config_hash = root.at("config_hash").get<std::string>();

  const auto& opt = root.at("optimizer");
  AdamWConfig config;
  config.beta1 = opt.at("beta1").get<double>();
  config.beta2 = opt.at("beta2").get<double>();
  config.epsilon = opt.at("epsilon").get<double>();
  config.weight_decay = opt.at("weight_decay").get<double>();
  state.optimizer = make_optimizer_state(state.params, config);
  state.optimizer.step = opt.at("step").get<std::int64_t>();
  tensors_from_json(opt.at("first_moment"), state.optimizer.first_moment);
  tensors_from_json(opt.at("second_moment"), state.optimizer.second_moment);
  return state;
}

}  // namespace contrastlab
