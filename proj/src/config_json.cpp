#include "stsae/config_json.hpp"

#include <algorithm>
#include <stdexcept>

namespace stsae {

using nlohmann::json;

const char* to_string(TopkEvalMode mode) noexcept {
  return mode == TopkEvalMode::per_token ? "per_token" : "batch";
}

TopkEvalMode topk_mode_from_string(const std::string& name) {
  if (name == "per_token") return TopkEvalMode::per_token;
  if (name == "batch") return TopkEvalMode::batch;
  throw std::invalid_argument("unknown eval topk mode: " + name);
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) throw std::invalid_argument(context + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw std::invalid_argument(context + ": unknown key '" + key + "'");
  }
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const VariantConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"lambda_t", c.lambda_t},
          {"lambda_s", c.lambda_s},
          {"lambda_r", c.lambda_r},
          {"tau", c.tau},
          {"alpha_aux", c.alpha_aux},
          {"alpha_mat", c.alpha_mat},
          {"frame_width", c.frame_width},
          {"k_aux", c.k_aux}};
}

void from_json_strict(const json& j, VariantConfig& c) {
  reject_unknown_keys(j, {"variant", "lambda_t", "lambda_s", "lambda_r", "tau", "alpha_aux",
                          "alpha_mat", "frame_width", "k_aux"},
                      "variant config");
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  read_if(j, "lambda_t", c.lambda_t);
  read_if(j, "lambda_s", c.lambda_s);
  read_if(j, "lambda_r", c.lambda_r);
  read_if(j, "tau", c.tau);
  read_if(j, "alpha_aux", c.alpha_aux);
  read_if(j, "alpha_mat", c.alpha_mat);
  read_if(j, "frame_width", c.frame_width);
  read_if(j, "k_aux", c.k_aux);
}

json to_json(const SaeConfig& c) {
  json j = {{"input_dim", c.input_dim},
            {"dict_size", c.dict_size},
            {"k", c.k},
            {"activation", to_string(c.activation.kind)},
            {"temperature", c.activation.temperature}};
  j["matryoshka_split"] = c.matryoshka_split ? json(*c.matryoshka_split) : json(nullptr);
  return j;
}

void from_json_strict(const json& j, SaeConfig& c) {
  reject_unknown_keys(j, {"input_dim", "dict_size", "k", "activation", "temperature",
                          "matryoshka_split"},
                      "sae config");
  read_if(j, "input_dim", c.input_dim);
  read_if(j, "dict_size", c.dict_size);
  read_if(j, "k", c.k);
  if (j.contains("activation")) {
    c.activation.kind = activation_from_string(j.at("activation").get<std::string>());
  }
  read_if(j, "temperature", c.activation.temperature);
  if (j.contains("matryoshka_split")) {
    const auto& m = j.at("matryoshka_split");
    c.matryoshka_split = m.is_null() ? std::nullopt : std::optional<std::uint32_t>(m.get<std::uint32_t>());
  }
}

json to_json(const TrainConfig& c) {
  return {{"variant", to_json(c.variant)},
          {"epochs", c.epochs},
          {"batch_tokens", c.batch_tokens},
          {"batch_clips", c.batch_clips},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"seed", c.seed},
          {"frozen_decoder", c.frozen_decoder},
          {"dead_after_batches", c.dead_after_batches},
          {"eval_topk_mode", to_string(c.eval_topk_mode)}};
}

void from_json_strict(const json& j, TrainConfig& c) {
  reject_unknown_keys(j, {"variant", "epochs", "batch_tokens", "batch_clips", "lr", "beta1", "beta2",
                          "eps", "seed", "frozen_decoder", "dead_after_batches", "eval_topk_mode"},
                      "train config");
  if (j.contains("variant")) from_json_strict(j.at("variant"), c.variant);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_tokens", c.batch_tokens);
  read_if(j, "batch_clips", c.batch_clips);
  read_if(j, "lr", c.lr);
  read_if(j, "beta1", c.beta1);
  read_if(j, "beta2", c.beta2);
  read_if(j, "eps", c.eps);
  read_if(j, "seed", c.seed);
  read_if(j, "frozen_decoder", c.frozen_decoder);
  read_if(j, "dead_after_batches", c.dead_after_batches);
  if (j.contains("eval_topk_mode")) {
    c.eval_topk_mode = topk_mode_from_string(j.at("eval_topk_mode").get<std::string>());
  }
}

}  // namespace stsae
