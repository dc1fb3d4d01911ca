#include "bat/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace bat {

using nlohmann::json;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::BAT: return "BAT";
    case Variant::BAT_RGB: return "BAT-RGB";
    case Variant::BAT_TIR: return "BAT-TIR";
    case Variant::BAT_Dual: return "BAT-Dual";
    case Variant::Baseline_Dual: return "Baseline-Dual";
  }
  return "?";
}

Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::BAT, Variant::BAT_RGB, Variant::BAT_TIR, Variant::BAT_Dual,
                    Variant::Baseline_Dual})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant \"" + s +
                    "\"; expected BAT, BAT-RGB, BAT-TIR, BAT-Dual or Baseline-Dual");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (patch_size <= 0) fail("patch_size must be positive");
  if (image_size_template <= 0 || image_size_template % patch_size != 0)
    fail("image_size_template (" + std::to_string(image_size_template) +
         ") must be a positive multiple of patch_size (" + std::to_string(patch_size) + ")");
  if (image_size_search <= 0 || image_size_search % patch_size != 0)
    fail("image_size_search (" + std::to_string(image_size_search) +
         ") must be a positive multiple of patch_size (" + std::to_string(patch_size) + ")");
  if (num_heads <= 0 || d_t <= 0 || d_t % num_heads != 0)
    fail("d_t (" + std::to_string(d_t) + ") must be a positive multiple of num_heads (" +
         std::to_string(num_heads) + ")");
  if (num_layers < 0) fail("num_layers must be >= 0");
  if (mlp_ratio <= 0) fail("mlp_ratio must be positive");
  if (d_e <= 0 || d_e >= d_t)
    fail("d_e (" + std::to_string(d_e) + ") must satisfy 0 < d_e < d_t");
  if (variant != Variant::Baseline_Dual) {
    if (layer_set.empty()) fail("layer_set must not be empty for adapter variants");
    for (int l : layer_set)
      if (l < 1 || l > num_layers)
        fail("layer_set entry " + std::to_string(l) + " outside 1.." + std::to_string(num_layers));
    if (!stage_attention && !stage_mlp) fail("at least one stage must be enabled");
  }
  if (lambda_iou < 0 || lambda_l1 < 0 || focal_alpha < 0 || focal_gamma < 0 || gaussian_sigma < 0)
    fail("loss weights must be >= 0");
  if (lr < 0 || weight_decay < 0 || eps <= 0) fail("optimizer settings out of range");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must lie in [0,1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (steps < 0) fail("steps must be >= 0");
}

RunConfig preset_config(const std::string& name) {
  if (name == "toy") {
    return RunConfig{};  // the defaults are the toy preset
  }
  if (name == "full-shape") {
    RunConfig cfg;
    cfg.image_size_template = 128;
    cfg.image_size_search = 256;
    cfg.d_t = 768;
    cfg.num_layers = 12;
    cfg.num_heads = 12;
    cfg.d_e = 8;
    cfg.layer_set.clear();
    for (int l = 1; l <= 12; ++l) cfg.layer_set.push_back(l);
    cfg.batch_size = 32;
    return cfg;
  }
  throw ConfigError("unknown preset \"" + name + "\"; expected \"toy\" or \"full-shape\"");
}

RunConfig load_run_config(const std::string& preset_or_path) {
  if (preset_or_path == "toy" || preset_or_path == "full-shape")
    return preset_config(preset_or_path);
  std::ifstream in(preset_or_path);
  if (!in) throw ConfigError("cannot open config file " + preset_or_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_json(ss.str(), preset_or_path);
}

namespace {

int get_int(const json& j, const std::string& key, int fallback, const std::string& origin) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer())
    throw ConfigError(origin + ": key \"" + key + "\" must be an integer");
  return v.get<int>();
}

double get_num(const json& j, const std::string& key, double fallback, const std::string& origin) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(origin + ": key \"" + key + "\" must be a number");
  return v.get<double>();
}

bool get_bool(const json& j, const std::string& key, bool fallback, const std::string& origin) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(origin + ": key \"" + key + "\" must be a boolean");
  return v.get<bool>();
}

}  // namespace

RunConfig parse_run_config_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be a JSON object");

  static const std::set<std::string> known{
      "image_size_template", "image_size_search", "patch_size", "d_t", "num_layers",
      "num_heads", "mlp_ratio", "d_e", "include_bias", "variant", "layer_set",
      "stages", "lambda_iou", "lambda_l1", "focal_alpha", "focal_gamma",
      "gaussian_sigma", "lr", "weight_decay", "beta1", "beta2", "eps",
      "batch_size", "steps", "seed", "freeze_head"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(origin + ": unknown key \"" + key + "\"");

  RunConfig cfg;
  cfg.image_size_template = get_int(j, "image_size_template", cfg.image_size_template, origin);
  cfg.image_size_search = get_int(j, "image_size_search", cfg.image_size_search, origin);
  cfg.patch_size = get_int(j, "patch_size", cfg.patch_size, origin);
  cfg.d_t = get_int(j, "d_t", cfg.d_t, origin);
  cfg.num_layers = get_int(j, "num_layers", cfg.num_layers, origin);
  cfg.num_heads = get_int(j, "num_heads", cfg.num_heads, origin);
  cfg.mlp_ratio = get_int(j, "mlp_ratio", cfg.mlp_ratio, origin);
  cfg.d_e = get_int(j, "d_e", cfg.d_e, origin);
  cfg.include_bias = get_bool(j, "include_bias", cfg.include_bias, origin);

  if (j.contains("variant")) {
    if (!j.at("variant").is_string())
      throw ConfigError(origin + ": key \"variant\" must be a string");
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  }
  if (j.contains("layer_set")) {
    const auto& ls = j.at("layer_set");
    if (!ls.is_array()) throw ConfigError(origin + ": key \"layer_set\" must be an array");
    cfg.layer_set.clear();
    for (const auto& v : ls) {
      if (!v.is_number_integer())
        throw ConfigError(origin + ": layer_set entries must be integers");
      cfg.layer_set.push_back(v.get<int>());
    }
  }
  if (j.contains("stages")) {
    const auto& st = j.at("stages");
    if (!st.is_array()) throw ConfigError(origin + ": key \"stages\" must be an array");
    cfg.stage_attention = false;
    cfg.stage_mlp = false;
    for (const auto& v : st) {
      const std::string s = v.is_string() ? v.get<std::string>() : "";
      if (s == "attention")
        cfg.stage_attention = true;
      else if (s == "mlp")
        cfg.stage_mlp = true;
      else
        throw ConfigError(origin + ": stages entries must be \"attention\" or \"mlp\"");
    }
  }

  cfg.lambda_iou = get_num(j, "lambda_iou", cfg.lambda_iou, origin);
  cfg.lambda_l1 = get_num(j, "lambda_l1", cfg.lambda_l1, origin);
  cfg.focal_alpha = get_num(j, "focal_alpha", cfg.focal_alpha, origin);
  cfg.focal_gamma = get_num(j, "focal_gamma", cfg.focal_gamma, origin);
  cfg.gaussian_sigma = get_num(j, "gaussian_sigma", cfg.gaussian_sigma, origin);
  cfg.lr = get_num(j, "lr", cfg.lr, origin);
  cfg.weight_decay = get_num(j, "weight_decay", cfg.weight_decay, origin);
  cfg.beta1 = get_num(j, "beta1", cfg.beta1, origin);
  cfg.beta2 = get_num(j, "beta2", cfg.beta2, origin);
  cfg.eps = get_num(j, "eps", cfg.eps, origin);
  cfg.batch_size = get_int(j, "batch_size", cfg.batch_size, origin);
  cfg.steps = get_int(j, "steps", cfg.steps, origin);
  if (j.contains("seed")) {
    const auto& v = j.at("seed");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ConfigError(origin + ": key \"seed\" must be a non-negative integer");
    cfg.seed = v.get<std::uint64_t>();
  }
  cfg.freeze_head = get_bool(j, "freeze_head", cfg.freeze_head, origin);

  cfg.validate();
  return cfg;
}

void config_to_checkpoint(const RunConfig& cfg, Checkpoint& ck) {
  ck.add_scalar("config.image_size_template", cfg.image_size_template);
  ck.add_scalar("config.image_size_search", cfg.image_size_search);
  ck.add_scalar("config.patch_size", cfg.patch_size);
  ck.add_scalar("config.d_t", cfg.d_t);
  ck.add_scalar("config.num_layers", cfg.num_layers);
  ck.add_scalar("config.num_heads", cfg.num_heads);
  ck.add_scalar("config.mlp_ratio", cfg.mlp_ratio);
  ck.add_scalar("config.d_e", cfg.d_e);
  ck.add_scalar("config.include_bias", cfg.include_bias ? 1 : 0);
  ck.add_scalar("config.freeze_head", cfg.freeze_head ? 1 : 0);
  // exact for any seed below 2^53, which covers the CLI's u64 range in practice
  ck.add_scalar("config.seed", double(cfg.seed));
  ck.add_scalar("plan.variant", double(int(cfg.variant)));
  ck.add_scalar("plan.stage_attention", cfg.stage_attention ? 1 : 0);
  ck.add_scalar("plan.stage_mlp", cfg.stage_mlp ? 1 : 0);
  std::vector<double> layers(cfg.layer_set.begin(), cfg.layer_set.end());
  ck.add_vector("plan.layers", layers);
}

RunConfig config_from_checkpoint(const Checkpoint& ck) {
  RunConfig cfg;
  cfg.image_size_template = int(ck.get_scalar("config.image_size_template"));
  cfg.image_size_search = int(ck.get_scalar("config.image_size_search"));
  cfg.patch_size = int(ck.get_scalar("config.patch_size"));
  cfg.d_t = int(ck.get_scalar("config.d_t"));
  cfg.num_layers = int(ck.get_scalar("config.num_layers"));
  cfg.num_heads = int(ck.get_scalar("config.num_heads"));
  cfg.mlp_ratio = int(ck.get_scalar("config.mlp_ratio"));
  cfg.d_e = int(ck.get_scalar("config.d_e"));
  cfg.include_bias = ck.get_scalar("config.include_bias") != 0;
  cfg.freeze_head = ck.get_scalar("config.freeze_head") != 0;
  if (ck.has("config.seed")) cfg.seed = std::uint64_t(ck.get_scalar("config.seed"));
  const int vcode = int(ck.get_scalar("plan.variant"));
  if (vcode < 0 || vcode > int(Variant::Baseline_Dual))
    throw CheckpointError("plan.variant code " + std::to_string(vcode) + " out of range");
  cfg.variant = Variant(vcode);
  cfg.stage_attention = ck.get_scalar("plan.stage_attention") != 0;
  cfg.stage_mlp = ck.get_scalar("plan.stage_mlp") != 0;
  cfg.layer_set.clear();
  for (double d : ck.get("plan.layers").data) cfg.layer_set.push_back(int(d));
  cfg.validate();
  return cfg;
}

}  // namespace bat
