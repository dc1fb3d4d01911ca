#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bat/checkpoint.hpp"

namespace bat {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Variant { BAT, BAT_RGB, BAT_TIR, BAT_Dual, Baseline_Dual };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);  // throws ConfigError

// Flat run configuration. JSON keys match field names exactly; unknown keys
// are rejected. Paths (data, checkpoints, results) come from CLI flags, not
// from here, so a config describes a model + training recipe only.
struct RunConfig {
  // backbone
  int image_size_template = 32;
  int image_size_search = 64;
  int patch_size = 16;
  int d_t = 64;
  int num_layers = 2;
  int num_heads = 4;
  int mlp_ratio = 4;

  // adapter
  int d_e = 4;
  bool include_bias = true;

  // plan
  Variant variant = Variant::BAT;
  std::vector<int> layer_set = {1, 2};  // 1-based
  bool stage_attention = true;
  bool stage_mlp = true;

  // loss
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  double focal_alpha = 2.0;
  double focal_gamma = 4.0;
  double gaussian_sigma = 0.0;  // 0 = auto: image_size_search / 12

  // optimizer / schedule. The default lr is tuned for the toy shape at the
  // default step budget; the cosine schedule decays it to a tenth by the end.
  double lr = 7e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int steps = 2000;
  std::uint64_t seed = 1;
  bool freeze_head = false;

  double sigma() const { return gaussian_sigma > 0.0 ? gaussian_sigma : image_size_search / 12.0; }
  int template_tokens_side() const { return image_size_template / patch_size; }
  int search_tokens_side() const { return image_size_search / patch_size; }
  int num_tokens() const {
    const int t = template_tokens_side(), s = search_tokens_side();
    return t * t + s * s;
  }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

// "toy" and "full-shape" ship as named presets; anything else is read as a
// path to a JSON file.
RunConfig preset_config(const std::string& name);  // throws ConfigError on unknown name
RunConfig load_run_config(const std::string& preset_or_path);
RunConfig parse_run_config_json(const std::string& text, const std::string& origin);

// Model-structural fields round-trip through the checkpoint as "config.*"
// pseudo-entries so `track` can rebuild the model without the original file.
void config_to_checkpoint(const RunConfig& cfg, Checkpoint& ck);
RunConfig config_from_checkpoint(const Checkpoint& ck);

}  // namespace bat
