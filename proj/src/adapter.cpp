#include <algorithm>
#include <set>
#include <stdexcept>

#include "bat/model.hpp"

namespace bat {

bool AdapterPlan::has_slot(int layer, Stage stage, Direction dir, int* param_index) const {
  for (const auto& s : slots) {
    if (s.layer == layer && s.stage == stage && s.dir == dir) {
      if (param_index) *param_index = s.param_index;
      return true;
    }
  }
  return false;
}

AdapterPlan build_adapter_plan(Variant variant, const std::vector<int>& layer_set,
                               bool stage_attention, bool stage_mlp, int num_layers) {
  AdapterPlan plan;
  plan.variant = variant;
  plan.stage_attention = stage_attention;
  plan.stage_mlp = stage_mlp;

  std::set<int> uniq(layer_set.begin(), layer_set.end());
  for (int l : uniq) {
    if (l < 1 || l > num_layers)
      throw std::invalid_argument("adapter layer " + std::to_string(l) +
                                  " out of range 1.." + std::to_string(num_layers));
  }
  plan.layers.assign(uniq.begin(), uniq.end());

  if (variant == Variant::Baseline_Dual) return plan;
  if (!stage_attention && !stage_mlp)
    throw std::invalid_argument("adapter plan needs at least one active stage");

  std::vector<Stage> stages;
  if (stage_attention) stages.push_back(Stage::Attention);
  if (stage_mlp) stages.push_back(Stage::Mlp);

  int next = 0;
  for (int l : plan.layers) {
    for (Stage st : stages) {
      switch (variant) {
        case Variant::BAT:
          // One shared instance prompting both ways.
          plan.slots.push_back({l, st, Direction::Rgb2Tir, next});
          plan.slots.push_back({l, st, Direction::Tir2Rgb, next});
          ++next;
          break;
        case Variant::BAT_Dual:
          plan.slots.push_back({l, st, Direction::Rgb2Tir, next++});
          plan.slots.push_back({l, st, Direction::Tir2Rgb, next++});
          break;
        case Variant::BAT_RGB:
          plan.slots.push_back({l, st, Direction::Tir2Rgb, next++});
          break;
        case Variant::BAT_TIR:
          plan.slots.push_back({l, st, Direction::Rgb2Tir, next++});
          break;
        case Variant::Baseline_Dual:
          break;
      }
    }
  }
  plan.instance_count = next;
  return plan;
}

AdapterPlan plan_from_config(const RunConfig& cfg) {
  return build_adapter_plan(cfg.variant, cfg.layer_set, cfg.stage_attention, cfg.stage_mlp,
                            cfg.num_layers);
}

std::int64_t count_trainable_params(const AdapterPlan& plan, int d_t, int d_e,
                                    bool include_bias) {
  std::int64_t dt = d_t, de = d_e;
  std::int64_t per = dt * de + de * de + de * dt;
  if (include_bias) per += de + de + dt;
  return per * plan.instance_count;
}

std::string adapter_entry_prefix(const AdapterPlan& plan, int param_index) {
  const AdapterSlot* first = nullptr;
  int uses = 0;
  for (const auto& s : plan.slots) {
    if (s.param_index != param_index) continue;
    if (!first) first = &s;
    ++uses;
  }
  if (!first) throw std::logic_error("adapter_entry_prefix: unknown param index");
  std::string name = "adapter." + std::to_string(first->layer) + ".";
  name += first->stage == Stage::Attention ? "att" : "mlp";
  // Shared instances serve both directions and carry no direction tag.
  if (uses == 1)
    name += first->dir == Direction::Rgb2Tir ? ".rgb2tir" : ".tir2rgb";
  return name;
}

std::int64_t head_param_count(int d_t) {
  std::int64_t trunk = 16LL * d_t * 3 * 3 + 16;
  std::int64_t branches = (1LL * 16 + 1) + (2LL * 16 + 2) + (2LL * 16 + 2);
  return trunk + branches;
}

}  // namespace bat
