#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bat/box.hpp"
#include "bat/checkpoint.hpp"
#include "bat/config.hpp"
#include "bat/graph.hpp"
#include "bat/image.hpp"
#include "bat/tensor.hpp"

namespace bat {

// One frozen encoder layer. Weight convention: tokens are rows, y = x * W,
// so W is (d_in, d_out); attention uses d x d projections sliced per head.
struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
};

struct EmbedParams {
  Tensor patch_w;       // (patch*patch*3, d_t)
  Tensor patch_b;       // (d_t)
  Tensor pos_template;  // (template tokens, d_t)
  Tensor pos_search;    // (search tokens, d_t)
};

// Shared conv trunk + three 1x1 branches over the search-token grid.
// Score and size maps pass through sigmoid; offsets stay raw.
struct HeadParams {
  Tensor trunk_w, trunk_b;    // (16, d_t, 3, 3), (16)
  Tensor score_w, score_b;    // (1, 16, 1, 1), (1)
  Tensor offset_w, offset_b;  // (2, 16, 1, 1), (2)
  Tensor size_w, size_b;      // (2, 16, 1, 1), (2)
};

// Hourglass: d_t -> d_e -> d_e -> d_t, all linear.
struct AdapterParams {
  Tensor down_w, down_b, mid_w, mid_b, up_w, up_b;
};

enum class Stage { Attention, Mlp };
enum class Direction { Rgb2Tir, Tir2Rgb };  // Rgb2Tir: prompt injected into the TIR stream

// One active injection: at `layer` (1-based), after `stage`, along `dir`,
// using the params at `param_index` (shared indices express shared adapters).
struct AdapterSlot {
  int layer;
  Stage stage;
  Direction dir;
  int param_index;
};

struct AdapterPlan {
  Variant variant = Variant::BAT;
  std::vector<int> layers;  // sorted, unique, 1-based
  bool stage_attention = true, stage_mlp = true;
  std::vector<AdapterSlot> slots;
  int instance_count = 0;  // distinct AdapterParams sets

  bool has_slot(int layer, Stage stage, Direction dir, int* param_index = nullptr) const;
};

// Validates the layer set against num_layers and lays out slots:
// BAT shares one instance per (layer, stage) across both directions;
// BAT-Dual gives each direction its own; BAT-RGB keeps only TIR->RGB slots
// (only the RGB stream receives prompts), BAT-TIR mirrors that;
// Baseline-Dual has no slots. The prediction head always consumes the sum of
// both final states; variants differ only in the adapter wiring.
AdapterPlan build_adapter_plan(Variant variant, const std::vector<int>& layer_set,
                               bool stage_attention, bool stage_mlp, int num_layers);
AdapterPlan plan_from_config(const RunConfig& cfg);

// Adapter-parameter budget (the paper-style count; the trainable head is
// accounted separately by head_param_count).
std::int64_t count_trainable_params(const AdapterPlan& plan, int d_t, int d_e, bool include_bias);
std::int64_t head_param_count(int d_t);

// Checkpoint name prefix for one adapter instance, e.g. "adapter.3.att" for a
// shared instance or "adapter.3.mlp.rgb2tir" for a direction-specific one.
std::string adapter_entry_prefix(const AdapterPlan& plan, int param_index);

struct Model {
  RunConfig cfg;
  AdapterPlan plan;
  EmbedParams embed;
  std::vector<LayerParams> layers;
  HeadParams head;
  std::vector<AdapterParams> adapters;  // indexed by AdapterSlot::param_index

  // Derived: patch weights pre-summed over the three (identical) channel
  // blocks for single-channel thermal input. Rebuilt by finalize().
  Tensor patch_w_gray;

  // Seeded init. Draw order is fixed (embed, layers, head, adapters) so two
  // models with equal seeds share backbone and head bits regardless of
  // variant. Backbone weights N(0, 0.02^2); adapter up-projections exactly
  // zero; gains one; biases zero.
  static Model init(const RunConfig& cfg);

  Checkpoint to_checkpoint() const;
  static Model from_checkpoint(const Checkpoint& ck);

  // requires_grad flags: adapters (and the head unless freeze_head) trainable.
  void mark_trainable();
  std::vector<Tensor*> trainable_tensors();

  // Recomputes derived state and trainable flags; called by init/from_checkpoint.
  void finalize();

  // Out-of-graph patch + position embedding (frozen, so no gradient needed).
  // The thermal image may have 1 channel (replicated across the patch
  // channels) or 3. Returns (t_n, d_t), template tokens first.
  Tensor embed_pair(const Image& tmpl, const Image& search) const;
};

// Maps produced by one forward pass, as flat copies plus grid geometry.
struct HeadMaps {
  std::vector<double> score;   // (S*S), sigmoid applied
  std::vector<double> offset;  // (2*S*S), raw
  std::vector<double> size;    // (2*S*S), sigmoid applied
  int grid = 0;                // S
};

// Peak cell -> box in search-crop pixels:
//   center = (cell + 0.5 + offset) * patch_stride, size = size * crop_size.
// Ties in the score map resolve to the lowest row-major index.
BBox decode_box(const HeadMaps& maps, int patch_stride, int crop_size);

// The per-model forward graph, built once and re-bound per sample via
// placeholders "tokens_rgb" / "tokens_tir". Keeps leaf_ref handles into the
// Model, which must stay alive and unmoved.
struct ForwardGraph {
  Graph g;
  Value tokens_rgb, tokens_tir;          // placeholders (t_n, d_t)
  std::vector<Value> states_rgb, states_tir;  // post-layer states, index 0 = embedding
  std::map<std::string, Value> params;   // leaf handles, keyed by checkpoint entry name
  Value head_in;                          // what the primary head consumed
  Value score, offset, size;              // primary head outputs
  // Baseline-Dual extras: per-stream heads for max-score selection. The
  // fused path above is still built for every variant (it is the regime the
  // adapter variants are compared in, and it keeps the zero-init equivalence
  // checkable), so these are additional.
  bool has_stream_heads = false;
  Value score_rgb, offset_rgb, size_rgb;
  Value score_tir, offset_tir, size_tir;

  int grid = 0;
  int patch_stride = 0;
  int crop_size = 0;

  HeadMaps maps_at(Value score_v, Value offset_v, Value size_v) const;
};

// Builds the variant-appropriate dual-stream graph over the model's params.
std::unique_ptr<ForwardGraph> build_forward(Model& m);

// Binds token states and runs the graph.
void run_forward(ForwardGraph& fg, const Tensor& tokens_rgb, const Tensor& tokens_tir);

// Fused-path prediction (used by all adapter variants; also defined for
// Baseline-Dual where it serves the equivalence tests).
struct Prediction {
  HeadMaps maps;
  BBox box_crop;  // search-crop pixels
  int stream = 0;  // Baseline-Dual only: 0 = RGB head won, 1 = TIR
};
Prediction predict(ForwardGraph& fg);

// Baseline-Dual: head per stream, stream with the larger score-map peak wins,
// RGB on ties.
Prediction baseline_dual_predict(ForwardGraph& fg);

}  // namespace bat
