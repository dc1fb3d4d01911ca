#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bat/tensor.hpp"

namespace bat {

// The closed operation set. Model code (backbone, adapters, head) composes
// exclusively from these; anything else lives outside the graph.
enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  ScalarMul,
  Concat,
  Slice,
  Reshape,
  Transpose,
  LayerNorm,
  Gelu,
  Softmax,
  Conv2d,
  Relu,
  Sigmoid,
};

const char* op_name(OpKind k);

class Graph;

// Cheap handle to a graph node.
struct Value {
  Graph* g = nullptr;
  std::int32_t id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  // The reference is into the graph's node storage: adding any op may
  // invalidate it. Copy the Shape before building more of the graph.
  const Shape& shape() const;
  std::int64_t numel() const;
};

// Reverse-mode autodiff over a recorded DAG. Nodes are appended in topological
// order as ops are applied; forward() evaluates them in that order, backward
// sweeps it in reverse. All storage is f64, row-major contiguous.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf whose data is copied into the graph.
  Value leaf(Tensor t, std::string name = "");
  // Leaf that reads (and, on grad(), writes gradients back to) an external
  // tensor. The caller keeps `t` alive and unmoved for the graph's lifetime.
  Value leaf_ref(Tensor& t, std::string name = "");
  // Named leaf with no data yet; evaluate() binds it.
  Value placeholder(Shape shape, std::string name);

  void mark_output(const std::string& name, Value v);

  // Runs every node in order. Throws if a placeholder is unbound.
  void forward();

  // Binds placeholders by name, runs forward, returns the marked outputs.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs);

  // d(out)/d(leaves) for a scalar (single-element) output. Existing node
  // gradients are reset first; leaf_ref leaves with requires_grad also get the
  // result accumulated into their tensor's grad.
  void backward(Value out);

  // Same sweep, but seeded with explicit cotangents on (possibly several)
  // non-scalar outputs. Used by the training loss, which is computed outside
  // the graph. Seeds must match the node shapes.
  void backward_seeded(const std::vector<std::pair<Value, const std::vector<double>*>>& seeds);

  // Central finite differences of `out` w.r.t. every element of `leaf`,
  // compared against the autodiff gradient:
  //   max over elements of |ad - cd| / max(1, |cd|).
  // Runs its own backward. h must be nonzero; `out` must be scalar.
  double finite_diff_check(Value out, Value leaf, double h);

  std::span<const double> value(Value v) const;
  std::span<const double> grad_of(Value v) const;
  const Shape& shape_of(Value v) const;

  // Adds each requires_grad leaf_ref node's gradient into its external
  // tensor's grad accumulator. backward() calls this itself; backward_seeded
  // leaves it to the caller so per-sample scaling stays explicit.
  void flush_leaf_grads(double scale = 1.0);

  std::size_t node_count() const { return nodes_.size(); }

  // --- op construction (free-function style wrappers below) ---
  Value op_matmul(Value a, Value b);
  Value op_add(Value a, Value b);
  Value op_scalar_mul(Value a, double c);
  Value op_concat(const std::vector<Value>& xs, int axis);
  Value op_slice(Value a, const std::vector<std::int64_t>& starts,
                 const std::vector<std::int64_t>& extents);
  Value op_reshape(Value a, Shape s);
  Value op_transpose(Value a);
  Value op_layernorm(Value x, Value gain, Value bias, double eps);
  Value op_gelu(Value a);
  Value op_softmax(Value a, int axis);
  Value op_conv2d(Value x, Value w, Value b, int stride, int pad);  // b may be invalid
  Value op_relu(Value a);
  Value op_sigmoid(Value a);

 private:
  friend struct Value;

  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::int32_t> in;
    Shape shape;
    std::int64_t numel = 0;

    // attributes
    double scalar = 0.0;  // ScalarMul factor / LayerNorm eps
    int axis = 0;         // Concat / Softmax
    std::vector<std::int64_t> starts, extents;  // Slice
    int stride = 1, pad = 0;                    // Conv2d

    std::vector<double> buf;          // owned values
    const double* val = nullptr;      // owned buf or external data
    std::vector<double> grad;
    std::vector<double> aux;          // op-scratch saved for backward
    bool requires_grad = false;       // leaves
    bool needs_grad = false;          // propagated
    bool is_placeholder = false;
    bool bound = true;
    Tensor* external = nullptr;       // leaf_ref target
    std::string name;
  };

  Node& at(Value v);
  const Node& at(Value v) const;
  Value push(Node n);
  void exec_forward(std::int32_t id);
  void exec_backward(std::int32_t id);
  void prepare_grads();

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::int32_t>> outputs_;
  bool forward_done_ = false;
};

// Free-function op spellings used throughout the model code.
inline Value matmul(Value a, Value b) { return a.g->op_matmul(a, b); }
inline Value add(Value a, Value b) { return a.g->op_add(a, b); }
inline Value scalar_mul(Value a, double c) { return a.g->op_scalar_mul(a, c); }
inline Value concat(const std::vector<Value>& xs, int axis) {
  return xs.at(0).g->op_concat(xs, axis);
}
inline Value slice(Value a, const std::vector<std::int64_t>& starts,
                   const std::vector<std::int64_t>& extents) {
  return a.g->op_slice(a, starts, extents);
}
inline Value reshape(Value a, Shape s) { return a.g->op_reshape(a, std::move(s)); }
inline Value transpose(Value a) { return a.g->op_transpose(a); }
inline Value layernorm(Value x, Value gain, Value bias, double eps) {
  return x.g->op_layernorm(x, gain, bias, eps);
}
inline Value gelu(Value a) { return a.g->op_gelu(a); }
inline Value softmax(Value a, int axis) { return a.g->op_softmax(a, axis); }
inline Value conv2d(Value x, Value w, Value b, int stride, int pad) {
  return x.g->op_conv2d(x, w, b, stride, pad);
}
inline Value conv2d(Value x, Value w, int stride, int pad) {
  return x.g->op_conv2d(x, w, Value{}, stride, pad);
}
inline Value relu(Value a) { return a.g->op_relu(a); }
inline Value sigmoid(Value a) { return a.g->op_sigmoid(a); }

// Compositions (not new ops): bias broadcast over rows via a ones column, and
// reduction to a single element via ones matmuls.
Value row_broadcast(Value row, std::int64_t rows);     // (d) -> (rows,d)
Value add_row_bias(Value x, Value bias);               // x (r,d) + bias (d)
Value scalar_sum(Value x);                             // any shape -> (1,1)

// Spec-shaped convenience wrappers.
std::map<std::string, Tensor> evaluate(Graph& g, const std::map<std::string, Tensor>& inputs);
void grad(Graph& g, Value scalar_out);
double finite_diff_check(Graph& g, Value out, Value leaf, double h);

}  // namespace bat
