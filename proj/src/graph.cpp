#include "bat/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bat/kernels.hpp"

namespace bat {

namespace {

std::int64_t dim_prod(const Shape& s, std::size_t lo, std::size_t hi) {
  std::int64_t p = 1;
  for (std::size_t i = lo; i < hi; ++i) p *= s[i];
  return p;
}

[[noreturn]] void bad_shape(const std::string& msg) { throw ShapeError(msg); }

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::Gelu: return "gelu";
    case OpKind::Softmax: return "softmax";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

const Shape& Value::shape() const { return g->shape_of(*this); }
std::int64_t Value::numel() const { return shape_numel(shape()); }

Graph::Node& Graph::at(Value v) {
  if (v.g != this || v.id < 0 || std::size_t(v.id) >= nodes_.size())
    throw std::invalid_argument("graph: value does not belong to this graph");
  return nodes_[std::size_t(v.id)];
}

const Graph::Node& Graph::at(Value v) const {
  return const_cast<Graph*>(this)->at(v);
}

Value Graph::push(Node n) {
  n.numel = shape_numel(n.shape);
  if (n.op != OpKind::Leaf) {
    n.needs_grad = false;
    for (auto id : n.in) n.needs_grad = n.needs_grad || nodes_[std::size_t(id)].needs_grad;
    n.buf.assign(std::size_t(n.numel), 0.0);
    n.val = n.buf.data();
  }
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  return Value{this, std::int32_t(nodes_.size() - 1)};
}

Value Graph::leaf(Tensor t, std::string name) {
  Node n;
  n.op = OpKind::Leaf;
  n.shape = t.shape;
  n.requires_grad = n.needs_grad = t.requires_grad;
  n.buf = std::move(t.data);
  n.val = n.buf.data();
  n.name = std::move(name);
  return push(std::move(n));
}

Value Graph::leaf_ref(Tensor& t, std::string name) {
  Node n;
  n.op = OpKind::Leaf;
  n.shape = t.shape;
  n.requires_grad = n.needs_grad = t.requires_grad;
  n.val = t.data.data();
  n.external = &t;
  n.name = std::move(name);
  return push(std::move(n));
}

Value Graph::placeholder(Shape shape, std::string name) {
  if (name.empty()) throw std::invalid_argument("placeholder: name required");
  Node n;
  n.op = OpKind::Leaf;
  n.shape = std::move(shape);
  n.is_placeholder = true;
  n.bound = false;
  n.name = std::move(name);
  return push(std::move(n));
}

void Graph::mark_output(const std::string& name, Value v) {
  at(v);  // ownership check
  outputs_.emplace_back(name, v.id);
}

// ------------------------------------------------------------------ ops

Value Graph::op_matmul(Value a, Value b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
    bad_shape("matmul: incompatible shapes " + shape_str(na.shape) + " x " + shape_str(nb.shape));
  Node n;
  n.op = OpKind::MatMul;
  n.in = {a.id, b.id};
  n.shape = {na.shape[0], nb.shape[1]};
  return push(std::move(n));
}

Value Graph::op_add(Value a, Value b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.shape != nb.shape)
    bad_shape("add: shape mismatch " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
  Node n;
  n.op = OpKind::Add;
  n.in = {a.id, b.id};
  n.shape = na.shape;
  return push(std::move(n));
}

Value Graph::op_scalar_mul(Value a, double c) {
  Node n;
  n.op = OpKind::ScalarMul;
  n.in = {a.id};
  n.shape = at(a).shape;
  n.scalar = c;
  return push(std::move(n));
}

Value Graph::op_concat(const std::vector<Value>& xs, int axis) {
  if (xs.empty()) bad_shape("concat: no inputs");
  const Node& n0 = at(xs[0]);
  const int rank = int(n0.shape.size());
  if (axis < 0 || axis >= rank) bad_shape("concat: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  Shape out = n0.shape;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Node& ni = at(xs[i]);
    if (int(ni.shape.size()) != rank)
      bad_shape("concat: rank mismatch " + shape_str(n0.shape) + " vs " + shape_str(ni.shape));
    for (int d = 0; d < rank; ++d)
      if (d != axis && ni.shape[d] != n0.shape[d])
        bad_shape("concat: shape mismatch off axis " + std::to_string(axis) + ": " +
                  shape_str(n0.shape) + " vs " + shape_str(ni.shape));
    out[axis] += ni.shape[axis];
  }
  Node n;
  n.op = OpKind::Concat;
  for (auto v : xs) n.in.push_back(v.id);
  n.shape = std::move(out);
  n.axis = axis;
  return push(std::move(n));
}

Value Graph::op_slice(Value a, const std::vector<std::int64_t>& starts,
                      const std::vector<std::int64_t>& extents) {
  const Node& na = at(a);
  const std::size_t rank = na.shape.size();
  if (starts.size() != rank || extents.size() != rank)
    bad_shape("slice: starts/extents rank mismatch for " + shape_str(na.shape));
  for (std::size_t d = 0; d < rank; ++d) {
    if (starts[d] < 0 || extents[d] < 1 || starts[d] + extents[d] > na.shape[d])
      bad_shape("slice: window [" + std::to_string(starts[d]) + "," +
                std::to_string(starts[d] + extents[d]) + ") outside dim " + std::to_string(d) +
                " of " + shape_str(na.shape));
  }
  Node n;
  n.op = OpKind::Slice;
  n.in = {a.id};
  n.shape = Shape(extents.begin(), extents.end());
  n.starts = starts;
  n.extents = extents;
  return push(std::move(n));
}

Value Graph::op_reshape(Value a, Shape s) {
  const Node& na = at(a);
  if (shape_numel(s) != na.numel)
    bad_shape("reshape: cannot view " + shape_str(na.shape) + " as " + shape_str(s));
  Node n;
  n.op = OpKind::Reshape;
  n.in = {a.id};
  n.shape = std::move(s);
  return push(std::move(n));
}

Value Graph::op_transpose(Value a) {
  const Node& na = at(a);
  if (na.shape.size() != 2) bad_shape("transpose: rank-2 required, got " + shape_str(na.shape));
  Node n;
  n.op = OpKind::Transpose;
  n.in = {a.id};
  n.shape = {na.shape[1], na.shape[0]};
  return push(std::move(n));
}

Value Graph::op_layernorm(Value x, Value gain, Value bias, double eps) {
  const Node& nx = at(x);
  const Node& ng = at(gain);
  const Node& nb = at(bias);
  if (nx.shape.empty()) bad_shape("layernorm: scalar input");
  const std::int64_t d = nx.shape.back();
  if (ng.shape != Shape{d} || nb.shape != Shape{d})
    bad_shape("layernorm: gain/bias must be (" + std::to_string(d) + "), got " +
              shape_str(ng.shape) + " and " + shape_str(nb.shape));
  if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
  Node n;
  n.op = OpKind::LayerNorm;
  n.in = {x.id, gain.id, bias.id};
  n.shape = nx.shape;
  n.scalar = eps;
  return push(std::move(n));
}

Value Graph::op_gelu(Value a) {
  Node n;
  n.op = OpKind::Gelu;
  n.in = {a.id};
  n.shape = at(a).shape;
  return push(std::move(n));
}

Value Graph::op_softmax(Value a, int axis) {
  const Node& na = at(a);
  if (axis < 0 || axis >= int(na.shape.size()))
    bad_shape("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(na.shape));
  Node n;
  n.op = OpKind::Softmax;
  n.in = {a.id};
  n.shape = na.shape;
  n.axis = axis;
  return push(std::move(n));
}

Value Graph::op_conv2d(Value x, Value w, Value b, int stride, int pad) {
  const Node& nx = at(x);
  const Node& nw = at(w);
  if (nx.shape.size() != 3 || nw.shape.size() != 4)
    bad_shape("conv2d: need input (c,h,w) and weights (f,c,r,s), got " + shape_str(nx.shape) +
              " and " + shape_str(nw.shape));
  if (nw.shape[1] != nx.shape[0])
    bad_shape("conv2d: channel mismatch " + shape_str(nx.shape) + " vs " + shape_str(nw.shape));
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  const int ho = kernels::conv_out_dim(int(nx.shape[1]), int(nw.shape[2]), stride, pad);
  const int wo = kernels::conv_out_dim(int(nx.shape[2]), int(nw.shape[3]), stride, pad);
  if (ho < 1 || wo < 1)
    bad_shape("conv2d: empty output for input " + shape_str(nx.shape) + " kernel " + shape_str(nw.shape));
  Node n;
  n.op = OpKind::Conv2d;
  n.in = {x.id, w.id};
  if (b.valid()) {
    const Node& nb = at(b);
    if (nb.shape != Shape{nw.shape[0]})
      bad_shape("conv2d: bias must be (" + std::to_string(nw.shape[0]) + "), got " + shape_str(nb.shape));
    n.in.push_back(b.id);
  }
  n.shape = {nw.shape[0], ho, wo};
  n.stride = stride;
  n.pad = pad;
  return push(std::move(n));
}

Value Graph::op_relu(Value a) {
  Node n;
  n.op = OpKind::Relu;
  n.in = {a.id};
  n.shape = at(a).shape;
  return push(std::move(n));
}

Value Graph::op_sigmoid(Value a) {
  Node n;
  n.op = OpKind::Sigmoid;
  n.in = {a.id};
  n.shape = at(a).shape;
  return push(std::move(n));
}

// ------------------------------------------------------------------ forward

void Graph::exec_forward(std::int32_t id) {
  Node& n = nodes_[std::size_t(id)];
  const auto& K = kernels::active();
  auto in = [&](int i) -> const Node& { return nodes_[std::size_t(n.in[std::size_t(i)])]; };
  double* out = n.buf.data();

  switch (n.op) {
    case OpKind::Leaf:
      if (!n.bound)
        throw std::runtime_error("forward: placeholder '" + n.name + "' is unbound");
      return;

    case OpKind::MatMul: {
      const Node& a = in(0);
      const Node& b = in(1);
      K.gemm_nn(a.val, b.val, out, int(a.shape[0]), int(a.shape[1]), int(b.shape[1]), false);
      return;
    }

    case OpKind::Add:
      K.add(in(0).val, in(1).val, out, std::size_t(n.numel));
      return;

    case OpKind::ScalarMul:
      K.scale(n.scalar, in(0).val, out, std::size_t(n.numel));
      return;

    case OpKind::Concat: {
      const std::size_t axis = std::size_t(n.axis);
      const std::int64_t outer = dim_prod(n.shape, 0, axis);
      const std::int64_t inner = dim_prod(n.shape, axis + 1, n.shape.size());
      const std::int64_t out_block = n.shape[axis] * inner;
      std::int64_t off = 0;
      for (auto idx : n.in) {
        const Node& src = nodes_[std::size_t(idx)];
        const std::int64_t blk = src.shape[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
          std::memcpy(out + o * out_block + off, src.val + o * blk, std::size_t(blk) * sizeof(double));
        off += blk;
      }
      return;
    }

    case OpKind::Slice: {
      const Node& a = in(0);
      const std::size_t rank = a.shape.size();
      // fast path: prefix-row slice keeping trailing dims whole
      bool rows_only = rank >= 1;
      for (std::size_t d = 1; d < rank; ++d)
        rows_only = rows_only && n.starts[d] == 0 && n.extents[d] == a.shape[d];
      if (rows_only) {
        const std::int64_t inner = dim_prod(a.shape, 1, rank);
        std::memcpy(out, a.val + n.starts[0] * inner, std::size_t(n.numel) * sizeof(double));
        return;
      }
      std::vector<std::int64_t> stride(rank, 1);
      for (std::size_t d = rank - 1; d > 0; --d) stride[d - 1] = stride[d] * a.shape[d];
      std::vector<std::int64_t> idx(rank, 0);
      for (std::int64_t o = 0; o < n.numel; ++o) {
        std::int64_t src = 0;
        for (std::size_t d = 0; d < rank; ++d) src += (n.starts[d] + idx[d]) * stride[d];
        out[o] = a.val[src];
        for (std::size_t d = rank; d-- > 0;) {
          if (++idx[d] < n.extents[d]) break;
          idx[d] = 0;
        }
      }
      return;
    }

    case OpKind::Reshape:
      std::memcpy(out, in(0).val, std::size_t(n.numel) * sizeof(double));
      return;

    case OpKind::Transpose: {
      const Node& a = in(0);
      const std::int64_t r = a.shape[0], c = a.shape[1];
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = a.val[i * c + j];
      return;
    }

    case OpKind::LayerNorm: {
      const Node& x = in(0);
      const Node& g = in(1);
      const Node& b = in(2);
      const std::int64_t d = n.shape.back();
      const std::int64_t rows = n.numel / d;
      n.aux.assign(std::size_t(n.numel + rows), 0.0);
      double* xhat = n.aux.data();
      double* inv_std = n.aux.data() + n.numel;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.val + r * d;
        double* xh = xhat + r * d;
        const double mean = K.sum(xr, std::size_t(d)) / double(d);
        for (std::int64_t j = 0; j < d; ++j) xh[j] = xr[j] - mean;
        double var = K.dot(xh, xh, std::size_t(d)) / double(d);
        if (var < 0.0) var = 0.0;
        const double s = 1.0 / std::sqrt(var + n.scalar);
        inv_std[r] = s;
        double* yr = out + r * d;
        for (std::int64_t j = 0; j < d; ++j) {
          xh[j] *= s;
          yr[j] = xh[j] * g.val[j] + b.val[j];
        }
      }
      return;
    }

    case OpKind::Gelu:
      if (n.needs_grad) n.aux.assign(std::size_t(n.numel), 0.0);
      K.gelu(in(0).val, out, n.needs_grad ? n.aux.data() : nullptr, std::size_t(n.numel));
      return;

    case OpKind::Softmax: {
      const Node& a = in(0);
      const std::size_t axis = std::size_t(n.axis);
      const std::int64_t outer = dim_prod(n.shape, 0, axis);
      const std::int64_t len = n.shape[axis];
      const std::int64_t inner = dim_prod(n.shape, axis + 1, n.shape.size());
      if (inner == 1) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* xr = a.val + o * len;
          double* yr = out + o * len;
          const double m = K.max_value(xr, std::size_t(len));
          for (std::int64_t j = 0; j < len; ++j) yr[j] = xr[j] - m;
          K.vexp(yr, yr, std::size_t(len));
          const double denom = K.sum(yr, std::size_t(len));
          K.scale(1.0 / denom, yr, yr, std::size_t(len));
        }
      } else {
        std::vector<double> tmp(static_cast<std::size_t>(len));
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            for (std::int64_t j = 0; j < len; ++j) tmp[std::size_t(j)] = a.val[(o * len + j) * inner + i];
            const double m = K.max_value(tmp.data(), std::size_t(len));
            double denom = 0.0;
            for (std::int64_t j = 0; j < len; ++j) {
              tmp[std::size_t(j)] = std::exp(tmp[std::size_t(j)] - m);
              denom += tmp[std::size_t(j)];
            }
            for (std::int64_t j = 0; j < len; ++j) out[(o * len + j) * inner + i] = tmp[std::size_t(j)] / denom;
          }
      }
      return;
    }

    case OpKind::Conv2d: {
      const Node& x = in(0);
      const Node& w = in(1);
      kernels::ConvDims d{int(x.shape[0]), int(x.shape[1]), int(x.shape[2]),
                          int(w.shape[0]), int(w.shape[2]), int(w.shape[3]),
                          n.stride, n.pad, int(n.shape[1]), int(n.shape[2])};
      K.conv2d(x.val, w.val, n.in.size() == 3 ? in(2).val : nullptr, out, d);
      return;
    }

    case OpKind::Relu:
      K.relu(in(0).val, out, std::size_t(n.numel));
      return;

    case OpKind::Sigmoid:
      K.sigmoid(in(0).val, out, std::size_t(n.numel));
      return;
  }
}

void Graph::forward() {
  for (std::int32_t id = 0; id < std::int32_t(nodes_.size()); ++id) exec_forward(id);
  forward_done_ = true;
}

std::map<std::string, Tensor> Graph::evaluate(const std::map<std::string, Tensor>& inputs) {
  std::size_t used = 0;
  for (auto& n : nodes_) {
    if (!n.is_placeholder) continue;
    auto it = inputs.find(n.name);
    if (it == inputs.end())
      throw std::invalid_argument("evaluate: missing input '" + n.name + "'");
    if (it->second.shape != n.shape)
      bad_shape("evaluate: input '" + n.name + "' has shape " + shape_str(it->second.shape) +
                ", expected " + shape_str(n.shape));
    n.buf = it->second.data;
    n.val = n.buf.data();
    n.bound = true;
    ++used;
  }
  if (used != inputs.size())
    throw std::invalid_argument("evaluate: got " + std::to_string(inputs.size()) +
                                " inputs but the graph has " + std::to_string(used) + " placeholders");
  forward();
  std::map<std::string, Tensor> out;
  for (auto& [name, id] : outputs_) {
    const Node& n = nodes_[std::size_t(id)];
    out[name] = Tensor(n.shape, std::vector<double>(n.val, n.val + n.numel));
  }
  return out;
}

// ------------------------------------------------------------------ backward

void Graph::prepare_grads() {
  for (auto& n : nodes_)
    if (n.needs_grad)
      n.grad.assign(std::size_t(n.numel), 0.0);
    else
      n.grad.clear();
}

void Graph::exec_backward(std::int32_t id) {
  Node& n = nodes_[std::size_t(id)];
  if (!n.needs_grad || n.op == OpKind::Leaf) return;
  const auto& K = kernels::active();
  const double* g = n.grad.data();
  auto in = [&](int i) -> Node& { return nodes_[std::size_t(n.in[std::size_t(i)])]; };
  auto wants = [&](int i) { return in(i).needs_grad; };

  switch (n.op) {
    case OpKind::Leaf:
      return;

    case OpKind::MatMul: {
      Node& a = in(0);
      Node& b = in(1);
      const int m = int(a.shape[0]), k = int(a.shape[1]), c = int(b.shape[1]);
      // dA = G * B^T, dB = A^T * G
      if (a.needs_grad) K.gemm_nt(g, b.val, a.grad.data(), m, c, k, true);
      if (b.needs_grad) K.gemm_tn(a.val, g, b.grad.data(), k, m, c, true);
      return;
    }

    case OpKind::Add:
      if (wants(0)) K.axpy(1.0, g, in(0).grad.data(), std::size_t(n.numel));
      if (wants(1)) K.axpy(1.0, g, in(1).grad.data(), std::size_t(n.numel));
      return;

    case OpKind::ScalarMul:
      if (wants(0)) K.axpy(n.scalar, g, in(0).grad.data(), std::size_t(n.numel));
      return;

    case OpKind::Concat: {
      const std::size_t axis = std::size_t(n.axis);
      const std::int64_t outer = dim_prod(n.shape, 0, axis);
      const std::int64_t inner = dim_prod(n.shape, axis + 1, n.shape.size());
      const std::int64_t out_block = n.shape[axis] * inner;
      std::int64_t off = 0;
      for (auto idx : n.in) {
        Node& src = nodes_[std::size_t(idx)];
        const std::int64_t blk = src.shape[axis] * inner;
        if (src.needs_grad)
          for (std::int64_t o = 0; o < outer; ++o)
            K.axpy(1.0, g + o * out_block + off, src.grad.data() + o * blk, std::size_t(blk));
        off += blk;
      }
      return;
    }

    case OpKind::Slice: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const std::size_t rank = a.shape.size();
      bool rows_only = rank >= 1;
      for (std::size_t d = 1; d < rank; ++d)
        rows_only = rows_only && n.starts[d] == 0 && n.extents[d] == a.shape[d];
      if (rows_only) {
        const std::int64_t inner = dim_prod(a.shape, 1, rank);
        K.axpy(1.0, g, a.grad.data() + n.starts[0] * inner, std::size_t(n.numel));
        return;
      }
      std::vector<std::int64_t> stride(rank, 1);
      for (std::size_t d = rank - 1; d > 0; --d) stride[d - 1] = stride[d] * a.shape[d];
      std::vector<std::int64_t> idx(rank, 0);
      for (std::int64_t o = 0; o < n.numel; ++o) {
        std::int64_t src = 0;
        for (std::size_t d = 0; d < rank; ++d) src += (n.starts[d] + idx[d]) * stride[d];
        a.grad[std::size_t(src)] += g[o];
        for (std::size_t d = rank; d-- > 0;) {
          if (++idx[d] < n.extents[d]) break;
          idx[d] = 0;
        }
      }
      return;
    }

    case OpKind::Reshape:
      if (wants(0)) K.axpy(1.0, g, in(0).grad.data(), std::size_t(n.numel));
      return;

    case OpKind::Transpose: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const std::int64_t r = a.shape[0], c = a.shape[1];
      for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t i = 0; i < r; ++i) a.grad[std::size_t(i * c + j)] += g[j * r + i];
      return;
    }

    case OpKind::LayerNorm: {
      Node& x = in(0);
      Node& gn = in(1);
      Node& bn = in(2);
      const std::int64_t d = n.shape.back();
      const std::int64_t rows = n.numel / d;
      const double* xhat = n.aux.data();
      const double* inv_std = n.aux.data() + n.numel;
      std::vector<double> dxh(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gr = g + r * d;
        const double* xh = xhat + r * d;
        if (gn.needs_grad)
          for (std::int64_t j = 0; j < d; ++j) gn.grad[std::size_t(j)] += gr[j] * xh[j];
        if (bn.needs_grad)
          for (std::int64_t j = 0; j < d; ++j) bn.grad[std::size_t(j)] += gr[j];
        if (!x.needs_grad) continue;
        for (std::int64_t j = 0; j < d; ++j) dxh[std::size_t(j)] = gr[j] * gn.val[j];
        const double m1 = K.sum(dxh.data(), std::size_t(d)) / double(d);
        const double m2 = K.dot(dxh.data(), xh, std::size_t(d)) / double(d);
        double* dx = x.grad.data() + r * d;
        const double s = inv_std[r];
        for (std::int64_t j = 0; j < d; ++j) dx[j] += s * (dxh[std::size_t(j)] - m1 - xh[j] * m2);
      }
      return;
    }

    case OpKind::Gelu: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const double* dydx = n.aux.data();
      double* da = a.grad.data();
      for (std::int64_t i = 0; i < n.numel; ++i) da[i] += g[i] * dydx[i];
      return;
    }

    case OpKind::Softmax: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const std::size_t axis = std::size_t(n.axis);
      const std::int64_t outer = dim_prod(n.shape, 0, axis);
      const std::int64_t len = n.shape[axis];
      const std::int64_t inner = dim_prod(n.shape, axis + 1, n.shape.size());
      const double* y = n.val;
      if (inner == 1) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* yr = y + o * len;
          const double* gr = g + o * len;
          double* da = a.grad.data() + o * len;
          const double t = K.dot(gr, yr, std::size_t(len));
          for (std::int64_t j = 0; j < len; ++j) da[j] += yr[j] * (gr[j] - t);
        }
      } else {
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            double t = 0.0;
            for (std::int64_t j = 0; j < len; ++j) {
              const std::int64_t ix = (o * len + j) * inner + i;
              t += g[ix] * y[ix];
            }
            for (std::int64_t j = 0; j < len; ++j) {
              const std::int64_t ix = (o * len + j) * inner + i;
              a.grad[std::size_t(ix)] += y[ix] * (g[ix] - t);
            }
          }
      }
      return;
    }

    case OpKind::Conv2d: {
      Node& x = in(0);
      Node& w = in(1);
      kernels::ConvDims d{int(x.shape[0]), int(x.shape[1]), int(x.shape[2]),
                          int(w.shape[0]), int(w.shape[2]), int(w.shape[3]),
                          n.stride, n.pad, int(n.shape[1]), int(n.shape[2])};
      if (x.needs_grad) K.conv2d_dx(g, w.val, x.grad.data(), d);
      const bool has_bias = n.in.size() == 3;
      double* dbias = has_bias && in(2).needs_grad ? in(2).grad.data() : nullptr;
      if (w.needs_grad)
        K.conv2d_dw(g, x.val, w.grad.data(), dbias, d);
      else if (dbias) {
        for (int f = 0; f < d.cout; ++f)
          dbias[f] += K.sum(g + std::size_t(f) * d.ho * d.wo, std::size_t(d.ho) * d.wo);
      }
      return;
    }

    case OpKind::Relu: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const double* x = a.val;
      double* da = a.grad.data();
      for (std::int64_t i = 0; i < n.numel; ++i)
        if (x[i] > 0.0) da[i] += g[i];
      return;
    }

    case OpKind::Sigmoid: {
      Node& a = in(0);
      if (!a.needs_grad) return;
      const double* y = n.val;
      double* da = a.grad.data();
      for (std::int64_t i = 0; i < n.numel; ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
  }
}

void Graph::backward(Value out) {
  Node& on = at(out);
  if (on.numel != 1)
    bad_shape("backward: output must be scalar, got " + shape_str(on.shape));
  if (!forward_done_) forward();
  prepare_grads();
  if (on.needs_grad) {
    on.grad[0] = 1.0;
    for (std::int32_t id = out.id; id >= 0; --id) exec_backward(id);
  }
  flush_leaf_grads(1.0);
}

void Graph::backward_seeded(const std::vector<std::pair<Value, const std::vector<double>*>>& seeds) {
  if (!forward_done_) forward();
  prepare_grads();
  std::int32_t top = -1;
  for (auto& [v, seed] : seeds) {
    Node& n = at(v);
    if (std::int64_t(seed->size()) != n.numel)
      bad_shape("backward_seeded: seed size " + std::to_string(seed->size()) + " for node of " +
                std::to_string(n.numel) + " elements");
    if (!n.needs_grad) continue;  // no trainable ancestors
    for (std::int64_t i = 0; i < n.numel; ++i) n.grad[std::size_t(i)] += (*seed)[std::size_t(i)];
    top = std::max(top, v.id);
  }
  for (std::int32_t id = top; id >= 0; --id) exec_backward(id);
}

void Graph::flush_leaf_grads(double scale) {
  for (auto& n : nodes_) {
    if (n.op != OpKind::Leaf || !n.requires_grad || !n.external || n.grad.empty()) continue;
    auto& acc = n.external->ensure_grad();
    kernels::active().axpy(scale, n.grad.data(), acc.data(), acc.size());
  }
}

double Graph::finite_diff_check(Value out, Value leaf, double h) {
  if (h == 0.0) throw std::invalid_argument("finite_diff_check: h must be nonzero");
  Node& on = at(out);
  if (on.numel != 1)
    bad_shape("finite_diff_check: output must be scalar, got " + shape_str(on.shape));
  Node& ln = at(leaf);
  if (ln.op != OpKind::Leaf)
    throw std::invalid_argument("finite_diff_check: target is not a leaf");

  if (!forward_done_) forward();
  prepare_grads();
  std::vector<double> ad(std::size_t(ln.numel), 0.0);
  if (on.needs_grad) {
    on.grad[0] = 1.0;
    for (std::int32_t id = out.id; id >= 0; --id) exec_backward(id);
    if (ln.needs_grad) ad = ln.grad;
  }

  double* data = ln.external ? ln.external->data.data() : ln.buf.data();
  double max_err = 0.0;
  for (std::int64_t i = 0; i < ln.numel; ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    forward();
    const double fp = on.val[0];
    data[i] = saved - h;
    forward();
    const double fm = on.val[0];
    data[i] = saved;
    const double cd = (fp - fm) / (2.0 * h);
    const double err = std::abs(ad[std::size_t(i)] - cd) / std::max(1.0, std::abs(cd));
    max_err = std::max(max_err, err);
  }
  forward();  // leave values consistent
  return max_err;
}

std::span<const double> Graph::value(Value v) const {
  const Node& n = at(v);
  return {n.val, std::size_t(n.numel)};
}

std::span<const double> Graph::grad_of(Value v) const {
  const Node& n = at(v);
  return {n.grad.data(), n.grad.size()};
}

const Shape& Graph::shape_of(Value v) const { return at(v).shape; }

// ------------------------------------------------------------------ helpers

Value row_broadcast(Value row, std::int64_t rows) {
  Graph& g = *row.g;
  const Shape s = row.shape();  // copy: pushing nodes may reallocate the graph
  if (s.size() != 1) bad_shape("row_broadcast: need rank-1 input, got " + shape_str(s));
  Value ones = g.leaf(Tensor::full({rows, 1}, 1.0));
  return matmul(ones, reshape(row, {1, s[0]}));
}

Value add_row_bias(Value x, Value bias) {
  const Shape s = x.shape();  // copy, as above
  if (s.size() != 2) bad_shape("add_row_bias: need rank-2 input, got " + shape_str(s));
  return add(x, row_broadcast(bias, s[0]));
}

Value scalar_sum(Value x) {
  Graph& g = *x.g;
  const std::int64_t n = x.numel();
  Value flat = reshape(x, {1, n});
  Value ones = g.leaf(Tensor::full({n, 1}, 1.0));
  return matmul(flat, ones);
}

std::map<std::string, Tensor> evaluate(Graph& g, const std::map<std::string, Tensor>& inputs) {
  return g.evaluate(inputs);
}

void grad(Graph& g, Value scalar_out) { g.backward(scalar_out); }

double finite_diff_check(Graph& g, Value out, Value leaf, double h) {
  return g.finite_diff_check(out, leaf, h);
}

}  // namespace bat
