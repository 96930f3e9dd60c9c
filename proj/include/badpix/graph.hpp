#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/rng.hpp"
#include "badpix/tensor.hpp"

namespace badpix {

enum class Op {
  input,
  param,
  dense,        // x [.., in], w [in, out], b [out]
  conv2d,       // x [Ci,H,W], k [Co,Ci,kh,kw], b [Co]
  upsample2x,   // nearest neighbor, [C,H,W] -> [C,2H,2W]
  relu,
  sigmoid,
  add,          // same shape
  concat0,      // concat along axis 0
  matmul,       // a [.., M, K] x b [.., K, N]
  permute,      // precomputed gather (covers transposes)
  reshape,
  patchify,     // [H,W] -> [T, p*p]
  unpatchify,   // [T, p*p] -> [H,W]
  softmax_last,
  layernorm_last,  // x [.., n], gain [n], bias [n]
  row_replace,     // x [T,D] with row r := v [D]
  scale,
  sum_all,
  mse_loss,          // pred, target -> [1]
  bce_dice_loss,     // scores, target -> [1]
  masked_nmse_loss,  // pred, act, mask -> [1]
};

enum class InitKind { none, kaiming_uniform, normal_002, zeros, ones };

/// Reverse-mode differentiation tape over statically shaped tensors.
/// Nodes are appended in topological order; forward() evaluates in order,
/// backward() walks the same list in reverse. Parameter gradients
/// accumulate across backward() calls until zero_grad(), which is how
/// minibatches are summed (fixed order, reproducible).
template <typename T>
class Graph {
 public:
  struct Node {
    Op op = Op::input;
    std::vector<int> in;
    Tensor<T> val;
    Tensor<T> grad;
    std::string name;
    bool trainable = false;
    bool needs_grad = false;
    bool value_set = false;  // inputs only
    InitKind init = InitKind::none;
    int fan_in = 0;
    // op attributes
    int stride = 1, pad = 0;
    int attr_i = 0;  // patch size / row index
    double attr_a = 0.0, attr_b = 0.0;
    std::vector<std::int64_t> index_map;
  };

  // ------------------------------------------------------------------ leaves

  int add_input(const std::string& name, std::vector<int> shape,
                bool needs_grad = false) {
    Node n;
    n.op = Op::input;
    n.name = name;
    n.val = Tensor<T>(shape);
    n.grad = Tensor<T>(shape);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  int add_param(const std::string& name, std::vector<int> shape, InitKind init,
                int fan_in = 0) {
    Node n;
    n.op = Op::param;
    n.name = name;
    n.val = Tensor<T>(shape);
    n.grad = Tensor<T>(shape);
    n.trainable = true;
    n.needs_grad = true;
    n.init = init;
    n.fan_in = fan_in;
    param_ids_.push_back(static_cast<int>(nodes_.size()));
    return push(std::move(n));
  }

  /// Seeds every parameter in creation order from one generator, so equal
  /// seeds give bit-identical initial parameters.
  void init_params(std::uint64_t seed) {
    Rng rng = make_rng(derive_seed(seed, 0x1417));
    for (int id : param_ids_) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      switch (n.init) {
        case InitKind::kaiming_uniform: {
          const double limit = std::sqrt(6.0 / std::max(1, n.fan_in));
          for (auto& x : n.val.v)
            x = static_cast<T>(uniform(rng, -limit, limit));
          break;
        }
        case InitKind::normal_002:
          for (auto& x : n.val.v) x = static_cast<T>(normal(rng, 0.0, 0.02));
          break;
        case InitKind::ones:
          n.val.fill(T(1));
          break;
        case InitKind::zeros:
        case InitKind::none:
          n.val.zero();
          break;
      }
    }
  }

  // --------------------------------------------------------------------- ops

  int dense(int x, int w, int b, const std::string& name = "") {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    const auto& bs = shape(b);
    if (ws.size() != 2 || bs.size() != 1 || bs[0] != ws[1])
      throw DataError(DataFault::dimension_mismatch,
                      "dense '" + name + "': weight/bias shapes inconsistent");
    if (xs.empty() || xs.back() != ws[0])
      throw DataError(DataFault::dimension_mismatch,
                      "dense '" + name + "': input features " +
                          shape_str(xs) + " do not match weight " +
                          shape_str(ws));
    std::vector<int> os = xs;
    os.back() = ws[1];
    return push(make(Op::dense, {x, w, b}, os, name));
  }

  int conv2d(int x, int k, int b, int stride, int pad,
             const std::string& name = "") {
    const auto& xs = shape(x);
    const auto& ks = shape(k);
    const auto& bs = shape(b);
    if (xs.size() != 3 || ks.size() != 4 || bs.size() != 1)
      throw DataError(DataFault::dimension_mismatch,
                      "conv2d '" + name + "': rank mismatch");
    if (ks[1] != xs[0] || bs[0] != ks[0])
      throw DataError(DataFault::dimension_mismatch,
                      "conv2d '" + name + "': channels " + shape_str(xs) +
                          " vs kernel " + shape_str(ks));
    const int ho = (xs[1] + 2 * pad - ks[2]) / stride + 1;
    const int wo = (xs[2] + 2 * pad - ks[3]) / stride + 1;
    if (ho <= 0 || wo <= 0)
      throw DataError(DataFault::dimension_mismatch,
                      "conv2d '" + name + "': empty output");
    Node n = make(Op::conv2d, {x, k, b}, {ks[0], ho, wo}, name);
    n.stride = stride;
    n.pad = pad;
    return push(std::move(n));
  }

  int upsample2x(int x, const std::string& name = "") {
    const auto& xs = shape(x);
    if (xs.size() != 3)
      throw DataError(DataFault::dimension_mismatch,
                      "upsample2x '" + name + "': expected [C,H,W]");
    return push(make(Op::upsample2x, {x}, {xs[0], xs[1] * 2, xs[2] * 2}, name));
  }

  int relu(int x, const std::string& name = "") {
    return push(make(Op::relu, {x}, shape(x), name));
  }
  int sigmoid(int x, const std::string& name = "") {
    return push(make(Op::sigmoid, {x}, shape(x), name));
  }

  int add(int a, int b, const std::string& name = "") {
    if (shape(a) != shape(b))
      throw DataError(DataFault::dimension_mismatch,
                      "add '" + name + "': shape mismatch " +
                          shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    return push(make(Op::add, {a, b}, shape(a), name));
  }

  int concat0(int a, int b, const std::string& name = "") {
    auto as = shape(a);
    auto bs = shape(b);
    if (as.size() != bs.size() || as.empty())
      throw DataError(DataFault::dimension_mismatch,
                      "concat0 '" + name + "': rank mismatch");
    for (std::size_t i = 1; i < as.size(); ++i)
      if (as[i] != bs[i])
        throw DataError(DataFault::dimension_mismatch,
                        "concat0 '" + name + "': trailing dims differ");
    auto os = as;
    os[0] += bs[0];
    return push(make(Op::concat0, {a, b}, os, name));
  }

  int matmul(int a, int b, const std::string& name = "") {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != bs.size() || as.size() < 2 || as.size() > 3)
      throw DataError(DataFault::dimension_mismatch,
                      "matmul '" + name + "': rank must be 2 or 3");
    if (as.size() == 3 && as[0] != bs[0])
      throw DataError(DataFault::dimension_mismatch,
                      "matmul '" + name + "': batch dims differ");
    const int K = as.back();
    if (bs[bs.size() - 2] != K)
      throw DataError(DataFault::dimension_mismatch,
                      "matmul '" + name + "': inner dims " + shape_str(as) +
                          " vs " + shape_str(bs));
    std::vector<int> os = as;
    os.back() = bs.back();
    return push(make(Op::matmul, {a, b}, os, name));
  }

  /// General axis permutation, materialized as a precomputed gather.
  int permute(int x, const std::vector<int>& perm, const std::string& name = "") {
    const auto& xs = shape(x);
    if (perm.size() != xs.size())
      throw DataError(DataFault::dimension_mismatch,
                      "permute '" + name + "': perm rank mismatch");
    std::vector<int> os(xs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) os[i] = xs[perm[i]];
    Node n = make(Op::permute, {x}, os, name);
    // index_map[out_flat] = in_flat
    const std::size_t total = n.val.v.size();
    n.index_map.resize(total);
    std::vector<int> in_strides(xs.size(), 1);
    for (int i = static_cast<int>(xs.size()) - 2; i >= 0; --i)
      in_strides[i] = in_strides[i + 1] * xs[i + 1];
    std::vector<int> oidx(os.size(), 0);
    for (std::size_t f = 0; f < total; ++f) {
      std::int64_t src = 0;
      for (std::size_t d = 0; d < os.size(); ++d)
        src += static_cast<std::int64_t>(oidx[d]) * in_strides[perm[d]];
      n.index_map[f] = src;
      for (int d = static_cast<int>(os.size()) - 1; d >= 0; --d) {
        if (++oidx[d] < os[d]) break;
        oidx[d] = 0;
      }
    }
    return push(std::move(n));
  }

  int transpose_last2(int x, const std::string& name = "") {
    const auto& xs = shape(x);
    std::vector<int> perm(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) perm[i] = static_cast<int>(i);
    std::swap(perm[xs.size() - 1], perm[xs.size() - 2]);
    return permute(x, perm, name);
  }

  int reshape(int x, std::vector<int> new_shape, const std::string& name = "") {
    if (Tensor<T>::numel_of(new_shape) != Tensor<T>::numel_of(shape(x)))
      throw DataError(DataFault::dimension_mismatch,
                      "reshape '" + name + "': element count differs");
    return push(make(Op::reshape, {x}, std::move(new_shape), name));
  }

  /// [H,W] -> [T, p*p]; tokens in row-major token order.
  int patchify(int x, int p, const std::string& name = "") {
    const auto& xs = shape(x);
    if (xs.size() != 2 || xs[0] % p != 0 || xs[1] % p != 0)
      throw DataError(DataFault::dimension_mismatch,
                      "patchify '" + name + "': " + shape_str(xs) +
                          " not divisible by patch " + std::to_string(p));
    const int gh = xs[0] / p, gw = xs[1] / p;
    Node n = make(Op::patchify, {x}, {gh * gw, p * p}, name);
    n.attr_i = p;
    n.index_map.resize(n.val.v.size());
    std::size_t f = 0;
    for (int t = 0; t < gh * gw; ++t) {
      const int tr = t / gw, tc = t % gw;
      for (int k = 0; k < p * p; ++k)
        n.index_map[f++] =
            static_cast<std::int64_t>(tr * p + k / p) * xs[1] + tc * p + k % p;
    }
    return push(std::move(n));
  }

  /// [T, p*p] -> [H,W]; inverse of patchify.
  int unpatchify(int x, int height, int width, int p,
                 const std::string& name = "") {
    const auto& xs = shape(x);
    const int gh = height / p, gw = width / p;
    if (xs.size() != 2 || height % p != 0 || width % p != 0 ||
        xs[0] != gh * gw || xs[1] != p * p)
      throw DataError(DataFault::dimension_mismatch,
                      "unpatchify '" + name + "': token shape " +
                          shape_str(xs) + " does not fit " +
                          std::to_string(width) + "x" + std::to_string(height));
    Node n = make(Op::unpatchify, {x}, {height, width}, name);
    n.attr_i = p;
    n.index_map.resize(n.val.v.size());
    std::size_t f = 0;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const int t = (r / p) * gw + (c / p);
        const int k = (r % p) * p + (c % p);
        n.index_map[f++] = static_cast<std::int64_t>(t) * (p * p) + k;
      }
    }
    return push(std::move(n));
  }

  int softmax_last(int x, const std::string& name = "") {
    return push(make(Op::softmax_last, {x}, shape(x), name));
  }

  int layernorm_last(int x, int gain, int bias, const std::string& name = "") {
    const auto& xs = shape(x);
    const int n_feat = xs.back();
    if (shape(gain) != std::vector<int>{n_feat} ||
        shape(bias) != std::vector<int>{n_feat})
      throw DataError(DataFault::dimension_mismatch,
                      "layernorm '" + name + "': gain/bias must be [" +
                          std::to_string(n_feat) + "]");
    Node n = make(Op::layernorm_last, {x, gain, bias}, xs, name);
    n.attr_a = 1e-5;
    return push(std::move(n));
  }

  int row_replace(int x, int v, int row, const std::string& name = "") {
    const auto& xs = shape(x);
    if (xs.size() != 2 || shape(v) != std::vector<int>{xs[1]})
      throw DataError(DataFault::dimension_mismatch,
                      "row_replace '" + name + "': need x [T,D], v [D]");
    if (row < 0 || row >= xs[0])
      throw DataError(DataFault::out_of_bounds,
                      "row_replace '" + name + "': row outside tensor");
    Node n = make(Op::row_replace, {x, v}, xs, name);
    n.attr_i = row;
    return push(std::move(n));
  }

  int scale(int x, double factor, const std::string& name = "") {
    Node n = make(Op::scale, {x}, shape(x), name);
    n.attr_a = factor;
    return push(std::move(n));
  }

  int sum_all(int x, const std::string& name = "") {
    return push(make(Op::sum_all, {x}, {1}, name));
  }

  int mse_loss(int pred, int target, const std::string& name = "") {
    if (shape(pred) != shape(target))
      throw DataError(DataFault::dimension_mismatch,
                      "mse_loss '" + name + "': shape mismatch");
    return push(make(Op::mse_loss, {pred, target}, {1}, name));
  }

  /// w_bce * BCE(scores, target) + w_dice * soft-dice loss, eps = 1.
  /// Scores are clamped to [1e-7, 1-1e-7] inside the kernel.
  int bce_dice_loss(int scores, int target, double w_bce, double w_dice,
                    const std::string& name = "") {
    if (shape(scores) != shape(target))
      throw DataError(DataFault::dimension_mismatch,
                      "bce_dice_loss '" + name + "': shape mismatch");
    Node n = make(Op::bce_dice_loss, {scores, target}, {1}, name);
    n.attr_a = w_bce;
    n.attr_b = w_dice;
    return push(std::move(n));
  }

  /// sum_mask (pred-act)^2 / (sum_mask act^2 + 1e-8); gradient w.r.t. pred.
  int masked_nmse_loss(int pred, int act, int mask,
                       const std::string& name = "") {
    if (shape(pred) != shape(act) || shape(pred) != shape(mask))
      throw DataError(DataFault::dimension_mismatch,
                      "masked_nmse_loss '" + name + "': shape mismatch");
    return push(make(Op::masked_nmse_loss, {pred, act, mask}, {1}, name));
  }

  // --------------------------------------------------------------- execution

  void set_input(int id, const std::vector<T>& data) {
    Node& n = node(id);
    if (n.op != Op::input)
      throw DataError(DataFault::bad_value,
                      "set_input: node '" + n.name + "' is not an input");
    if (data.size() != n.val.v.size())
      throw DataError(DataFault::dimension_mismatch,
                      "input '" + n.name + "': expected " +
                          std::to_string(n.val.v.size()) + " values, got " +
                          std::to_string(data.size()));
    n.val.v = data;
    n.value_set = true;
  }

  template <typename U>
  void set_input_cast(int id, const std::vector<U>& data) {
    Node& n = node(id);
    if (n.op != Op::input)
      throw DataError(DataFault::bad_value,
                      "set_input: node '" + n.name + "' is not an input");
    if (data.size() != n.val.v.size())
      throw DataError(DataFault::dimension_mismatch,
                      "input '" + n.name + "': size mismatch");
    for (std::size_t i = 0; i < data.size(); ++i)
      n.val.v[i] = static_cast<T>(data[i]);
    n.value_set = true;
  }

  /// Evaluates nodes [0, upto]; -1 means the whole graph.
  void forward(int upto = -1) {
    const int last = (upto < 0) ? static_cast<int>(nodes_.size()) - 1 : upto;
    for (int id = 0; id <= last; ++id) eval(id);
    forward_upto_ = last;
  }

  /// Reverse sweep from a scalar loss node. Parameter gradients accumulate;
  /// every other gradient buffer is reset first.
  void backward(int loss) {
    Node& ln = node(loss);
    if (ln.val.numel() != 1)
      throw NumericError("backward: loss node '" + ln.name +
                         "' is not scalar");
    if (forward_upto_ < loss)
      throw NumericError("backward: forward() has not evaluated the loss");
    for (auto& n : nodes_)
      if (!n.trainable) n.grad.zero();
    ln.grad.v[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.op == Op::input || n.op == Op::param) continue;
      propagate(id);
    }
  }

  void zero_grad() {
    for (int id : param_ids_) node(id).grad.zero();
  }

  /// Requests gradients for a leaf (typically an input) after the graph is
  /// built, re-propagating the needs-grad flag downstream.
  void mark_needs_grad(int id) {
    node(id).needs_grad = true;
    for (std::size_t i = static_cast<std::size_t>(id) + 1; i < nodes_.size();
         ++i) {
      Node& n = nodes_[i];
      if (n.needs_grad) continue;
      for (int in : n.in)
        if (nodes_[static_cast<std::size_t>(in)].needs_grad) {
          n.needs_grad = true;
          break;
        }
    }
  }

  // ------------------------------------------------------------------ access

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<int>& shape(int id) const { return node(id).val.shape; }
  Tensor<T>& value(int id) { return node(id).val; }
  const Tensor<T>& value(int id) const { return node(id).val; }
  Tensor<T>& grad(int id) { return node(id).grad; }
  const std::vector<int>& params() const { return param_ids_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (int id : param_ids_) n += node(id).val.numel();
    return n;
  }

  /// Multiply-accumulate count of one forward pass; counts dense, conv and
  /// matmul contractions only.
  std::int64_t mac_count() const {
    std::int64_t macs = 0;
    for (const auto& n : nodes_) {
      if (n.op == Op::dense) {
        const auto& xs = nodes_[n.in[0]].val.shape;
        const auto& ws = nodes_[n.in[1]].val.shape;
        const std::int64_t rows = Tensor<T>::numel_of(xs) / ws[0];
        macs += rows * ws[0] * ws[1];
      } else if (n.op == Op::conv2d) {
        const auto& ks = nodes_[n.in[1]].val.shape;
        macs += static_cast<std::int64_t>(n.val.shape[1]) * n.val.shape[2] *
                ks[0] * ks[1] * ks[2] * ks[3];
      } else if (n.op == Op::matmul) {
        const auto& as = nodes_[n.in[0]].val.shape;
        const auto& bs = nodes_[n.in[1]].val.shape;
        const std::int64_t batch = (as.size() == 3) ? as[0] : 1;
        macs += batch * static_cast<std::int64_t>(as[as.size() - 2]) *
                as.back() * bs.back();
      }
    }
    return macs;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<int> param_ids_;
  int forward_upto_ = -1;

  Node make(Op op, std::vector<int> in, std::vector<int> out_shape,
            const std::string& name) {
    Node n;
    n.op = op;
    n.in = std::move(in);
    n.val = Tensor<T>(out_shape);
    n.grad = Tensor<T>(std::move(out_shape));
    n.name = name;
    for (int i : n.in) n.needs_grad = n.needs_grad || node(i).needs_grad;
    return n;
  }

  int push(Node&& n) {
    if (n.name.empty())
      n.name = "node#" + std::to_string(nodes_.size());
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static T sigmoid_scalar(T x) {
    if (x >= T(0)) {
      const T e = std::exp(-x);
      return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  // ------------------------------------------------------------ forward eval

  void eval(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::input:
        if (!n.value_set)
          throw DataError(DataFault::empty_input,
                          "input '" + n.name + "' has no value");
        break;
      case Op::param:
        break;
      case Op::dense: {
        const Tensor<T>& x = nodes_[n.in[0]].val;
        const Tensor<T>& w = nodes_[n.in[1]].val;
        const Tensor<T>& b = nodes_[n.in[2]].val;
        const int in_f = w.shape[0], out_f = w.shape[1];
        const std::int64_t rows = x.numel() / in_f;
        for (std::int64_t r = 0; r < rows; ++r) {
          T* y = n.val.v.data() + r * out_f;
          for (int o = 0; o < out_f; ++o) y[o] = b.v[o];
          const T* xr = x.v.data() + r * in_f;
          for (int k = 0; k < in_f; ++k) {
            const T xv = xr[k];
            const T* wk = w.v.data() + static_cast<std::size_t>(k) * out_f;
            for (int o = 0; o < out_f; ++o) y[o] += xv * wk[o];
          }
        }
        break;
      }
      case Op::conv2d:
        conv_forward(n);
        break;
      case Op::upsample2x: {
        const Tensor<T>& x = nodes_[n.in[0]].val;
        const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < 2 * H; ++y) {
            const T* row = x.v.data() + (static_cast<std::size_t>(c) * H + y / 2) * W;
            T* out = n.val.v.data() +
                     (static_cast<std::size_t>(c) * 2 * H + y) * 2 * W;
            for (int xx = 0; xx < 2 * W; ++xx) out[xx] = row[xx / 2];
          }
        break;
      }
      case Op::relu: {
        const auto& x = nodes_[n.in[0]].val.v;
        for (std::size_t i = 0; i < x.size(); ++i)
          n.val.v[i] = x[i] > T(0) ? x[i] : T(0);
        break;
      }
      case Op::sigmoid: {
        const auto& x = nodes_[n.in[0]].val.v;
        for (std::size_t i = 0; i < x.size(); ++i)
          n.val.v[i] = sigmoid_scalar(x[i]);
        break;
      }
      case Op::add: {
        const auto& a = nodes_[n.in[0]].val.v;
        const auto& b = nodes_[n.in[1]].val.v;
        for (std::size_t i = 0; i < a.size(); ++i) n.val.v[i] = a[i] + b[i];
        break;
      }
      case Op::concat0: {
        const auto& a = nodes_[n.in[0]].val.v;
        const auto& b = nodes_[n.in[1]].val.v;
        std::copy(a.begin(), a.end(), n.val.v.begin());
        std::copy(b.begin(), b.end(), n.val.v.begin() + a.size());
        break;
      }
      case Op::matmul: {
        const Tensor<T>& a = nodes_[n.in[0]].val;
        const Tensor<T>& b = nodes_[n.in[1]].val;
        const int M = a.shape[a.shape.size() - 2], K = a.shape.back(),
                  N = b.shape.back();
        const std::int64_t batch = (a.shape.size() == 3) ? a.shape[0] : 1;
        for (std::int64_t bt = 0; bt < batch; ++bt) {
          const T* ap = a.v.data() + bt * M * K;
          const T* bp = b.v.data() + bt * K * N;
          T* cp = n.val.v.data() + bt * M * N;
          std::fill(cp, cp + static_cast<std::size_t>(M) * N, T(0));
          for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
              const T av = ap[static_cast<std::size_t>(i) * K + k];
              const T* brow = bp + static_cast<std::size_t>(k) * N;
              T* crow = cp + static_cast<std::size_t>(i) * N;
              for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
        break;
      }
      case Op::permute:
      case Op::patchify:
      case Op::unpatchify: {
        const auto& x = nodes_[n.in[0]].val.v;
        for (std::size_t i = 0; i < n.val.v.size(); ++i)
          n.val.v[i] = x[static_cast<std::size_t>(n.index_map[i])];
        break;
      }
      case Op::reshape:
        n.val.v = nodes_[n.in[0]].val.v;
        break;
      case Op::softmax_last: {
        const Tensor<T>& x = nodes_[n.in[0]].val;
        const int cols = x.shape.back();
        const std::int64_t rows = x.numel() / cols;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x.v.data() + r * cols;
          T* yr = n.val.v.data() + r * cols;
          T mx = xr[0];
          for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
          double sum = 0.0;
          for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
          }
          const T inv = static_cast<T>(1.0 / sum);
          for (int j = 0; j < cols; ++j) yr[j] *= inv;
        }
        break;
      }
      case Op::layernorm_last: {
        const Tensor<T>& x = nodes_[n.in[0]].val;
        const Tensor<T>& g = nodes_[n.in[1]].val;
        const Tensor<T>& b = nodes_[n.in[2]].val;
        const int cols = x.shape.back();
        const std::int64_t rows = x.numel() / cols;
        const double eps = n.attr_a;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x.v.data() + r * cols;
          T* yr = n.val.v.data() + r * cols;
          double mu = 0.0;
          for (int j = 0; j < cols; ++j) mu += xr[j];
          mu /= cols;
          double var = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
          }
          var /= cols;
          const double inv = 1.0 / std::sqrt(var + eps);
          for (int j = 0; j < cols; ++j)
            yr[j] = static_cast<T>((xr[j] - mu) * inv) * g.v[j] + b.v[j];
        }
        break;
      }
      case Op::row_replace: {
        const Tensor<T>& x = nodes_[n.in[0]].val;
        const Tensor<T>& v = nodes_[n.in[1]].val;
        n.val.v = x.v;
        const int D = x.shape[1];
        std::copy(v.v.begin(), v.v.end(),
                  n.val.v.begin() + static_cast<std::size_t>(n.attr_i) * D);
        break;
      }
      case Op::scale: {
        const auto& x = nodes_[n.in[0]].val.v;
        const T f = static_cast<T>(n.attr_a);
        for (std::size_t i = 0; i < x.size(); ++i) n.val.v[i] = f * x[i];
        break;
      }
      case Op::sum_all: {
        double s = 0.0;
        for (auto v : nodes_[n.in[0]].val.v) s += v;
        n.val.v[0] = static_cast<T>(s);
        break;
      }
      case Op::mse_loss: {
        const auto& p = nodes_[n.in[0]].val.v;
        const auto& t = nodes_[n.in[1]].val.v;
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double d = static_cast<double>(p[i]) - t[i];
          s += d * d;
        }
        n.val.v[0] = static_cast<T>(s / static_cast<double>(p.size()));
        break;
      }
      case Op::bce_dice_loss: {
        const auto& s = nodes_[n.in[0]].val.v;
        const auto& t = nodes_[n.in[1]].val.v;
        const double eps_dice = 1.0;
        double bce = 0.0, inter = 0.0, sum_s = 0.0, sum_t = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double c =
              std::clamp(static_cast<double>(s[i]), 1e-7, 1.0 - 1e-7);
          const double tv = t[i];
          bce -= tv * std::log(c) + (1.0 - tv) * std::log(1.0 - c);
          inter += c * tv;
          sum_s += c;
          sum_t += tv;
        }
        bce /= static_cast<double>(s.size());
        const double dice =
            1.0 - (2.0 * inter + eps_dice) / (sum_s + sum_t + eps_dice);
        n.val.v[0] = static_cast<T>(n.attr_a * bce + n.attr_b * dice);
        break;
      }
      case Op::masked_nmse_loss: {
        const auto& p = nodes_[n.in[0]].val.v;
        const auto& a = nodes_[n.in[1]].val.v;
        const auto& m = nodes_[n.in[2]].val.v;
        double num = 0.0, den = 1e-8, cnt = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (m[i] == T(0)) continue;
          const double d = static_cast<double>(p[i]) - a[i];
          num += d * d;
          den += static_cast<double>(a[i]) * a[i];
          cnt += 1.0;
        }
        if (cnt == 0.0)
          throw DataError(DataFault::empty_input,
                          "masked_nmse_loss '" + n.name + "': empty mask");
        n.val.v[0] = static_cast<T>(num / den);
        break;
      }
    }
  }

  void conv_forward(Node& n) {
    const Tensor<T>& x = nodes_[n.in[0]].val;
    const Tensor<T>& k = nodes_[n.in[1]].val;
    const Tensor<T>& b = nodes_[n.in[2]].val;
    const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const int Ho = n.val.shape[1], Wo = n.val.shape[2];
    const int s = n.stride, p = n.pad;
    for (int co = 0; co < Co; ++co) {
      T* out0 = n.val.v.data() + static_cast<std::size_t>(co) * Ho * Wo;
      std::fill(out0, out0 + static_cast<std::size_t>(Ho) * Wo, b.v[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xin = x.v.data() + static_cast<std::size_t>(ci) * H * W;
        const T* kk = k.v.data() +
                      (static_cast<std::size_t>(co) * Ci + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = kk[ky * kw + kx];
            if (wv == T(0)) continue;
            // output rows where iy = oy*s - p + ky lands inside the frame
            int oy0 = 0;
            while (oy0 * s - p + ky < 0) ++oy0;
            int oy1 = Ho - 1;
            while (oy1 >= 0 && oy1 * s - p + ky >= H) --oy1;
            int ox0 = 0;
            while (ox0 * s - p + kx < 0) ++ox0;
            int ox1 = Wo - 1;
            while (ox1 >= 0 && ox1 * s - p + kx >= W) --ox1;
            for (int oy = oy0; oy <= oy1; ++oy) {
              const int iy = oy * s - p + ky;
              const T* xrow = xin + static_cast<std::size_t>(iy) * W;
              T* orow = out0 + static_cast<std::size_t>(oy) * Wo;
              for (int ox = ox0; ox <= ox1; ++ox)
                orow[ox] += wv * xrow[ox * s - p + kx];
            }
          }
        }
      }
    }
  }

  // ----------------------------------------------------------- backward eval

  void propagate(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::input:
      case Op::param:
        break;
      case Op::dense: {
        Node& xn = nodes_[n.in[0]];
        Node& wn = nodes_[n.in[1]];
        Node& bn = nodes_[n.in[2]];
        const int in_f = wn.val.shape[0], out_f = wn.val.shape[1];
        const std::int64_t rows = xn.val.numel() / in_f;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* dy = n.grad.v.data() + r * out_f;
          const T* xr = xn.val.v.data() + r * in_f;
          if (bn.needs_grad)
            for (int o = 0; o < out_f; ++o) bn.grad.v[o] += dy[o];
          for (int kx = 0; kx < in_f; ++kx) {
            const T* wk = wn.val.v.data() + static_cast<std::size_t>(kx) * out_f;
            T* dwk = wn.grad.v.data() + static_cast<std::size_t>(kx) * out_f;
            if (wn.needs_grad) {
              const T xv = xr[kx];
              for (int o = 0; o < out_f; ++o) dwk[o] += xv * dy[o];
            }
            if (xn.needs_grad) {
              T acc = T(0);
              for (int o = 0; o < out_f; ++o) acc += dy[o] * wk[o];
              xn.grad.v[r * in_f + kx] += acc;
            }
          }
        }
        break;
      }
      case Op::conv2d:
        conv_backward(n);
        break;
      case Op::upsample2x: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        const int C = xn.val.shape[0], H = xn.val.shape[1], W = xn.val.shape[2];
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < 2 * H; ++y) {
            const T* gout = n.grad.v.data() +
                            (static_cast<std::size_t>(c) * 2 * H + y) * 2 * W;
            T* gin = xn.grad.v.data() +
                     (static_cast<std::size_t>(c) * H + y / 2) * W;
            for (int xx = 0; xx < 2 * W; ++xx) gin[xx / 2] += gout[xx];
          }
        break;
      }
      case Op::relu: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        for (std::size_t i = 0; i < n.grad.v.size(); ++i)
          if (xn.val.v[i] > T(0)) xn.grad.v[i] += n.grad.v[i];
        break;
      }
      case Op::sigmoid: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        for (std::size_t i = 0; i < n.grad.v.size(); ++i) {
          // derivative at the clamped output: cancels the matching clamp in
          // the cross-entropy kernel, so saturated units keep the fused
          // (score - target) restoring gradient instead of freezing
          const T y = std::clamp(n.val.v[i], T(1e-7), T(1.0 - 1e-7));
          xn.grad.v[i] += n.grad.v[i] * y * (T(1) - y);
        }
        break;
      }
      case Op::add: {
        for (int s = 0; s < 2; ++s) {
          Node& an = nodes_[n.in[s]];
          if (!an.needs_grad) continue;
          for (std::size_t i = 0; i < n.grad.v.size(); ++i)
            an.grad.v[i] += n.grad.v[i];
        }
        break;
      }
      case Op::concat0: {
        Node& an = nodes_[n.in[0]];
        Node& bn = nodes_[n.in[1]];
        const std::size_t na = an.val.v.size();
        if (an.needs_grad)
          for (std::size_t i = 0; i < na; ++i) an.grad.v[i] += n.grad.v[i];
        if (bn.needs_grad)
          for (std::size_t i = 0; i < bn.val.v.size(); ++i)
            bn.grad.v[i] += n.grad.v[na + i];
        break;
      }
      case Op::matmul: {
        Node& an = nodes_[n.in[0]];
        Node& bn = nodes_[n.in[1]];
        const int M = an.val.shape[an.val.shape.size() - 2];
        const int K = an.val.shape.back();
        const int N = bn.val.shape.back();
        const std::int64_t batch = (an.val.shape.size() == 3) ? an.val.shape[0] : 1;
        for (std::int64_t bt = 0; bt < batch; ++bt) {
          const T* ap = an.val.v.data() + bt * M * K;
          const T* bp = bn.val.v.data() + bt * K * N;
          const T* dc = n.grad.v.data() + bt * M * N;
          T* da = an.grad.v.data() + bt * M * K;
          T* db = bn.grad.v.data() + bt * K * N;
          if (an.needs_grad) {
            // dA = dC * B^T
            for (int i = 0; i < M; ++i)
              for (int kx = 0; kx < K; ++kx) {
                T acc = T(0);
                const T* dcrow = dc + static_cast<std::size_t>(i) * N;
                const T* brow = bp + static_cast<std::size_t>(kx) * N;
                for (int j = 0; j < N; ++j) acc += dcrow[j] * brow[j];
                da[static_cast<std::size_t>(i) * K + kx] += acc;
              }
          }
          if (bn.needs_grad) {
            // dB = A^T * dC
            for (int kx = 0; kx < K; ++kx)
              for (int i = 0; i < M; ++i) {
                const T av = ap[static_cast<std::size_t>(i) * K + kx];
                const T* dcrow = dc + static_cast<std::size_t>(i) * N;
                T* dbrow = db + static_cast<std::size_t>(kx) * N;
                for (int j = 0; j < N; ++j) dbrow[j] += av * dcrow[j];
              }
          }
        }
        break;
      }
      case Op::permute:
      case Op::patchify:
      case Op::unpatchify: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        for (std::size_t i = 0; i < n.grad.v.size(); ++i)
          xn.grad.v[static_cast<std::size_t>(n.index_map[i])] += n.grad.v[i];
        break;
      }
      case Op::reshape: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        for (std::size_t i = 0; i < n.grad.v.size(); ++i)
          xn.grad.v[i] += n.grad.v[i];
        break;
      }
      case Op::softmax_last: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        const int cols = n.val.shape.back();
        const std::int64_t rows = n.val.numel() / cols;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* y = n.val.v.data() + r * cols;
          const T* dy = n.grad.v.data() + r * cols;
          T* dx = xn.grad.v.data() + r * cols;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) dot += static_cast<double>(dy[j]) * y[j];
          for (int j = 0; j < cols; ++j)
            dx[j] += y[j] * (dy[j] - static_cast<T>(dot));
        }
        break;
      }
      case Op::layernorm_last: {
        Node& xn = nodes_[n.in[0]];
        Node& gn = nodes_[n.in[1]];
        Node& bn = nodes_[n.in[2]];
        const int cols = n.val.shape.back();
        const std::int64_t rows = n.val.numel() / cols;
        const double eps = n.attr_a;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = xn.val.v.data() + r * cols;
          const T* dy = n.grad.v.data() + r * cols;
          double mu = 0.0;
          for (int j = 0; j < cols; ++j) mu += xr[j];
          mu /= cols;
          double var = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
          }
          var /= cols;
          const double inv = 1.0 / std::sqrt(var + eps);
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double xh = (xr[j] - mu) * inv;
            const double dxh = static_cast<double>(dy[j]) * gn.val.v[j];
            m1 += dxh;
            m2 += dxh * xh;
            if (gn.needs_grad)
              gn.grad.v[j] += static_cast<T>(static_cast<double>(dy[j]) * xh);
            if (bn.needs_grad) bn.grad.v[j] += dy[j];
          }
          m1 /= cols;
          m2 /= cols;
          if (xn.needs_grad) {
            T* dx = xn.grad.v.data() + r * cols;
            for (int j = 0; j < cols; ++j) {
              const double xh = (xr[j] - mu) * inv;
              const double dxh = static_cast<double>(dy[j]) * gn.val.v[j];
              dx[j] += static_cast<T>(inv * (dxh - m1 - xh * m2));
            }
          }
        }
        break;
      }
      case Op::row_replace: {
        Node& xn = nodes_[n.in[0]];
        Node& vn = nodes_[n.in[1]];
        const int D = n.val.shape[1];
        const std::size_t r0 = static_cast<std::size_t>(n.attr_i) * D;
        if (xn.needs_grad) {
          for (std::size_t i = 0; i < n.grad.v.size(); ++i)
            if (i < r0 || i >= r0 + static_cast<std::size_t>(D))
              xn.grad.v[i] += n.grad.v[i];
        }
        if (vn.needs_grad)
          for (int j = 0; j < D; ++j) vn.grad.v[j] += n.grad.v[r0 + j];
        break;
      }
      case Op::scale: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        const T f = static_cast<T>(n.attr_a);
        for (std::size_t i = 0; i < n.grad.v.size(); ++i)
          xn.grad.v[i] += f * n.grad.v[i];
        break;
      }
      case Op::sum_all: {
        Node& xn = nodes_[n.in[0]];
        if (!xn.needs_grad) break;
        const T g = n.grad.v[0];
        for (auto& d : xn.grad.v) d += g;
        break;
      }
      case Op::mse_loss: {
        Node& pn = nodes_[n.in[0]];
        if (!pn.needs_grad) break;
        const auto& t = nodes_[n.in[1]].val.v;
        const T g = n.grad.v[0];
        const T invn = static_cast<T>(1.0 / static_cast<double>(t.size()));
        for (std::size_t i = 0; i < t.size(); ++i)
          pn.grad.v[i] += g * T(2) * (pn.val.v[i] - t[i]) * invn;
        break;
      }
      case Op::bce_dice_loss: {
        Node& sn = nodes_[n.in[0]];
        if (!sn.needs_grad) break;
        const auto& s = sn.val.v;
        const auto& t = nodes_[n.in[1]].val.v;
        const double eps_dice = 1.0;
        double inter = 0.0, sum_s = 0.0, sum_t = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double c =
              std::clamp(static_cast<double>(s[i]), 1e-7, 1.0 - 1e-7);
          inter += c * t[i];
          sum_s += c;
          sum_t += t[i];
        }
        const double A = 2.0 * inter + eps_dice;
        const double B = sum_s + sum_t + eps_dice;
        const double g = n.grad.v[0];
        const double invn = 1.0 / static_cast<double>(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
          // pass-through clamp: evaluated at the clamped score so saturated
          // sigmoids keep a restoring gradient (the upstream sigmoid
          // derivative rescales it into the fused logit-BCE form)
          const double c =
              std::clamp(static_cast<double>(s[i]), 1e-7, 1.0 - 1e-7);
          const double tv = t[i];
          const double dbce = (c - tv) / (c * (1.0 - c)) * invn;
          const double ddice = (A - 2.0 * tv * B) / (B * B);
          sn.grad.v[i] +=
              static_cast<T>(g * (n.attr_a * dbce + n.attr_b * ddice));
        }
        break;
      }
      case Op::masked_nmse_loss: {
        Node& pn = nodes_[n.in[0]];
        if (!pn.needs_grad) break;
        const auto& a = nodes_[n.in[1]].val.v;
        const auto& m = nodes_[n.in[2]].val.v;
        double den = 1e-8;
        for (std::size_t i = 0; i < a.size(); ++i)
          if (m[i] != T(0)) den += static_cast<double>(a[i]) * a[i];
        const double g = n.grad.v[0];
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (m[i] == T(0)) continue;
          pn.grad.v[i] += static_cast<T>(
              g * 2.0 * (static_cast<double>(pn.val.v[i]) - a[i]) / den);
        }
        break;
      }
    }
  }

  void conv_backward(Node& n) {
    Node& xn = nodes_[n.in[0]];
    Node& kn = nodes_[n.in[1]];
    Node& bn = nodes_[n.in[2]];
    const Tensor<T>& x = xn.val;
    const Tensor<T>& k = kn.val;
    const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const int Ho = n.val.shape[1], Wo = n.val.shape[2];
    const int s = n.stride, p = n.pad;
    if (bn.needs_grad) {
      for (int co = 0; co < Co; ++co) {
        const T* g0 = n.grad.v.data() + static_cast<std::size_t>(co) * Ho * Wo;
        T acc = T(0);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i)
          acc += g0[i];
        bn.grad.v[co] += acc;
      }
    }
    for (int co = 0; co < Co; ++co) {
      const T* g0 = n.grad.v.data() + static_cast<std::size_t>(co) * Ho * Wo;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xin = x.v.data() + static_cast<std::size_t>(ci) * H * W;
        T* dxin = xn.grad.v.data() + static_cast<std::size_t>(ci) * H * W;
        const std::size_t kbase = (static_cast<std::size_t>(co) * Ci + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = k.v[kbase + ky * kw + kx];
            int oy0 = 0;
            while (oy0 * s - p + ky < 0) ++oy0;
            int oy1 = Ho - 1;
            while (oy1 >= 0 && oy1 * s - p + ky >= H) --oy1;
            int ox0 = 0;
            while (ox0 * s - p + kx < 0) ++ox0;
            int ox1 = Wo - 1;
            while (ox1 >= 0 && ox1 * s - p + kx >= W) --ox1;
            T dk_acc = T(0);
            for (int oy = oy0; oy <= oy1; ++oy) {
              const int iy = oy * s - p + ky;
              const T* xrow = xin + static_cast<std::size_t>(iy) * W;
              T* dxrow = dxin + static_cast<std::size_t>(iy) * W;
              const T* grow = g0 + static_cast<std::size_t>(oy) * Wo;
              if (xn.needs_grad) {
                for (int ox = ox0; ox <= ox1; ++ox) {
                  const int ix = ox * s - p + kx;
                  dk_acc += grow[ox] * xrow[ix];
                  dxrow[ix] += wv * grow[ox];
                }
              } else {
                for (int ox = ox0; ox <= ox1; ++ox)
                  dk_acc += grow[ox] * xrow[ox * s - p + kx];
              }
            }
            if (kn.needs_grad) kn.grad.v[kbase + ky * kw + kx] += dk_acc;
          }
        }
      }
    }
  }
};

}  // namespace badpix
