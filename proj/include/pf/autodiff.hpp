#pragma once

// Reverse-mode automatic differentiation on dense tensors. Ops execute
// eagerly; each one appends a node holding the result plus a backward closure.
// backward(loss) walks the tape in reverse creation order over nodes that are
// both reachable from the loss and downstream of a trainable leaf, so dead
// branches cost nothing. Gradients accumulate with +=, which makes fan-out
// (one producer, many consumers) correct by construction.
//
// Graphs are single-owner and rebuilt per step; trainable parameters live
// outside the graph and receive gradients through the sink pointer given to
// leaf(). Templated on the scalar so training runs in float and the
// finite-difference harness in double.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pf/common.hpp"
#include "pf/kernels.hpp"
#include "pf/tensor.hpp"

namespace pf {

struct Var {
  int id = -1;
};

enum class Mode { train, eval };

template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated during backward, only where needed
    std::vector<int> parents;
    std::function<void()> backward;
    bool requires_grad = false;
    std::string op;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- leaves -------------------------------------------------------------

  /// Constant input; no gradient flows into it.
  Var value(Tensor<T> v, std::string name = "value") {
    return push(std::move(v), {}, nullptr, false, std::move(name));
  }

  /// Trainable leaf: a copy of `v` enters the graph, and backward() adds this
  /// leaf's gradient into `*gsink` (same shape, += accumulation).
  Var leaf(const Tensor<T>& v, Tensor<T>* gsink, std::string name = "leaf") {
    if (gsink && gsink->shape != v.shape)
      throw validation_error("leaf '" + name + "': gradient sink shape " + shape_str(gsink->shape) +
                             " != value shape " + shape_str(v.shape));
    Var out = push(Tensor<T>(v), {}, nullptr, true, std::move(name));
    const int id = out.id;
    nodes_[id].backward = [this, id, gsink] {
      if (!gsink) return;
      const Tensor<T>& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) gsink->data[i] += g.data[i];
    };
    return out;
  }

  // ---- introspection ------------------------------------------------------

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(id); }
  const Tensor<T>& val(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Shape-checked gradient contribution; the entry point for custom ops.
  void add_grad(Var v, const Tensor<T>& contribution) {
    Node& n = nodes_.at(v.id);
    if (n.grad.shape != contribution.shape)
      throw validation_error("add_grad: shape " + shape_str(contribution.shape) + " != " +
                             shape_str(n.grad.shape));
    for (std::size_t i = 0; i < contribution.numel(); ++i) n.grad.data[i] += contribution.data[i];
  }

  // ---- elementwise --------------------------------------------------------

  /// a + b where b's shape equals a's or is a trailing suffix of it
  /// (bias broadcast over leading dims).
  Var add(Var a, Var b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    const bool same = ta.shape == tb.shape;
    if (!same) {
      if (tb.rank() > ta.rank() ||
          !std::equal(tb.shape.begin(), tb.shape.end(), ta.shape.end() - tb.rank()))
        shape_error("add", ta.shape, tb.shape);
    }
    Tensor<T> out(ta.shape);
    const std::size_t nb = tb.numel();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] + tb.data[i % nb];
    Var o = push(std::move(out), {a.id, b.id}, nullptr, needs({a, b}), "add");
    set_backward(o, [this, o, a, b, nb] {
      const Tensor<T>& g = grad(o);
      accum(a, g.data.data(), g.numel(), 0);
      // reduce over leading dims for the broadcast operand
      Node& bn = nodes_[b.id];
      for (std::size_t i = 0; i < g.numel(); ++i) bn.grad.data[i % nb] += g.data[i];
    });
    return o;
  }

  Var mul(Var a, Var b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (ta.shape != tb.shape) shape_error("mul", ta.shape, tb.shape);
    Tensor<T> out(ta.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    Var o = push(std::move(out), {a.id, b.id}, nullptr, needs({a, b}), "mul");
    set_backward(o, [this, o, a, b] {
      const Tensor<T>& g = grad(o);
      const Tensor<T>&va = val(a), &vb = val(b);
      Node&an = nodes_[a.id], &bn = nodes_[b.id];
      for (std::size_t i = 0; i < g.numel(); ++i) {
        an.grad.data[i] += g.data[i] * vb.data[i];
        bn.grad.data[i] += g.data[i] * va.data[i];
      }
    });
    return o;
  }

  Var scale(Var a, T s) {
    Tensor<T> out(val(a).shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = val(a).data[i] * s;
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "scale");
    set_backward(o, [this, o, a, s] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t i = 0; i < g.numel(); ++i) an.grad.data[i] += g.data[i] * s;
    });
    return o;
  }

  Var tanh(Var a) {
    Tensor<T> out(val(a).shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::tanh(val(a).data[i]);
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "tanh");
    set_backward(o, [this, o, a] {
      const Tensor<T>&g = grad(o), &y = val(o);
      Node& an = nodes_[a.id];
      for (std::size_t i = 0; i < g.numel(); ++i)
        an.grad.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
    });
    return o;
  }

  Var relu(Var a) {
    Tensor<T> out(val(a).shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::max(T(0), val(a).data[i]);
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "relu");
    set_backward(o, [this, o, a] {
      const Tensor<T>& g = grad(o);
      const Tensor<T>& x = val(a);
      Node& an = nodes_[a.id];
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (x.data[i] > T(0)) an.grad.data[i] += g.data[i];
    });
    return o;
  }

  Var gelu(Var a) {
    Tensor<T> out(val(a).shape);
    kernels::gelu(val(a).ptr(), out.ptr(), out.numel());
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "gelu");
    set_backward(o, [this, o, a] {
      const Tensor<T>& g = grad(o);
      Tensor<T> gx(g.shape);
      kernels::gelu_grad(val(a).ptr(), g.ptr(), gx.ptr(), g.numel());
      accum(a, gx.ptr(), gx.numel(), 0);
    });
    return o;
  }

  /// Inverted dropout: train mode zeroes with prob p and rescales survivors by
  /// 1/(1-p); eval mode is the identity (no node recorded). Mask order: one
  /// uniform draw per element, row-major.
  Var dropout(Var a, T p, Mode mode, std::mt19937& rng) {
    if (mode == Mode::eval || p <= T(0)) return a;
    if (p >= T(1)) throw validation_error("dropout: p must be < 1");
    const T keep = T(1) - p, inv = T(1) / keep;
    auto mask = std::make_shared<std::vector<T>>(val(a).numel());
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (auto& m : *mask) m = (u(rng) < static_cast<float>(keep)) ? inv : T(0);
    Tensor<T> out(val(a).shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = val(a).data[i] * (*mask)[i];
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "dropout");
    set_backward(o, [this, o, a, mask] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t i = 0; i < g.numel(); ++i) an.grad.data[i] += g.data[i] * (*mask)[i];
    });
    return o;
  }

  // ---- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
      shape_error("matmul", ta.shape, tb.shape);
    const std::size_t M = ta.shape[0], K = ta.shape[1], N = tb.shape[1];
    Tensor<T> out({M, N});
    kernels::matmul(ta.ptr(), tb.ptr(), out.ptr(), M, K, N);
    Var o = push(std::move(out), {a.id, b.id}, nullptr, needs({a, b}), "matmul");
    set_backward(o, [this, o, a, b, M, K, N] {
      const Tensor<T>& g = grad(o);
      Tensor<T> da({M, K}), db({K, N});
      kernels::matmul_a_bt(g.ptr(), val(b).ptr(), da.ptr(), M, N, K);  // g * B^T
      kernels::matmul_at_b(val(a).ptr(), g.ptr(), db.ptr(), M, K, N);  // A^T * g
      accum(a, da.ptr(), da.numel(), 0);
      accum(b, db.ptr(), db.numel(), 0);
    });
    return o;
  }

  /// Batched matmul over matching leading batch dim: [B,M,K] x [B,K,N].
  Var bmm(Var a, Var b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.shape[0] != tb.shape[0] ||
        ta.shape[2] != tb.shape[1])
      shape_error("bmm", ta.shape, tb.shape);
    const std::size_t B = ta.shape[0], M = ta.shape[1], K = ta.shape[2], N = tb.shape[2];
    Tensor<T> out({B, M, N});
    kernels::bmm(ta.ptr(), tb.ptr(), out.ptr(), B, M, K, N);
    Var o = push(std::move(out), {a.id, b.id}, nullptr, needs({a, b}), "bmm");
    set_backward(o, [this, o, a, b, B, M, K, N] {
      const Tensor<T>& g = grad(o);
      Tensor<T> da({B, M, K}), db({B, K, N});
      for (std::size_t bi = 0; bi < B; ++bi) {
        kernels::matmul_a_bt(g.ptr() + bi * M * N, val(b).ptr() + bi * K * N,
                             da.ptr() + bi * M * K, M, N, K);
        kernels::matmul_at_b(val(a).ptr() + bi * M * K, g.ptr() + bi * M * N,
                             db.ptr() + bi * K * N, M, K, N);
      }
      accum(a, da.ptr(), da.numel(), 0);
      accum(b, db.ptr(), db.numel(), 0);
    });
    return o;
  }

  // ---- row-wise -----------------------------------------------------------

  Var softmax_lastdim(Var a) {
    const Tensor<T>& ta = val(a);
    if (ta.rank() < 1) shape_error("softmax", ta.shape, {});
    const std::size_t D = ta.shape.back(), rows = ta.numel() / D;
    Tensor<T> out(ta.shape);
    kernels::softmax_rows(ta.ptr(), out.ptr(), rows, D);
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "softmax");
    set_backward(o, [this, o, a, rows, D] {
      const Tensor<T>&g = grad(o), &y = val(o);
      Tensor<T> gx(g.shape);
      kernels::softmax_rows_grad(y.ptr(), g.ptr(), gx.ptr(), rows, D);
      accum(a, gx.ptr(), gx.numel(), 0);
    });
    return o;
  }

  /// Layer norm over the trailing dimension with learnable gamma/beta.
  Var layernorm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const Tensor<T>& ta = val(a);
    const std::size_t D = ta.shape.back(), rows = ta.numel() / D;
    if (val(gamma).shape != Shape{D} || val(beta).shape != Shape{D})
      shape_error("layernorm", ta.shape, val(gamma).shape);
    Tensor<T> out(ta.shape);
    auto mean = std::make_shared<std::vector<T>>(rows);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    kernels::layernorm_rows(ta.ptr(), val(gamma).ptr(), val(beta).ptr(), out.ptr(), mean->data(),
                            rstd->data(), rows, D, eps);
    Var o = push(std::move(out), {a.id, gamma.id, beta.id}, nullptr, needs({a, gamma, beta}),
                 "layernorm");
    set_backward(o, [this, o, a, gamma, beta, mean, rstd, rows, D] {
      const Tensor<T>& g = grad(o);
      Tensor<T> gx(g.shape), dgamma({D}), dbeta({D});
      kernels::layernorm_rows_grad(val(a).ptr(), val(gamma).ptr(), mean->data(), rstd->data(),
                                   g.ptr(), gx.ptr(), dgamma.ptr(), dbeta.ptr(), rows, D);
      accum(a, gx.ptr(), gx.numel(), 0);
      accum(gamma, dgamma.ptr(), D, 0);
      accum(beta, dbeta.ptr(), D, 0);
    });
    return o;
  }

  // ---- convolution --------------------------------------------------------

  /// Same-padded 1-D convolution applied to every leading row:
  /// x [..., L] with w [F,K], bias [F] -> [..., F, L].
  Var conv1d_same(Var x, Var w, Var bias) {
    const Tensor<T>&tx = val(x), &tw = val(w);
    if (tx.rank() < 1 || tw.rank() != 2 || val(bias).shape != Shape{tw.shape[0]})
      shape_error("conv1d_same", tx.shape, tw.shape);
    const std::size_t L = tx.shape.back(), R = tx.numel() / L;
    const std::size_t F = tw.shape[0], K = tw.shape[1];
    Shape oshape(tx.shape.begin(), tx.shape.end() - 1);
    oshape.push_back(F);
    oshape.push_back(L);
    Tensor<T> out(oshape);
    kernels::conv1d_same(tx.ptr(), tw.ptr(), val(bias).ptr(), out.ptr(), R, L, F, K);
    Var o = push(std::move(out), {x.id, w.id, bias.id}, nullptr, needs({x, w, bias}),
                 "conv1d_same");
    set_backward(o, [this, o, x, w, bias, R, L, F, K] {
      const Tensor<T>& g = grad(o);
      Tensor<T> dx(val(x).shape), dw({F, K}), db({F});
      kernels::conv1d_same_grad_w(val(x).ptr(), g.ptr(), dw.ptr(), db.ptr(), R, L, F, K);
      kernels::conv1d_same_grad_x(g.ptr(), val(w).ptr(), dx.ptr(), R, L, F, K);
      accum(x, dx.ptr(), dx.numel(), 0);
      accum(w, dw.ptr(), dw.numel(), 0);
      accum(bias, db.ptr(), db.numel(), 0);
    });
    return o;
  }

  /// Fused conv1d_same + max over positions: x [..., L] -> [..., F]. The
  /// argmax per (row, filter) is recorded, so backward touches K points per
  /// output instead of K*L.
  Var conv1d_max(Var x, Var w, Var bias) {
    const Tensor<T>&tx = val(x), &tw = val(w);
    if (tx.rank() < 1 || tw.rank() != 2 || val(bias).shape != Shape{tw.shape[0]})
      shape_error("conv1d_max", tx.shape, tw.shape);
    const std::size_t L = tx.shape.back(), R = tx.numel() / L;
    const std::size_t F = tw.shape[0], K = tw.shape[1];
    Shape oshape(tx.shape.begin(), tx.shape.end() - 1);
    oshape.push_back(F);
    Tensor<T> out(oshape);
    auto idx = std::make_shared<std::vector<std::int32_t>>(R * F);
    kernels::conv1d_max(tx.ptr(), tw.ptr(), val(bias).ptr(), out.ptr(), idx->data(), R, L, F, K);
    Var o =
        push(std::move(out), {x.id, w.id, bias.id}, nullptr, needs({x, w, bias}), "conv1d_max");
    set_backward(o, [this, o, x, w, bias, idx, R, L, F, K] {
      const Tensor<T>& g = grad(o);
      Tensor<T> dx(val(x).shape), dw({F, K}), db({F});
      kernels::conv1d_max_grad(val(x).ptr(), val(w).ptr(), g.ptr(), idx->data(), dx.ptr(),
                               dw.ptr(), db.ptr(), R, L, F, K);
      accum(x, dx.ptr(), dx.numel(), 0);
      accum(w, dw.ptr(), dw.numel(), 0);
      accum(bias, db.ptr(), db.numel(), 0);
    });
    return o;
  }

  // ---- reductions and reshaping -------------------------------------------

  Var max_axis(Var a, std::size_t axis) {
    const Tensor<T>& ta = val(a);
    if (axis >= ta.rank()) throw validation_error("max_axis: axis out of range");
    const auto [outer, n, inner] = split_axis(ta.shape, axis);
    Shape oshape = ta.shape;
    oshape.erase(oshape.begin() + axis);
    Tensor<T> out(oshape.empty() ? Shape{1} : oshape);
    auto arg = std::make_shared<std::vector<std::int32_t>>(outer * inner);
    for (std::size_t ou = 0; ou < outer; ++ou)
      for (std::size_t in = 0; in < inner; ++in) {
        T best = ta.data[(ou * n) * inner + in];
        std::int32_t bj = 0;
        for (std::size_t j = 1; j < n; ++j) {
          const T v = ta.data[(ou * n + j) * inner + in];
          if (v > best) {
            best = v;
            bj = static_cast<std::int32_t>(j);
          }
        }
        out.data[ou * inner + in] = best;
        (*arg)[ou * inner + in] = bj;
      }
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "max_axis");
    set_backward(o, [this, o, a, arg, outer = outer, n = n, inner = inner] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t ou = 0; ou < outer; ++ou)
        for (std::size_t in = 0; in < inner; ++in) {
          const auto j = static_cast<std::size_t>((*arg)[ou * inner + in]);
          an.grad.data[(ou * n + j) * inner + in] += g.data[ou * inner + in];
        }
    });
    return o;
  }

  Var mean_axis(Var a, std::size_t axis) {
    const Tensor<T>& ta = val(a);
    if (axis >= ta.rank()) throw validation_error("mean_axis: axis out of range");
    const auto [outer, n, inner] = split_axis(ta.shape, axis);
    Shape oshape = ta.shape;
    oshape.erase(oshape.begin() + axis);
    Tensor<T> out(oshape.empty() ? Shape{1} : oshape);
    const T invn = T(1) / T(n);
    for (std::size_t ou = 0; ou < outer; ++ou)
      for (std::size_t in = 0; in < inner; ++in) {
        T acc = T(0);
        for (std::size_t j = 0; j < n; ++j) acc += ta.data[(ou * n + j) * inner + in];
        out.data[ou * inner + in] = acc * invn;
      }
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "mean_axis");
    set_backward(o, [this, o, a, outer = outer, n = n, inner = inner, invn] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t ou = 0; ou < outer; ++ou)
        for (std::size_t in = 0; in < inner; ++in) {
          const T gv = g.data[ou * inner + in] * invn;
          for (std::size_t j = 0; j < n; ++j) an.grad.data[(ou * n + j) * inner + in] += gv;
        }
    });
    return o;
  }

  /// Window-2 stride-2 max over the token axis (second-to-last dim); an odd
  /// tail token is carried through unpaired. Elementwise over feature dim.
  Var max_pool_tokens(Var a) {
    const Tensor<T>& ta = val(a);
    if (ta.rank() < 2) shape_error("max_pool_tokens", ta.shape, {});
    const std::size_t D = ta.shape.back(), Tn = ta.shape[ta.rank() - 2];
    const std::size_t lead = ta.numel() / (Tn * D), T2 = (Tn + 1) / 2;
    Shape oshape = ta.shape;
    oshape[ta.rank() - 2] = T2;
    Tensor<T> out(oshape);
    auto pick = std::make_shared<std::vector<std::int32_t>>(lead * T2 * D);
    for (std::size_t l = 0; l < lead; ++l)
      for (std::size_t t = 0; t < T2; ++t)
        for (std::size_t d = 0; d < D; ++d) {
          const std::size_t t0 = 2 * t;
          const T v0 = ta.data[(l * Tn + t0) * D + d];
          std::size_t j = t0;
          T v = v0;
          if (t0 + 1 < Tn) {
            const T v1 = ta.data[(l * Tn + t0 + 1) * D + d];
            if (v1 > v0) {
              v = v1;
              j = t0 + 1;
            }
          }
          out.data[(l * T2 + t) * D + d] = v;
          (*pick)[(l * T2 + t) * D + d] = static_cast<std::int32_t>(j);
        }
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "max_pool_tokens");
    set_backward(o, [this, o, a, pick, lead, T2, Tn, D] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t l = 0; l < lead; ++l)
        for (std::size_t t = 0; t < T2; ++t)
          for (std::size_t d = 0; d < D; ++d) {
            const auto j = static_cast<std::size_t>((*pick)[(l * T2 + t) * D + d]);
            an.grad.data[(l * Tn + j) * D + d] += g.data[(l * T2 + t) * D + d];
          }
    });
    return o;
  }

  Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw validation_error("concat: no inputs");
    const Shape& s0 = val(parts[0]).shape;
    if (axis >= s0.size()) throw validation_error("concat: axis out of range");
    Shape oshape = s0;
    oshape[axis] = 0;
    for (Var p : parts) {
      const Shape& s = val(p).shape;
      if (s.size() != s0.size()) shape_error("concat", s0, s);
      for (std::size_t d = 0; d < s.size(); ++d)
        if (d != axis && s[d] != s0[d]) shape_error("concat", s0, s);
      oshape[axis] += s[axis];
    }
    const auto [outer, ntot, inner] = split_axis(oshape, axis);
    (void)ntot;
    Tensor<T> out(oshape);
    std::vector<int> pids;
    std::vector<std::size_t> sizes;  // extent along axis per part
    for (Var p : parts) {
      pids.push_back(p.id);
      sizes.push_back(val(p).shape[axis]);
    }
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const Tensor<T>& tp = val(parts[pi]);
      const std::size_t n = sizes[pi];
      for (std::size_t ou = 0; ou < outer; ++ou)
        std::copy(tp.data.begin() + ou * n * inner, tp.data.begin() + (ou + 1) * n * inner,
                  out.data.begin() + (ou * oshape[axis] + off) * inner);
      off += n;
    }
    bool rg = false;
    for (Var p : parts) rg = rg || nodes_[p.id].requires_grad;
    Var o = push(std::move(out), pids, nullptr, rg, "concat");
    set_backward(o, [this, o, pids, sizes, outer = outer, inner = inner, total = oshape[axis]] {
      const Tensor<T>& g = grad(o);
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < pids.size(); ++pi) {
        Node& pn = nodes_[pids[pi]];
        const std::size_t n = sizes[pi];
        for (std::size_t ou = 0; ou < outer; ++ou)
          for (std::size_t i = 0; i < n * inner; ++i)
            pn.grad.data[ou * n * inner + i] += g.data[(ou * total + off) * inner + i];
        off += n;
      }
    });
    return o;
  }

  /// Row selection along axis 0; rows may repeat (backward scatter-adds).
  Var gather(Var a, const std::vector<std::size_t>& rows) {
    const Tensor<T>& ta = val(a);
    if (ta.rank() < 1) shape_error("gather", ta.shape, {});
    const std::size_t stride = ta.numel() / ta.shape[0];
    for (std::size_t r : rows)
      if (r >= ta.shape[0]) throw validation_error("gather: row index out of range");
    Shape oshape = ta.shape;
    oshape[0] = rows.size();
    Tensor<T> out(oshape);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(ta.data.begin() + rows[i] * stride, ta.data.begin() + (rows[i] + 1) * stride,
                out.data.begin() + i * stride);
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "gather");
    set_backward(o, [this, o, a, rows, stride] {
      const Tensor<T>& g = grad(o);
      Node& an = nodes_[a.id];
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j)
          an.grad.data[rows[i] * stride + j] += g.data[i * stride + j];
    });
    return o;
  }

  Var reshape(Var a, Shape new_shape) {
    const Tensor<T>& ta = val(a);
    if (shape_numel(new_shape) != ta.numel())
      throw validation_error("reshape: " + shape_str(ta.shape) + " -> " + shape_str(new_shape) +
                             " changes element count");
    Tensor<T> out(new_shape, ta.data);
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "reshape");
    set_backward(o, [this, o, a] {
      const Tensor<T>& g = grad(o);
      accum(a, g.ptr(), g.numel(), 0);
    });
    return o;
  }

  Var transpose(Var a, const std::vector<std::size_t>& perm) {
    const Tensor<T>& ta = val(a);
    if (perm.size() != ta.rank()) throw validation_error("transpose: perm rank mismatch");
    Tensor<T> out(permute_copy(ta, perm));
    Var o = push(std::move(out), {a.id}, nullptr, needs({a}), "transpose");
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    set_backward(o, [this, o, a, inv] {
      Tensor<T> ga = permute_copy(grad(o), inv);
      accum(a, ga.ptr(), ga.numel(), 0);
    });
    return o;
  }

  // ---- loss ---------------------------------------------------------------

  /// Mean-reduced Huber loss, delta = 1: per element 0.5 r^2 for |r| <= delta,
  /// else delta(|r| - delta/2).
  Var huber(Var pred, Var target, T delta = T(1)) {
    const Tensor<T>&tp = val(pred), &tt = val(target);
    if (tp.shape != tt.shape) shape_error("huber", tp.shape, tt.shape);
    const std::size_t n = tp.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = std::abs(static_cast<double>(tp.data[i]) - tt.data[i]);
      const double d = static_cast<double>(delta);
      acc += (r <= d) ? 0.5 * r * r : d * (r - 0.5 * d);
    }
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc / n);
    Var o = push(std::move(out), {pred.id, target.id}, nullptr, needs({pred, target}), "huber");
    set_backward(o, [this, o, pred, target, n, delta] {
      const T g = grad(o).data[0] / T(n);
      const Tensor<T>&tp = val(pred), &tt = val(target);
      Node&pn = nodes_[pred.id], &tn = nodes_[target.id];
      for (std::size_t i = 0; i < n; ++i) {
        const T r = tp.data[i] - tt.data[i];
        const T dr = std::clamp(r, -delta, delta);
        pn.grad.data[i] += g * dr;
        tn.grad.data[i] -= g * dr;
      }
    });
    return o;
  }

  // ---- extension hook -----------------------------------------------------

  /// Record a node with caller-supplied forward value and backward rule.
  /// The rule reads grad(self) and pushes contributions with add_grad().
  Var custom(Tensor<T> value, std::vector<Var> parents,
             std::function<void(Graph&, Var)> backward_rule, std::string name = "custom") {
    std::vector<int> pids;
    bool rg = false;
    for (Var p : parents) {
      pids.push_back(p.id);
      rg = rg || nodes_[p.id].requires_grad;
    }
    Var o = push(std::move(value), pids, nullptr, rg, std::move(name));
    if (backward_rule)
      set_backward(o, [this, o, rule = std::move(backward_rule)] { rule(*this, o); });
    return o;
  }

  // ---- reverse pass -------------------------------------------------------

  /// Seed d(loss)/d(loss) = 1 and run backward rules in reverse creation
  /// order for every node that is reachable from the loss and carries grad.
  void backward(Var loss) {
    Node& ln = nodes_.at(loss.id);
    if (ln.value.numel() != 1)
      throw validation_error("backward: loss must be scalar, got shape " +
                             shape_str(ln.value.shape));
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reach[loss.id] = 1;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[id].parents)
        if (!reach[p]) {
          reach[p] = 1;
          stack.push_back(p);
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (reach[i]) nodes_[i].grad = Tensor<T>(nodes_[i].value.shape);
    ln.grad.data[0] = T(1);
    for (int id = loss.id; id >= 0; --id)
      if (reach[id] && nodes_[id].requires_grad && nodes_[id].backward) nodes_[id].backward();
  }

 private:
  std::vector<Node> nodes_;

  Var push(Tensor<T> value, std::vector<int> parents, std::function<void()> bwd, bool rg,
           std::string op) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(bwd);
    n.requires_grad = rg;
    n.op = std::move(op);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void set_backward(Var v, std::function<void()> f) { nodes_[v.id].backward = std::move(f); }

  bool needs(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (nodes_[v.id].requires_grad) return true;
    return false;
  }

  void accum(Var v, const T* src, std::size_t n, std::size_t dst_off) {
    Node& node = nodes_[v.id];
    for (std::size_t i = 0; i < n; ++i) node.grad.data[dst_off + i] += src[i];
  }

  [[noreturn]] static void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw validation_error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                           shape_str(b));
  }

  static std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& s,
                                                                      std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
  }

  static Tensor<T> permute_copy(const Tensor<T>& t, const std::vector<std::size_t>& perm) {
    const std::size_t r = t.rank();
    Shape oshape(r);
    for (std::size_t i = 0; i < r; ++i) oshape[i] = t.shape[perm[i]];
    Tensor<T> out(oshape);
    std::vector<std::size_t> istr(r, 1), ostr(r, 1);
    for (std::size_t i = r - 1; i > 0; --i) istr[i - 1] = istr[i] * t.shape[i];
    for (std::size_t i = r - 1; i > 0; --i) ostr[i - 1] = ostr[i] * oshape[i];
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < t.numel(); ++flat) {
      std::size_t src = 0;
      for (std::size_t i = 0; i < r; ++i) src += idx[i] * istr[perm[i]];
      out.data[flat] = t.data[src];
      for (std::size_t i = r; i-- > 0;) {
        if (++idx[i] < oshape[i]) break;
        idx[i] = 0;
      }
    }
    return out;
  }
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace pf
