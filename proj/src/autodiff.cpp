/*
 * Copyright 2026 The TabForest Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "treeprior/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "treeprior/kernels.hpp"

namespace treeprior {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace ad {

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + what);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  check_finite(value, "leaf");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  leaves_.push_back(node);
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::function<void(Node<T>&)> adjoint, const char* op_name) {
  check_finite(value, op_name);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  records_.push_back({node, std::move(adjoint)});
  return Var<T>(std::move(node), this);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss, T seed) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  for (auto& leaf : leaves_) leaf->grad = Tensor<T>();
  for (auto& rec : records_) rec.out->grad = Tensor<T>();
  loss.node()->grad_buffer().fill(seed);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    it->adjoint(*it->out);
  }
  for (auto& leaf : leaves_) {
    if (!leaf->grad.empty()) check_finite(leaf->grad, "backward");
  }
}

namespace {

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Var<T>*> inputs) {
  for (const Var<T>* v : inputs) {
    if (v->requires_grad()) return v->tape();
  }
  return nullptr;
}

/// Records `value` on the inputs' tape, or returns a constant when no
/// input needs a gradient.
template <typename T, typename Adjoint>
Var<T> emit(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, Adjoint&& adjoint,
            const char* op_name) {
  Tape<T>* tape = tape_of<T>(inputs);
  if (tape == nullptr) {
    check_finite(value, op_name);
    return constant(std::move(value));
  }
  for (const Var<T>* v : inputs) {
    if (v->requires_grad() && v->tape() != tape) throw std::invalid_argument("operands belong to different tapes");
  }
  return tape->record(std::move(value), std::forward<Adjoint>(adjoint), op_name);
}

template <typename T>
void require_rank2(const Var<T>& x, const char* op) {
  if (x.value().rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(x.shape()));
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  kernels::gemm(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  auto an = a.node(), bn = b.node();
  return emit<T>(std::move(out), {&a, &b}, [an, bn, m, k, n](Node<T>& o) {
    if (an->requires_grad) {
      Tensor<T> bt({n, k});
      kernels::transpose(bn->value.data(), bt.data(), k, n);
      kernels::gemm(o.grad.data(), bt.data(), an->grad_buffer().data(), m, n, k, true);
    }
    if (bn->requires_grad) kernels::gemm_tn_acc(an->value.data(), o.grad.data(), bn->grad_buffer().data(), m, k, n);
  }, "matmul");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor<T> out = a.value();
  const T* bp = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  auto an = a.node(), bn = b.node();
  return emit<T>(std::move(out), {&a, &b}, [an, bn](Node<T>& o) {
    for (auto* in : {an.get(), bn.get()}) {
      if (!in->requires_grad) continue;
      T* g = in->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  }, "add");
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_rank2(x, "add_bias");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  if (bias.value().size() != d) throw ShapeError("add_bias: bias length does not match columns");
  Tensor<T> out = x.value();
  const T* bp = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += bp[j];
  }
  auto xn = x.node(), bn = bias.node();
  return emit<T>(std::move(out), {&x, &bias}, [xn, bn, n, d](Node<T>& o) {
    if (xn->requires_grad) {
      T* g = xn->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = o.grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += row[j];
      }
    }
  }, "add_bias");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shapes differ");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node(), bn = b.node();
  return emit<T>(std::move(out), {&a, &b}, [an, bn](Node<T>& o) {
    if (an->requires_grad) {
      T* g = an->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * an->value[i];
    }
  }, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn, factor](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += factor * o.grad[i];
  }, "scale");
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.value().dim(0), n = x.value().dim(1);
  Tensor<T> out({n, m});
  kernels::transpose(x.value().data(), out.data(), m, n);
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn, m, n](Node<T>& o) {
    Tensor<T> back({m, n});
    kernels::transpose(o.grad.data(), back.data(), n, m);
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < back.size(); ++i) g[i] += back[i];
  }, "transpose");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  }, "reshape");
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t d = x.value().dim(1);
  if (begin > end || end > x.value().dim(0)) throw ShapeError("slice_rows: range out of bounds");
  Tensor<T> out({end - begin, d});
  std::copy(x.value().data() + begin * d, x.value().data() + end * d, out.data());
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn, begin, d](Node<T>& o) {
    T* g = xn->grad_buffer().data() + begin * d;
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  }, "slice_rows");
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + kernels::fast_tanh(kC * (v + kA * v * v * v)));
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    const T* xv = xn->value.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = xv[i];
      const T t = kernels::fast_tanh(kC * (v + kA * v * v * v));
      const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      g[i] += o.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  }, "gelu");
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  auto xn = x.node();
  Tensor<T> saved = out;
  return emit<T>(std::move(out), {&x}, [xn, saved = std::move(saved)](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (T(1) - saved[i] * saved[i]);
  }, "tanh");
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  if (gain.value().size() != d || shift.value().size() != d) throw ShapeError("layer_norm: parameter length mismatch");
  Tensor<T> xhat({n, d});
  std::vector<T> rstd(n);
  Tensor<T> out({n, d});
  const T* gp = gain.value().data();
  const T* bp = shift.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.value().data() + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T r = T(1) / std::sqrt(var + eps);
    rstd[i] = r;
    T* xh = xhat.data() + i * d;
    T* o = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * r;
      o[j] = xh[j] * gp[j] + bp[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), sn = shift.node();
  return emit<T>(std::move(out), {&x, &gain, &shift},
                 [xn, gn, sn, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& o) {
    if (gn->requires_grad || sn->requires_grad) {
      T* gg = gn->requires_grad ? gn->grad_buffer().data() : nullptr;
      T* sg = sn->requires_grad ? sn->grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T* dy = o.grad.data() + i * d;
        const T* xh = xhat.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += dy[j] * xh[j];
          if (sg) sg[j] += dy[j];
        }
      }
    }
    if (xn->requires_grad) {
      T* g = xn->grad_buffer().data();
      const T* gp = gn->value.data();
      std::vector<T> dxhat(d);
      for (std::size_t i = 0; i < n; ++i) {
        const T* dy = o.grad.data() + i * d;
        const T* xh = xhat.data() + i * d;
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = dy[j] * gp[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= T(d);
        mean_dxhat_xhat /= T(d);
        T* gx = g + i * d;
        for (std::size_t j = 0; j < d; ++j) gx[j] += rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
      }
    }
  }, "layer_norm");
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t n = x.value().dim(0), c = x.value().dim(1);
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (row[j] = kernels::fast_exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  auto xn = x.node();
  Tensor<T> saved = out;
  return emit<T>(std::move(out), {&x}, [xn, n, c, saved = std::move(saved)](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = saved.data() + i * c;
      const T* dy = o.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += p[j] * dy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += p[j] * (dy[j] - dot);
    }
  }, "softmax_rows");
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  auto xn = x.node();
  return emit<T>(Tensor<T>({1}, std::vector<T>{s}), {&x}, [xn](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    const T go = o.grad[0];
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += go;
  }, "sum");
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t n = logits.value().dim(0), c = logits.value().dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count does not match rows");
  if (n == 0) throw ShapeError("softmax_cross_entropy: no rows");
  Tensor<T> probs({n, c});
  // Accumulate the loss in double so 32-bit training reports a stable value.
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const T* row = logits.value().data() + i * c;
    T* p = probs.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (p[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) p[j] /= s;
    total += -(static_cast<double>(row[label] - mx) - std::log(static_cast<double>(s)));
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  auto ln = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return emit<T>(Tensor<T>({1}, std::vector<T>{loss}), {&logits},
                 [ln, n, c, probs = std::move(probs), lab = std::move(lab)](Node<T>& o) {
    T* g = ln->grad_buffer().data();
    const T w = o.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += w * probs[i * c + j];
      g[i * c + static_cast<std::size_t>(lab[i])] -= w;
    }
  }, "softmax_cross_entropy");
}

template <typename T>
Var<T> icl_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t n_heads, std::size_t n_support,
                     bool query_rows_only) {
  require_rank2(q, "icl_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) throw ShapeError("icl_attention: q, k, v shapes differ");
  const std::size_t n = q.value().dim(0), d = q.value().dim(1);
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("icl_attention: width not divisible by heads");
  if (n_support == 0 || n_support > n) throw ShapeError("icl_attention: need 1 <= n_support <= rows");
  const std::size_t dh = d / n_heads, s = n_support;
  // Output rows are [r0, n).
  const std::size_t r0 = query_rows_only ? s : 0, m = n - r0;
  const T scale_factor = T(1) / std::sqrt(T(dh));

  const auto gather = [d, dh](const Tensor<T>& src, std::size_t h, std::size_t row0, std::size_t row1) {
    Tensor<T> out({row1 - row0, dh});
    for (std::size_t r = row0; r < row1; ++r)
      std::copy_n(src.data() + r * d + h * dh, dh, out.data() + (r - row0) * dh);
    return out;
  };

  // probs[h]: [m, s] weights on support keys; self_probs[h][r - s]: weight
  // of query r on its own key.
  std::vector<Tensor<T>> probs(n_heads);
  std::vector<std::vector<T>> self_probs(n_heads, std::vector<T>(n - s));
  Tensor<T> out({m, d});
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor<T> qh = gather(q.value(), h, r0, n);
    Tensor<T> ks = gather(k.value(), h, 0, s);
    Tensor<T> vs = gather(v.value(), h, 0, s);
    Tensor<T> kst({dh, s});
    kernels::transpose(ks.data(), kst.data(), s, dh);
    Tensor<T>& p = probs[h];
    p = Tensor<T>({m, s});
    kernels::gemm(qh.data(), kst.data(), p.data(), m, dh, s, false);
    for (std::size_t r = r0; r < n; ++r) {
      T* row = p.data() + (r - r0) * s;
      for (std::size_t j = 0; j < s; ++j) row[j] *= scale_factor;
      T mx = *std::max_element(row, row + s);
      T self_score = 0;
      if (r >= s) {
        self_score = kernels::dot(qh.data() + (r - r0) * dh, k.value().data() + r * d + h * dh, dh) * scale_factor;
        mx = std::max(mx, self_score);
      }
      T total = 0;
      for (std::size_t j = 0; j < s; ++j) total += (row[j] = kernels::fast_exp(row[j] - mx));
      T self_w = 0;
      if (r >= s) total += (self_w = kernels::fast_exp(self_score - mx));
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < s; ++j) row[j] *= inv;
      if (r >= s) self_probs[h][r - s] = self_w * inv;
    }
    Tensor<T> oh({m, dh});
    kernels::gemm(p.data(), vs.data(), oh.data(), m, s, dh, false);
    for (std::size_t r = std::max(s, r0); r < n; ++r) {
      const T w = self_probs[h][r - s];
      const T* vr = v.value().data() + r * d + h * dh;
      T* orow = oh.data() + (r - r0) * dh;
      for (std::size_t j = 0; j < dh; ++j) orow[j] += w * vr[j];
    }
    for (std::size_t r = 0; r < m; ++r) std::copy_n(oh.data() + r * dh, dh, out.data() + r * d + h * dh);
  }

  auto qn = q.node(), kn = k.node(), vn = v.node();
  return emit<T>(std::move(out), {&q, &k, &v},
                 [qn, kn, vn, n, d, dh, s, r0, m, n_heads, scale_factor, gather, probs = std::move(probs),
                  self_probs = std::move(self_probs)](Node<T>& o) {
    T* gq = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
    T* gk = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
    T* gv = vn->requires_grad ? vn->grad_buffer().data() : nullptr;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Tensor<T>& p = probs[h];
      const std::vector<T>& ps = self_probs[h];
      Tensor<T> doh({m, dh});
      for (std::size_t r = 0; r < m; ++r) std::copy_n(o.grad.data() + r * d + h * dh, dh, doh.data() + r * dh);
      Tensor<T> vs = gather(vn->value, h, 0, s);
      Tensor<T> vst({dh, s});
      kernels::transpose(vs.data(), vst.data(), s, dh);

      // dP = dO * Vs^T, then softmax backward in place (pre-scaled).
      Tensor<T> ds({m, s});
      kernels::gemm(doh.data(), vst.data(), ds.data(), m, dh, s, false);
      std::vector<T> ds_self(n - s);
      for (std::size_t r = r0; r < n; ++r) {
        const T* prow = p.data() + (r - r0) * s;
        T* drow = ds.data() + (r - r0) * s;
        T dot = 0;
        for (std::size_t j = 0; j < s; ++j) dot += prow[j] * drow[j];
        T dp_self = 0;
        if (r >= s) {
          dp_self = kernels::dot(doh.data() + (r - r0) * dh, vn->value.data() + r * d + h * dh, dh);
          dot += ps[r - s] * dp_self;
        }
        for (std::size_t j = 0; j < s; ++j) drow[j] = prow[j] * (drow[j] - dot) * scale_factor;
        if (r >= s) ds_self[r - s] = ps[r - s] * (dp_self - dot) * scale_factor;
      }

      if (gv) {
        Tensor<T> dvs({s, dh});
        kernels::gemm_tn_acc(p.data(), doh.data(), dvs.data(), m, s, dh);
        for (std::size_t r = 0; r < s; ++r) {
          T* g = gv + r * d + h * dh;
          for (std::size_t j = 0; j < dh; ++j) g[j] += dvs[r * dh + j];
        }
        for (std::size_t r = std::max(s, r0); r < n; ++r) {
          T* g = gv + r * d + h * dh;
          const T w = ps[r - s];
          for (std::size_t j = 0; j < dh; ++j) g[j] += w * doh[(r - r0) * dh + j];
        }
      }
      if (gq) {
        Tensor<T> ks = gather(kn->value, h, 0, s);
        Tensor<T> dqh({m, dh});
        kernels::gemm(ds.data(), ks.data(), dqh.data(), m, s, dh, false);
        for (std::size_t r = r0; r < n; ++r) {
          T* g = gq + r * d + h * dh;
          const T* src = dqh.data() + (r - r0) * dh;
          if (r >= s) {
            const T* kr = kn->value.data() + r * d + h * dh;
            const T w = ds_self[r - s];
            for (std::size_t j = 0; j < dh; ++j) g[j] += src[j] + w * kr[j];
          } else {
            for (std::size_t j = 0; j < dh; ++j) g[j] += src[j];
          }
        }
      }
      if (gk) {
        Tensor<T> qh = gather(qn->value, h, r0, n);
        Tensor<T> dks({s, dh});
        kernels::gemm_tn_acc(ds.data(), qh.data(), dks.data(), m, s, dh);
        for (std::size_t r = 0; r < s; ++r) {
          T* g = gk + r * d + h * dh;
          for (std::size_t j = 0; j < dh; ++j) g[j] += dks[r * dh + j];
        }
        for (std::size_t r = std::max(s, r0); r < n; ++r) {
          T* g = gk + r * d + h * dh;
          const T* qr = qn->value.data() + r * d + h * dh;
          const T w = ds_self[r - s];
          for (std::size_t j = 0; j < dh; ++j) g[j] += w * qr[j];
        }
      }
    }
  }, "icl_attention");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  auto xn = x.node();
  return emit<T>(std::move(out), {&x}, [xn](Node<T>& o) {
    T* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += xn->value[i] > T(0) ? o.grad[i] : T(0);
  }, "relu");
}

#define TREEPRIOR_INSTANTIATE(T)                                                                     \
  template class Tape<T>;                                                                            \
  template void check_finite<T>(const Tensor<T>&, const char*);                                      \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale<T>(const Var<T>&, T);                                                        \
  template Var<T> transpose<T>(const Var<T>&);                                                       \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                  \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> gelu<T>(const Var<T>&);                                                            \
  template Var<T> tanh<T>(const Var<T>&);                                                            \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> softmax_rows<T>(const Var<T>&);                                                    \
  template Var<T> sum<T>(const Var<T>&);                                                             \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const int>);                     \
  template Var<T> icl_attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, bool); \
  template Var<T> relu<T>(const Var<T>&);

TREEPRIOR_INSTANTIATE(float)
TREEPRIOR_INSTANTIATE(double)

#undef TREEPRIOR_INSTANTIATE

}  // namespace ad
}  // namespace treeprior
