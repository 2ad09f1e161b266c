#include "chartnet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "chartnet/simd/kernels.hpp"

namespace chartnet::nn {
namespace {

template <class T>
const simd::KernelTable<T>& K() {
  return simd::kernels<T>();
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + " " + shape_string(a) + " vs " + shape_string(b));
}

template <class T>
void require_same(const char* op, Var<T> a, Var<T> b) {
  if (a.value().size() != b.value().size() || a.cols() != b.cols()) shape_error(op, a.shape(), b.shape());
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const int M = a.rows(), Kd = a.cols(), N = b.cols();
  if (b.rows() != Kd) shape_error("matmul", a.shape(), b.shape());
  Tensor<T> out({M, N});
  K<T>().gemm_nn(M, N, Kd, a.value().data(), Kd, b.value().data(), N, out.data(), N);
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph().record(std::move(out), {an, bn}, [an, bn, M, Kd, N](const Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) K<T>().gemm_nt(M, Kd, N, g, N, bn->val().data(), N, an->grad_ref().data(), Kd);
    if (bn->requires_grad) K<T>().gemm_tn(Kd, N, M, an->val().data(), Kd, g, N, bn->grad_ref().data(), N);
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  const int M = x.rows(), Kd = x.cols(), N = w.cols();
  if (w.rows() != Kd) shape_error("linear", x.shape(), w.shape());
  if (static_cast<int>(bias.value().size()) != N) shape_error("linear bias", w.shape(), bias.shape());
  Tensor<T> out({M, N});
  for (int i = 0; i < M; ++i) std::copy_n(bias.value().data(), N, out.data() + static_cast<std::size_t>(i) * N);
  K<T>().gemm_nn(M, N, Kd, x.value().data(), Kd, w.value().data(), N, out.data(), N);
  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = bias.node();
  return x.graph().record(std::move(out), {xn, wn, bn}, [xn, wn, bn, M, Kd, N](const Node<T>& self) {
    const T* g = self.grad.data();
    if (xn->requires_grad) K<T>().gemm_nt(M, Kd, N, g, N, wn->val().data(), N, xn->grad_ref().data(), Kd);
    if (wn->requires_grad) K<T>().gemm_tn(Kd, N, M, xn->val().data(), Kd, g, N, wn->grad_ref().data(), N);
    if (bn->requires_grad) {
      T* gb = bn->grad_ref().data();
      for (int i = 0; i < M; ++i) K<T>().axpy(T(1), g + static_cast<std::size_t>(i) * N, gb, N);
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w) {
  return matmul(x, w);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph().record(std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) K<T>().axpy(T(1), self.grad.data(), an->grad_ref().data(), n);
    if (bn->requires_grad) K<T>().axpy(T(1), self.grad.data(), bn->grad_ref().data(), n);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph().record(std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) K<T>().axpy(T(1), self.grad.data(), an->grad_ref().data(), n);
    if (bn->requires_grad) K<T>().axpy(T(-1), self.grad.data(), bn->grad_ref().data(), n);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph().record(std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) K<T>().fma_acc(self.grad.data(), bn->val().data(), an->grad_ref().data(), n);
    if (bn->requires_grad) K<T>().fma_acc(self.grad.data(), an->val().data(), bn->grad_ref().data(), n);
  });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> r) {
  const int M = a.rows(), N = a.cols();
  if (static_cast<int>(r.value().size()) != N) shape_error("add_row", a.shape(), r.shape());
  Tensor<T> out = a.value();
  for (int i = 0; i < M; ++i) K<T>().axpy(T(1), r.value().data(), out.data() + static_cast<std::size_t>(i) * N, N);
  Node<T>* an = a.node();
  Node<T>* rn = r.node();
  return a.graph().record(std::move(out), {an, rn}, [an, rn, M, N](const Node<T>& self) {
    if (an->requires_grad) K<T>().axpy(T(1), self.grad.data(), an->grad_ref().data(), self.grad.size());
    if (rn->requires_grad) {
      T* gr = rn->grad_ref().data();
      for (int i = 0; i < M; ++i) K<T>().axpy(T(1), self.grad.data() + static_cast<std::size_t>(i) * N, gr, N);
    }
  });
}

template <class T>
Var<T> mul_row(Var<T> a, Var<T> r) {
  const int M = a.rows(), N = a.cols();
  if (static_cast<int>(r.value().size()) != N) shape_error("mul_row", a.shape(), r.shape());
  Tensor<T> out = a.value();
  const T* rv = r.value().data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out[static_cast<std::size_t>(i) * N + j] *= rv[j];
  Node<T>* an = a.node();
  Node<T>* rn = r.node();
  return a.graph().record(std::move(out), {an, rn}, [an, rn, M, N](const Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->grad_ref().data();
      for (int i = 0; i < M; ++i)
        K<T>().fma_acc(g + static_cast<std::size_t>(i) * N, rn->val().data(), ga + static_cast<std::size_t>(i) * N, N);
    }
    if (rn->requires_grad) {
      T* gr = rn->grad_ref().data();
      const T* av = an->val().data();
      for (int i = 0; i < M; ++i)
        K<T>().fma_acc(g + static_cast<std::size_t>(i) * N, av + static_cast<std::size_t>(i) * N, gr, N);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, s](const Node<T>& self) {
    K<T>().axpy(s, self.grad.data(), an->grad_ref().data(), self.grad.size());
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      ga[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = stable_sigmoid(v);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      ga[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (self.value[i] > T(0)) ga[i] += self.grad[i];
  });
}

template <class T>
Var<T> elu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : std::expm1(v);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    const auto& x = an->val();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * (x[i] > T(0) ? T(1) : self.value[i] + T(1));
  });
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  const int M = a.rows(), N = a.cols();
  Tensor<T> out = a.value();
  for (int i = 0; i < M; ++i) {
    T* r = out.data() + static_cast<std::size_t>(i) * N;
    const T mx = *std::max_element(r, r + N);
    T s = 0;
    for (int j = 0; j < N; ++j) s += (r[j] = std::exp(r[j] - mx));
    for (int j = 0; j < N; ++j) r[j] /= s;
  }
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, M, N](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (int i = 0; i < M; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * N;
      const T* y = self.value.data() + o;
      const T* g = self.grad.data() + o;
      const T s = K<T>().dot(y, g, N);
      for (int j = 0; j < N; ++j) ga[o + j] += y[j] * (g[j] - s);
    }
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, int target) {
  if (logits.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "cross entropy expects one row of logits");
  const int N = logits.cols();
  if (target < 0 || target >= N) throw Error(ErrorCode::PreconditionViolation, "target class out of range");
  const T* l = logits.value().data();
  const T mx = *std::max_element(l, l + N);
  std::vector<T> p(static_cast<std::size_t>(N));
  T s = 0;
  for (int j = 0; j < N; ++j) s += (p[static_cast<std::size_t>(j)] = std::exp(l[j] - mx));
  for (auto& v : p) v /= s;
  const T loss = std::log(s) + mx - l[target];
  Node<T>* ln = logits.node();
  return logits.graph().record(Tensor<T>({1, 1}, loss), {ln},
                               [ln, p = std::move(p), target](const Node<T>& self) {
                                 const T g = self.grad[0];
                                 T* gl = ln->grad_ref().data();
                                 for (std::size_t j = 0; j < p.size(); ++j) gl[j] += g * p[j];
                                 gl[target] -= g;
                               });
}

template <class T>
Var<T> mse(Var<T> pred, const Tensor<T>& target) {
  if (pred.value().size() != target.size()) shape_error("mse", pred.shape(), target.shape());
  const std::size_t n = target.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target[i];
    s += d * d;
  }
  Node<T>* pn = pred.node();
  return pred.graph().record(Tensor<T>({1, 1}, s / static_cast<T>(n)), {pn},
                             [pn, target, n](const Node<T>& self) {
                               const T g = self.grad[0] * T(2) / static_cast<T>(n);
                               T* gp = pn->grad_ref().data();
                               const auto& pv = pn->val();
                               for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv[i] - target[i]);
                             });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const int M = parts.front().rows();
  int N = 0;
  for (const auto& p : parts) {
    if (p.rows() != M) shape_error("concat_cols", parts.front().shape(), p.shape());
    N += p.cols();
  }
  Tensor<T> out({M, N});
  std::vector<Node<T>*> nodes;
  std::vector<int> widths;
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < M; ++i)
      std::copy_n(p.value().data() + static_cast<std::size_t>(i) * w, w,
                  out.data() + static_cast<std::size_t>(i) * N + off);
    off += w;
    nodes.push_back(p.node());
    widths.push_back(w);
  }
  Var<T> res = parts.front().graph().record(std::move(out), {}, nullptr);
  // Inputs are variadic, so wire requires_grad and backward by hand.
  Graph<T>& g = parts.front().graph();
  Node<T>* self_node = res.node();
  if (g.grad_enabled() && std::any_of(nodes.begin(), nodes.end(), [](Node<T>* n) { return n->requires_grad; })) {
    self_node->requires_grad = true;
    self_node->backward = [nodes, widths, M, N](const Node<T>& self) {
      int o = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const int w = widths[k];
        if (nodes[k]->requires_grad) {
          T* gd = nodes[k]->grad_ref().data();
          for (int i = 0; i < M; ++i)
            K<T>().axpy(T(1), self.grad.data() + static_cast<std::size_t>(i) * N + o, gd + static_cast<std::size_t>(i) * w, w);
        }
        o += w;
      }
    };
  }
  return res;
}

template <class T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw Error(ErrorCode::ShapeMismatch, "stack of nothing");
  const int N = rows.front().cols();
  int M = 0;
  for (const auto& r : rows) {
    if (r.cols() != N) shape_error("stack_rows", rows.front().shape(), r.shape());
    M += r.rows();
  }
  Tensor<T> out({M, N});
  std::vector<Node<T>*> nodes;
  std::size_t off = 0;
  for (const auto& r : rows) {
    std::copy_n(r.value().data(), r.value().size(), out.data() + off);
    off += r.value().size();
    nodes.push_back(r.node());
  }
  Graph<T>& g = rows.front().graph();
  Var<T> res = g.record(std::move(out), {}, nullptr);
  Node<T>* self_node = res.node();
  if (g.grad_enabled() && std::any_of(nodes.begin(), nodes.end(), [](Node<T>* n) { return n->requires_grad; })) {
    self_node->requires_grad = true;
    self_node->backward = [nodes](const Node<T>& self) {
      std::size_t o = 0;
      for (Node<T>* n : nodes) {
        const std::size_t sz = n->val().size();
        if (n->requires_grad) K<T>().axpy(T(1), self.grad.data() + o, n->grad_ref().data(), sz);
        o += sz;
      }
    };
  }
  return res;
}

template <class T>
Var<T> slice_cols(Var<T> a, int start, int len) {
  const int M = a.rows(), N = a.cols();
  if (start < 0 || len <= 0 || start + len > N) throw Error(ErrorCode::ShapeMismatch, "slice_cols range");
  Tensor<T> out({M, len});
  for (int i = 0; i < M; ++i)
    std::copy_n(a.value().data() + static_cast<std::size_t>(i) * N + start, len,
                out.data() + static_cast<std::size_t>(i) * len);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, M, N, start, len](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (int i = 0; i < M; ++i)
      K<T>().axpy(T(1), self.grad.data() + static_cast<std::size_t>(i) * len, ga + static_cast<std::size_t>(i) * N + start, len);
  });
}

template <class T>
Var<T> row(Var<T> a, int index) {
  const int M = a.rows(), N = a.cols();
  if (index < 0 || index >= M) throw Error(ErrorCode::ShapeMismatch, "row index");
  Tensor<T> out({1, N});
  std::copy_n(a.value().data() + static_cast<std::size_t>(index) * N, N, out.data());
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, index, N](const Node<T>& self) {
    K<T>().axpy(T(1), self.grad.data(), an->grad_ref().data() + static_cast<std::size_t>(index) * N, N);
  });
}

template <class T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const int V = table.rows(), E = table.cols();
  const int S = static_cast<int>(ids.size());
  if (S == 0) throw Error(ErrorCode::ShapeMismatch, "gather of no rows");
  Tensor<T> out({S, E});
  std::vector<int> idv(ids.begin(), ids.end());
  for (int s = 0; s < S; ++s) {
    if (idv[static_cast<std::size_t>(s)] < 0 || idv[static_cast<std::size_t>(s)] >= V)
      throw Error(ErrorCode::ShapeMismatch, "gather id out of range");
    std::copy_n(table.value().data() + static_cast<std::size_t>(idv[static_cast<std::size_t>(s)]) * E, E,
                out.data() + static_cast<std::size_t>(s) * E);
  }
  Node<T>* tn = table.node();
  return table.graph().record(std::move(out), {tn}, [tn, idv = std::move(idv), E](const Node<T>& self) {
    T* gt = tn->grad_ref().data();
    for (std::size_t s = 0; s < idv.size(); ++s)
      K<T>().axpy(T(1), self.grad.data() + s * E, gt + static_cast<std::size_t>(idv[s]) * E, E);
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const int M = a.rows(), N = a.cols();
  Tensor<T> out({N, M});
  const T* src = a.value().data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out[static_cast<std::size_t>(j) * M + i] = src[static_cast<std::size_t>(i) * N + j];
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, M, N](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) ga[static_cast<std::size_t>(i) * N + j] += self.grad[static_cast<std::size_t>(j) * M + i];
  });
}

template <class T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Tensor<T> out = a.value();
  out.reshape(std::move(shape));
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an](const Node<T>& self) {
    K<T>().axpy(T(1), self.grad.data(), an->grad_ref().data(), self.grad.size());
  });
}

template <class T>
Var<T> mean_rows(Var<T> a) {
  const int M = a.rows(), N = a.cols();
  Tensor<T> out({1, N});
  for (int i = 0; i < M; ++i) K<T>().axpy(T(1) / M, a.value().data() + static_cast<std::size_t>(i) * N, out.data(), N);
  Node<T>* an = a.node();
  return a.graph().record(std::move(out), {an}, [an, M, N](const Node<T>& self) {
    T* ga = an->grad_ref().data();
    for (int i = 0; i < M; ++i) K<T>().axpy(T(1) / M, self.grad.data(), ga + static_cast<std::size_t>(i) * N, N);
  });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  T s = 0;
  for (T v : a.value().storage()) s += v;
  Node<T>* an = a.node();
  return a.graph().record(Tensor<T>({1, 1}, s), {an}, [an](const Node<T>& self) {
    const T g = self.grad[0];
    for (auto& v : an->grad_ref().storage()) v += g;
  });
}

template <class T>
Var<T> add_all(const std::vector<Var<T>>& terms) {
  if (terms.empty()) throw Error(ErrorCode::ShapeMismatch, "add_all of nothing");
  Tensor<T> out = terms.front().value();
  std::vector<Node<T>*> nodes{terms.front().node()};
  for (std::size_t k = 1; k < terms.size(); ++k) {
    require_same("add_all", terms.front(), terms[k]);
    K<T>().axpy(T(1), terms[k].value().data(), out.data(), out.size());
    nodes.push_back(terms[k].node());
  }
  Graph<T>& g = terms.front().graph();
  Var<T> res = g.record(std::move(out), {}, nullptr);
  if (g.grad_enabled() && std::any_of(nodes.begin(), nodes.end(), [](Node<T>* n) { return n->requires_grad; })) {
    res.node()->requires_grad = true;
    res.node()->backward = [nodes](const Node<T>& self) {
      for (Node<T>* n : nodes)
        if (n->requires_grad) K<T>().axpy(T(1), self.grad.data(), n->grad_ref().data(), self.grad.size());
    };
  }
  return res;
}

namespace {

template <class T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          T* d = dst + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill_n(d, Wo, T(0));
            continue;
          }
          const T* srow = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            d[ox] = (ix < 0 || ix >= W) ? T(0) : srow[ix];
          }
        }
      }
}

template <class T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* xrow = x + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* s = src + static_cast<std::size_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) xrow[ix] += s[ox];
          }
        }
      }
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad) {
  if (x.value().rank() != 3 || w.value().rank() != 4) shape_error("conv2d", x.shape(), w.shape());
  const int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  const int O = w.value().dim(0), k = w.value().dim(2);
  if (w.value().dim(1) != C || w.value().dim(3) != k) shape_error("conv2d", x.shape(), w.shape());
  if (static_cast<int>(bias.value().size()) != O) shape_error("conv2d bias", w.shape(), bias.shape());
  if (stride < 1 || pad < 0) throw Error(ErrorCode::PreconditionViolation, "conv2d stride/pad");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho < 1 || Wo < 1) shape_error("conv2d output", x.shape(), w.shape());
  const int Kc = C * k * k;
  const int P = Ho * Wo;
  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(Kc) * P);
  im2col(x.value().data(), C, H, W, k, stride, pad, Ho, Wo, col->data());
  Tensor<T> out({O, Ho, Wo});
  const T* bv = bias.value().data();
  for (int o = 0; o < O; ++o) std::fill_n(out.data() + static_cast<std::size_t>(o) * P, P, bv[o]);
  K<T>().gemm_nn(O, P, Kc, w.value().data(), Kc, col->data(), P, out.data(), P);
  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = bias.node();
  return x.graph().record(
      std::move(out), {xn, wn, bn},
      [xn, wn, bn, col, C, H, W, O, k, stride, pad, Ho, Wo, Kc, P](const Node<T>& self) {
        const T* g = self.grad.data();
        if (wn->requires_grad) K<T>().gemm_nt(O, Kc, P, g, P, col->data(), P, wn->grad_ref().data(), Kc);
        if (bn->requires_grad) {
          T* gb = bn->grad_ref().data();
          for (int o = 0; o < O; ++o) {
            const T* go = g + static_cast<std::size_t>(o) * P;
            T s = 0;
            for (int p = 0; p < P; ++p) s += go[p];
            gb[o] += s;
          }
        }
        if (xn->requires_grad) {
          std::vector<T> gcol(static_cast<std::size_t>(Kc) * P, T(0));
          K<T>().gemm_tn(Kc, P, O, wn->val().data(), Kc, g, P, gcol.data(), P);
          col2im(gcol.data(), C, H, W, k, stride, pad, Ho, Wo, xn->grad_ref().data());
        }
      });
}

#define CHARTNET_INSTANTIATE_OPS(T)                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                             \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                     \
  template Var<T> linear(Var<T>, Var<T>);                                             \
  template Var<T> add(Var<T>, Var<T>);                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                \
  template Var<T> add_row(Var<T>, Var<T>);                                            \
  template Var<T> mul_row(Var<T>, Var<T>);                                            \
  template Var<T> scale(Var<T>, T);                                                   \
  template Var<T> tanh(Var<T>);                                                       \
  template Var<T> sigmoid(Var<T>);                                                    \
  template Var<T> relu(Var<T>);                                                       \
  template Var<T> elu(Var<T>);                                                        \
  template Var<T> softmax_rows(Var<T>);                                               \
  template Var<T> softmax_cross_entropy(Var<T>, int);                                 \
  template Var<T> mse(Var<T>, const Tensor<T>&);                                      \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                            \
  template Var<T> stack_rows(const std::vector<Var<T>>&);                             \
  template Var<T> slice_cols(Var<T>, int, int);                                       \
  template Var<T> row(Var<T>, int);                                                   \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                          \
  template Var<T> transpose(Var<T>);                                                  \
  template Var<T> reshape(Var<T>, std::vector<int>);                                  \
  template Var<T> mean_rows(Var<T>);                                                  \
  template Var<T> sum_all(Var<T>);                                                    \
  template Var<T> add_all(const std::vector<Var<T>>&);                                \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);

CHARTNET_INSTANTIATE_OPS(float)
CHARTNET_INSTANTIATE_OPS(double)

}  // namespace chartnet::nn
