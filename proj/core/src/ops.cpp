#include "pvpl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pvpl {

namespace {

template <class T>
using Node = detail::Node<T>;

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 operand, got " + shape_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

// Rows/cols view for row-wise ops: rank-1 is one row, rank-0 is one element.
std::pair<std::size_t, std::size_t> row_view(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t n = s.back();
  return {n ? shape_size(s) / n : 0, n};
}

template <class T>
void accumulate(Node<T>& parent, const std::vector<T>& g) {
  if (!parent.requires_grad) return;
  for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* o = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* br = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T* G = self.grad.data();
    if (pa.requires_grad) {
      // dA = dC . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          const T* br = &pb.value[p * n];
          const T* gr = &G[i * n];
          for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
          pa.grad[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T . dC
      for (std::size_t i = 0; i < m; ++i) {
        const T* gr = &G[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const T av = pa.value[i * k + p];
          T* dst = &pb.grad[p * n];
          for (std::size_t j = 0; j < n; ++j) dst[j] += av * gr[j];
        }
      }
    }
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank2(a.shape(), "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_result<T>({n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    Node<T>& pb = *self.parents[1];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
BasicTensor<T> affine(const BasicTensor<T>& x, T scale, T shift) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * scale + shift;
  return make_result<T>(x.shape(), std::move(out), {x}, [scale](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * scale;
  });
}

template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  if (s.size() != 1) {
    throw DimensionError("scale_by: scale must have one element, got " + shape_string(s.shape()));
  }
  const T sv = s.data()[0];
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * sv;
  return make_result<T>(x.shape(), std::move(out), {x, s}, [](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& ps = *self.parents[1];
    const T sv = ps.value[0];
    T gs = 0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (px.requires_grad) px.grad[i] += self.grad[i] * sv;
      gs += self.grad[i] * px.value[i];
    }
    if (ps.requires_grad) ps.grad[0] += gs;
  });
}

template <class T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& b) {
  const auto [m, n] = row_view(x.shape());
  if (b.size() != n || b.rank() != 1) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " does not fit rows of " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + b.data()[j];
  return make_result<T>(x.shape(), std::move(out), {x, b}, [m, n](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    Node<T>& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
  });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > T(0)) p.grad[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, T temperature) {
  if (!(temperature > T(0))) throw ParameterError("softmax: temperature must be positive");
  const auto [m, n] = row_view(x.shape());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = &x.data()[i * n];
    T* o = &out[i * n];
    const T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp((xr[j] - mx) / temperature);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [m, n, temperature](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = &self.value[i * n];
      const T* g = &self.grad[i * n];
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += y[j] * (g[j] - dot) / temperature;
    }
  });
}

template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x) {
  const auto [m, n] = row_view(x.shape());
  std::vector<T> out(x.size());
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += x.data()[i * n + j] * x.data()[i * n + j];
    const T nr = std::sqrt(ss);
    if (nr == T(0)) throw DegenerateVectorError("l2_normalize_rows: zero-norm row");
    norms[i] = nr;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] / nr;
  }
  return make_result<T>(x.shape(), std::move(out), {x},
                        [m, n, norms = std::move(norms)](Node<T>& self) {
                          Node<T>& p = *self.parents[0];
                          for (std::size_t i = 0; i < m; ++i) {
                            const T* y = &self.value[i * n];
                            const T* g = &self.grad[i * n];
                            T dot = 0;
                            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                            for (std::size_t j = 0; j < n; ++j)
                              p.grad[i * n + j] += (g[j] - dot * y[j]) / norms[i];
                          }
                        });
}

template <class T>
BasicTensor<T> cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: length mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.size();
  T ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += a.data()[i] * b.data()[i];
    aa += a.data()[i] * a.data()[i];
    bb += b.data()[i] * b.data()[i];
  }
  const T na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na == T(0) || nb == T(0)) {  // NaN propagates to the caller's finiteness check
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  }
  const T c = std::clamp(ab / (na * nb), T(-1), T(1));
  return make_result<T>({}, {c}, {a, b}, [n, na, nb](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T g = self.grad[0];
    const T c = self.value[0];
    for (std::size_t i = 0; i < n; ++i) {
      const T av = pa.value[i], bv = pb.value[i];
      if (pa.requires_grad) pa.grad[i] += g * (bv / (na * nb) - c * av / (na * na));
      if (pb.requires_grad) pb.grad[i] += g * (av / (na * nb) - c * bv / (nb * nb));
    }
  });
}

template <class T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits,
                                  const std::vector<std::size_t>& targets) {
  const auto [m, n] = row_view(logits.shape());
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  }
  std::vector<T> probs(logits.size());
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) {
      throw ParameterError("cross_entropy: target " + std::to_string(targets[i]) +
                           " out of range for " + std::to_string(n) + " logits");
    }
    const T* x = &logits.data()[i * n];
    const T mx = *std::max_element(x, x + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const T lse = mx + std::log(z);
    total += lse - x[targets[i]];
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(x[j] - lse);
  }
  return make_result<T>({}, {total}, {logits},
                        [m, n, targets, probs = std::move(probs)](Node<T>& self) {
                          Node<T>& p = *self.parents[0];
                          const T g = self.grad[0];
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                              const T onehot = j == targets[i] ? T(1) : T(0);
                              p.grad[i * n + j] += g * (probs[i * n + j] - onehot);
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::size_t target) {
  if (logits.rank() != 1) {
    throw DimensionError("cross_entropy: expected rank-1 logits, got " +
                         shape_string(logits.shape()));
  }
  return cross_entropy_rows(logits, std::vector<std::size_t>{target});
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>({}, {s}, {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (auto& g : p.grad) g += self.grad[0];
  });
}

template <class T>
BasicTensor<T> row_sum(const BasicTensor<T>& x) {
  const auto [m, n] = row_view(x.shape());
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x.data()[i * n + j];
  return make_result<T>({m}, std::move(out), {x}, [m, n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x) {
  require_rank2(x.shape(), "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (m == 0) throw DimensionError("mean_rows: no rows");
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.data()[i * n + j];
  for (auto& v : out) v /= static_cast<T>(m);
  return make_result<T>({n}, std::move(out), {x}, [m, n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const T inv = T(1) / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j] * inv;
  });
}

template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, const std::vector<std::size_t>& flat,
                      Shape shape) {
  if (shape_size(shape) != flat.size()) {
    throw DimensionError("gather: " + std::to_string(flat.size()) + " indices for shape " +
                         shape_string(shape));
  }
  std::vector<T> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= x.size()) throw DimensionError("gather: index out of range");
    out[i] = x.data()[flat[i]];
  }
  return make_result<T>(std::move(shape), std::move(out), {x}, [flat](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    for (std::size_t i = 0; i < flat.size(); ++i) p.grad[flat[i]] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> select_rows(const BasicTensor<T>& x, const std::vector<std::size_t>& idx) {
  require_rank2(x.shape(), "select_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> flat;
  flat.reserve(idx.size() * n);
  for (std::size_t r : idx) {
    if (r >= m) {
      throw DimensionError("select_rows: row " + std::to_string(r) + " out of range for " +
                           shape_string(x.shape()));
    }
    for (std::size_t j = 0; j < n; ++j) flat.push_back(r * n + j);
  }
  return gather(x, flat, {idx.size(), n});
}

template <class T>
BasicTensor<T> row(const BasicTensor<T>& x, std::size_t r) {
  return reshape(select_rows(x, {r}), {x.dim(1)});
}

template <class T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.rank() == 0 || p.rank() > 2 || p.cols() != n) {
      throw DimensionError("concat_rows: piece " + shape_string(p.shape()) +
                           " does not have width " + std::to_string(n));
    }
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
    m += p.size() / n;
  }
  return make_result<T>({m, n}, std::move(out), parts, [offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[offsets[k] + i];
    }
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
  });
}

#define PVPL_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> affine(const BasicTensor<T>&, T, T);                               \
  template BasicTensor<T> scale_by(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> softmax(const BasicTensor<T>&, T);                                 \
  template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&);                          \
  template BasicTensor<T> cosine_similarity(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::size_t);                 \
  template BasicTensor<T> cross_entropy_rows(const BasicTensor<T>&,                          \
                                             const std::vector<std::size_t>&);               \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                        \
  template BasicTensor<T> row_sum(const BasicTensor<T>&);                                    \
  template BasicTensor<T> mean_rows(const BasicTensor<T>&);                                  \
  template BasicTensor<T> select_rows(const BasicTensor<T>&, const std::vector<std::size_t>&); \
  template BasicTensor<T> row(const BasicTensor<T>&, std::size_t);                           \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                   \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                             \
  template BasicTensor<T> gather(const BasicTensor<T>&, const std::vector<std::size_t>&, Shape);

PVPL_INSTANTIATE_OPS(float)
PVPL_INSTANTIATE_OPS(double)

#undef PVPL_INSTANTIATE_OPS

}  // namespace pvpl
