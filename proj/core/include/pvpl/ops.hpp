#pragma once

#include <cstddef>
#include <vector>

#include "pvpl/tensor.hpp"

namespace pvpl {

// Differentiable operations. Rank-2 operands are [rows x cols]; "row-wise"
// ops treat a rank-1 tensor as a single row. Every op is instantiated for
// float and double.

/// [m x k] . [k x n] -> [m x n]
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product.
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x * scale + shift, with constant scale and shift.
template <class T>
BasicTensor<T> affine(const BasicTensor<T>& x, T scale, T shift = T(0));

/// Multiply every element of x by the single-element tensor s.
template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& x, const BasicTensor<T>& s);

/// Add the length-n vector b to every row of x[m x n].
template <class T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Row-wise softmax of x / temperature, max-subtracted.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, T temperature = T(1));

/// Row-wise division by the L2 norm. Throws DegenerateVectorError on a zero row.
template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x);

/// a.b / (|a||b|) for two vectors of equal length.
template <class T>
BasicTensor<T> cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// -log softmax(logits)[target] for a rank-1 logits vector.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::size_t target);

/// Sum over rows of -log softmax(logits[r])[targets[r]].
template <class T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits,
                                  const std::vector<std::size_t>& targets);

/// Sum of all elements, as a scalar.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Sum over the last dim: [m x n] -> [m].
template <class T>
BasicTensor<T> row_sum(const BasicTensor<T>& x);

/// Mean over rows: [m x n] -> [n].
template <class T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x);

/// Rows `idx` of x[m x n] -> [k x n]; repeated indices are allowed.
template <class T>
BasicTensor<T> select_rows(const BasicTensor<T>& x, const std::vector<std::size_t>& idx);

/// Row r of x[m x n] -> [n].
template <class T>
BasicTensor<T> row(const BasicTensor<T>& x, std::size_t r);

/// Stack equal-width rows (rank-1 or rank-2 pieces) into one matrix.
template <class T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// out[i] = x[flat[i]]; gradients scatter-add back.
template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, const std::vector<std::size_t>& flat,
                      Shape shape);

}  // namespace pvpl
