#pragma once

// Differentiable operations on Var handles. Every op validates shapes and
// throws Error{ShapeMismatch} on inconsistent inputs.

#include <span>
#include <vector>

#include "chartnet/nn/graph.hpp"

namespace chartnet::nn {

template <class T> Var<T> matmul(Var<T> a, Var<T> b);                   // [M x K] * [K x N]
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);      // x * w + bias (bias is 1 x N)
template <class T> Var<T> linear(Var<T> x, Var<T> w);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);                      // elementwise
template <class T> Var<T> add_row(Var<T> a, Var<T> row);                // broadcast a 1 x N row over M rows
template <class T> Var<T> mul_row(Var<T> a, Var<T> row);                // broadcast multiply
template <class T> Var<T> scale(Var<T> a, T s);

template <class T> Var<T> tanh(Var<T> a);
template <class T> Var<T> sigmoid(Var<T> a);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> elu(Var<T> a);

template <class T> Var<T> softmax_rows(Var<T> a);

// -log softmax(logits)[target] for a 1 x V row of logits; returns 1 x 1.
template <class T> Var<T> softmax_cross_entropy(Var<T> logits, int target);
// Mean squared error against a constant target of the same shape; returns 1 x 1.
template <class T> Var<T> mse(Var<T> pred, const Tensor<T>& target);

template <class T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <class T> Var<T> stack_rows(const std::vector<Var<T>>& rows);
template <class T> Var<T> slice_cols(Var<T> a, int start, int len);
template <class T> Var<T> row(Var<T> a, int index);
template <class T> Var<T> gather_rows(Var<T> table, std::span<const int> ids);
template <class T> Var<T> transpose(Var<T> a);
template <class T> Var<T> reshape(Var<T> a, std::vector<int> shape);
template <class T> Var<T> mean_rows(Var<T> a);                          // [M x N] -> [1 x N]
template <class T> Var<T> sum_all(Var<T> a);                            // -> [1 x 1]
template <class T> Var<T> add_all(const std::vector<Var<T>>& terms);    // same-shape sum

// x: [C x H x W], w: [O x C x k x k], bias: [1 x O] -> [O x Ho x Wo]
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad);

}  // namespace chartnet::nn
