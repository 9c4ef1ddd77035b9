#pragma once

#include "s2s/ops.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

/// Fully-connected layer: activation(x * weights + bias).
template <class T = float>
struct DenseLayer {
    Tensor<T> weights;  // (in, out)
    Tensor<T> bias;     // (out)
    ActivationKind activation = ActivationKind::Linear;

    Tensor<T> apply(const Tensor<T>& x) const {
        return apply_activation(activation, add_bias(matmul(x, weights), bias));
    }

    std::size_t in_dim() const { return weights.shape()[0]; }
    std::size_t out_dim() const { return weights.shape()[1]; }
};

}  // namespace s2s
