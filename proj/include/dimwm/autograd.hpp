#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dimwm/tensor.hpp"

namespace dimwm::nn {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a node of the reverse-mode tape. Copies share the node.
template <class T>
class Var {
public:
    Var() = default;

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    static Var parameter(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    static Var from_op(Tensor<T> value, std::vector<Var> inputs, std::function<void(Node<T>&)> backward) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        for (const auto& in : inputs) {
            if (in.requires_grad()) n->requires_grad = true;
        }
        if (n->requires_grad) {
            n->parents.reserve(inputs.size());
            for (auto& in : inputs) n->parents.push_back(in.node_);
            n->backward = std::move(backward);
        }
        return Var(std::move(n));
    }

    bool valid() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Gradient accumulated by the last backward pass (zeros if none).
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    void zero_grad() {
        if (node_->grad.size()) node_->grad.fill(T(0));
    }

    Node<T>* node() const noexcept { return node_.get(); }

private:
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
    std::shared_ptr<Node<T>> node_;
};

/// Seeds d(root)/d(root) = 1 for a single-element root and accumulates
/// gradients into every reachable node that requires them.
template <class T>
void backward(const Var<T>& root);

// ---------------------------------------------------------------------------
// Differentiable operators. Shapes use NCDHW (batch, channel, time, height,
// width) for volumetric tensors.

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> add_const(const Var<T>& a, const Tensor<T>& c);
template <class T> Var<T> mul_const(const Var<T>& a, const Tensor<T>& c);
template <class T> Var<T> relu(const Var<T>& a);
template <class T> Var<T> sigmoid(const Var<T>& a);
/// Clamp to [lo, hi]; gradient is zero where the input lies outside.
template <class T> Var<T> clamp(const Var<T>& a, T lo, T hi);
template <class T> Var<T> reshape(const Var<T>& a, Shape shape);

/// x: (N, in), weight: (out, in), bias: (out) -> (N, out)
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

struct Conv3dGeometry {
    std::size_t stride[3] = {1, 1, 1};
    std::size_t padding[3] = {0, 0, 0};
};

/// x: (N, Cin, D, H, W), weight: (Cout, Cin, kd, kh, kw), bias: (Cout).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv3dGeometry& geom);

/// Normalises each sample over groups of consecutive channels (and all
/// trailing positions), then applies a per-channel affine map.
template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups, T eps = T(1e-5));
/// group_norm with one channel per group.
template <class T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Non-overlapping max pooling on (N, C, D, H, W); trailing remainders dropped.
template <class T> Var<T> max_pool3d(const Var<T>& x, std::size_t kd, std::size_t kh, std::size_t kw);

/// Trilinear resize of (N, C, D, H, W) with half-pixel centres (no corner
/// alignment), matching the usual deep-learning framework convention.
template <class T> Var<T> resize_trilinear(const Var<T>& x, std::size_t d, std::size_t h, std::size_t w);

/// Concatenate along dim 1.
template <class T> Var<T> concat_channels(const std::vector<Var<T>>& xs);
/// Concatenate along dim 2 (time) of NCDHW tensors.
template <class T> Var<T> concat_frames(const std::vector<Var<T>>& xs);
/// Frames [t0, t0 + count) along dim 2.
template <class T> Var<T> slice_frames(const Var<T>& x, std::size_t t0, std::size_t count);

/// (N, C, D, H, W) -> (N, C)
template <class T> Var<T> global_avg_pool(const Var<T>& x);

/// (N, C, T, H, W) -> (N*T, C, 1, H, W)
template <class T> Var<T> frames_to_batch(const Var<T>& x);
/// (N*T, C, 1, H, W) -> (N, C, T, H, W)
template <class T> Var<T> batch_to_frames(const Var<T>& x, std::size_t n);

/// Mean squared error against a constant target; scalar result.
template <class T> Var<T> mse(const Var<T>& a, const Tensor<T>& target);
/// Sum of a * weights; scalar result.
template <class T> Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& weights);
/// Scalar a + b for scalars.
template <class T> Var<T> add_scaled(const Var<T>& a, T sa, const Var<T>& b, T sb);

/// Sparse linear resampling: out[i] = bias[i] + sum_k weight[k] * in[col[k]]
/// for k in [row[i], row[i+1]). Used for warps, flips, frame edits and filters.
template <class T>
struct Resampling {
    Shape out_shape;
    std::vector<std::uint32_t> row;
    std::vector<std::uint32_t> col;
    std::vector<T> weight;
    std::vector<T> bias;

    void begin_row() { row.push_back(static_cast<std::uint32_t>(col.size())); }
    void tap(std::size_t c, T w) {
        col.push_back(static_cast<std::uint32_t>(c));
        weight.push_back(w);
    }
    void finish() { row.push_back(static_cast<std::uint32_t>(col.size())); }
};

template <class T> Var<T> resample(const Var<T>& x, const Resampling<T>& plan);
template <class T> Tensor<T> resample(const Tensor<T>& x, const Resampling<T>& plan);

/// Soft rounding quantizer y = s * (r + (z - r)^3), z = x / s, r = round(z),
/// with per-element step s.
template <class T> Var<T> soft_quantize(const Var<T>& x, const Tensor<T>& steps);

/// Orthonormal 2D DCT-II on 8x8 blocks of every (n, c, t) frame of an NCDHW
/// tensor; edge blocks use the DCT of their truncated size.
template <class T> Var<T> block_dct(const Var<T>& x, bool inverse);
template <class T> Tensor<T> block_dct(const Tensor<T>& x, bool inverse);

}  // namespace dimwm::nn
