#pragma once

// Minimal reverse-mode autodiff over row-major double tensors. Every op
// records a backward closure only when one of its inputs requires a gradient,
// so frozen or inference-only forwards build no graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vibefm::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape shape_, double fill = 0.0) : shape(std::move(shape_)), data(numel(shape), fill) {}
    Tensor(Shape shape_, std::vector<double> data_);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool operator==(const Tensor&) const = default;
};

struct Node {
    Tensor value;
    std::vector<double> grad; // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t size() const { return node_->value.size(); }
    std::span<const double> data() const { return node_->value.data; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Gradient buffer; zeros of the value's size when nothing flowed in.
    std::span<const double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Backpropagate d(root)/d(root) = 1 from a scalar root.
void backward(const Var& root);

/// Backpropagate from several roots with externally supplied seed gradients.
void backward(std::span<const std::pair<Var, std::vector<double>>> seeds);

// ---------------------------------------------------------------------------
// ops

/// x[..., K] * w[K, N] -> [..., N]
Var matmul(const Var& x, const Var& w);
/// x[..., K] * w[K, N] + b[N]
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
/// b broadcast over the last dimension of x.
Var add_bias(const Var& x, const Var& b);
Var scale(const Var& x, double factor);
Var relu(const Var& x);
Var tanh(const Var& x);

/// Channels-last strided 1-D convolution without padding:
/// x[N, L, Cin], w[K*Cin, Cout], b[Cout] -> [N, (L-K)/stride+1, Cout].
Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t kernel, std::size_t stride);

/// Single GRU layer over x[B, T, In]; weights w_ih[In, 3H], w_hh[H, 3H],
/// biases [3H], gate blocks ordered (reset, update, new). Returns [B, T, H].
Var gru(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b_ih, const Var& b_hh);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax(const Var& x);

/// a[G, M, K] x b[G, K, N] (or b[G, N, K] when transpose_b) -> [G, M, N].
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

using Index = std::shared_ptr<const std::vector<std::int64_t>>;

/// Per-item gather: x is viewed as `items` equal blocks and, for every block,
/// out_item[i] = x_item[index[i]] (0 where index[i] < 0). out_shape must hold
/// items * index.size() elements.
Var gather(const Var& x, std::size_t items, Index index, Shape out_shape);
Var reshape(const Var& x, Shape shape);
Var concat_last(std::span<const Var> parts);
Var slice_last(const Var& x, std::size_t begin, std::size_t end);
/// x[B, T, D] -> [B, D] averaged over T.
Var mean_middle(const Var& x);
/// scores[G, N, N] += mask[(g / heads) % windows, N, N]
Var add_window_mask(const Var& scores, const Tensor& mask, std::size_t heads);

/// Mean soft-target cross-entropy of logits[B, C] against targets[B, C].
Var soft_cross_entropy(const Var& logits, const Tensor& targets);

bool all_finite(std::span<const double> values);

} // namespace vibefm::nn
