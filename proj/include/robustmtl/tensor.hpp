#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "robustmtl/common.hpp"

namespace rmtl {

class Tensor;

namespace detail {

// One node of the recorded compute graph. Parents are held by shared_ptr,
// so the graph is a DAG kept alive by whoever holds the downstream tensors.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates into parents' grad buffers given this node's fully
    // accumulated grad. Empty for leaves.
    std::function<void(Node&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense n-dimensional double tensor participating in a recorded compute
// graph. Value-semantic handle: copies share the underlying node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return n_->numel(); }

    std::span<double> data() { return {n_->data.data(), n_->data.size()}; }
    std::span<const double> data() const { return {n_->data.data(), n_->data.size()}; }

    double item() const;
    double at(const std::vector<int>& idx) const;
    double& at_mut(const std::vector<int>& idx);

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return n_ && n_->grad.size() == n_->data.size(); }
    std::span<const double> grad() const { return {n_->grad.data(), n_->grad.size()}; }
    std::span<double> grad_mut() { return {n_->grad.data(), n_->grad.size()}; }
    void zero_grad() {
        if (has_grad()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Copy of the values with no graph attached.
    Tensor detach() const;
    // Deep copy preserving requires_grad, no graph.
    Tensor clone() const;

    const char* op_name() const { return n_->op; }
    detail::Node* node() const { return n_.get(); }
    std::shared_ptr<detail::Node> node_ptr() const { return n_; }

    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

  private:
    std::shared_ptr<detail::Node> n_;
};

// Linearization of the graph below a scalar loss, in topological order
// (every node's parents appear before it). Only nodes that require grad
// are recorded.
class Tape {
  public:
    static Tape record(const Tensor& loss);

    // Reverse sweep: zeroes all grads on the tape, seeds d(loss)/d(loss)=1,
    // then accumulates parent grads in reverse topological order.
    void backward();

    std::size_t size() const { return order_.size(); }
    bool topologically_ordered() const;
    const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return order_; }

  private:
    std::vector<std::shared_ptr<detail::Node>> order_;
};

// Convenience: record + backward in one call. Loss must have one element.
void backward(const Tensor& loss);

std::int64_t flat_index(const Shape& shape, const std::vector<int>& idx);

// --- recorded differentiable operations ----------------------------------

// Elementwise binary ops accept equal shapes, or a 1-element tensor on
// either side (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// Ties route the whole gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);  // d/dx at 0 is 0
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reciprocal(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);

Tensor sum_all(const Tensor& a);   // -> shape {1}
Tensor mean_all(const Tensor& a);  // -> shape {1}
Tensor sum_axis(const Tensor& a, int axis);   // axis removed
Tensor mean_axis(const Tensor& a, int axis);  // axis removed

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor reshape(const Tensor& a, Shape shape);  // same numel
Tensor hflip(const Tensor& a);                 // flips the last axis

// NCHW spatial ops.
Tensor upsample_nearest2(const Tensor& a);
// 3x3 box filter, stride 1, replicate border; output shape equals input.
Tensor box_filter3(const Tensor& a);
// 2x2 average pooling, stride 2 (spatial dims must be even).
Tensor avg_pool2(const Tensor& a);

// Cross-correlation, NCHW input, OIHW kernel, zero padding. bias may be
// an undefined Tensor to skip it.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

// Bilinear sampling of source (NCHW) at continuous pixel coordinates
// grid (N,H,W,2) with grid[...,0] = x (width) and grid[...,1] = y (height).
// Out-of-bounds coordinates are clamped to the border.
Tensor grid_sample(const Tensor& source, const Tensor& grid);

// Identity forward; backward multiplies the gradient by `factor`.
Tensor grad_scale(const Tensor& a, double factor);

// Per-channel running statistics of a batch-norm layer. Not part of the
// graph; mutated by every training-mode forward pass.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    std::int64_t batches_seen = 0;
    void init(int channels) {
        running_mean.assign(static_cast<size_t>(channels), 0.0);
        running_var.assign(static_cast<size_t>(channels), 1.0);
        batches_seen = 0;
    }
};

// Batch normalization over NCHW, normalizing per channel. Training mode
// normalizes with (biased) batch statistics and updates `state` with
// momentum; eval mode normalizes with the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum = 0.1, double eps = 1e-5);

// Extension point used by tests and custom operations: the caller supplies
// the forward result and the backward rule.
Tensor custom_op(const char* name, Shape out_shape, std::vector<double> out_data,
                 std::vector<Tensor> parents,
                 std::function<void(detail::Node&)> backward_fn);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }

}  // namespace rmtl
