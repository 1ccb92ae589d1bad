#include "robustmtl/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "robustmtl/parallel.hpp"

namespace rmtl {

namespace {
int g_threads = 1;
}

void set_num_threads(int n) { g_threads = n < 1 ? 1 : n; }
int num_threads() { return g_threads; }

double deterministic_sum(const double* x, std::int64_t n) {
    if (n <= kSumChunk) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::int64_t chunks = (n + kSumChunk - 1) / kSumChunk;
    std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
    parallel_for(chunks, [&](std::int64_t c) {
        const std::int64_t lo = c * kSumChunk;
        const std::int64_t hi = std::min(n, lo + kSumChunk);
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<size_t>(c)] = s;
    });
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), 0.0),
                     requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), value),
                     requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
        throw DimensionError("tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->data[0];
}

std::int64_t flat_index(const Shape& shape, const std::vector<int>& idx) {
    if (idx.size() != shape.size()) throw DimensionError("index rank mismatch");
    std::int64_t off = 0;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= shape[i]) throw DimensionError("index out of range");
        off = off * shape[i] + idx[i];
    }
    return off;
}

double Tensor::at(const std::vector<int>& idx) const {
    return n_->data[static_cast<size_t>(flat_index(n_->shape, idx))];
}

double& Tensor::at_mut(const std::vector<int>& idx) {
    return n_->data[static_cast<size_t>(flat_index(n_->shape, idx))];
}

Tensor Tensor::detach() const {
    return from_data(n_->shape, n_->data, false);
}

Tensor Tensor::clone() const {
    return from_data(n_->shape, n_->data, n_->requires_grad);
}

Tape Tape::record(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must have exactly one element");
    Tape tape;
    if (!loss.node()->requires_grad) return tape;

    // Iterative post-order DFS; children are appended after all their
    // parents, which yields a topological order.
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        std::shared_ptr<detail::Node> node;
        size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node_ptr()});
    visited.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        bool descended = false;
        while (f.next_parent < f.node->parents.size()) {
            auto& p = f.node->parents[f.next_parent++];
            if (p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.push_back({p});
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().next_parent >= stack.back().node->parents.size())) {
            tape.order_.push_back(stack.back().node);
            stack.pop_back();
        }
    }
    return tape;
}

bool Tape::topologically_ordered() const {
    std::unordered_set<const detail::Node*> seen;
    for (const auto& n : order_) {
        for (const auto& p : n->parents) {
            if (p->requires_grad && !seen.count(p.get())) return false;
        }
        seen.insert(n.get());
    }
    return true;
}

void Tape::backward() {
    if (order_.empty()) return;
    for (auto& n : order_) {
        n->ensure_grad();
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    order_.back()->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::Node& n = **it;
        if (n.backward_fn) n.backward_fn(n);
    }
}

void backward(const Tensor& loss) {
    Tape::record(loss).backward();
}

Tensor custom_op(const char* name, Shape out_shape, std::vector<double> out_data,
                 std::vector<Tensor> parents, std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(out_shape);
    n->data = std::move(out_data);
    n->op = name;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(n));
}

}  // namespace rmtl
