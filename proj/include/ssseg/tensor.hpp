#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssseg {

// Thrown on shape mismatches; the message names the primitive and the
// offending axes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// One node of the gradient tape. Nodes form a DAG via shared ownership of
// parents; the tape is dropped when the last handle to a subgraph dies.
struct Node {
    std::vector<int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until a backward pass touches it

    const char* op = "";  // op identifier; "" for leaves
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad, accumulates into parents' grad buffers. Saved
    // intermediates live in the closure; the node's own output is reachable
    // through the Node& argument, so closures never own their node.
    std::function<void(Node&)> backward_fn;
    bool backward_called = false;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense n-dimensional array of 64-bit floats in row-major order, optionally
// participating in the gradient tape. Value-semantic handle to a shared node.
//
// Mutability contract: data is mutable through mutable_data() only while the
// tensor is a leaf that no op has consumed yet (parameter init, SGD updates
// between steps). Grad buffers are the only state backward() mutates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const std::vector<int64_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<int64_t>& shape, double value, bool requires_grad = false);
    static Tensor from_data(const std::vector<int64_t>& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }
    int64_t size(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& mutable_data() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    // Gradient buffer; empty if no backward pass has reached this tensor.
    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    }

    // Scalar value; throws ShapeError if numel != 1.
    double value() const;

    double at(std::initializer_list<int64_t> idx) const;

    // Flat binary container: magic "SSTN", u32 rank, u32 dims, little-endian
    // f64 payload.
    void save(std::ostream& os) const;
    void save_file(const std::string& path) const;
    static Tensor load(std::istream& is);
    static Tensor load_file(const std::string& path);

    std::shared_ptr<detail::Node> node() const { return node_; }
    detail::Node& n() const { return *node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Gradients accumulate
// into leaf grad buffers; call zero_grad() on leaves between steps. A second
// backward() on the same loss tensor is rejected (each root runs once;
// distinct roots accumulate into shared leaves, while intermediate grads are
// reset per pass).
void backward(const Tensor& loss);

namespace detail {
// Tape recording switch, one per thread (tapes are thread-confined).
bool& grad_enabled();
}  // namespace detail

// Scoped switch disabling tape recording, for inference-only forwards.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace ssseg
