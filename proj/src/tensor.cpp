#include "ssseg/tensor.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace ssseg {

namespace {

std::shared_ptr<detail::Node> make_leaf(const std::vector<int64_t>& shape, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->shape = shape;
    n->requires_grad = requires_grad;
    int64_t count = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("tensor: negative dimension");
        count *= d;
    }
    n->data.assign(static_cast<size_t>(count), 0.0);
    return n;
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("tensor load: truncated stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("tensor load: truncated stream");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

Tensor Tensor::zeros(const std::vector<int64_t>& shape, bool requires_grad) {
    return wrap(make_leaf(shape, requires_grad));
}

Tensor Tensor::full(const std::vector<int64_t>& shape, double value, bool requires_grad) {
    auto n = make_leaf(shape, requires_grad);
    for (double& v : n->data) v = value;
    return wrap(std::move(n));
}

Tensor Tensor::from_data(const std::vector<int64_t>& shape, std::vector<double> data,
                         bool requires_grad) {
    auto n = make_leaf(shape, requires_grad);
    if (n->data.size() != data.size()) {
        std::ostringstream msg;
        msg << "tensor: data size " << data.size() << " does not match shape product "
            << n->data.size();
        throw ShapeError(msg.str());
    }
    n->data = std::move(data);
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    auto n = make_leaf({}, requires_grad);
    n->data[0] = value;
    return wrap(std::move(n));
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value: tensor is not a scalar");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const auto& sh = node_->shape;
    if (idx.size() != sh.size()) throw ShapeError("at: index rank mismatch");
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        flat = flat * sh[k] + i;
        ++k;
    }
    return node_->data[static_cast<size_t>(flat)];
}

void Tensor::save(std::ostream& os) const {
    os.write("SSTN", 4);
    put_u32(os, static_cast<uint32_t>(rank()));
    for (int64_t d : shape()) put_u32(os, static_cast<uint32_t>(d));
    for (double v : data()) put_f64(os, v);
}

void Tensor::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    save(f);
}

Tensor Tensor::load(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SSTN", 4) != 0)
        throw std::runtime_error("tensor load: bad magic, expected SSTN");
    const uint32_t rank = get_u32(is);
    std::vector<int64_t> shape(rank);
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int64_t>(get_u32(is));
        count *= shape[i];
    }
    std::vector<double> data(static_cast<size_t>(count));
    for (auto& v : data) v = get_f64(is);
    return from_data(shape, std::move(data));
}

Tensor Tensor::load_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    return load(f);
}

bool& detail::grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

void backward(const Tensor& loss) {
    detail::Node* root = loss.node().get();
    if (root == nullptr) throw std::runtime_error("backward: undefined tensor");
    if (root->numel() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!root->requires_grad)
        throw std::runtime_error("backward: loss does not require grad");
    if (root->backward_called)
        throw std::runtime_error(
            "backward: already called on this loss; gradients accumulate across "
            "distinct roots, reset leaves with zero_grad()");
    root->backward_called = true;

    // Reverse topological order via iterative post-order DFS.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate grads are transient flow state: reset them so distinct
    // roots over shared subgraphs accumulate correctly into the leaves.
    for (detail::Node* node : order)
        if (node->backward_fn) node->grad.assign(node->data.size(), 0.0);

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward_fn) continue;
        for (auto& p : node->parents)
            if (p->requires_grad) p->ensure_grad();
        node->backward_fn(*node);
    }
}

}  // namespace ssseg
