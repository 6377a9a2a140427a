#include "ssseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

namespace ssseg {

namespace {

using detail::Node;

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return;
    std::ostringstream msg;
    msg << op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape());
    if (a.rank() == b.rank()) {
        for (int64_t i = 0; i < a.rank(); ++i)
            if (a.shape()[i] != b.shape()[i]) {
                msg << " at axis " << i;
                break;
            }
    }
    throw ShapeError(msg.str());
}

void check_rank(const char* op, const Tensor& a, int64_t rank) {
    if (a.rank() != rank) {
        std::ostringstream msg;
        msg << op << ": expected rank " << rank << " tensor, got " << shape_str(a.shape());
        throw ShapeError(msg.str());
    }
}

int check_axis(const char* op, const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.rank()) {
        std::ostringstream msg;
        msg << op << ": axis " << axis << " out of range for " << shape_str(a.shape());
        throw ShapeError(msg.str());
    }
    return axis;
}

std::shared_ptr<Node> new_op(const char* op, std::vector<int64_t> shape,
                             std::initializer_list<Tensor> inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(n->numel()), 0.0);
    bool rg = false;
    if (detail::grad_enabled())
        for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    n->requires_grad = rg;
    if (rg)
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
    return n;
}

std::shared_ptr<Node> new_op(const char* op, std::vector<int64_t> shape,
                             const std::vector<Tensor>& inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(n->numel()), 0.0);
    bool rg = false;
    if (detail::grad_enabled())
        for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    n->requires_grad = rg;
    if (rg)
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
    return n;
}

// Iteration of lines along one axis: element j of line (o,i) sits at
// (o*len + j)*inner + i.
struct AxisLines {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisLines axis_lines(const std::vector<int64_t>& shape, int axis) {
    AxisLines al;
    for (int i = 0; i < axis; ++i) al.outer *= shape[i];
    al.len = shape[axis];
    for (size_t i = axis + 1; i < shape.size(); ++i) al.inner *= shape[i];
    return al;
}

// C(M,N) += A(M,K) B(K,N)
void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C) {
    for (int64_t m = 0; m < M; ++m)
        for (int64_t k = 0; k < K; ++k) {
            const double av = A[m * K + k];
            const double* brow = B + k * N;
            double* crow = C + m * N;
            for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
}

// C(M,N) += A(M,K) B(N,K)^T
void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C) {
    for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) {
            const double* arow = A + m * K;
            const double* brow = B + n * K;
            double s = 0.0;
            for (int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
            C[m * N + n] += s;
        }
}

// C(M,N) += A(K,M)^T B(K,N)
void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C) {
    for (int64_t k = 0; k < K; ++k)
        for (int64_t m = 0; m < M; ++m) {
            const double av = A[k * M + m];
            const double* brow = B + k * N;
            double* crow = C + m * N;
            for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
}

int64_t ceil_div(int64_t a, int64_t b) {  // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto n = new_op("add", a.shape(), {a, b});
    const size_t count = n->data.size();
    for (size_t i = 0; i < count; ++i) n->data[i] = a.data()[i] + b.data()[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            for (int k = 0; k < 2; ++k) {
                Node& p = *self.parents[k];
                if (!p.requires_grad) continue;
                for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
            }
        };
    return Tensor::wrap(n);
}

Tensor add(const Tensor& a, double b) {
    auto n = new_op("add_scalar", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = a.data()[i] + b;
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    auto n = new_op("sub", a.shape(), {a, b});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = a.data()[i] - b.data()[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += self.grad[i];
                if (pb.requires_grad) pb.grad[i] -= self.grad[i];
            }
        };
    return Tensor::wrap(n);
}

Tensor neg(const Tensor& a) {
    auto n = new_op("neg", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = -a.data()[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] -= self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto n = new_op("mul", a.shape(), {a, b});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = a.data()[i] * b.data()[i];
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
                if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
            }
        };
    return Tensor::wrap(n);
}

Tensor mul(const Tensor& a, double b) {
    auto n = new_op("mul_scalar", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = a.data()[i] * b;
    if (n->requires_grad)
        n->backward_fn = [b](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * b;
        };
    return Tensor::wrap(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank("matmul", a, 2);
    check_rank("matmul", b, 2);
    if (a.shape()[1] != b.shape()[0]) {
        std::ostringstream msg;
        msg << "matmul: inner dimensions differ, " << shape_str(a.shape()) << " x "
            << shape_str(b.shape()) << " (axis 1 vs axis 0)";
        throw ShapeError(msg.str());
    }
    const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    auto n = new_op("matmul", {M, N}, {a, b});
    gemm_nn(M, N, K, a.data().data(), b.data().data(), n->data.data());
    if (n->requires_grad)
        n->backward_fn = [M, N, K](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad)
                gemm_nt(M, K, N, self.grad.data(), pb.data.data(), pa.grad.data());
            if (pb.requires_grad)
                gemm_tn(K, N, M, pa.data.data(), self.grad.data(), pb.grad.data());
        };
    return Tensor::wrap(n);
}

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    check_rank("add_rowvec", mat, 2);
    check_rank("add_rowvec", vec, 1);
    if (mat.shape()[1] != vec.shape()[0]) {
        std::ostringstream msg;
        msg << "add_rowvec: matrix columns " << mat.shape()[1] << " != vector length "
            << vec.shape()[0] << " (axis 1 vs axis 0)";
        throw ShapeError(msg.str());
    }
    const int64_t R = mat.shape()[0], C = mat.shape()[1];
    auto n = new_op("add_rowvec", mat.shape(), {mat, vec});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) n->data[r * C + c] = mat.data()[r * C + c] + vec.data()[c];
    if (n->requires_grad)
        n->backward_fn = [R, C](Node& self) {
            Node& pm = *self.parents[0];
            Node& pv = *self.parents[1];
            if (pm.requires_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
            if (pv.requires_grad)
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c) pv.grad[c] += self.grad[r * C + c];
        };
    return Tensor::wrap(n);
}

Tensor mul_rowvec(const Tensor& mat, const Tensor& vec) {
    check_rank("mul_rowvec", mat, 2);
    check_rank("mul_rowvec", vec, 1);
    if (mat.shape()[1] != vec.shape()[0]) {
        std::ostringstream msg;
        msg << "mul_rowvec: matrix columns " << mat.shape()[1] << " != vector length "
            << vec.shape()[0] << " (axis 1 vs axis 0)";
        throw ShapeError(msg.str());
    }
    const int64_t R = mat.shape()[0], C = mat.shape()[1];
    auto n = new_op("mul_rowvec", mat.shape(), {mat, vec});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) n->data[r * C + c] = mat.data()[r * C + c] * vec.data()[c];
    if (n->requires_grad)
        n->backward_fn = [R, C](Node& self) {
            Node& pm = *self.parents[0];
            Node& pv = *self.parents[1];
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    const double g = self.grad[r * C + c];
                    if (pm.requires_grad) pm.grad[r * C + c] += g * pv.data[c];
                    if (pv.requires_grad) pv.grad[c] += g * pm.data[r * C + c];
                }
        };
    return Tensor::wrap(n);
}

Tensor exp(const Tensor& a) {
    auto n = new_op("exp", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = std::exp(a.data()[i]);
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * self.data[i];
        };
    return Tensor::wrap(n);
}

Tensor log(const Tensor& a) {
    auto n = new_op("log", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = std::log(a.data()[i]);
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] / p.data[i];
        };
    return Tensor::wrap(n);
}

Tensor sigmoid(const Tensor& a) {
    auto n = new_op("sigmoid", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) {
        const double x = a.data()[i];
        n->data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
    }
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.data[i];
                p.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        };
    return Tensor::wrap(n);
}

Tensor relu(const Tensor& a) {
    auto n = new_op("relu", a.shape(), {a});
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor softmax(const Tensor& a, int axis) {
    check_axis("softmax", a, axis);
    const AxisLines al = axis_lines(a.shape(), axis);
    auto n = new_op("softmax", a.shape(), {a});
    for (int64_t o = 0; o < al.outer; ++o)
        for (int64_t i = 0; i < al.inner; ++i) {
            const int64_t base = o * al.len * al.inner + i;
            double m = a.data()[base];
            for (int64_t j = 1; j < al.len; ++j)
                m = std::max(m, a.data()[base + j * al.inner]);
            double s = 0.0;
            for (int64_t j = 0; j < al.len; ++j) {
                const double e = std::exp(a.data()[base + j * al.inner] - m);
                n->data[base + j * al.inner] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (int64_t j = 0; j < al.len; ++j) n->data[base + j * al.inner] *= inv;
        }
    if (n->requires_grad)
        n->backward_fn = [al](Node& self) {
            Node& p = *self.parents[0];
            for (int64_t o = 0; o < al.outer; ++o)
                for (int64_t i = 0; i < al.inner; ++i) {
                    const int64_t base = o * al.len * al.inner + i;
                    double dot = 0.0;
                    for (int64_t j = 0; j < al.len; ++j) {
                        const int64_t k = base + j * al.inner;
                        dot += self.grad[k] * self.data[k];
                    }
                    for (int64_t j = 0; j < al.len; ++j) {
                        const int64_t k = base + j * al.inner;
                        p.grad[k] += self.data[k] * (self.grad[k] - dot);
                    }
                }
        };
    return Tensor::wrap(n);
}

Tensor log_softmax(const Tensor& a, int axis) {
    check_axis("log_softmax", a, axis);
    const AxisLines al = axis_lines(a.shape(), axis);
    auto n = new_op("log_softmax", a.shape(), {a});
    for (int64_t o = 0; o < al.outer; ++o)
        for (int64_t i = 0; i < al.inner; ++i) {
            const int64_t base = o * al.len * al.inner + i;
            double m = a.data()[base];
            for (int64_t j = 1; j < al.len; ++j)
                m = std::max(m, a.data()[base + j * al.inner]);
            double s = 0.0;
            for (int64_t j = 0; j < al.len; ++j) s += std::exp(a.data()[base + j * al.inner] - m);
            const double lse = m + std::log(s);
            for (int64_t j = 0; j < al.len; ++j)
                n->data[base + j * al.inner] = a.data()[base + j * al.inner] - lse;
        }
    if (n->requires_grad)
        n->backward_fn = [al](Node& self) {
            Node& p = *self.parents[0];
            for (int64_t o = 0; o < al.outer; ++o)
                for (int64_t i = 0; i < al.inner; ++i) {
                    const int64_t base = o * al.len * al.inner + i;
                    double gsum = 0.0;
                    for (int64_t j = 0; j < al.len; ++j) gsum += self.grad[base + j * al.inner];
                    for (int64_t j = 0; j < al.len; ++j) {
                        const int64_t k = base + j * al.inner;
                        p.grad[k] += self.grad[k] - std::exp(self.data[k]) * gsum;
                    }
                }
        };
    return Tensor::wrap(n);
}

Tensor layer_norm(const Tensor& a, int axis, double eps) {
    check_axis("layer_norm", a, axis);
    const AxisLines al = axis_lines(a.shape(), axis);
    auto n = new_op("layer_norm", a.shape(), {a});
    std::vector<double> inv_std(static_cast<size_t>(al.outer * al.inner));
    for (int64_t o = 0; o < al.outer; ++o)
        for (int64_t i = 0; i < al.inner; ++i) {
            const int64_t base = o * al.len * al.inner + i;
            double mean = 0.0;
            for (int64_t j = 0; j < al.len; ++j) mean += a.data()[base + j * al.inner];
            mean /= static_cast<double>(al.len);
            double var = 0.0;
            for (int64_t j = 0; j < al.len; ++j) {
                const double d = a.data()[base + j * al.inner] - mean;
                var += d * d;
            }
            var /= static_cast<double>(al.len);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(o * al.inner + i)] = is;
            for (int64_t j = 0; j < al.len; ++j)
                n->data[base + j * al.inner] = (a.data()[base + j * al.inner] - mean) * is;
        }
    if (n->requires_grad)
        n->backward_fn = [al, inv_std = std::move(inv_std)](Node& self) {
            Node& p = *self.parents[0];
            const double inv_len = 1.0 / static_cast<double>(al.len);
            for (int64_t o = 0; o < al.outer; ++o)
                for (int64_t i = 0; i < al.inner; ++i) {
                    const int64_t base = o * al.len * al.inner + i;
                    const double is = inv_std[static_cast<size_t>(o * al.inner + i)];
                    double gmean = 0.0, gymean = 0.0;
                    for (int64_t j = 0; j < al.len; ++j) {
                        const int64_t k = base + j * al.inner;
                        gmean += self.grad[k];
                        gymean += self.grad[k] * self.data[k];
                    }
                    gmean *= inv_len;
                    gymean *= inv_len;
                    for (int64_t j = 0; j < al.len; ++j) {
                        const int64_t k = base + j * al.inner;
                        p.grad[k] += is * (self.grad[k] - gmean - self.data[k] * gymean);
                    }
                }
        };
    return Tensor::wrap(n);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    check_rank("conv2d", x, 3);
    check_rank("conv2d", w, 4);
    if (x.shape()[0] != w.shape()[1]) {
        std::ostringstream msg;
        msg << "conv2d: input channels " << x.shape()[0] << " != weight input channels "
            << w.shape()[1] << " (input axis 0 vs weight axis 1)";
        throw ShapeError(msg.str());
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int64_t CI = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int64_t CO = w.shape()[0], KH = w.shape()[2], KW = w.shape()[3];
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    if (OH < 1 || OW < 1) {
        std::ostringstream msg;
        msg << "conv2d: kernel " << KH << "x" << KW << " larger than padded input " << H << "x"
            << W << " (axes 1,2)";
        throw ShapeError(msg.str());
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.shape()[0] != CO))
        throw ShapeError("conv2d: bias must have shape (out_channels) (axis 0)");

    auto n = has_bias ? new_op("conv2d", {CO, OH, OW}, {x, w, bias})
                      : new_op("conv2d", {CO, OH, OW}, {x, w});
    // Valid output range for a kernel offset d: 0 <= o*stride + d < extent.
    auto bounds = [stride](int64_t d, int64_t extent, int64_t osize, int64_t& o0, int64_t& o1) {
        o0 = std::max<int64_t>(0, ceil_div(-d, stride));
        o1 = std::min<int64_t>(osize, d < extent ? (extent - 1 - d) / stride + 1 : 0);
    };
    if (has_bias)
        for (int64_t oc = 0; oc < CO; ++oc)
            std::fill(n->data.begin() + oc * OH * OW, n->data.begin() + (oc + 1) * OH * OW,
                      bias.data()[oc]);
    for (int64_t oc = 0; oc < CO; ++oc)
        for (int64_t ic = 0; ic < CI; ++ic) {
            const double* ip = x.data().data() + ic * H * W;
            double* op = n->data.data() + oc * OH * OW;
            const double* wp = w.data().data() + (oc * CI + ic) * KH * KW;
            for (int64_t ky = 0; ky < KH; ++ky)
                for (int64_t kx = 0; kx < KW; ++kx) {
                    const double wv = wp[ky * KW + kx];
                    const int64_t dy = ky - pad, dx = kx - pad;
                    int64_t oy0, oy1, ox0, ox1;
                    bounds(dy, H, OH, oy0, oy1);
                    bounds(dx, W, OW, ox0, ox1);
                    for (int64_t oy = oy0; oy < oy1; ++oy) {
                        const double* irow = ip + (oy * stride + dy) * W + dx;
                        double* orow = op + oy * OW;
                        if (stride == 1) {
                            for (int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (int64_t ox = ox0; ox < ox1; ++ox)
                                orow[ox] += wv * irow[ox * stride];
                        }
                    }
                }
        }
    if (n->requires_grad)
        n->backward_fn = [CI, H, W, CO, KH, KW, OH, OW, stride, pad, has_bias, bounds](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            if (has_bias && self.parents[2]->requires_grad) {
                Node& pb = *self.parents[2];
                for (int64_t oc = 0; oc < CO; ++oc) {
                    double s = 0.0;
                    const double* grow = self.grad.data() + oc * OH * OW;
                    for (int64_t i = 0; i < OH * OW; ++i) s += grow[i];
                    pb.grad[oc] += s;
                }
            }
            for (int64_t oc = 0; oc < CO; ++oc)
                for (int64_t ic = 0; ic < CI; ++ic) {
                    const double* gp = self.grad.data() + oc * OH * OW;
                    const double* ipd = px.data.data() + ic * H * W;
                    double* ipg = px.requires_grad ? px.grad.data() + ic * H * W : nullptr;
                    const double* wpd = pw.data.data() + (oc * CI + ic) * KH * KW;
                    double* wpg = pw.requires_grad ? pw.grad.data() + (oc * CI + ic) * KH * KW
                                                   : nullptr;
                    for (int64_t ky = 0; ky < KH; ++ky)
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            const int64_t dy = ky - pad, dx = kx - pad;
                            int64_t oy0, oy1, ox0, ox1;
                            bounds(dy, H, OH, oy0, oy1);
                            bounds(dx, W, OW, ox0, ox1);
                            const double wv = wpd[ky * KW + kx];
                            double wg = 0.0;
                            for (int64_t oy = oy0; oy < oy1; ++oy) {
                                const double* grow = gp + oy * OW;
                                const double* irow = ipd + (oy * stride + dy) * W + dx;
                                double* xrow =
                                    ipg ? ipg + (oy * stride + dy) * W + dx : nullptr;
                                if (stride == 1) {
                                    if (wpg)
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            wg += grow[ox] * irow[ox];
                                    if (xrow)
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            xrow[ox] += wv * grow[ox];
                                } else {
                                    for (int64_t ox = ox0; ox < ox1; ++ox) {
                                        if (wpg) wg += grow[ox] * irow[ox * stride];
                                        if (xrow) xrow[ox * stride] += wv * grow[ox];
                                    }
                                }
                            }
                            if (wpg) wpg[ky * KW + kx] += wg;
                        }
                }
        };
    return Tensor::wrap(n);
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    check_rank("transposed_conv2d", x, 3);
    check_rank("transposed_conv2d", w, 4);
    if (x.shape()[0] != w.shape()[0]) {
        std::ostringstream msg;
        msg << "transposed_conv2d: input channels " << x.shape()[0]
            << " != weight input channels " << w.shape()[0] << " (input axis 0 vs weight axis 0)";
        throw ShapeError(msg.str());
    }
    if (stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
    const int64_t CI = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int64_t CO = w.shape()[1], KH = w.shape()[2], KW = w.shape()[3];
    const int64_t OH = (H - 1) * stride + KH;
    const int64_t OW = (W - 1) * stride + KW;
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.shape()[0] != CO))
        throw ShapeError("transposed_conv2d: bias must have shape (out_channels) (axis 0)");

    auto n = has_bias ? new_op("transposed_conv2d", {CO, OH, OW}, {x, w, bias})
                      : new_op("transposed_conv2d", {CO, OH, OW}, {x, w});
    if (has_bias)
        for (int64_t oc = 0; oc < CO; ++oc)
            std::fill(n->data.begin() + oc * OH * OW, n->data.begin() + (oc + 1) * OH * OW,
                      bias.data()[oc]);
    for (int64_t ic = 0; ic < CI; ++ic)
        for (int64_t oc = 0; oc < CO; ++oc) {
            const double* ip = x.data().data() + ic * H * W;
            double* op = n->data.data() + oc * OH * OW;
            const double* wp = w.data().data() + (ic * CO + oc) * KH * KW;
            for (int64_t ky = 0; ky < KH; ++ky)
                for (int64_t kx = 0; kx < KW; ++kx) {
                    const double wv = wp[ky * KW + kx];
                    for (int64_t y = 0; y < H; ++y) {
                        const double* irow = ip + y * W;
                        double* orow = op + (y * stride + ky) * OW + kx;
                        for (int64_t xx = 0; xx < W; ++xx) orow[xx * stride] += wv * irow[xx];
                    }
                }
        }
    if (n->requires_grad)
        n->backward_fn = [CI, H, W, CO, KH, KW, OH, OW, stride, has_bias](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            if (has_bias && self.parents[2]->requires_grad) {
                Node& pb = *self.parents[2];
                for (int64_t oc = 0; oc < CO; ++oc) {
                    double s = 0.0;
                    const double* grow = self.grad.data() + oc * OH * OW;
                    for (int64_t i = 0; i < OH * OW; ++i) s += grow[i];
                    pb.grad[oc] += s;
                }
            }
            for (int64_t ic = 0; ic < CI; ++ic)
                for (int64_t oc = 0; oc < CO; ++oc) {
                    const double* gp = self.grad.data() + oc * OH * OW;
                    const double* ipd = px.data.data() + ic * H * W;
                    double* ipg = px.requires_grad ? px.grad.data() + ic * H * W : nullptr;
                    const double* wpd = pw.data.data() + (ic * CO + oc) * KH * KW;
                    double* wpg = pw.requires_grad ? pw.grad.data() + (ic * CO + oc) * KH * KW
                                                   : nullptr;
                    for (int64_t ky = 0; ky < KH; ++ky)
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            const double wv = wpd[ky * KW + kx];
                            double wg = 0.0;
                            for (int64_t y = 0; y < H; ++y) {
                                const double* grow = gp + (y * stride + ky) * OW + kx;
                                const double* irow = ipd + y * W;
                                double* xrow = ipg ? ipg + y * W : nullptr;
                                for (int64_t xx = 0; xx < W; ++xx) {
                                    const double g = grow[xx * stride];
                                    if (wpg) wg += g * irow[xx];
                                    if (xrow) xrow[xx] += wv * g;
                                }
                            }
                            if (wpg) wpg[ky * KW + kx] += wg;
                        }
                }
        };
    return Tensor::wrap(n);
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    check_rank("max_pool2d", x, 3);
    const int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (kernel < 1 || stride < 1 || H < kernel || W < kernel) {
        std::ostringstream msg;
        msg << "max_pool2d: kernel " << kernel << " does not fit input " << H << "x" << W
            << " (axes 1,2)";
        throw ShapeError(msg.str());
    }
    const int64_t OH = (H - kernel) / stride + 1;
    const int64_t OW = (W - kernel) / stride + 1;
    auto n = new_op("max_pool2d", {C, OH, OW}, {x});
    std::vector<int64_t> argmax(static_cast<size_t>(C * OH * OW));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t best = c * H * W + (oy * stride) * W + ox * stride;
                double bv = x.data()[best];
                for (int64_t ky = 0; ky < kernel; ++ky)
                    for (int64_t kx = 0; kx < kernel; ++kx) {
                        const int64_t idx =
                            c * H * W + (oy * stride + ky) * W + (ox * stride + kx);
                        if (x.data()[idx] > bv) {  // ties keep the first in scan order
                            bv = x.data()[idx];
                            best = idx;
                        }
                    }
                const int64_t out_idx = c * OH * OW + oy * OW + ox;
                n->data[out_idx] = bv;
                argmax[static_cast<size_t>(out_idx)] = best;
            }
    if (n->requires_grad)
        n->backward_fn = [argmax = std::move(argmax)](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i)
                p.grad[static_cast<size_t>(argmax[i])] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor bilinear_interpolate(const Tensor& x, int target_h, int target_w) {
    check_rank("bilinear_interpolate", x, 3);
    if (target_h < 1 || target_w < 1)
        throw ShapeError("bilinear_interpolate: target dimensions must be >= 1 (axes 1,2)");
    const int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int64_t TH = target_h, TW = target_w;
    auto n = new_op("bilinear_interpolate", {C, TH, TW}, {x});
    const double sy = TH > 1 ? static_cast<double>(H - 1) / static_cast<double>(TH - 1) : 0.0;
    const double sx = TW > 1 ? static_cast<double>(W - 1) / static_cast<double>(TW - 1) : 0.0;
    auto sample_axis = [](double scale, int64_t t, int64_t extent, int64_t& i0, int64_t& i1,
                          double& f) {
        const double s = scale * static_cast<double>(t);
        i0 = static_cast<int64_t>(std::floor(s));
        if (i0 > extent - 1) i0 = extent - 1;
        i1 = std::min<int64_t>(i0 + 1, extent - 1);
        f = s - static_cast<double>(i0);
    };
    for (int64_t ty = 0; ty < TH; ++ty) {
        int64_t y0, y1;
        double fy;
        sample_axis(sy, ty, H, y0, y1, fy);
        for (int64_t tx = 0; tx < TW; ++tx) {
            int64_t x0, x1;
            double fx;
            sample_axis(sx, tx, W, x0, x1, fx);
            for (int64_t c = 0; c < C; ++c) {
                const double* ip = x.data().data() + c * H * W;
                const double v = (1.0 - fy) * ((1.0 - fx) * ip[y0 * W + x0] + fx * ip[y0 * W + x1]) +
                                 fy * ((1.0 - fx) * ip[y1 * W + x0] + fx * ip[y1 * W + x1]);
                n->data[c * TH * TW + ty * TW + tx] = v;
            }
        }
    }
    if (n->requires_grad)
        n->backward_fn = [C, H, W, TH, TW, sy, sx, sample_axis](Node& self) {
            Node& p = *self.parents[0];
            for (int64_t ty = 0; ty < TH; ++ty) {
                int64_t y0, y1;
                double fy;
                sample_axis(sy, ty, H, y0, y1, fy);
                for (int64_t tx = 0; tx < TW; ++tx) {
                    int64_t x0, x1;
                    double fx;
                    sample_axis(sx, tx, W, x0, x1, fx);
                    for (int64_t c = 0; c < C; ++c) {
                        const double g = self.grad[c * TH * TW + ty * TW + tx];
                        double* gp = p.grad.data() + c * H * W;
                        gp[y0 * W + x0] += g * (1.0 - fy) * (1.0 - fx);
                        gp[y0 * W + x1] += g * (1.0 - fy) * fx;
                        gp[y1 * W + x0] += g * fy * (1.0 - fx);
                        gp[y1 * W + x1] += g * fy * fx;
                    }
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    check_axis("concat", parts[0], axis);
    const int64_t rank = parts[0].rank();
    std::vector<int64_t> out_shape = parts[0].shape();
    int64_t total = parts[0].shape()[axis];
    for (size_t k = 1; k < parts.size(); ++k) {
        if (parts[k].rank() != rank) throw ShapeError("concat: rank mismatch between inputs");
        for (int64_t i = 0; i < rank; ++i) {
            if (i == axis) continue;
            if (parts[k].shape()[i] != out_shape[i]) {
                std::ostringstream msg;
                msg << "concat: input " << k << " has extent " << parts[k].shape()[i]
                    << " at axis " << i << ", expected " << out_shape[i];
                throw ShapeError(msg.str());
            }
        }
        total += parts[k].shape()[axis];
    }
    out_shape[axis] = total;
    auto n = new_op("concat", out_shape, parts);
    const AxisLines al = axis_lines(out_shape, axis);
    std::vector<int64_t> offsets(parts.size() + 1, 0);
    for (size_t k = 0; k < parts.size(); ++k)
        offsets[k + 1] = offsets[k] + parts[k].shape()[axis];
    for (size_t k = 0; k < parts.size(); ++k) {
        const int64_t len_k = parts[k].shape()[axis];
        const int64_t block = len_k * al.inner;
        for (int64_t o = 0; o < al.outer; ++o) {
            const double* src = parts[k].data().data() + o * block;
            double* dst = n->data.data() + (o * al.len + offsets[k]) * al.inner;
            std::copy(src, src + block, dst);
        }
    }
    if (n->requires_grad)
        n->backward_fn = [al, offsets](Node& self) {
            for (size_t k = 0; k < self.parents.size(); ++k) {
                Node& p = *self.parents[k];
                if (!p.requires_grad) continue;
                const int64_t len_k = offsets[k + 1] - offsets[k];
                const int64_t block = len_k * al.inner;
                for (int64_t o = 0; o < al.outer; ++o) {
                    const double* src = self.grad.data() + (o * al.len + offsets[k]) * al.inner;
                    double* dst = p.grad.data() + o * block;
                    for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor transpose(const Tensor& a, const std::vector<int>& axes) {
    const int64_t rank = a.rank();
    if (static_cast<int64_t>(axes.size()) != rank)
        throw ShapeError("transpose: axes list length does not match tensor rank");
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= rank || seen[static_cast<size_t>(ax)])
            throw ShapeError("transpose: axes list is not a permutation");
        seen[static_cast<size_t>(ax)] = true;
    }
    std::vector<int64_t> out_shape(static_cast<size_t>(rank));
    for (int64_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[axes[i]];
    auto n = new_op("transpose", out_shape, {a});

    std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
    for (int64_t i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * a.shape()[i + 1];
    // stride of the source index that each output axis walks
    std::vector<int64_t> walk(static_cast<size_t>(rank));
    for (int64_t i = 0; i < rank; ++i) walk[i] = in_strides[axes[i]];

    const int64_t count = n->numel();
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t src = 0;
    for (int64_t flat = 0; flat < count; ++flat) {
        n->data[flat] = a.data()[src];
        for (int64_t i = rank - 1; i >= 0; --i) {
            src += walk[i];
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
            src -= walk[i] * out_shape[i];
        }
    }
    if (n->requires_grad)
        n->backward_fn = [out_shape, walk, rank](Node& self) {
            Node& p = *self.parents[0];
            std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
            int64_t src = 0;
            const int64_t count = static_cast<int64_t>(self.grad.size());
            for (int64_t flat = 0; flat < count; ++flat) {
                p.grad[src] += self.grad[flat];
                for (int64_t i = rank - 1; i >= 0; --i) {
                    src += walk[i];
                    if (++idx[i] < out_shape[i]) break;
                    idx[i] = 0;
                    src -= walk[i] * out_shape[i];
                }
            }
        };
    return Tensor::wrap(n);
}

Tensor reshape(const Tensor& a, const std::vector<int64_t>& new_shape) {
    int64_t count = 1;
    for (int64_t d : new_shape) count *= d;
    if (count != a.numel()) {
        std::ostringstream msg;
        msg << "reshape: cannot reshape " << shape_str(a.shape()) << " into "
            << shape_str(new_shape);
        throw ShapeError(msg.str());
    }
    auto n = new_op("reshape", new_shape, {a});
    n->data = a.data();
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    return Tensor::wrap(n);
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t stop) {
    check_axis("slice", a, axis);
    const int64_t len = a.shape()[axis];
    if (start < 0 || stop > len || start >= stop) {
        std::ostringstream msg;
        msg << "slice: range [" << start << "," << stop << ") invalid for axis " << axis
            << " of extent " << len;
        throw ShapeError(msg.str());
    }
    std::vector<int64_t> out_shape = a.shape();
    out_shape[axis] = stop - start;
    auto n = new_op("slice", out_shape, {a});
    const AxisLines al = axis_lines(a.shape(), axis);
    const int64_t out_block = (stop - start) * al.inner;
    for (int64_t o = 0; o < al.outer; ++o) {
        const double* src = a.data().data() + (o * al.len + start) * al.inner;
        std::copy(src, src + out_block, n->data.data() + o * out_block);
    }
    if (n->requires_grad)
        n->backward_fn = [al, start, out_block](Node& self) {
            Node& p = *self.parents[0];
            for (int64_t o = 0; o < al.outer; ++o) {
                const double* src = self.grad.data() + o * out_block;
                double* dst = p.grad.data() + (o * al.len + start) * al.inner;
                for (int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
            }
        };
    return Tensor::wrap(n);
}

Tensor sum(const Tensor& a) {
    auto n = new_op("sum", {}, {a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    n->data[0] = s;
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            const double g = self.grad[0];
            for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
        };
    return Tensor::wrap(n);
}

Tensor masked_sum(const Tensor& a, const Tensor& mask) {
    check_same_shape("masked_sum", a, mask);
    if (mask.requires_grad())
        throw std::invalid_argument("masked_sum: mask must be a constant (requires_grad false)");
    auto n = new_op("masked_sum", {}, {a, mask});
    double s = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * mask.data()[i];
    n->data[0] = s;
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& p = *self.parents[0];
            const Node& m = *self.parents[1];
            const double g = self.grad[0];
            for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g * m.data[i];
        };
    return Tensor::wrap(n);
}

}  // namespace ssseg
