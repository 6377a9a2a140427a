#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssseg/rng.hpp"
#include "ssseg/tensor.hpp"

namespace ssseg {

// Ordered, named collection of trainable leaf tensors. Order is the
// registration order; it fixes checkpoint layout and SGD update order.
class ParamSet {
public:
    Tensor add(const std::string& name, Tensor t) {
        items_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

    Tensor* find(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return &t;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [n, t] : items_) t.zero_grad();
    }

    size_t size() const { return items_.size(); }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

inline Tensor randn_tensor(const std::vector<int64_t>& shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
    return t;
}

// He initialization for conv / linear weights given fan-in.
inline Tensor he_tensor(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
    return randn_tensor(shape, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

inline Tensor zeros_param(const std::vector<int64_t>& shape) {
    return Tensor::zeros(shape, true);
}

// SGD with heavy-ball momentum. Velocity buffers are keyed by position in the
// ParamSet, so the update order is deterministic.
class SgdMomentum {
public:
    explicit SgdMomentum(double momentum) : momentum_(momentum) {}

    void step(ParamSet& params, double lr) {
        if (velocity_.size() != params.size()) velocity_.resize(params.size());
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& t = const_cast<Tensor&>(params.items()[k].second);
            auto& vel = velocity_[k];
            if (vel.size() != t.data().size()) vel.assign(t.data().size(), 0.0);
            const auto& g = t.grad();
            if (g.empty()) continue;  // parameter unreachable from this loss
            auto& d = t.mutable_data();
            for (size_t i = 0; i < d.size(); ++i) {
                vel[i] = momentum_ * vel[i] + g[i];
                d[i] -= lr * vel[i];
            }
        }
    }

private:
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

// Polynomial learning rate decay; t counts completed steps, total the step
// budget.
inline double poly_lr(double base, int64_t t, int64_t total, double power) {
    return base * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

}  // namespace ssseg
