#pragma once

#include <cmath>
#include <vector>

#include "lanecascade/errors.hpp"
#include "lanecascade/nn/layers.hpp"

namespace lanecascade::nn {

// Polynomial learning-rate decay: base * (1 - epoch/total)^power.
inline double poly_lr(double base_lr, int epoch, int total_epochs, double power = 0.9) {
    if (total_epochs <= 0) throw InvalidArgumentError("poly_lr: total_epochs must be positive");
    if (epoch < 0 || epoch >= total_epochs) throw InvalidArgumentError("poly_lr: epoch out of range");
    return base_lr * std::pow(1.0 - static_cast<double>(epoch) / total_epochs, power);
}

class Adam {
public:
    explicit Adam(const ParamSet& set, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(set.params), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].value->size(), 0.0f);
            v_[i].assign(params_[i].value->size(), 0.0f);
        }
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& value = *params_[i].value;
            const auto& grad = *params_[i].grad;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                const double g = grad[k];
                m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * g);
                v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * g * g);
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                value[k] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::int64_t step_count() const { return t_; }

    // Flattened first/second-moment state, in parameter registration order;
    // lets a training run be checkpointed and continued exactly.
    void get_state(std::vector<float>& m, std::vector<float>& v) const {
        m.clear();
        v.clear();
        for (const auto& mi : m_) m.insert(m.end(), mi.begin(), mi.end());
        for (const auto& vi : v_) v.insert(v.end(), vi.begin(), vi.end());
    }

    void set_state(const std::vector<float>& m, const std::vector<float>& v, std::int64_t t) {
        std::size_t off = 0;
        for (auto& mi : m_) off += mi.size();
        if (m.size() != off || v.size() != off)
            throw InvalidArgumentError("optimizer state size mismatch");
        off = 0;
        for (auto& mi : m_) {
            std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(off), mi.size(), mi.begin());
            off += mi.size();
        }
        off = 0;
        for (auto& vi : v_) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), vi.size(), vi.begin());
            off += vi.size();
        }
        t_ = t;
    }

private:
    std::vector<ParamRef> params_;
    double beta1_, beta2_, eps_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace lanecascade::nn
