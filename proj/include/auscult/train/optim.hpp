#pragma once

// AdamW with decoupled weight decay, bias-corrected moments, linear
// learning-rate warmup, and global gradient-norm clipping. Moment state
// and update arithmetic run in double precision so trajectories are
// reproducible to tight tolerances; parameters stay f32.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "../nn/tensor.hpp"

namespace auscult::train {

using auscult::nn::Tensor;

struct OptimizerConfig {
    float lr = 5e-5f;
    float weight_decay = 0.01f;
    float beta1 = 0.9f;
    float beta2 = 0.98f;
    float eps = 1e-8f;
    std::int64_t warmup_steps = 100;
    std::int64_t epochs = 30;
    std::int64_t batch_size = 16;
    float clip_norm = 1.0f;  // global grad-norm ceiling; <= 0 disables

    void validate() const {
        if (lr <= 0.0f) throw std::invalid_argument("optimizer: lr must be > 0");
        if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
            throw std::invalid_argument("optimizer: betas must be in [0, 1)");
        if (eps <= 0.0f) throw std::invalid_argument("optimizer: eps must be > 0");
        if (warmup_steps < 1)
            throw std::invalid_argument("optimizer: warmup_steps must be >= 1");
        if (epochs < 1)
            throw std::invalid_argument("optimizer: epochs must be >= 1");
        if (batch_size < 1)
            throw std::invalid_argument("optimizer: batch_size must be >= 1");
        if (weight_decay < 0.0f)
            throw std::invalid_argument("optimizer: weight_decay must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps},
                       {"warmup_steps", c.warmup_steps},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
}

// lr(step) = lr * min(1, step / warmup): linear ramp over the first
// warmup_steps updates (step is 1-indexed), constant afterwards.
inline double lr_at(const OptimizerConfig& c, std::int64_t step) {
    const double ratio =
        static_cast<double>(step) / static_cast<double>(c.warmup_steps);
    return static_cast<double>(c.lr) * std::min(1.0, ratio);
}

class AdamW {
  public:
    AdamW(std::vector<Tensor> params, OptimizerConfig cfg)
        : params_(std::move(params)), cfg_(std::move(cfg)) {
        cfg_.validate();
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor& t : params_) {
            m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
            v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
        }
    }

    std::int64_t steps_done() const { return t_; }
    double last_lr() const { return t_ == 0 ? 0.0 : lr_at(cfg_, t_); }

    void zero_grad() {
        for (Tensor& t : params_) t.zero_grad();
    }

    // One update over all parameters from their current grad buffers.
    // Returns the pre-clip global gradient norm. Tensors with no grad
    // buffer yet are treated as zero-gradient (decay still applies).
    double step() {
        ++t_;
        const double lr = lr_at(cfg_, t_);
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        const double wd = cfg_.weight_decay;
        const double eps = cfg_.eps;

        double sq_sum = 0.0;
        for (const Tensor& t : params_) {
            const auto& g = t.grad_vec();
            for (float gv : g)
                sq_sum += static_cast<double>(gv) * static_cast<double>(gv);
        }
        const double norm = std::sqrt(sq_sum);
        double scale = 1.0;
        if (cfg_.clip_norm > 0.0f && norm > static_cast<double>(cfg_.clip_norm))
            scale = static_cast<double>(cfg_.clip_norm) / norm;

        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& t = params_[pi];
            const std::int64_t n = t.numel();
            float* w = t.data();
            const bool has_g = t.has_grad();
            const float* g = has_g ? t.grad_vec().data() : nullptr;
            std::vector<double>& m = m_[pi];
            std::vector<double>& v = v_[pi];
            for (std::int64_t i = 0; i < n; ++i) {
                const double gi =
                    has_g ? static_cast<double>(g[i]) * scale : 0.0;
                const auto ui = static_cast<std::size_t>(i);
                m[ui] = b1 * m[ui] + (1.0 - b1) * gi;
                v[ui] = b2 * v[ui] + (1.0 - b2) * gi * gi;
                const double mhat = m[ui] / corr1;
                const double vhat = v[ui] / corr2;
                const double theta = static_cast<double>(w[i]);
                w[i] = static_cast<float>(
                    theta - lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta));
            }
        }
        return norm;
    }

  private:
    std::vector<Tensor> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace auscult::train
