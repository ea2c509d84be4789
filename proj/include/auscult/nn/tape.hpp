#pragma once

// Reverse-mode autodiff tape. Ops append a backward closure when recording
// is active (tape != nullptr and some input requires a gradient); backward()
// replays the closures in reverse. Closures capture shared handles to the
// tensors they touch, so intermediates stay alive for the backward pass.

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace auscult::nn {

class Tape {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 on a scalar and runs all nodes in reverse.
    void backward(Tensor loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward() expects a scalar loss");
        if (!loss.requires_grad())
            throw std::invalid_argument("backward() on a non-recorded tensor");
        loss.grad()[0] = 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline bool want_grad(const Tape* tape, const Tensor& a) {
    return tape != nullptr && a.requires_grad();
}
inline bool want_grad(const Tape* tape, const Tensor& a, const Tensor& b) {
    return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

// Zero-filled gradient buffer of an impl, allocated on first use.
inline float* grad_of(const std::shared_ptr<TensorImpl>& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0f);
    return t->grad.data();
}

// True when the node has an upstream gradient to propagate.
inline bool has_upstream(const std::shared_ptr<TensorImpl>& out) {
    return !out->grad.empty();
}

inline void check_finite(const Tensor& t, const char* op) {
    const float* p = t.data();
    const std::int64_t n = t.numel();
    const float lim = std::numeric_limits<float>::max();
    bool ok = true;
    for (std::int64_t i = 0; i < n; ++i) {
        // fabs(v) <= max is false for both NaN and +-Inf.
        ok &= (std::fabs(p[i]) <= lim);
    }
    if (!ok)
        throw numeric_fault(std::string("non-finite value produced by op '") +
                            op + "'");
}

}  // namespace detail

}  // namespace auscult::nn
