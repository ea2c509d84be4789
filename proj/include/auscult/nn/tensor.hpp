#pragma once

// Dense row-major f32 tensors with an optional gradient buffer.
// A Tensor is a cheap shared handle; copies alias the same storage.

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace auscult::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Raised when a forward op produces a non-finite value, with the op name.
struct numeric_fault : std::runtime_error {
    explicit numeric_fault(const std::string& msg) : std::runtime_error(msg) {}
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl>();
        const std::int64_t n = shape_numel(shape);
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<std::size_t>(n), 0.0f);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (float& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<float> values,
                       bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw std::invalid_argument("tensor data size does not match shape " +
                                        shape_str(shape));
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(float value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::int64_t numel() const {
        return static_cast<std::int64_t>(impl_->data.size());
    }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Gradient buffer, allocated (zero-filled) on first use.
    float* grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
        return impl_->grad.data();
    }
    const std::vector<float>& grad_vec() const { return impl_->grad; }
    void zero_grad() {
        if (!impl_->grad.empty())
            std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    float item() const {
        if (impl_->data.size() != 1)
            throw std::invalid_argument("item() on non-scalar tensor");
        return impl_->data[0];
    }

    TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

}  // namespace auscult::nn
