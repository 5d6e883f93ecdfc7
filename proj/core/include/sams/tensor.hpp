#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace sams {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily during backward
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grad

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// While false, ops produce plain constants and record no graph.
bool grad_enabled();

}  // namespace detail

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Dense row-major tensor of doubles with reverse-mode autodiff.
/// Value handles share the underlying node; tensors are immutable once they
/// participate in a graph (leaves may be rewritten between graph builds).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);
    /// Trainable leaf.
    static Tensor param(Shape shape, std::vector<double> data);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const;
    std::int64_t size() const;
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape().size()); }
    std::int64_t dim(std::int64_t i) const { return shape()[static_cast<std::size_t>(i)]; }
    std::int64_t rows() const;
    std::int64_t cols() const;

    bool requires_grad() const;
    bool is_leaf() const;

    const std::vector<double>& values() const;
    /// Mutable access for leaves/constants between graph builds (optimizer
    /// updates, in-place initialization). Never call on an interior node.
    std::vector<double>& raw();
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;
    double at(std::int64_t r, std::int64_t c) const;

    /// Value copy detached from any graph.
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return n_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;
    friend Tensor make_tensor(std::shared_ptr<detail::Node>);
};

Tensor make_tensor(std::shared_ptr<detail::Node> n);

// Elementwise with trailing-dimension broadcasting (size-1 expansion only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor lgamma(const Tensor& a);

// Row-wise over the last dimension of a 2-D tensor.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

Tensor sum(const Tensor& a);    // -> shape {1}
Tensor mean(const Tensor& a);   // -> shape {1}
Tensor rowsum(const Tensor& a); // (R,C) -> (R,1)
Tensor colsum(const Tensor& a); // (R,C) -> (1,C)

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);
Tensor take_rows(const Tensor& a, const std::vector<std::int64_t>& idx);
Tensor reshape(const Tensor& a, Shape shape);

/// Hard {0,1} draw of a relaxed Bernoulli: forward thresholds
/// sigmoid((logits + noise)/tau) at 1/2, backward uses the relaxed gradient.
/// `noise` must hold pre-drawn logistic noise and is treated as a constant.
Tensor straight_through_bernoulli(const Tensor& logits, const Tensor& noise, double tau);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate (+=).
void backward(const Tensor& loss);

}  // namespace sams
