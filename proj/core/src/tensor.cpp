#include "sams/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sams/error.hpp"
#include "sams/special.hpp"

namespace sams {

namespace {

thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

NodePtr make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!t_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void attach(const NodePtr& out, std::initializer_list<NodePtr> parents,
            std::function<void(detail::Node&)> fn) {
    out->requires_grad = true;
    out->parents.assign(parents);
    out->backprop = std::move(fn);
}

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got shape " +
                         shape_str(t.shape()));
}

// Trailing-dimension broadcast: dimensions align from the right and only
// size-1 dimensions expand.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t k = 0; k < nd; ++k) {
        const std::int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
        const std::int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[nd - 1 - k] = std::max(da, db);
    }
    return out;
}

// Row-major strides padded to ndim, with 0 on broadcast dimensions.
std::vector<std::int64_t> bcast_strides(const Shape& s, std::size_t ndim) {
    std::vector<std::int64_t> st(ndim, 0);
    std::int64_t acc = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t i = s.size() - 1 - k;
        st[ndim - 1 - k] = (s[i] == 1) ? 0 : acc;
        acc *= s[i];
    }
    return st;
}

struct BcastIter {
    const Shape& out;
    std::vector<std::int64_t> sa, sb;
    std::vector<std::int64_t> idx;

    BcastIter(const Shape& out_shape, const Shape& a, const Shape& b)
        : out(out_shape),
          sa(bcast_strides(a, out_shape.size())),
          sb(bcast_strides(b, out_shape.size())),
          idx(out_shape.size(), 0) {}

    template <typename F>
    void run(std::int64_t n, F&& f) {
        std::int64_t ia = 0, ib = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            f(i, ia, ib);
            for (std::int64_t d = static_cast<std::int64_t>(out.size()) - 1; d >= 0; --d) {
                auto du = static_cast<std::size_t>(d);
                ++idx[du];
                ia += sa[du];
                ib += sb[du];
                if (idx[du] < out[du]) break;
                ia -= sa[du] * out[du];
                ib -= sb[du] * out[du];
                idx[du] = 0;
            }
        }
    }
};

enum class BcastKind { same, row, col, a_scalar, b_scalar, generic };

// Fast-path classification for the 2-D cases the models hit constantly.
BcastKind classify(const Shape& a, const Shape& b) {
    if (a == b) return BcastKind::same;
    if (shape_numel(a) == 1) return BcastKind::a_scalar;
    if (shape_numel(b) == 1) return BcastKind::b_scalar;
    if (a.size() == 2 && (b.size() == 1 || b.size() == 2)) {
        const std::int64_t br = b.size() == 2 ? b[0] : 1;
        const std::int64_t bc = b.size() == 2 ? b[1] : b[0];
        if (br == 1 && bc == a[1]) return BcastKind::row;   // (R,C) op (1,C)
        if (b.size() == 2 && br == a[0] && bc == 1) return BcastKind::col;  // (R,C) op (R,1)
    }
    return BcastKind::generic;
}

template <typename FwdF>
NodePtr binary_forward(const Tensor& a, const Tensor& b, const char* op, FwdF&& f) {
    Shape os = broadcast_shape(a.shape(), b.shape(), op);
    const std::int64_t n = shape_numel(os);
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    switch (classify(a.shape(), b.shape())) {
        case BcastKind::same:
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
            break;
        case BcastKind::a_scalar: {
            const double s = av[0];
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(s, bv[i]);
            break;
        }
        case BcastKind::b_scalar: {
            const double s = bv[0];
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i], s);
            break;
        }
        case BcastKind::row: {
            const std::int64_t r = os[0], c = os[1];
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = f(av[i * c + j], bv[j]);
            break;
        }
        case BcastKind::col: {
            const std::int64_t r = os[0], c = os[1];
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = f(av[i * c + j], bv[i]);
            break;
        }
        case BcastKind::generic: {
            BcastIter it(os, a.shape(), b.shape());
            it.run(n, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                out[i] = f(av[ia], bv[ib]);
            });
            break;
        }
    }
    return make_node(std::move(os), std::move(out));
}

// GA(g, a_val, b_val) and GB(g, a_val, b_val) give the two partials.
template <typename GA, typename GB>
void binary_backward(detail::Node& self, const NodePtr& an, const NodePtr& bn, GA&& ga, GB&& gb) {
    const auto& g = self.grad;
    const std::int64_t n = self.size();
    const bool need_a = an->requires_grad;
    const bool need_b = bn->requires_grad;
    if (need_a) an->ensure_grad();
    if (need_b) bn->ensure_grad();
    switch (classify(an->shape, bn->shape)) {
        case BcastKind::same:
            for (std::int64_t i = 0; i < n; ++i) {
                if (need_a) an->grad[i] += ga(g[i], an->value[i], bn->value[i]);
                if (need_b) bn->grad[i] += gb(g[i], an->value[i], bn->value[i]);
            }
            return;
        case BcastKind::a_scalar: {
            const double s = an->value[0];
            for (std::int64_t i = 0; i < n; ++i) {
                if (need_a) an->grad[0] += ga(g[i], s, bn->value[i]);
                if (need_b) bn->grad[i] += gb(g[i], s, bn->value[i]);
            }
            return;
        }
        case BcastKind::b_scalar: {
            const double s = bn->value[0];
            for (std::int64_t i = 0; i < n; ++i) {
                if (need_a) an->grad[i] += ga(g[i], an->value[i], s);
                if (need_b) bn->grad[0] += gb(g[i], an->value[i], s);
            }
            return;
        }
        case BcastKind::row: {
            const std::int64_t r = self.shape[0], c = self.shape[1];
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) {
                    const std::int64_t k = i * c + j;
                    if (need_a) an->grad[k] += ga(g[k], an->value[k], bn->value[j]);
                    if (need_b) bn->grad[j] += gb(g[k], an->value[k], bn->value[j]);
                }
            return;
        }
        case BcastKind::col: {
            const std::int64_t r = self.shape[0], c = self.shape[1];
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) {
                    const std::int64_t k = i * c + j;
                    if (need_a) an->grad[k] += ga(g[k], an->value[k], bn->value[i]);
                    if (need_b) bn->grad[i] += gb(g[k], an->value[k], bn->value[i]);
                }
            return;
        }
        case BcastKind::generic: {
            BcastIter it(self.shape, an->shape, bn->shape);
            it.run(n, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                if (need_a) an->grad[ia] += ga(g[i], an->value[ia], bn->value[ib]);
                if (need_b) bn->grad[ib] += gb(g[i], an->value[ia], bn->value[ib]);
            });
            return;
        }
    }
}

template <typename FwdF, typename GA, typename GB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, FwdF&& f, GA&& ga, GB&& gb) {
    NodePtr out = binary_forward(a, b, op, f);
    if (recording({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        attach(out, {an, bn}, [an, bn, ga, gb](detail::Node& self) {
            binary_backward(self, an, bn, ga, gb);
        });
    }
    return make_tensor(out);
}

// Unary op; backward receives (g, x, y) with y the cached forward value.
template <typename FwdF, typename GX>
Tensor unary_op(const Tensor& a, FwdF&& f, GX&& gx) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    NodePtr o = make_node(a.shape(), std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, gx](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i)
                an->grad[i] += gx(self.grad[i], an->value[i], self.value[i]);
        });
    }
    return make_tensor(o);
}

}  // namespace

namespace detail {
bool grad_enabled() { return t_grad_enabled; }
}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

Tensor make_tensor(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const auto n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match buffer of " +
                         std::to_string(data.size()) + " values");
    auto node = make_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
    return from(std::move(shape), std::move(data), true);
}

const Shape& Tensor::shape() const { return n_->shape; }
std::int64_t Tensor::size() const { return n_->size(); }

std::int64_t Tensor::rows() const {
    check_2d(*this, "rows");
    return n_->shape[0];
}
std::int64_t Tensor::cols() const {
    check_2d(*this, "cols");
    return n_->shape[1];
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }
bool Tensor::is_leaf() const { return n_ && n_->leaf; }

const std::vector<double>& Tensor::values() const { return n_->value; }

std::vector<double>& Tensor::raw() {
    if (!n_->leaf) throw Error("Tensor::raw: mutable access is restricted to leaves");
    return n_->value;
}

const std::vector<double>& Tensor::grad() const {
    if (n_->grad.size() != n_->value.size())
        throw Error("Tensor::grad: no gradient recorded (run backward first)");
    return n_->grad;
}

void Tensor::zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(size()) +
                                      " elements, expected 1");
    return n_->value[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
    check_2d(*this, "at");
    return n_->value[static_cast<std::size_t>(r * cols() + c)];
}

Tensor Tensor::detach() const {
    auto node = make_node(n_->shape, n_->value);
    node->leaf = true;
    return Tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        a, [](double x) { return -x; }, [](double g, double, double) { return -g; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double x) { return x + s; }, [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double x) { return x * s; }, [s](double g, double, double) { return g * s; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m * n));
    {
        ConstMatMap A(a.values().data(), m, k);
        ConstMatMap B(b.values().data(), k, n);
        MatMap(out.data(), m, n).noalias() = A * B;
    }
    NodePtr o = make_node({m, n}, std::move(out));
    if (recording({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        attach(o, {an, bn}, [an, bn, m, k, n](detail::Node& self) {
            ConstMatMap G(self.grad.data(), m, n);
            if (an->requires_grad) {
                an->ensure_grad();
                ConstMatMap B(bn->value.data(), k, n);
                MatMap(an->grad.data(), m, k).noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                ConstMatMap A(an->value.data(), m, k);
                MatMap(bn->grad.data(), k, n).noalias() += A.transpose() * G;
            }
        });
    }
    return make_tensor(o);
}

Tensor transpose(const Tensor& a) {
    check_2d(a, "transpose");
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<std::size_t>(r * c));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    NodePtr o = make_node({c, r}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
        });
    }
    return make_tensor(o);
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); }, [](double g, double x, double) { return g / x; });
}

Tensor log1p(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log1p(x); },
        [](double g, double x, double) { return g / (1.0 + x); });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double g, double, double y) { return 0.5 * g / y; });
}

namespace {
double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](double x) { return sigmoid_scalar(x); },
        [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); },
        [](double g, double x, double) { return g * sigmoid_scalar(x); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double g, double x, double) { return x > 0 ? g : slope * g; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(
        a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double g, double x, double) { return (x > lo && x < hi) ? g : 0.0; });
}

Tensor lgamma(const Tensor& a) {
    return unary_op(
        a, [](double x) { return lgamma_lanczos(x); },
        [](double g, double x, double) { return g * digamma(x); });
}

Tensor softmax_rows(const Tensor& a) {
    check_2d(a, "softmax_rows");
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<std::size_t>(r * c));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i) {
        const double* x = av.data() + i * c;
        double* y = out.data() + i * c;
        const double m = *std::max_element(x, x + c);
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - m));
        for (std::int64_t j = 0; j < c; ++j) y[j] /= s;
    }
    NodePtr o = make_node({r, c}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0;
                for (std::int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return make_tensor(o);
}

Tensor log_softmax_rows(const Tensor& a) {
    check_2d(a, "log_softmax_rows");
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<std::size_t>(r * c));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i) {
        const double* x = av.data() + i * c;
        double* y = out.data() + i * c;
        const double m = *std::max_element(x, x + c);
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) s += std::exp(x[j] - m);
        const double lse = m + std::log(s);
        for (std::int64_t j = 0; j < c; ++j) y[j] = x[j] - lse;
    }
    NodePtr o = make_node({r, c}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double gs = 0;
                for (std::int64_t j = 0; j < c; ++j) gs += g[j];
                for (std::int64_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += g[j] - std::exp(y[j]) * gs;
            }
        });
    }
    return make_tensor(o);
}

Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.values()) s += v;
    NodePtr o = make_node({1}, {s});
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an](detail::Node& self) {
            an->ensure_grad();
            const double g = self.grad[0];
            for (auto& gi : an->grad) gi += g;
        });
    }
    return make_tensor(o);
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor rowsum(const Tensor& a) {
    check_2d(a, "rowsum");
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<std::size_t>(r), 0.0);
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) s += av[i * c + j];
        out[i] = s;
    }
    NodePtr o = make_node({r, 1}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const double g = self.grad[i];
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += g;
            }
        });
    }
    return make_tensor(o);
}

Tensor colsum(const Tensor& a) {
    check_2d(a, "colsum");
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j] += av[i * c + j];
    NodePtr o = make_node({1, c}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j];
        });
    }
    return make_tensor(o);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check_2d(a, "concat_cols");
    check_2d(b, "concat_cols");
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row counts disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(static_cast<std::size_t>(r * (ca + cb)));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::int64_t i = 0; i < r; ++i) {
        std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
        std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    NodePtr o = make_node({r, ca + cb}, std::move(out));
    if (recording({&a, &b})) {
        auto an = a.node();
        auto bn = b.node();
        attach(o, {an, bn}, [an, bn, r, ca, cb](detail::Node& self) {
            for (std::int64_t i = 0; i < r; ++i) {
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (std::int64_t j = 0; j < ca; ++j)
                        an->grad[i * ca + j] += self.grad[i * (ca + cb) + j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::int64_t j = 0; j < cb; ++j)
                        bn->grad[i * cb + j] += self.grad[i * (ca + cb) + ca + j];
                }
            }
        });
    }
    return make_tensor(o);
}

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
    check_2d(a, "slice_rows");
    if (r0 < 0 || r1 > a.rows() || r0 > r1)
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of bounds for " + shape_str(a.shape()));
    const std::int64_t c = a.cols(), r = r1 - r0;
    std::vector<double> out(a.values().begin() + r0 * c, a.values().begin() + r1 * c);
    NodePtr o = make_node({r, c}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r0, r, c](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r * c; ++i) an->grad[r0 * c + i] += self.grad[i];
        });
    }
    return make_tensor(o);
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
    check_2d(a, "slice_cols");
    if (c0 < 0 || c1 > a.cols() || c0 > c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of bounds for " + shape_str(a.shape()));
    const std::int64_t r = a.rows(), c = a.cols(), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r * w));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i)
        std::copy_n(av.data() + i * c + c0, w, out.data() + i * w);
    NodePtr o = make_node({r, w}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an, r, c, c0, w](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    an->grad[i * c + c0 + j] += self.grad[i * w + j];
        });
    }
    return make_tensor(o);
}

Tensor take_rows(const Tensor& a, const std::vector<std::int64_t>& idx) {
    check_2d(a, "take_rows");
    const std::int64_t c = a.cols(), r = static_cast<std::int64_t>(idx.size());
    std::vector<double> out(static_cast<std::size_t>(r * c));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < r; ++i) {
        if (idx[i] < 0 || idx[i] >= a.rows())
            throw ShapeError("take_rows: index " + std::to_string(idx[i]) + " out of bounds for " +
                             shape_str(a.shape()));
        std::copy_n(av.data() + idx[i] * c, c, out.data() + i * c);
    }
    NodePtr o = make_node({r, c}, std::move(out));
    if (recording({&a})) {
        auto an = a.node();
        auto ix = idx;
        attach(o, {an}, [an, ix, c](detail::Node& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < ix.size(); ++i)
                for (std::int64_t j = 0; j < c; ++j)
                    an->grad[ix[i] * c + j] += self.grad[static_cast<std::int64_t>(i) * c + j];
        });
    }
    return make_tensor(o);
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    NodePtr o = make_node(std::move(shape), a.values());
    if (recording({&a})) {
        auto an = a.node();
        attach(o, {an}, [an](detail::Node& self) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        });
    }
    return make_tensor(o);
}

Tensor straight_through_bernoulli(const Tensor& logits, const Tensor& noise, double tau) {
    if (tau <= 0) throw ValidationError("straight_through_bernoulli: temperature must be > 0");
    if (logits.shape() != noise.shape())
        throw ShapeError("straight_through_bernoulli: logits " + shape_str(logits.shape()) +
                         " vs noise " + shape_str(noise.shape()));
    const auto& lv = logits.values();
    const auto& nv = noise.values();
    std::vector<double> relaxed(lv.size());
    std::vector<double> hard(lv.size());
    for (std::size_t i = 0; i < lv.size(); ++i) {
        relaxed[i] = sigmoid_scalar((lv[i] + nv[i]) / tau);
        hard[i] = relaxed[i] > 0.5 ? 1.0 : 0.0;
    }
    NodePtr o = make_node(logits.shape(), std::move(hard));
    if (recording({&logits})) {
        auto ln = logits.node();
        attach(o, {ln}, [ln, relaxed = std::move(relaxed), tau](detail::Node& self) {
            ln->ensure_grad();
            for (std::int64_t i = 0; i < self.size(); ++i)
                ln->grad[i] += self.grad[i] * relaxed[i] * (1.0 - relaxed[i]) / tau;
        });
    }
    return make_tensor(o);
}

void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!std::isfinite(loss.item()))
        throw NumericError("backward: loss is non-finite (" + std::to_string(loss.item()) + ")");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS over the recorded graph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

}  // namespace sams
