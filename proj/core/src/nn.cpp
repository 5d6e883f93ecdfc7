#include "sams/nn.hpp"

#include <cmath>

#include "sams/error.hpp"

namespace sams {

Linear make_linear(std::int64_t in, std::int64_t out, Rng& rng) {
    if (in < 1 || out < 1) throw ValidationError("make_linear: dims must be >= 1");
    // gain^2 = 2 / (1 + slope^2) for leaky-ReLU with slope 0.01.
    const double gain = std::sqrt(2.0 / (1.0 + 0.01 * 0.01));
    const double wb = gain * std::sqrt(3.0 / static_cast<double>(in));
    std::vector<double> w(static_cast<std::size_t>(in * out));
    for (auto& v : w) v = rng.uniform(-wb, wb);
    const double bb = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> b(static_cast<std::size_t>(out));
    for (auto& v : b) v = rng.uniform(-bb, bb);
    return Linear{Tensor::param({in, out}, std::move(w)), Tensor::param({1, out}, std::move(b))};
}

Mlp::Mlp(std::int64_t in, const std::vector<std::int64_t>& hidden, std::int64_t out, Rng& rng)
    : in_(in), out_(out) {
    if (in < 1 || out < 1) throw ValidationError("Mlp: in/out dims must be >= 1");
    std::int64_t prev = in;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
        if (hidden[l] < 1) throw ValidationError("Mlp: hidden dims must be >= 1");
        layers_.push_back(make_linear(prev, hidden[l], rng));
        // Identity skip only between consecutive equal-width hidden layers.
        residual_.push_back(l > 0 && hidden[l] == hidden[l - 1]);
        prev = hidden[l];
    }
    layers_.push_back(make_linear(prev, out, rng));
}

Tensor Mlp::forward(const Tensor& x) const {
    if (x.cols() != in_)
        throw ShapeError("Mlp::forward: input has " + std::to_string(x.cols()) +
                         " features, expected " + std::to_string(in_));
    Tensor h = x;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
        Tensor a = leaky_relu(layers_[l].forward(h));
        h = residual_[l] ? add(a, h) : a;
    }
    return layers_.back().forward(h);
}

void Mlp::named_params(const std::string& prefix, NamedParams& out) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string base = prefix + ".layer" + std::to_string(l);
        out.emplace_back(base + ".weight", layers_[l].weight);
        out.emplace_back(base + ".bias", layers_[l].bias);
    }
}

void orthogonalize(std::vector<double>& w, std::int64_t rows, std::int64_t cols, Rng& rng) {
    const bool tall = rows >= cols;
    const std::int64_t n = tall ? rows : cols;  // vector length
    const std::int64_t k = tall ? cols : rows;  // number of vectors
    // Gaussian matrix, k vectors of length n, then two rounds of modified
    // Gram-Schmidt (re-orthogonalization keeps loss of orthogonality ~eps).
    std::vector<std::vector<double>> v(static_cast<std::size_t>(k));
    for (auto& col : v) {
        col.resize(static_cast<std::size_t>(n));
        for (auto& x : col) x = rng.normal();
    }
    for (int round = 0; round < 2; ++round) {
        for (std::int64_t i = 0; i < k; ++i) {
            auto& vi = v[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < i; ++j) {
                const auto& vj = v[static_cast<std::size_t>(j)];
                double dot = 0;
                for (std::int64_t t = 0; t < n; ++t) dot += vi[t] * vj[t];
                for (std::int64_t t = 0; t < n; ++t) vi[t] -= dot * vj[t];
            }
            double norm2 = 0;
            for (double x : vi) norm2 += x * x;
            if (norm2 < 1e-24)
                throw NumericError("orthogonalize: degenerate draw, vectors nearly dependent");
            const double inv = 1.0 / std::sqrt(norm2);
            for (auto& x : vi) x *= inv;
        }
    }
    w.assign(static_cast<std::size_t>(rows * cols), 0.0);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            w[static_cast<std::size_t>(i * cols + j)] =
                tall ? v[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]
                     : v[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
}

void orthogonal_init(Mlp& net, Rng& rng) {
    for (auto& layer : net.layers()) {
        orthogonalize(layer.weight.raw(), layer.weight.rows(), layer.weight.cols(), rng);
        std::fill(layer.bias.raw().begin(), layer.bias.raw().end(), 0.0);
    }
}

}  // namespace sams
