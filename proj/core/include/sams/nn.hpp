#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sams/rng.hpp"
#include "sams/tensor.hpp"

namespace sams {

// Ordered name -> parameter map; order is the canonical serialization and
// optimizer-slot order.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct Linear {
    Tensor weight;  // (in, out)
    Tensor bias;    // (1, out)

    Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }
    std::int64_t in_dim() const { return weight.rows(); }
    std::int64_t out_dim() const { return weight.cols(); }
};

// Uniform fan-in initialization (Kaiming-style scaling for the leaky-ReLU
// gain), deterministic in the stream.
Linear make_linear(std::int64_t in, std::int64_t out, Rng& rng);

// Feedforward stack with leaky-ReLU hidden activations and identity skip
// connections between consecutive equal-width hidden layers. Empty hidden
// list degenerates to a single linear map. Output layer is linear.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::int64_t in, const std::vector<std::int64_t>& hidden, std::int64_t out, Rng& rng);

    Tensor forward(const Tensor& x) const;

    std::int64_t in_dim() const { return in_; }
    std::int64_t out_dim() const { return out_; }
    std::vector<Linear>& layers() { return layers_; }
    const std::vector<Linear>& layers() const { return layers_; }

    // Appends "prefix.layer{i}.weight" / "prefix.layer{i}.bias" in order.
    void named_params(const std::string& prefix, NamedParams& out) const;

private:
    std::int64_t in_ = 0;
    std::int64_t out_ = 0;
    std::vector<Linear> layers_;  // hidden layers then the output layer
    std::vector<bool> residual_;  // per hidden layer: add identity skip
};

// Replaces w (rows x cols, row-major) with a (semi-)orthogonal matrix:
// columns orthonormal when rows >= cols, rows orthonormal otherwise.
void orthogonalize(std::vector<double>& w, std::int64_t rows, std::int64_t cols, Rng& rng);

// Orthogonalizes every weight matrix of the network and zeroes the biases.
void orthogonal_init(Mlp& net, Rng& rng);

}  // namespace sams
