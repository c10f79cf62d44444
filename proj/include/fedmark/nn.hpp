#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "fedmark/tensor.hpp"

namespace fedmark::nn {

enum class Activation { relu, identity };

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    Activation activation = Activation::identity;

    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Layer widths plus activations; {64, 32, 16} with {relu, identity} is a
// two-layer encoder.
struct LayerSpec {
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;  // one per layer, widths.size() - 1 entries
};

class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<DenseLayer> layers);

    // Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
    static DenseNet init(const LayerSpec& spec, std::mt19937_64& rng);

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;

    friend bool operator==(const DenseNet&, const DenseNet&) = default;

private:
    std::vector<DenseLayer> layers_;
};

std::size_t parameter_count(const LayerSpec& spec);

struct LayerGrads {
    Tensor weight;
    Tensor bias;
};

struct NetGrads {
    std::vector<LayerGrads> layers;
    Tensor input;  // d loss / d x

    // Zero gradients shaped like `net`'s parameters.
    static NetGrads zeros_like(const DenseNet& net);
    void accumulate(const NetGrads& other);
};

// Activations recorded during a forward pass; backward consumes them.
struct ForwardTrace {
    std::vector<Tensor> inputs;  // input to each layer
    std::vector<Tensor> outputs; // post-activation output of each layer
    const Tensor& result() const { return outputs.back(); }
};

Tensor forward(const DenseNet& net, const Tensor& x);
ForwardTrace forward_trace(const DenseNet& net, const Tensor& x);

NetGrads backward(const DenseNet& net, const ForwardTrace& trace, const Tensor& upstream);
NetGrads backward(const DenseNet& net, const Tensor& x, const Tensor& upstream);

struct SGDConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 16;

    void validate() const;
};

DenseNet sgd_step(const DenseNet& net, const NetGrads& grads, const SGDConfig& cfg);
void sgd_step_inplace(DenseNet& net, const NetGrads& grads, double learning_rate);

// Row-wise unit normalization. Throws DegenerateInputError on an all-zero row.
Tensor l2_normalize(const Tensor& v);

// Gradient through l2_normalize: given x and d loss / d normalize(x).
Tensor l2_normalize_backward(const Tensor& x, const Tensor& upstream);

}  // namespace fedmark::nn
