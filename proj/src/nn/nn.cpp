#include "fedmark/nn.hpp"

#include <cmath>
#include <string>

#include "fedmark/error.hpp"
#include "fedmark/kernels.hpp"

namespace fedmark::nn {

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("DenseNet needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        require_rank2(l.weight, "DenseNet weight");
        if (l.bias.rank() != 1 || l.bias.size() != l.out_dim())
            throw ShapeError("DenseNet bias does not match layer " + std::to_string(i));
        if (i > 0 && layers_[i - 1].out_dim() != l.in_dim())
            throw ShapeError("DenseNet layer " + std::to_string(i) + " does not chain");
    }
}

DenseNet DenseNet::init(const LayerSpec& spec, std::mt19937_64& rng) {
    if (spec.widths.size() < 2 || spec.activations.size() != spec.widths.size() - 1)
        throw ShapeError("LayerSpec needs n+1 widths for n activations");
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
        const std::size_t in = spec.widths[i];
        const std::size_t out = spec.widths[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        DenseLayer layer{Tensor({in, out}), Tensor({out}), spec.activations[i]};
        for (double& w : layer.weight.data()) w = u(rng);
        for (double& b : layer.bias.data()) b = u(rng);
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.front().in_dim(); }
std::size_t DenseNet::output_dim() const { return layers_.back().out_dim(); }

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

std::size_t parameter_count(const LayerSpec& spec) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i)
        n += spec.widths[i] * spec.widths[i + 1] + spec.widths[i + 1];
    return n;
}

NetGrads NetGrads::zeros_like(const DenseNet& net) {
    NetGrads g;
    for (const auto& l : net.layers())
        g.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
    return g;
}

void NetGrads::accumulate(const NetGrads& other) {
    if (other.layers.size() != layers.size()) throw ShapeError("NetGrads layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        require_same_shape(layers[i].weight, other.layers[i].weight, "NetGrads::accumulate");
        auto w = layers[i].weight.data();
        auto ow = other.layers[i].weight.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] += ow[k];
        auto b = layers[i].bias.data();
        auto ob = other.layers[i].bias.data();
        for (std::size_t k = 0; k < b.size(); ++k) b[k] += ob[k];
    }
}

ForwardTrace forward_trace(const DenseNet& net, const Tensor& x) {
    require_rank2(x, "forward");
    if (x.cols() != net.input_dim()) {
        throw ShapeError("forward: input has " + std::to_string(x.cols()) +
                         " features, net expects " + std::to_string(net.input_dim()));
    }
    ForwardTrace trace;
    trace.inputs.reserve(net.layers().size());
    trace.outputs.reserve(net.layers().size());
    const std::size_t batch = x.rows();
    const Tensor* current = &x;
    for (const auto& layer : net.layers()) {
        trace.inputs.push_back(*current);
        Tensor out({batch, layer.out_dim()});
        kernels::parallel::matmul(current->data(), layer.weight.data(), out.data(), batch,
                                  layer.in_dim(), layer.out_dim());
        for (std::size_t r = 0; r < batch; ++r) {
            auto row = out.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                double v = row[c] + layer.bias[c];
                if (layer.activation == Activation::relu && v < 0.0) v = 0.0;
                row[c] = v;
            }
        }
        trace.outputs.push_back(std::move(out));
        current = &trace.outputs.back();
    }
    return trace;
}

Tensor forward(const DenseNet& net, const Tensor& x) {
    return std::move(forward_trace(net, x).outputs.back());
}

NetGrads backward(const DenseNet& net, const ForwardTrace& trace, const Tensor& upstream) {
    require_same_shape(upstream, trace.result(), "backward upstream");
    NetGrads grads;
    grads.layers.resize(net.layers().size());
    Tensor delta = upstream;
    for (std::size_t li = net.layers().size(); li-- > 0;) {
        const auto& layer = net.layers()[li];
        const Tensor& in = trace.inputs[li];
        const Tensor& out = trace.outputs[li];
        const std::size_t batch = in.rows();
        if (layer.activation == Activation::relu) {
            // relu'(z) evaluated from the output: zero where the unit was clamped.
            for (std::size_t k = 0; k < delta.size(); ++k)
                if (out[k] <= 0.0) delta[k] = 0.0;
        }
        LayerGrads lg{Tensor(layer.weight.shape()), Tensor(layer.bias.shape())};
        kernels::parallel::matmul_tn(in.data(), delta.data(), lg.weight.data(), batch,
                                     layer.in_dim(), layer.out_dim());
        for (std::size_t r = 0; r < batch; ++r) {
            auto row = delta.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) lg.bias[c] += row[c];
        }
        Tensor next({batch, layer.in_dim()});
        kernels::parallel::matmul_nt(delta.data(), layer.weight.data(), next.data(), batch,
                                     layer.out_dim(), layer.in_dim());
        grads.layers[li] = std::move(lg);
        delta = std::move(next);
    }
    grads.input = std::move(delta);
    return grads;
}

NetGrads backward(const DenseNet& net, const Tensor& x, const Tensor& upstream) {
    const auto trace = forward_trace(net, x);
    return backward(net, trace, upstream);
}

void SGDConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("SGD learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("SGD batch_size must be >= 1");
}

void sgd_step_inplace(DenseNet& net, const NetGrads& grads, double learning_rate) {
    if (grads.layers.size() != net.layers().size())
        throw ShapeError("sgd_step: gradient layer count does not match net");
    for (std::size_t i = 0; i < grads.layers.size(); ++i) {
        auto& layer = net.layers()[i];
        require_same_shape(layer.weight, grads.layers[i].weight, "sgd_step weight");
        require_same_shape(layer.bias, grads.layers[i].bias, "sgd_step bias");
        auto w = layer.weight.data();
        auto gw = grads.layers[i].weight.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= learning_rate * gw[k];
        auto b = layer.bias.data();
        auto gb = grads.layers[i].bias.data();
        for (std::size_t k = 0; k < b.size(); ++k) b[k] -= learning_rate * gb[k];
    }
}

DenseNet sgd_step(const DenseNet& net, const NetGrads& grads, const SGDConfig& cfg) {
    cfg.validate();
    DenseNet out = net;
    sgd_step_inplace(out, grads, cfg.learning_rate);
    return out;
}

Tensor l2_normalize(const Tensor& v) {
    require_rank2(v, "l2_normalize");
    Tensor out = v;
    for (std::size_t r = 0; r < v.rows(); ++r) {
        auto row = out.row(r);
        double sq = 0.0;
        for (double x : row) sq += x * x;
        if (sq == 0.0) throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " is all zero");
        const double norm = std::sqrt(sq);
        for (double& x : row) x /= norm;
    }
    return out;
}

Tensor l2_normalize_backward(const Tensor& x, const Tensor& upstream) {
    require_same_shape(x, upstream, "l2_normalize_backward");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto gr = upstream.row(r);
        double sq = 0.0;
        for (double v : xr) sq += v * v;
        if (sq == 0.0) throw DegenerateInputError("l2_normalize_backward: zero row");
        const double norm = std::sqrt(sq);
        // d(x/|x|) = (g - y (y.g)) / |x| with y = x/|x|
        double yg = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) yg += xr[c] / norm * gr[c];
        auto orow = out.row(r);
        for (std::size_t c = 0; c < xr.size(); ++c) orow[c] = (gr[c] - xr[c] / norm * yg) / norm;
    }
    return out;
}

}  // namespace fedmark::nn
