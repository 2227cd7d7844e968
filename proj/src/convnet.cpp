#include "pedpipe/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "pedpipe/error.hpp"
#include "pedpipe/random.hpp"

namespace pedpipe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Topology

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Convolution: return "conv";
        case LayerKind::Rectifier: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::FullyConnected: return "fc";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

LayerKind parse_kind(const std::string& s) {
    for (auto k : {LayerKind::Convolution, LayerKind::Rectifier, LayerKind::MaxPool, LayerKind::FullyConnected,
                   LayerKind::Softmax}) {
        if (s == kind_name(k)) return k;
    }
    throw ParseError("unknown layer kind '" + s + "'");
}

}  // namespace

std::vector<TensorShape> ConvNetSpec::shapes() const {
    if (input_height <= 0 || input_width <= 0 || input_channels <= 0) {
        throw ShapeError("network input dimensions must be positive");
    }
    if (layers.size() < 2) throw ShapeError("network needs at least a fully-connected layer and a softmax");
    std::vector<TensorShape> out;
    TensorShape cur{input_channels, input_height, input_width};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + kind_name(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Convolution:
            case LayerKind::MaxPool: {
                if (l.kernel <= 0 || l.stride <= 0) throw ShapeError(where + ": kernel and stride must be positive");
                if (l.kernel > cur.height || l.kernel > cur.width) {
                    throw ShapeError(where + ": kernel larger than its " + std::to_string(cur.height) + "x" +
                                     std::to_string(cur.width) + " input");
                }
                const int channels = l.kind == LayerKind::Convolution ? l.outputs : cur.channels;
                if (channels <= 0) throw ShapeError(where + ": output channels must be positive");
                cur = {channels, (cur.height - l.kernel) / l.stride + 1, (cur.width - l.kernel) / l.stride + 1};
                break;
            }
            case LayerKind::Rectifier: break;
            case LayerKind::FullyConnected:
                if (l.outputs <= 0) throw ShapeError(where + ": width must be positive");
                cur = {l.outputs, 1, 1};
                break;
            case LayerKind::Softmax:
                if (i + 1 != layers.size()) throw ShapeError(where + ": softmax must be the final layer");
                break;
        }
        out.push_back(cur);
    }
    const auto& last = layers.back();
    const auto& prev = layers[layers.size() - 2];
    if (last.kind != LayerKind::Softmax || prev.kind != LayerKind::FullyConnected || prev.outputs != 2) {
        throw ShapeError("network must end with a 2-wide fully-connected layer and a softmax");
    }
    if (feature_layer < 0 || feature_layer >= static_cast<int>(layers.size()) - 1) {
        throw ShapeError("feature layer must precede the softmax");
    }
    return out;
}

json ConvNetSpec::to_json() const {
    json ls = json::array();
    for (const auto& l : layers) {
        ls.push_back({{"kind", kind_name(l.kind)}, {"kernel", l.kernel}, {"outputs", l.outputs}, {"stride", l.stride}});
    }
    return {{"input", {input_height, input_width, input_channels}}, {"layers", ls}, {"feature_layer", feature_layer}};
}

ConvNetSpec ConvNetSpec::from_json(const json& j) {
    ConvNetSpec s;
    try {
        const auto& in = j.at("input");
        s.input_height = in.at(0).get<int>();
        s.input_width = in.at(1).get<int>();
        s.input_channels = in.at(2).get<int>();
        for (const auto& l : j.at("layers")) {
            s.layers.push_back({parse_kind(l.at("kind").get<std::string>()), l.at("kernel").get<int>(),
                                l.at("outputs").get<int>(), l.at("stride").get<int>()});
        }
        s.feature_layer = j.at("feature_layer").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("network spec: ") + e.what());
    }
    s.validate();
    return s;
}

ConvNetSpec ConvNetSpec::desk() {
    ConvNetSpec s;
    s.input_height = 64;
    s.input_width = 32;
    s.input_channels = 3;
    s.layers = {LayerSpec::conv(5, 16), LayerSpec::relu(), LayerSpec::pool(2, 2),
                LayerSpec::conv(5, 32), LayerSpec::relu(), LayerSpec::pool(2, 2),
                LayerSpec::fc(128),     LayerSpec::relu(), LayerSpec::fc(2),
                LayerSpec::softmax()};
    s.feature_layer = 7;
    return s;
}

ConvNetSpec ConvNetSpec::compact() {
    ConvNetSpec s;
    s.input_height = 32;
    s.input_width = 16;
    s.input_channels = 3;
    s.layers = {LayerSpec::conv(5, 8), LayerSpec::relu(), LayerSpec::pool(2, 2),
                LayerSpec::conv(3, 16), LayerSpec::relu(), LayerSpec::pool(2, 2),
                LayerSpec::fc(32),      LayerSpec::relu(), LayerSpec::fc(2),
                LayerSpec::softmax()};
    s.feature_layer = 7;
    return s;
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ConvNetWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

bool ConvNetWeights::all_finite() const {
    for (const auto& l : layers) {
        for (double v : l.weights) if (!std::isfinite(v)) return false;
        for (double v : l.bias) if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

std::size_t product(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

std::vector<LayerParams> param_layout(const ConvNetSpec& spec) {
    const auto shapes = spec.shapes();
    std::vector<LayerParams> out(spec.layers.size());
    TensorShape in{spec.input_channels, spec.input_height, spec.input_width};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind == LayerKind::Convolution) {
            out[i].weight_dims = {l.outputs, in.channels, l.kernel, l.kernel};
        } else if (l.kind == LayerKind::FullyConnected) {
            out[i].weight_dims = {l.outputs, static_cast<int>(in.size())};
        }
        if (l.has_params()) {
            out[i].weights.assign(product(out[i].weight_dims), 0.0);
            out[i].bias.assign(static_cast<std::size_t>(l.outputs), 0.0);
        }
        in = shapes[i];
    }
    return out;
}

inline double snap(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

ConvNetWeights zero_weights(const ConvNetSpec& spec) {
    ConvNetWeights w;
    w.spec = spec;
    w.layers = param_layout(spec);
    return w;
}

ConvNetWeights init_weights(const ConvNetSpec& spec, std::uint64_t seed) {
    ConvNetWeights w = zero_weights(spec);
    Rng rng(seed);
    for (auto& l : w.layers) {
        if (l.weights.empty()) continue;
        const std::size_t fan_in = l.weights.size() / static_cast<std::size_t>(l.weight_dims[0]);
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : l.weights) v = snap(sd * normal(rng));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct Activations {
    std::vector<double> input;
    std::vector<std::vector<double>> outputs;
    std::vector<std::vector<std::uint32_t>> argmax;  // per max-pool layer
};

void conv_forward(const LayerSpec& l, const LayerParams& p, const TensorShape& in_s, const TensorShape& out_s,
                  const std::vector<double>& in, std::vector<double>& out) {
    out.assign(out_s.size(), 0.0);
    const int k = l.kernel, s = l.stride;
    for (int oc = 0; oc < out_s.channels; ++oc) {
        double* o = out.data() + static_cast<std::size_t>(oc) * out_s.height * out_s.width;
        std::fill(o, o + out_s.height * out_s.width, p.bias[oc]);
        for (int ic = 0; ic < in_s.channels; ++ic) {
            const double* x = in.data() + static_cast<std::size_t>(ic) * in_s.height * in_s.width;
            const double* wk = p.weights.data() + (static_cast<std::size_t>(oc) * in_s.channels + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = wk[ky * k + kx];
                    for (int oy = 0; oy < out_s.height; ++oy) {
                        const double* xr = x + static_cast<std::size_t>(oy * s + ky) * in_s.width + kx;
                        double* orow = o + static_cast<std::size_t>(oy) * out_s.width;
                        if (s == 1) {
                            for (int ox = 0; ox < out_s.width; ++ox) orow[ox] += wv * xr[ox];
                        } else {
                            for (int ox = 0; ox < out_s.width; ++ox) orow[ox] += wv * xr[ox * s];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const LayerSpec& l, const LayerParams& p, const TensorShape& in_s, const TensorShape& out_s,
                   const std::vector<double>& in, const std::vector<double>& dout, LayerParams& g,
                   std::vector<double>* din) {
    const int k = l.kernel, s = l.stride;
    if (din) din->assign(in_s.size(), 0.0);
    for (int oc = 0; oc < out_s.channels; ++oc) {
        const double* d = dout.data() + static_cast<std::size_t>(oc) * out_s.height * out_s.width;
        double bsum = 0.0;
        for (int i = 0; i < out_s.height * out_s.width; ++i) bsum += d[i];
        g.bias[oc] += bsum;
        for (int ic = 0; ic < in_s.channels; ++ic) {
            const std::size_t plane = static_cast<std::size_t>(ic) * in_s.height * in_s.width;
            const double* x = in.data() + plane;
            const std::size_t woff = (static_cast<std::size_t>(oc) * in_s.channels + ic) * k * k;
            const double* wk = p.weights.data() + woff;
            double* gk = g.weights.data() + woff;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = wk[ky * k + kx];
                    double acc = 0.0;
                    for (int oy = 0; oy < out_s.height; ++oy) {
                        const std::size_t row = static_cast<std::size_t>(oy * s + ky) * in_s.width + kx;
                        const double* xr = x + row;
                        const double* drow = d + static_cast<std::size_t>(oy) * out_s.width;
                        double* dr = din ? din->data() + plane + row : nullptr;
                        if (s == 1) {
                            for (int ox = 0; ox < out_s.width; ++ox) acc += drow[ox] * xr[ox];
                            if (dr) {
                                for (int ox = 0; ox < out_s.width; ++ox) dr[ox] += wv * drow[ox];
                            }
                        } else {
                            for (int ox = 0; ox < out_s.width; ++ox) acc += drow[ox] * xr[ox * s];
                            if (dr) {
                                for (int ox = 0; ox < out_s.width; ++ox) dr[ox * s] += wv * drow[ox];
                            }
                        }
                    }
                    gk[ky * k + kx] += acc;
                }
            }
        }
    }
}

void pool_forward(const LayerSpec& l, const TensorShape& in_s, const TensorShape& out_s,
                  const std::vector<double>& in, std::vector<double>& out, std::vector<std::uint32_t>& arg) {
    out.assign(out_s.size(), 0.0);
    arg.assign(out_s.size(), 0);
    for (int c = 0; c < out_s.channels; ++c) {
        for (int oy = 0; oy < out_s.height; ++oy) {
            for (int ox = 0; ox < out_s.width; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::uint32_t best_i = 0;
                for (int ky = 0; ky < l.kernel; ++ky) {
                    for (int kx = 0; kx < l.kernel; ++kx) {
                        const auto idx = static_cast<std::uint32_t>(
                            (static_cast<std::size_t>(c) * in_s.height + oy * l.stride + ky) * in_s.width +
                            ox * l.stride + kx);
                        if (in[idx] > best) {
                            best = in[idx];
                            best_i = idx;
                        }
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(c) * out_s.height + oy) * out_s.width + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
}

void fc_forward(const LayerParams& p, const std::vector<double>& in, std::vector<double>& out) {
    const std::size_t n_out = p.bias.size();
    const std::size_t n_in = in.size();
    out.assign(n_out, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
        const double* wr = p.weights.data() + o * n_in;
        double acc = p.bias[o];
        for (std::size_t i = 0; i < n_in; ++i) acc += wr[i] * in[i];
        out[o] = acc;
    }
}

void check_patch(const ConvNetSpec& spec, const Patch& patch) {
    if (patch.height() != spec.input_height || patch.width() != spec.input_width ||
        patch.channels() != spec.input_channels) {
        std::ostringstream os;
        os << "patch " << patch.height() << 'x' << patch.width() << 'x' << patch.channels()
           << " does not match network input " << spec.input_height << 'x' << spec.input_width << 'x'
           << spec.input_channels;
        throw ShapeError(os.str());
    }
}

void run_forward(const ConvNetWeights& w, const std::vector<TensorShape>& shapes, Activations& acts) {
    const auto& spec = w.spec;
    const std::size_t n = spec.layers.size();
    acts.outputs.resize(n);
    acts.argmax.resize(n);
    TensorShape in_s{spec.input_channels, spec.input_height, spec.input_width};
    for (std::size_t i = 0; i < n; ++i) {
        const LayerSpec& l = spec.layers[i];
        const std::vector<double>& in = i == 0 ? acts.input : acts.outputs[i - 1];
        std::vector<double>& out = acts.outputs[i];
        switch (l.kind) {
            case LayerKind::Convolution: conv_forward(l, w.layers[i], in_s, shapes[i], in, out); break;
            case LayerKind::Rectifier:
                out.resize(in.size());
                for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
                break;
            case LayerKind::MaxPool: pool_forward(l, in_s, shapes[i], in, out, acts.argmax[i]); break;
            case LayerKind::FullyConnected: fc_forward(w.layers[i], in, out); break;
            case LayerKind::Softmax: {
                const double m = std::max(in[0], in[1]);
                const double e0 = std::exp(in[0] - m), e1 = std::exp(in[1] - m);
                out = {e0 / (e0 + e1), e1 / (e0 + e1)};
                break;
            }
        }
        in_s = shapes[i];
    }
}

// Log-loss of the softmax output for `label`, computed from the logits.
double nll_from_logits(const std::vector<double>& logits, int label) {
    const double m = std::max(logits[0], logits[1]);
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    return lse - logits[static_cast<std::size_t>(label)];
}

void check_finite_weights(const ConvNetWeights& w) {
    if (w.layers.size() != w.spec.layers.size()) throw ShapeError("weights do not match their network spec");
}

}  // namespace

std::vector<double> encode_input(const ConvNetSpec& spec, const Patch& patch) {
    check_patch(spec, patch);
    std::vector<double> x(static_cast<std::size_t>(spec.input_channels) * spec.input_height * spec.input_width);
    for (int c = 0; c < spec.input_channels; ++c) {
        for (int r = 0; r < spec.input_height; ++r) {
            for (int col = 0; col < spec.input_width; ++col) {
                x[(static_cast<std::size_t>(c) * spec.input_height + r) * spec.input_width + col] =
                    patch.at(r, col, c) / 127.5 - 1.0;
            }
        }
    }
    return x;
}

std::vector<std::vector<double>> forward_activations(const ConvNetWeights& w, const Patch& patch) {
    check_finite_weights(w);
    const auto shapes = w.spec.shapes();
    Activations acts;
    acts.input = encode_input(w.spec, patch);
    run_forward(w, shapes, acts);
    return std::move(acts.outputs);
}

ForwardResult forward(const ConvNetWeights& w, const Patch& patch) {
    auto outs = forward_activations(w, patch);
    ForwardResult r;
    r.features = std::move(outs[static_cast<std::size_t>(w.spec.feature_layer)]);
    r.probabilities = {outs.back()[0], outs.back()[1]};
    return r;
}

LossAndGradients loss_and_gradients(const ConvNetWeights& w, std::span<const LabeledPatch* const> batch) {
    if (batch.empty()) throw RangeError("loss_and_gradients: empty batch");
    check_finite_weights(w);
    const auto& spec = w.spec;
    const auto shapes = spec.shapes();
    const std::size_t n = spec.layers.size();

    LossAndGradients out;
    out.gradients = param_layout(spec);
    Activations acts;
    std::vector<double> dcur, dnext;
    double total = 0.0;

    for (const LabeledPatch* sample : batch) {
        if (sample->label != 0 && sample->label != 1) throw RangeError("labels must be 0 or 1");
        acts.input = encode_input(spec, sample->patch);
        run_forward(w, shapes, acts);
        total += nll_from_logits(acts.outputs[n - 2], sample->label);

        // Softmax + log-loss: d/dlogits = p - onehot.
        dcur = acts.outputs[n - 1];
        dcur[static_cast<std::size_t>(sample->label)] -= 1.0;

        for (std::size_t li = n - 1; li-- > 0;) {
            const LayerSpec& l = spec.layers[li];
            const std::vector<double>& in = li == 0 ? acts.input : acts.outputs[li - 1];
            const TensorShape in_s = li == 0 ? TensorShape{spec.input_channels, spec.input_height, spec.input_width}
                                             : shapes[li - 1];
            const bool need_din = li > 0;
            switch (l.kind) {
                case LayerKind::Convolution:
                    conv_backward(l, w.layers[li], in_s, shapes[li], in, dcur, out.gradients[li],
                                  need_din ? &dnext : nullptr);
                    break;
                case LayerKind::Rectifier:
                    dnext.resize(dcur.size());
                    for (std::size_t k = 0; k < dcur.size(); ++k) dnext[k] = in[k] > 0.0 ? dcur[k] : 0.0;
                    break;
                case LayerKind::MaxPool:
                    dnext.assign(in.size(), 0.0);
                    for (std::size_t k = 0; k < dcur.size(); ++k) dnext[acts.argmax[li][k]] += dcur[k];
                    break;
                case LayerKind::FullyConnected: {
                    const LayerParams& p = w.layers[li];
                    LayerParams& g = out.gradients[li];
                    const std::size_t n_in = in.size();
                    if (need_din) dnext.assign(n_in, 0.0);
                    for (std::size_t o = 0; o < dcur.size(); ++o) {
                        const double d = dcur[o];
                        g.bias[o] += d;
                        double* gr = g.weights.data() + o * n_in;
                        const double* wr = p.weights.data() + o * n_in;
                        for (std::size_t i = 0; i < n_in; ++i) gr[i] += d * in[i];
                        if (need_din) {
                            for (std::size_t i = 0; i < n_in; ++i) dnext[i] += d * wr[i];
                        }
                    }
                    break;
                }
                case LayerKind::Softmax: break;  // handled above; never reached below the top
            }
            std::swap(dcur, dnext);
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss = total * inv;
    for (auto& g : out.gradients) {
        for (double& v : g.weights) v *= inv;
        for (double& v : g.bias) v *= inv;
    }
    if (!std::isfinite(out.loss)) throw DivergenceError("loss is not finite");
    return out;
}

namespace {
std::vector<const LabeledPatch*> pointers(const std::vector<LabeledPatch>& v) {
    std::vector<const LabeledPatch*> out;
    out.reserve(v.size());
    for (const auto& p : v) out.push_back(&p);
    return out;
}
}  // namespace

LossAndGradients loss_and_gradients(const ConvNetWeights& w, const std::vector<LabeledPatch>& batch) {
    const auto ptrs = pointers(batch);
    return loss_and_gradients(w, std::span<const LabeledPatch* const>(ptrs));
}

double mean_loss(const ConvNetWeights& w, std::span<const LabeledPatch* const> data) {
    if (data.empty()) throw RangeError("mean_loss: empty data");
    const auto shapes = w.spec.shapes();
    Activations acts;
    double total = 0.0;
    for (const LabeledPatch* s : data) {
        acts.input = encode_input(w.spec, s->patch);
        run_forward(w, shapes, acts);
        total += nll_from_logits(acts.outputs[w.spec.layers.size() - 2], s->label);
    }
    return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw RangeError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw RangeError("momentum must lie in [0,1)");
    if (batch_size < 1) throw RangeError("batch size must be positive");
    if (!(neg_pos_ratio > 0.0)) throw RangeError("neg:pos ratio must be positive");
    if (max_iterations < 1) throw RangeError("iteration budget must be positive");
    if (folds < 1 || smoothing_window < 1 || eval_every < 1) {
        throw RangeError("folds, smoothing window and eval interval must be positive");
    }
}

BatchComposer::BatchComposer(int batch_size, double neg_pos_ratio)
    : batch_size_(batch_size), pos_fraction_(1.0 / (1.0 + neg_pos_ratio)) {}

int BatchComposer::next_positive_count() {
    const double exact = batch_size_ * pos_fraction_ + carry_;
    const int n = std::clamp(static_cast<int>(std::floor(exact + 0.5)), 0, batch_size_);
    carry_ = exact - n;
    return n;
}

TrainResult train(const ConvNetWeights& initial, std::span<const LabeledPatch* const> data, const TrainConfig& cfg,
                  const IterationHook& hook) {
    cfg.validate();
    std::vector<const LabeledPatch*> pos, neg;
    for (const LabeledPatch* p : data) (p->label == 1 ? pos : neg).push_back(p);
    if (pos.empty() || neg.empty()) throw InvariantError("training data must contain both classes");

    TrainResult result{initial, {}};
    result.loss_trace.reserve(static_cast<std::size_t>(cfg.max_iterations));
    ConvNetGradients velocity = param_layout(initial.spec);
    Rng rng(cfg.seed);
    BatchComposer composer(cfg.batch_size, cfg.neg_pos_ratio);
    std::vector<const LabeledPatch*> batch;

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        const int n_pos = composer.next_positive_count();
        batch.clear();
        for (int i = 0; i < n_pos; ++i) batch.push_back(pos[uniform_index(rng, pos.size())]);
        for (int i = n_pos; i < cfg.batch_size; ++i) batch.push_back(neg[uniform_index(rng, neg.size())]);

        LossAndGradients lg;
        try {
            lg = loss_and_gradients(result.weights, batch);
        } catch (const DivergenceError&) {
            throw DivergenceError("training diverged at iteration " + std::to_string(it));
        }
        result.loss_trace.push_back(lg.loss);

        for (std::size_t li = 0; li < velocity.size(); ++li) {
            auto step = [&](std::vector<double>& v, const std::vector<double>& g, std::vector<double>& w) {
                for (std::size_t k = 0; k < v.size(); ++k) {
                    v[k] = cfg.momentum * v[k] - cfg.learning_rate * g[k];
                    w[k] = snap(w[k] + v[k]);
                }
            };
            step(velocity[li].weights, lg.gradients[li].weights, result.weights.layers[li].weights);
            step(velocity[li].bias, lg.gradients[li].bias, result.weights.layers[li].bias);
        }
        if (!result.weights.all_finite()) {
            throw DivergenceError("training diverged at iteration " + std::to_string(it));
        }
        if (hook) hook(it, result.weights);
    }
    return result;
}

TrainResult train(const ConvNetWeights& initial, const std::vector<LabeledPatch>& data, const TrainConfig& cfg,
                  const IterationHook& hook) {
    const auto ptrs = pointers(data);
    return train(initial, std::span<const LabeledPatch* const>(ptrs), cfg, hook);
}

std::vector<double> smooth_curve(const std::vector<double>& values, int window) {
    if (window < 1) throw RangeError("smoothing window must be positive");
    const long n = static_cast<long>(values.size());
    const long before = (window - 1) / 2;
    const long after = window / 2;
    std::vector<double> out(values.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max(0L, i - before);
        const long hi = std::min(n - 1, i + after);
        double sum = 0.0;
        for (long k = lo; k <= hi; ++k) sum += values[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = sum / static_cast<double>(hi - lo + 1);
    }
    return out;
}

int select_stop_iteration(const std::vector<int>& iterations, const std::vector<double>& curve, int window) {
    if (curve.empty() || curve.size() != iterations.size()) {
        throw RangeError("select_stop_iteration: curve and iteration axis must be nonempty and equal length");
    }
    const auto smoothed = smooth_curve(curve, window);
    const auto it = std::min_element(smoothed.begin(), smoothed.end());
    return iterations[static_cast<std::size_t>(it - smoothed.begin())];
}

CrossValResult crossval_stop_iteration(const std::vector<LabeledPatch>& data, const TrainConfig& cfg,
                                       const FoldRunner& runner) {
    cfg.validate();
    if (cfg.folds < 2) throw RangeError("cross-validation needs at least 2 folds");

    CrossValResult result;
    std::vector<double> sum;
    for (int fold = 0; fold < cfg.folds; ++fold) {
        std::vector<const LabeledPatch*> tr, va;
        int va_classes[2] = {0, 0}, tr_classes[2] = {0, 0};
        for (const auto& p : data) {
            if (p.fold < 0 || p.fold >= cfg.folds) {
                throw InvariantError("sample fold " + std::to_string(p.fold) + " outside [0, " +
                                     std::to_string(cfg.folds) + ")");
            }
            if (p.fold == fold) {
                va.push_back(&p);
                ++va_classes[p.label];
            } else {
                tr.push_back(&p);
                ++tr_classes[p.label];
            }
        }
        if (!va_classes[0] || !va_classes[1] || !tr_classes[0] || !tr_classes[1]) {
            throw InvariantError("fold " + std::to_string(fold) + " has a single class");
        }
        auto curve = runner(tr, va, fold);
        ++result.runs;
        if (sum.empty()) {
            sum.assign(curve.size(), 0.0);
        } else if (curve.size() != sum.size()) {
            throw ShapeError("validation curves differ in length across folds");
        }
        for (std::size_t i = 0; i < curve.size(); ++i) sum[i] += curve[i];
    }
    result.mean_curve.resize(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) {
        result.mean_curve[i] = sum[i] / cfg.folds;
        result.iterations.push_back(static_cast<int>(i + 1) * cfg.eval_every);
    }
    result.smoothed_curve = smooth_curve(result.mean_curve, cfg.smoothing_window);
    result.stop_iteration = select_stop_iteration(result.iterations, result.mean_curve, cfg.smoothing_window);
    return result;
}

CrossValResult crossval_stop_iteration(const ConvNetSpec& spec, const std::vector<LabeledPatch>& data,
                                       const TrainConfig& cfg) {
    const ConvNetWeights init = init_weights(spec, cfg.seed);
    FoldRunner runner = [&](std::span<const LabeledPatch* const> tr, std::span<const LabeledPatch* const> va, int) {
        std::vector<double> curve;
        train(init, tr, cfg, [&](int it, const ConvNetWeights& w) {
            if (it % cfg.eval_every == 0) curve.push_back(mean_loss(w, va));
        });
        return curve;
    };
    return crossval_stop_iteration(data, cfg, runner);
}

ConvNetWeights finetune_full(const ConvNetSpec& spec, const std::vector<LabeledPatch>& data, int stop_iteration,
                             const TrainConfig& cfg) {
    if (stop_iteration < 1) throw RangeError("finetune_full: stop iteration must be >= 1");
    TrainConfig c = cfg;
    c.max_iterations = stop_iteration;
    return train(init_weights(spec, cfg.seed), data, c).weights;
}

// ---------------------------------------------------------------------------
// Weight file

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("weight file truncated at byte " + std::to_string(pos_));
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::vector<int>& dims, const std::vector<double>& values) {
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : values) put_f32(out, v);
}

void read_tensor(Reader& in, const std::vector<int>& expected_dims, std::vector<double>& values) {
    const std::uint32_t rank = in.u32();
    if (rank != expected_dims.size()) throw FormatError("weight tensor rank does not match the network spec");
    for (int d : expected_dims) {
        if (in.u32() != static_cast<std::uint32_t>(d)) throw FormatError("weight tensor dims do not match the network spec");
    }
    for (double& v : values) v = in.f32();
}

}  // namespace

std::string serialize_weights(const ConvNetWeights& w) {
    std::string out = "PPCN";
    put_u32(out, w.version);
    const std::string spec = w.spec.to_json().dump();
    put_u32(out, static_cast<std::uint32_t>(spec.size()));
    out += spec;
    for (const auto& l : w.layers) {
        if (l.weights.empty()) continue;
        put_tensor(out, l.weight_dims, l.weights);
        put_tensor(out, {static_cast<int>(l.bias.size())}, l.bias);
    }
    return out;
}

ConvNetWeights deserialize_weights(const std::string& bytes) {
    Reader in(bytes);
    if (in.take(4) != "PPCN") throw FormatError("not a weight file (bad magic)");
    const std::uint32_t version = in.u32();
    if (version != kWeightFormatVersion) {
        throw Error("version_mismatch", "weight file version " + std::to_string(version) + ", expected " +
                                            std::to_string(kWeightFormatVersion));
    }
    const std::uint32_t len = in.u32();
    json spec_json;
    try {
        spec_json = json::parse(in.take(len));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("weight file spec: ") + e.what());
    }
    ConvNetWeights w = zero_weights(ConvNetSpec::from_json(spec_json));
    w.version = version;
    for (auto& l : w.layers) {
        if (l.weights.empty()) continue;
        read_tensor(in, l.weight_dims, l.weights);
        read_tensor(in, {static_cast<int>(l.bias.size())}, l.bias);
    }
    if (!in.done()) throw FormatError("weight file has trailing bytes");
    if (!w.all_finite()) throw FormatError("weight file contains non-finite values");
    return w;
}

void save_weights(const ConvNetWeights& w, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::string bytes = serialize_weights(w);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ConvNetWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return deserialize_weights(buf.str());
}

}  // namespace pedpipe
