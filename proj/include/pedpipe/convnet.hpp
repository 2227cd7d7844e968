#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pedpipe/image.hpp"
#include "vendor_json.hpp"

namespace pedpipe {

enum class LayerKind { Convolution, Rectifier, MaxPool, FullyConnected, Softmax };

struct LayerSpec {
    LayerKind kind = LayerKind::Rectifier;
    int kernel = 0;    // convolution kernel size / pooling window
    int outputs = 0;   // convolution channels / fully-connected width
    int stride = 1;

    static LayerSpec conv(int kernel, int outputs, int stride = 1) { return {LayerKind::Convolution, kernel, outputs, stride}; }
    static LayerSpec relu() { return {LayerKind::Rectifier, 0, 0, 1}; }
    static LayerSpec pool(int window, int stride) { return {LayerKind::MaxPool, window, 0, stride}; }
    static LayerSpec fc(int outputs) { return {LayerKind::FullyConnected, 0, outputs, 1}; }
    static LayerSpec softmax() { return {LayerKind::Softmax, 0, 0, 1}; }

    bool has_params() const { return kind == LayerKind::Convolution || kind == LayerKind::FullyConnected; }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Activation shape, channels x height x width. Fully-connected outputs are
/// channels x 1 x 1.
struct TensorShape {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
    friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

/// Network topology. The last two layers must be a 2-wide fully-connected
/// layer followed by softmax (index 1 = pedestrian). `feature_layer` names
/// the layer whose output is exported as the feature vector.
struct ConvNetSpec {
    int input_height = 64;
    int input_width = 32;
    int input_channels = 3;
    std::vector<LayerSpec> layers;
    int feature_layer = 0;

    /// Output shape of every layer; throws ShapeError if inconsistent.
    std::vector<TensorShape> shapes() const;
    void validate() const { (void)shapes(); }
    std::size_t feature_size() const { return shapes().at(static_cast<std::size_t>(feature_layer)).size(); }
    FrameSize input_size() const { return {input_width, input_height}; }

    nlohmann::json to_json() const;
    static ConvNetSpec from_json(const nlohmann::json& j);

    /// 64x32x3 input; conv5x5x16, relu, pool2/2, conv5x5x32, relu, pool2/2,
    /// fc128, relu (features), fc2, softmax.
    static ConvNetSpec desk();
    /// 32x16x3 input with narrower layers; used where throughput matters.
    static ConvNetSpec compact();

    friend bool operator==(const ConvNetSpec&, const ConvNetSpec&) = default;
};

/// Parameters of one layer. Convolution weights are [out][in][k][k],
/// fully-connected weights [out][in]. Layers without parameters hold empty
/// tensors.
struct LayerParams {
    std::vector<int> weight_dims;
    std::vector<double> weights;
    std::vector<double> bias;
    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct ConvNetWeights {
    ConvNetSpec spec;
    std::uint32_t version = kWeightFormatVersion;
    std::vector<LayerParams> layers;

    std::size_t parameter_count() const;
    bool all_finite() const;
    friend bool operator==(const ConvNetWeights&, const ConvNetWeights&) = default;
};

/// Gradients share the weights' layout.
using ConvNetGradients = std::vector<LayerParams>;

/// All parameters zero.
ConvNetWeights zero_weights(const ConvNetSpec& spec);

/// He-normal initialization, biases zero; values are rounded to float
/// precision so they survive the 32-bit weight file exactly.
ConvNetWeights init_weights(const ConvNetSpec& spec, std::uint64_t seed);

struct ForwardResult {
    std::vector<double> features;
    std::array<double, 2> probabilities{};
};

/// Throws ShapeError when the patch does not match the network input.
ForwardResult forward(const ConvNetWeights& w, const Patch& patch);

/// Output of every layer, in order (used to verify feature export).
std::vector<std::vector<double>> forward_activations(const ConvNetWeights& w, const Patch& patch);

/// Network input encoding: intensities mapped to [-1, 1], CHW order.
std::vector<double> encode_input(const ConvNetSpec& spec, const Patch& patch);

struct LabeledPatch {
    Patch patch;
    int label = 0;  // 1 pedestrian, 0 background
    int fold = 0;
};

struct LossAndGradients {
    double loss = 0.0;
    ConvNetGradients gradients;
};

/// Mean negative log-likelihood over the batch and its exact gradient.
LossAndGradients loss_and_gradients(const ConvNetWeights& w, std::span<const LabeledPatch* const> batch);
LossAndGradients loss_and_gradients(const ConvNetWeights& w, const std::vector<LabeledPatch>& batch);

/// Mean negative log-likelihood without gradients.
double mean_loss(const ConvNetWeights& w, std::span<const LabeledPatch* const> data);

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int batch_size = 24;
    double neg_pos_ratio = 5.0;
    int max_iterations = 1000;
    std::uint64_t seed = 1;
    int folds = 6;
    int smoothing_window = 5;
    /// Validation loss is recorded every `eval_every` iterations during
    /// cross-validation.
    int eval_every = 10;

    void validate() const;
};

/// Splits each batch into positives and negatives at the configured ratio.
/// Fractional counts are carried over between batches so the long-run
/// ratio is exact.
class BatchComposer {
public:
    BatchComposer(int batch_size, double neg_pos_ratio);
    /// Number of positives in the next batch.
    int next_positive_count();

private:
    int batch_size_;
    double pos_fraction_;
    double carry_ = 0.0;
};

struct TrainResult {
    ConvNetWeights weights;
    std::vector<double> loss_trace;
};

/// Called after each iteration with (iteration starting at 1, weights).
using IterationHook = std::function<void(int, const ConvNetWeights&)>;

/// Momentum gradient descent on batches drawn with the configured neg:pos
/// ratio. Deterministic given cfg.seed. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(const ConvNetWeights& initial, std::span<const LabeledPatch* const> data, const TrainConfig& cfg,
                  const IterationHook& hook = {});
TrainResult train(const ConvNetWeights& initial, const std::vector<LabeledPatch>& data, const TrainConfig& cfg,
                  const IterationHook& hook = {});

struct CrossValResult {
    int stop_iteration = 0;
    /// Iteration number of each curve sample.
    std::vector<int> iterations;
    std::vector<double> mean_curve;
    std::vector<double> smoothed_curve;
    int runs = 0;
};

/// Centered moving average; windows are truncated at the ends.
std::vector<double> smooth_curve(const std::vector<double>& values, int window);

/// Earliest iteration at which the smoothed curve attains its minimum.
int select_stop_iteration(const std::vector<int>& iterations, const std::vector<double>& curve, int window);

/// Trains on every fold but one and returns the held-out loss curve
/// sampled every cfg.eval_every iterations.
using FoldRunner = std::function<std::vector<double>(std::span<const LabeledPatch* const> train,
                                                     std::span<const LabeledPatch* const> validation, int fold)>;

/// k-fold stopping-iteration selection: one run per fold, validation curves
/// averaged, smoothed, and the earliest minimum returned. Folds come from
/// LabeledPatch::fold. Throws InvariantError if a fold lacks a class.
CrossValResult crossval_stop_iteration(const std::vector<LabeledPatch>& data, const TrainConfig& cfg,
                                       const FoldRunner& runner);
CrossValResult crossval_stop_iteration(const ConvNetSpec& spec, const std::vector<LabeledPatch>& data,
                                       const TrainConfig& cfg);

/// Trains from init_weights(spec, cfg.seed) for exactly `stop_iteration`
/// iterations on all of `data`.
ConvNetWeights finetune_full(const ConvNetSpec& spec, const std::vector<LabeledPatch>& data, int stop_iteration,
                             const TrainConfig& cfg);

/// Binary weight file: "PPCN", u32 version, u32 length + JSON spec, then for
/// each parameterized layer its weight and bias tensors as u32 rank, u32
/// dims, float32 values. Little-endian.
std::string serialize_weights(const ConvNetWeights& w);
ConvNetWeights deserialize_weights(const std::string& bytes);
void save_weights(const ConvNetWeights& w, const std::filesystem::path& path);
ConvNetWeights load_weights(const std::filesystem::path& path);

}  // namespace pedpipe
