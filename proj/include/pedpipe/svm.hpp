#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vendor_json.hpp"

namespace pedpipe {

/// Linear SVM over (optionally fused) convolutional features.
/// `feature_dim` counts the convolutional features only; a fused model has
/// one extra weight for the standardized proposal score.
struct LinearSvm {
    std::vector<double> weights;
    double bias = 0.0;
    double C = 1e-2;
    bool fused = false;
    double score_mean = 0.0;
    double score_std = 1.0;
    std::size_t feature_dim = 0;

    std::size_t input_dim() const { return feature_dim + (fused ? 1 : 0); }
    void validate() const;

    nlohmann::json to_json() const;
    static LinearSvm from_json(const nlohmann::json& j);

    friend bool operator==(const LinearSvm&, const LinearSvm&) = default;
};

struct SvmTrainConfig {
    double C = 1e-2;
    int iterations = 3000;
    /// Samples per subgradient step; 0 uses the whole training set.
    int batch_size = 0;
    std::uint64_t seed = 1;
};

/// (1/2)|w|^2 + C * sum max(0, 1 - y (w.x + b)).
double svm_objective(const std::vector<double>& w, double b, double C, const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys);

/// Bias minimizing the hinge sum for fixed w (midpoint of the optimal
/// interval).
double optimal_bias(const std::vector<double>& w, const std::vector<std::vector<double>>& xs,
                    const std::vector<int>& ys);

/// Minimizes the primal objective by subgradient descent on w (step 1/t,
/// projected onto the ball that must contain the optimum) with the bias
/// solved exactly at each step; returns the better of the last and
/// tail-averaged iterates. Labels are +1/-1. Deterministic given cfg.seed.
LinearSvm train_svm(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                    const SvmTrainConfig& cfg = {});

/// w.x + b. Throws ShapeError on dimension mismatch.
double svm_score(const LinearSvm& m, std::span<const double> x);

struct ScoreStandardizer {
    double mean = 0.0;
    double std = 1.0;

    /// Population mean and deviation; deviation 1 when the scores are constant.
    static ScoreStandardizer fit(const std::vector<double>& scores);
    double apply(double s) const { return (s - mean) / std; }
};

/// Appends the standardized proposal score as the last coordinate.
std::vector<double> fuse_features(std::span<const double> cnn_features, double proposal_score,
                                  const ScoreStandardizer& standardizer);
std::vector<double> fuse_features(std::span<const double> cnn_features, double proposal_score, const LinearSvm& m);

/// Proposal scores gate regions (Series) or feed the classifier (Parallel).
struct FusionMode {
    enum class Kind { Series, Parallel };
    Kind kind = Kind::Parallel;
    double threshold = 0.0;  // series mode only

    static FusionMode series(double t) { return {Kind::Series, t}; }
    static FusionMode parallel() { return {Kind::Parallel, 0.0}; }
    bool is_series() const { return kind == Kind::Series; }
    void validate() const;

    friend bool operator==(const FusionMode&, const FusionMode&) = default;
};

}  // namespace pedpipe
