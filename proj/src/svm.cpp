#include "pedpipe/svm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pedpipe/error.hpp"
#include "pedpipe/random.hpp"

namespace pedpipe {

using nlohmann::json;

void LinearSvm::validate() const {
    if (weights.size() != input_dim()) {
        throw ShapeError("svm: " + std::to_string(weights.size()) + " weights for feature_dim " +
                         std::to_string(feature_dim) + (fused ? " + fused score" : ""));
    }
    const bool finite = std::all_of(weights.begin(), weights.end(), [](double v) { return std::isfinite(v); });
    if (!finite || !std::isfinite(bias) || !std::isfinite(score_mean) || !(score_std > 0.0)) {
        throw InvariantError("svm parameters must be finite with a positive score deviation");
    }
}

json LinearSvm::to_json() const {
    return {{"weights", weights},      {"bias", bias},           {"C", C},
            {"fused", fused},          {"score_mean", score_mean}, {"score_std", score_std},
            {"feature_dim", feature_dim}};
}

LinearSvm LinearSvm::from_json(const json& j) {
    LinearSvm m;
    try {
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        m.C = j.at("C").get<double>();
        m.fused = j.at("fused").get<bool>();
        m.score_mean = j.at("score_mean").get<double>();
        m.score_std = j.at("score_std").get<double>();
        m.feature_dim = j.at("feature_dim").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("svm: ") + e.what());
    }
    m.validate();
    return m;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double svm_objective(const std::vector<double>& w, double b, double C, const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys) {
    double hinge = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) hinge += std::max(0.0, 1.0 - ys[i] * (dot(w, xs[i]) + b));
    return 0.5 * dot(w, w) + C * hinge;
}

double optimal_bias(const std::vector<double>& w, const std::vector<std::vector<double>>& xs,
                    const std::vector<int>& ys) {
    // Each hinge term has one kink in b; the slope climbs from -#pos to +#neg
    // by one per kink, so it vanishes between the #pos-th and next kink.
    std::vector<double> kinks(xs.size());
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double s = dot(w, xs[i]);
        kinks[i] = ys[i] > 0 ? 1.0 - s : -1.0 - s;
        if (ys[i] > 0) ++n_pos;
    }
    if (n_pos == 0 || n_pos == xs.size()) throw InvariantError("svm: both classes are required");
    std::sort(kinks.begin(), kinks.end());
    return 0.5 * (kinks[n_pos - 1] + kinks[n_pos]);
}

LinearSvm train_svm(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                    const SvmTrainConfig& cfg) {
    if (features.empty() || features.size() != labels.size()) {
        throw ShapeError("train_svm: need one label per feature vector");
    }
    if (!(cfg.C >= 0.0) || cfg.iterations < 1 || cfg.batch_size < 0) throw RangeError("train_svm: invalid config");
    const std::size_t dim = features.front().size();
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != dim) throw ShapeError("train_svm: feature vectors differ in dimension");
        if (labels[i] == 1) has_pos = true;
        else if (labels[i] == -1) has_neg = true;
        else throw RangeError("train_svm: labels must be +1 or -1");
    }
    if (!has_pos || !has_neg) throw InvariantError("train_svm: both classes are required");

    const std::size_t n = features.size();
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
    const double scale = static_cast<double>(n) / static_cast<double>(batch);

    std::vector<double> w(dim, 0.0);
    double b = optimal_bias(w, features, labels);
    // The optimum satisfies |w|^2 / 2 <= F(0, b0).
    const double radius = std::sqrt(2.0 * svm_objective(w, b, cfg.C, features, labels));

    std::vector<double> avg(dim, 0.0);
    std::size_t averaged = 0;
    const int tail_start = cfg.iterations / 2;
    Rng rng(cfg.seed);
    std::vector<double> g(dim);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);

    for (int t = 1; t <= cfg.iterations; ++t) {
        if (batch < n) {
            for (std::size_t k = 0; k < batch; ++k) std::swap(idx[k], idx[k + uniform_index(rng, n - k)]);
        }
        g = w;
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t i = idx[k];
            if (labels[i] * (dot(w, features[i]) + b) < 1.0) {
                const double c = cfg.C * scale * labels[i];
                for (std::size_t d = 0; d < dim; ++d) g[d] -= c * features[i][d];
            }
        }
        const double eta = 1.0 / t;
        for (std::size_t d = 0; d < dim; ++d) w[d] -= eta * g[d];
        const double norm = std::sqrt(dot(w, w));
        if (norm > radius) {
            for (double& v : w) v *= radius / norm;
        }
        b = optimal_bias(w, features, labels);
        if (t > tail_start) {
            ++averaged;
            for (std::size_t d = 0; d < dim; ++d) avg[d] += (w[d] - avg[d]) / static_cast<double>(averaged);
        }
    }

    const double b_avg = optimal_bias(avg, features, labels);
    LinearSvm m;
    m.C = cfg.C;
    m.feature_dim = dim;
    if (svm_objective(avg, b_avg, cfg.C, features, labels) <= svm_objective(w, b, cfg.C, features, labels)) {
        m.weights = std::move(avg);
        m.bias = b_avg;
    } else {
        m.weights = std::move(w);
        m.bias = b;
    }
    return m;
}

double svm_score(const LinearSvm& m, std::span<const double> x) {
    if (x.size() != m.weights.size()) {
        throw ShapeError("svm_score: input has " + std::to_string(x.size()) + " values, model expects " +
                         std::to_string(m.weights.size()));
    }
    double s = m.bias;
    for (std::size_t i = 0; i < x.size(); ++i) s += m.weights[i] * x[i];
    return s;
}

ScoreStandardizer ScoreStandardizer::fit(const std::vector<double>& scores) {
    ScoreStandardizer s;
    if (scores.empty()) return s;
    double sum = 0.0;
    for (double v : scores) sum += v;
    s.mean = sum / static_cast<double>(scores.size());
    double var = 0.0;
    for (double v : scores) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(scores.size());
    s.std = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
}

std::vector<double> fuse_features(std::span<const double> cnn_features, double proposal_score,
                                  const ScoreStandardizer& standardizer) {
    std::vector<double> out(cnn_features.begin(), cnn_features.end());
    out.push_back(standardizer.apply(proposal_score));
    return out;
}

std::vector<double> fuse_features(std::span<const double> cnn_features, double proposal_score, const LinearSvm& m) {
    return fuse_features(cnn_features, proposal_score, ScoreStandardizer{m.score_mean, m.score_std});
}

void FusionMode::validate() const {
    if (kind == Kind::Series && !std::isfinite(threshold) && threshold != -INFINITY) {
        throw RangeError("series threshold must be finite");
    }
}

}  // namespace pedpipe
