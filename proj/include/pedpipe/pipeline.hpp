#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "pedpipe/convnet.hpp"
#include "pedpipe/dataset.hpp"
#include "pedpipe/evaluate.hpp"
#include "pedpipe/image.hpp"
#include "pedpipe/mining.hpp"
#include "pedpipe/proposals.hpp"
#include "pedpipe/svm.hpp"

namespace pedpipe {

/// Where a bundle's regions come from at detection time.
struct ProposalSource {
    enum class Kind { Sliding, External };
    Kind kind = Kind::Sliding;
    SlidingWindowParams sliding{};
    /// Proposal file recorded at training time (external mode only).
    std::string external_path;

    friend bool operator==(const ProposalSource&, const ProposalSource&) = default;
};

inline constexpr std::uint32_t kBundleFormatVersion = 1;

struct ModelBundle {
    ConvNetWeights convnet;
    LinearSvm svm;
    double mean_alpha = 0.0;
    FusionMode fusion{};
    ProposalSource proposals{};
    FrameSize input_size{};

    /// Throws InvariantError when the parts disagree.
    void validate() const;
    friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Writes `convnet.ppcn` and `model.json` into `dir` (created if needed).
void save_bundle(const ModelBundle& m, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

struct DetectionConfig {
    double nms_iou = 0.5;
    /// Regions scoring at or below the floor are dropped before NMS.
    double score_floor = -std::numeric_limits<double>::infinity();
    /// Required when the bundle uses external proposals.
    const ProposalMap* external = nullptr;
};

/// Wall-clock milliseconds spent in each stage for one frame.
struct StageTimes {
    double proposal = 0.0;
    double preprocess = 0.0;
    double features = 0.0;
    double classify = 0.0;
    double nms = 0.0;
    double total = 0.0;
};

/// propose -> (series threshold) -> pad by mean_alpha -> crop/resize ->
/// forward -> svm (fused in parallel mode) -> score floor -> NMS. Output
/// boxes are the clipped proposals, sorted by descending score.
std::vector<ScoredRegion> detect_frame(const FrameImage& img, const std::string& frame_id, const ModelBundle& m,
                                       const DetectionConfig& cfg = {}, StageTimes* times = nullptr);

/// Runs detect_frame over `frames` using `workers` threads; result order
/// follows the input.
struct FrameInput {
    std::string frame_id;
    FrameImage image;
};
std::vector<std::vector<ScoredRegion>> detect_frames(const std::vector<FrameInput>& frames, const ModelBundle& m,
                                                     const DetectionConfig& cfg, int workers = 1);

struct StageStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct TimingReport {
    StageStats proposal, preprocess, features, classify, nms;
    /// Whole detect_frame wall-clock, for cross-checking the stage sum.
    StageStats frame;
    std::size_t frames_measured = 0;
    double fps = 0.0;

    double stage_mean_sum() const {
        return proposal.mean + preprocess.mean + features.mean + classify.mean + nms.mean;
    }
    nlohmann::json to_json() const;
};

/// Times detect_frame over every frame `repetitions` times, single-threaded.
/// The first repetition is a warm-up and is excluded unless it is the only
/// one. fps = 1000 / (sum of stage means).
TimingReport run_benchmark(const std::vector<FrameInput>& frames, const ModelBundle& m, int repetitions,
                           const DetectionConfig& cfg = {});

/// MR-FPPI curve over `frames`. Annotations that are not positives act as
/// ignore regions: detections on them are dropped before matching. Frames
/// absent from `detections` have no detections.
MrFppiCurve evaluate_frames(const std::vector<FrameRecord>& frames, const ProposalMap& detections,
                            double iou_thresh = kDefaultMatchIou, double min_height = kDefaultMinHeight);

// ---------------------------------------------------------------------------
// Training data preparation and model training

struct PrepConfig {
    double delta = kDefaultDelta;
    int neg_pool = 40;  // random negatives drawn per frame
    int neg_keep = 8;   // kept per frame after decorrelation
    int crops = kDefaultCropsPerPositive;
    std::uint64_t seed = 1;
    int train_step = 1;
    double min_height = kDefaultMinHeight;
    NegativeSampling negatives{};
    DistanceMode distance = DistanceMode::Direct;
    DiversityReference reference = DiversityReference::RemainingPool;
};

struct FrameBox {
    std::string frame_id;
    BoundingBox box;
};

/// Output of the preparation step: the padding statistic and the selected
/// diverse negatives.
struct PrepStats {
    PaddingStat padding;
    std::vector<FrameBox> negatives;
    int crops = kDefaultCropsPerPositive;
    double delta = kDefaultDelta;
    std::uint64_t seed = 1;
    int train_step = 1;
    double min_height = kDefaultMinHeight;
    std::string proposals_path;

    nlohmann::json to_json() const;
    static PrepStats from_json(const nlohmann::json& j);
};

/// Loads frame images by id, caching them for repeated access.
class ImageCache {
public:
    explicit ImageCache(const DatasetManifest& m) : manifest_(m) {}
    const FrameImage& get(const FrameRecord& f);
    /// Registers an in-memory image for `frame_id`, bypassing the file.
    void put(const std::string& frame_id, FrameImage img) { cache_[frame_id] = std::move(img); }

private:
    const DatasetManifest& manifest_;
    std::map<std::string, FrameImage> cache_;
};

PrepStats prepare_training_data(const DatasetManifest& m, const ProposalMap& proposals, const PrepConfig& cfg,
                                ImageCache& images);

struct TrainPipelineConfig {
    ConvNetSpec spec = ConvNetSpec::desk();
    TrainConfig cnn{};
    /// Select the iteration budget by k-fold cross-validation; otherwise
    /// cnn.max_iterations is used directly.
    bool crossval = true;
    SvmTrainConfig svm{};
    FusionMode fusion = FusionMode::parallel();
    ProposalSource source{};
    /// Proposals above this iou with a ground truth are SVM positives,
    /// those below svm_neg_iou negatives.
    double svm_pos_iou = 0.5;
    double svm_neg_iou = 0.3;
    /// SVM negatives kept per positive (sampled with the training seed).
    double svm_neg_per_pos = 10.0;
};

struct TrainReport {
    CrossValResult crossval;
    int stop_iteration = 0;
    std::size_t cnn_positives = 0;
    std::size_t cnn_negatives = 0;
    std::size_t svm_positives = 0;
    std::size_t svm_negatives = 0;
};

/// Labeled network inputs from the prepared statistics: jittered crops of
/// each positive and the selected negatives, all padded by mean_alpha.
/// Folds follow sessions when there are exactly cfg.cnn.folds of them.
std::vector<LabeledPatch> build_training_patches(const DatasetManifest& m, const PrepStats& stats,
                                                 const ConvNetSpec& spec, int folds, ImageCache& images);

/// Features and labels for the SVM from the training frames' proposals.
struct SvmExamples {
    std::vector<std::vector<double>> features;  // convolutional features only
    std::vector<double> proposal_scores;
    std::vector<int> labels;
};

SvmExamples collect_svm_examples(const DatasetManifest& m, const PrepStats& stats, const ProposalMap& proposals,
                                 const ConvNetWeights& net, const TrainPipelineConfig& cfg, ImageCache& images);

/// Fits the final SVM for the given fusion mode. Series mode trains on the
/// examples whose proposal score passes the threshold.
LinearSvm fit_classifier(const SvmExamples& ex, const FusionMode& fusion, const SvmTrainConfig& cfg);

/// Full training: network (cross-validated stop iteration, full-set
/// retrain), SVM on exported features, bundle assembly.
ModelBundle train_bundle(const DatasetManifest& m, const PrepStats& stats, const ProposalMap& proposals,
                         const TrainPipelineConfig& cfg, ImageCache& images, TrainReport* report = nullptr);

}  // namespace pedpipe
