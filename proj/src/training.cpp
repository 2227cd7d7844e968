#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "pedpipe/error.hpp"
#include "pedpipe/pipeline.hpp"

namespace pedpipe {

using nlohmann::json;

const FrameImage& ImageCache::get(const FrameRecord& f) {
    auto it = cache_.find(f.frame_id);
    if (it == cache_.end()) it = cache_.emplace(f.frame_id, read_image(manifest_.image_path(f))).first;
    return it->second;
}

json PrepStats::to_json() const {
    json negs = json::array();
    for (const auto& n : negatives) {
        negs.push_back({{"frame_id", n.frame_id}, {"x", n.box.x}, {"y", n.box.y}, {"w", n.box.w}, {"h", n.box.h}});
    }
    return {{"mean_alpha", padding.mean_alpha},
            {"alpha_samples", padding.samples},
            {"negatives", std::move(negs)},
            {"crops", crops},
            {"delta", delta},
            {"seed", seed},
            {"train_step", train_step},
            {"min_height", min_height},
            {"proposals", proposals_path}};
}

PrepStats PrepStats::from_json(const json& j) {
    PrepStats s;
    try {
        s.padding.mean_alpha = j.at("mean_alpha").get<double>();
        s.padding.samples = j.at("alpha_samples").get<std::vector<double>>();
        for (const auto& n : j.at("negatives")) {
            s.negatives.push_back({n.at("frame_id").get<std::string>(),
                                   {n.at("x").get<double>(), n.at("y").get<double>(), n.at("w").get<double>(),
                                    n.at("h").get<double>()}});
        }
        s.crops = j.at("crops").get<int>();
        s.delta = j.at("delta").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train_step = j.at("train_step").get<int>();
        s.min_height = j.at("min_height").get<double>();
        s.proposals_path = j.at("proposals").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("prep stats: ") + e.what());
    }
    if (!(s.padding.mean_alpha >= 0.0)) throw InvariantError("prep stats: mean_alpha must be >= 0");
    return s;
}

namespace {

std::vector<BoundingBox> boxes_of(const std::vector<ScoredRegion>& rs) {
    std::vector<BoundingBox> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(r.box);
    return out;
}

// Histogram patches share one size so pixel counts are comparable.
constexpr FrameSize kHistogramPatch{32, 64};

}  // namespace

PrepStats prepare_training_data(const DatasetManifest& m, const ProposalMap& proposals, const PrepConfig& cfg,
                                ImageCache& images) {
    PrepStats stats;
    stats.crops = cfg.crops;
    stats.delta = cfg.delta;
    stats.seed = cfg.seed;
    stats.train_step = cfg.train_step;
    stats.min_height = cfg.min_height;

    Rng rng(cfg.seed);
    for (const auto& f : sample_frames(m, Split::Train, cfg.train_step)) {
        const auto gts = extract_positives(f, cfg.min_height);
        const auto it = proposals.find(f.frame_id);
        if (!gts.empty() && it != proposals.end() && !it->second.empty()) {
            const auto pad = estimate_padding(gts, boxes_of(it->second));
            stats.padding.samples.insert(stats.padding.samples.end(), pad.samples.begin(), pad.samples.end());
        }

        if (cfg.neg_pool <= 0 || cfg.neg_keep <= 0) continue;
        const FrameImage& img = images.get(f);
        const auto pool = sample_random_negatives(f, img, cfg.neg_pool, cfg.negatives, rng);
        std::vector<FrameImage> patches;
        patches.reserve(pool.size());
        for (const auto& b : pool) patches.push_back(crop_and_resize(img, b, kHistogramPatch));
        const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.neg_keep), pool.size());
        for (std::size_t i : select_diverse_negatives(patches, keep, cfg.delta, cfg.distance, cfg.reference)) {
            stats.negatives.push_back({f.frame_id, pool[i]});
        }
    }
    if (stats.padding.samples.empty()) {
        throw EmptyResultError("prep: no training ground truth had a proposal to estimate padding from");
    }
    stats.padding.mean_alpha = std::accumulate(stats.padding.samples.begin(), stats.padding.samples.end(), 0.0) /
                               static_cast<double>(stats.padding.samples.size());
    return stats;
}

std::vector<LabeledPatch> build_training_patches(const DatasetManifest& m, const PrepStats& stats,
                                                 const ConvNetSpec& spec, int folds, ImageCache& images) {
    const auto frames = sample_frames(m, Split::Train, stats.train_step);
    std::set<int> sessions;
    for (const auto& f : frames) sessions.insert(f.session);
    const bool session_folds = static_cast<int>(sessions.size()) == folds;
    std::map<int, int> session_fold;
    for (int s : sessions) session_fold.emplace(s, static_cast<int>(session_fold.size()));

    std::map<std::string, int> frame_fold;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        frame_fold[frames[i].frame_id] =
            session_folds ? session_fold.at(frames[i].session) : static_cast<int>(i % static_cast<std::size_t>(folds));
    }

    const double alpha = stats.padding.mean_alpha;
    const FrameSize input = spec.input_size();
    std::vector<LabeledPatch> out;
    Rng rng(stats.seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& f : frames) {
        const FrameImage& img = images.get(f);
        for (const auto& gt : extract_positives(f, stats.min_height)) {
            for (const auto& c : random_crops(img, gt, alpha, stats.crops, rng)) {
                out.push_back({crop_and_resize(img, expand_box(c, alpha), input), 1, frame_fold.at(f.frame_id)});
            }
        }
    }
    for (const auto& n : stats.negatives) {
        const FrameRecord* f = m.find(n.frame_id);
        if (f == nullptr) throw InvariantError("prep stats reference unknown frame '" + n.frame_id + "'");
        const auto fold = frame_fold.find(n.frame_id);
        if (fold == frame_fold.end()) continue;  // frame not in the sampled training split
        out.push_back({crop_and_resize(images.get(*f), expand_box(n.box, alpha), input), 0, fold->second});
    }
    return out;
}

SvmExamples collect_svm_examples(const DatasetManifest& m, const PrepStats& stats, const ProposalMap& proposals,
                                 const ConvNetWeights& net, const TrainPipelineConfig& cfg, ImageCache& images) {
    struct Candidate {
        const FrameRecord* frame;
        ScoredRegion region;
        int label;
    };
    const auto frames = sample_frames(m, Split::Train, stats.train_step);
    std::vector<Candidate> pos, neg;
    for (const auto& f : frames) {
        const auto it = proposals.find(f.frame_id);
        if (it == proposals.end()) continue;
        const FrameRecord* rec = m.find(f.frame_id);
        const auto gts = extract_positives(f, stats.min_height);
        for (const auto& r : it->second) {
            double best = 0.0;
            for (const auto& g : gts) best = std::max(best, iou(r.box, g));
            if (best > cfg.svm_pos_iou) pos.push_back({rec, r, 1});
            else if (best < cfg.svm_neg_iou) neg.push_back({rec, r, -1});
        }
    }
    if (pos.empty() || neg.empty()) throw EmptyResultError("svm: training proposals lack positives or negatives");

    // Keep a seeded subset of negatives, preserving their original order.
    const auto keep = std::min<std::size_t>(
        neg.size(), static_cast<std::size_t>(std::ceil(cfg.svm_neg_per_pos * static_cast<double>(pos.size()))));
    std::vector<std::size_t> idx(neg.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(cfg.cnn.seed + 17);
    for (std::size_t k = 0; k < keep; ++k) std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());

    std::vector<Candidate> chosen = pos;
    for (std::size_t i : idx) chosen.push_back(neg[i]);

    SvmExamples ex;
    const double alpha = stats.padding.mean_alpha;
    for (const auto& c : chosen) {
        const FrameImage& img = images.get(*c.frame);
        const BoundingBox box = clip_box(c.region.box, img.size());
        const Patch patch = crop_and_resize(img, expand_box(box, alpha), net.spec.input_size());
        ex.features.push_back(forward(net, patch).features);
        ex.proposal_scores.push_back(c.region.score);
        ex.labels.push_back(c.label);
    }
    return ex;
}

LinearSvm fit_classifier(const SvmExamples& ex, const FusionMode& fusion, const SvmTrainConfig& cfg) {
    if (ex.features.empty()) throw EmptyResultError("svm: no training examples");
    const std::size_t dim = ex.features.front().size();
    if (fusion.is_series()) {
        std::vector<std::vector<double>> xs;
        std::vector<int> ys;
        for (std::size_t i = 0; i < ex.features.size(); ++i) {
            if (ex.proposal_scores[i] > fusion.threshold) {
                xs.push_back(ex.features[i]);
                ys.push_back(ex.labels[i]);
            }
        }
        const bool both = std::count(ys.begin(), ys.end(), 1) > 0 && std::count(ys.begin(), ys.end(), -1) > 0;
        LinearSvm m = both ? train_svm(xs, ys, cfg) : train_svm(ex.features, ex.labels, cfg);
        m.fused = false;
        m.feature_dim = dim;
        return m;
    }
    const ScoreStandardizer st = ScoreStandardizer::fit(ex.proposal_scores);
    std::vector<std::vector<double>> xs;
    xs.reserve(ex.features.size());
    for (std::size_t i = 0; i < ex.features.size(); ++i) {
        xs.push_back(fuse_features(ex.features[i], ex.proposal_scores[i], st));
    }
    LinearSvm m = train_svm(xs, ex.labels, cfg);
    m.fused = true;
    m.feature_dim = dim;
    m.score_mean = st.mean;
    m.score_std = st.std;
    return m;
}

ModelBundle train_bundle(const DatasetManifest& m, const PrepStats& stats, const ProposalMap& proposals,
                         const TrainPipelineConfig& cfg, ImageCache& images, TrainReport* report) {
    TrainReport rep;
    const auto patches = build_training_patches(m, stats, cfg.spec, cfg.cnn.folds, images);
    for (const auto& p : patches) (p.label == 1 ? rep.cnn_positives : rep.cnn_negatives)++;

    rep.stop_iteration = cfg.cnn.max_iterations;
    if (cfg.crossval) {
        rep.crossval = crossval_stop_iteration(cfg.spec, patches, cfg.cnn);
        rep.stop_iteration = rep.crossval.stop_iteration;
    }

    ModelBundle bundle;
    bundle.convnet = finetune_full(cfg.spec, patches, rep.stop_iteration, cfg.cnn);
    const SvmExamples ex = collect_svm_examples(m, stats, proposals, bundle.convnet, cfg, images);
    for (int y : ex.labels) (y == 1 ? rep.svm_positives : rep.svm_negatives)++;
    bundle.svm = fit_classifier(ex, cfg.fusion, cfg.svm);
    bundle.mean_alpha = stats.padding.mean_alpha;
    bundle.fusion = cfg.fusion;
    bundle.proposals = cfg.source;
    bundle.input_size = cfg.spec.input_size();
    bundle.validate();
    if (report) *report = std::move(rep);
    return bundle;
}

}  // namespace pedpipe
