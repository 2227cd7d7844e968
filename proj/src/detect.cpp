#include <algorithm>
#include <atomic>
#include <chrono>
#include <limits>
#include <thread>

#include "pedpipe/error.hpp"
#include "pedpipe/evaluate.hpp"
#include "pedpipe/pipeline.hpp"

namespace pedpipe {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::vector<ScoredRegion> detect_frame(const FrameImage& img, const std::string& frame_id, const ModelBundle& m,
                                       const DetectionConfig& cfg, StageTimes* times) {
    const auto frame_start = Clock::now();
    StageTimes local;

    auto t0 = Clock::now();
    std::vector<ScoredRegion> regions;
    if (m.proposals.kind == ProposalSource::Kind::Sliding) {
        for (const auto& b : sliding_windows(img.size(), m.proposals.sliding)) regions.push_back({frame_id, b, 0.0});
    } else {
        if (cfg.external == nullptr) throw InvariantError("bundle uses external proposals but none were supplied");
        const auto it = cfg.external->find(frame_id);
        if (it == cfg.external->end()) {
            throw Error("missing_proposals", "no external proposals for frame '" + frame_id + "'");
        }
        regions = it->second;
    }
    if (m.fusion.is_series()) regions = threshold_proposals(regions, m.fusion.threshold);
    local.proposal = ms_since(t0);

    const FrameSize input = m.input_size;
    std::vector<ScoredRegion> scored;
    scored.reserve(regions.size());
    for (const auto& r : regions) {
        t0 = Clock::now();
        BoundingBox box;
        try {
            box = clip_box(r.box, img.size());
        } catch (const EmptyResultError&) {
            local.preprocess += ms_since(t0);
            continue;
        }
        const Patch patch = crop_and_resize(img, expand_box(box, m.mean_alpha), input);
        local.preprocess += ms_since(t0);

        t0 = Clock::now();
        const ForwardResult fr = forward(m.convnet, patch);
        local.features += ms_since(t0);

        t0 = Clock::now();
        const double s = m.svm.fused ? svm_score(m.svm, fuse_features(fr.features, r.score, m.svm))
                                     : svm_score(m.svm, fr.features);
        if (s > cfg.score_floor) scored.push_back({frame_id, box, s});
        local.classify += ms_since(t0);
    }

    t0 = Clock::now();
    auto out = nms(scored, cfg.nms_iou);
    local.nms = ms_since(t0);
    local.total = ms_since(frame_start);
    if (times) *times = local;
    return out;
}

std::vector<std::vector<ScoredRegion>> detect_frames(const std::vector<FrameInput>& frames, const ModelBundle& m,
                                                     const DetectionConfig& cfg, int workers) {
    std::vector<std::vector<ScoredRegion>> out(frames.size());
    std::vector<std::exception_ptr> errors(frames.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < frames.size(); i = next++) {
            try {
                out[i] = detect_frame(frames[i].image, frames[i].frame_id, m, cfg);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(frames.size())));
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

MrFppiCurve evaluate_frames(const std::vector<FrameRecord>& frames, const ProposalMap& detections,
                            double iou_thresh, double min_height) {
    FrameDetections dets;
    FrameTruths gts;
    for (const auto& f : frames) {
        const auto targets = evaluation_targets(f, min_height);
        auto& kept = dets[f.frame_id];
        if (const auto it = detections.find(f.frame_id); it != detections.end()) {
            std::vector<BoundingBox> boxes;
            for (const auto& d : it->second) boxes.push_back(d.box);
            const auto ignored = ignored_detections(boxes, targets.ignore);
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                if (!ignored[i]) kept.push_back(it->second[i]);
            }
        }
        gts[f.frame_id] = targets.positives;
    }
    return mr_fppi_curve(dets, gts, iou_thresh);
}

nlohmann::json TimingReport::to_json() const {
    auto stat = [](const StageStats& s) { return nlohmann::json{{"mean_ms", s.mean}, {"min_ms", s.min}, {"max_ms", s.max}}; };
    return {{"stages",
             {{"proposal", stat(proposal)},
              {"preprocess", stat(preprocess)},
              {"features", stat(features)},
              {"classify", stat(classify)},
              {"nms", stat(nms)}}},
            {"frame", stat(frame)},
            {"frames_measured", frames_measured},
            {"fps", fps}};
}

TimingReport run_benchmark(const std::vector<FrameInput>& frames, const ModelBundle& m, int repetitions,
                           const DetectionConfig& cfg) {
    if (repetitions < 1) throw RangeError("run_benchmark: repetitions must be >= 1");
    if (frames.empty()) throw RangeError("run_benchmark: no frames");

    std::vector<StageTimes> samples;
    for (int rep = 0; rep < repetitions; ++rep) {
        for (const auto& f : frames) {
            StageTimes t;
            detect_frame(f.image, f.frame_id, m, cfg, &t);
            if (rep > 0 || repetitions == 1) samples.push_back(t);
        }
    }

    auto stats = [&](double StageTimes::*field) {
        StageStats s{0.0, std::numeric_limits<double>::infinity(), 0.0};
        for (const auto& t : samples) {
            s.mean += t.*field;
            s.min = std::min(s.min, t.*field);
            s.max = std::max(s.max, t.*field);
        }
        s.mean /= static_cast<double>(samples.size());
        return s;
    };
    TimingReport r;
    r.proposal = stats(&StageTimes::proposal);
    r.preprocess = stats(&StageTimes::preprocess);
    r.features = stats(&StageTimes::features);
    r.classify = stats(&StageTimes::classify);
    r.nms = stats(&StageTimes::nms);
    r.frame = stats(&StageTimes::total);
    r.frames_measured = samples.size();
    const double sum = r.stage_mean_sum();
    r.fps = sum > 0.0 ? 1000.0 / sum : 0.0;
    return r;
}

}  // namespace pedpipe
