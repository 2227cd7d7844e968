#include "pedpipe/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pedpipe/error.hpp"
#include "pedpipe/vendor_json.hpp"

namespace pedpipe {

namespace {

std::vector<std::size_t> score_order(const std::vector<ScoredRegion>& rs) {
    std::vector<std::size_t> order(rs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rs[a].score > rs[b].score; });
    return order;
}

}  // namespace

MatchResult match_detections(const std::vector<ScoredRegion>& dets, const std::vector<BoundingBox>& gts,
                             double iou_thresh) {
    if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw RangeError("match_detections: iou_thresh must lie in (0,1)");
    MatchResult r;
    std::vector<bool> claimed(gts.size(), false);
    for (std::size_t d : score_order(dets)) {
        std::size_t best = gts.size();
        double best_iou = iou_thresh;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (claimed[g]) continue;
            const double o = iou(dets[d].box, gts[g]);
            if (o > best_iou) {
                best_iou = o;
                best = g;
            }
        }
        if (best < gts.size()) {
            claimed[best] = true;
            r.pairs.emplace_back(d, best);
        }
    }
    r.true_positives = r.pairs.size();
    r.false_positives = dets.size() - r.true_positives;
    r.false_negatives = gts.size() - r.true_positives;
    return r;
}

double miss_rate(std::size_t fn, std::size_t p) {
    if (p == 0) throw RangeError("miss_rate: no positives");
    return static_cast<double>(fn) / static_cast<double>(p);
}

MrFppiCurve mr_fppi_curve(const FrameDetections& dets, const FrameTruths& gts, double iou_thresh) {
    if (dets.size() != gts.size() ||
        !std::equal(dets.begin(), dets.end(), gts.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
        throw InvariantError("mr_fppi_curve: detection and ground-truth frame sets differ");
    }
    MrFppiCurve curve;
    curve.frames = gts.size();
    for (const auto& [id, boxes] : gts) curve.positives += boxes.size();
    if (curve.positives == 0) throw RangeError("mr_fppi_curve: no ground truth in any frame");

    // Greedy matching visits detections by descending score, so matching the
    // survivors of any threshold reproduces a prefix of the full matching.
    std::vector<std::pair<double, bool>> scored;  // (score, is true positive)
    for (const auto& [id, frame_dets] : dets) {
        const MatchResult m = match_detections(frame_dets, gts.at(id), iou_thresh);
        std::vector<bool> tp(frame_dets.size(), false);
        for (const auto& [d, g] : m.pairs) tp[d] = true;
        for (std::size_t i = 0; i < frame_dets.size(); ++i) scored.emplace_back(frame_dets[i].score, tp[i]);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const double frames = static_cast<double>(curve.frames);
    const double positives = static_cast<double>(curve.positives);
    std::vector<CurvePoint> desc;
    desc.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scored.size();) {
        const double s = scored[i].first;
        for (; i < scored.size() && scored[i].first == s; ++i) (scored[i].second ? tp : fp)++;
        desc.push_back({s, static_cast<double>(fp) / frames, static_cast<double>(curve.positives - tp) / positives});
    }
    desc.push_back({-std::numeric_limits<double>::infinity(), static_cast<double>(fp) / frames,
                    static_cast<double>(curve.positives - tp) / positives});
    curve.points.assign(desc.rbegin(), desc.rend());
    return curve;
}

double mr_at_fppi(const MrFppiCurve& curve, double target_fppi) {
    if (curve.points.empty()) throw RangeError("mr_at_fppi: empty curve");
    if (!(target_fppi > 0.0)) throw RangeError("mr_at_fppi: target must be positive");

    // Best miss rate reachable at each distinct FPPI, ascending in FPPI.
    std::vector<std::pair<double, double>> env;
    for (const auto& p : curve.points) env.emplace_back(p.fppi, p.miss_rate);
    std::sort(env.begin(), env.end());
    std::vector<std::pair<double, double>> pts;
    for (const auto& [f, mr] : env) {
        if (pts.empty() || pts.back().first != f) pts.emplace_back(f, mr);
        else pts.back().second = std::min(pts.back().second, mr);
    }

    if (target_fppi <= pts.front().first) return pts.front().second;
    if (target_fppi >= pts.back().first) return pts.back().second;
    const auto hi = std::lower_bound(pts.begin(), pts.end(), target_fppi,
                                     [](const auto& p, double f) { return p.first < f; });
    if (hi->first == target_fppi) return hi->second;
    const auto lo = hi - 1;
    if (lo->first <= 0.0) return lo->second;  // no log-scale interpolation from zero FPPI
    const double t = (std::log(target_fppi) - std::log(lo->first)) / (std::log(hi->first) - std::log(lo->first));
    return lo->second + t * (hi->second - lo->second);
}

std::vector<ScoredRegion> nms(const std::vector<ScoredRegion>& regions, double overlap_thresh) {
    if (!(overlap_thresh > 0.0 && overlap_thresh < 1.0)) throw RangeError("nms: overlap_thresh must lie in (0,1)");
    const auto order = score_order(regions);
    std::vector<bool> suppressed(regions.size(), false);
    std::vector<ScoredRegion> kept;
    for (std::size_t a = 0; a < order.size(); ++a) {
        if (suppressed[order[a]]) continue;
        const ScoredRegion& keep = regions[order[a]];
        kept.push_back(keep);
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            if (!suppressed[order[b]] && iou(keep.box, regions[order[b]].box) > overlap_thresh) {
                suppressed[order[b]] = true;
            }
        }
    }
    return kept;
}

namespace {

void append_number(std::string& out, double v) {
    if (std::isinf(v)) {
        out += v > 0 ? "inf" : "-inf";
        return;
    }
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

std::string format_curve(const MrFppiCurve& curve) {
    std::string out = "threshold,fppi,miss_rate\n";
    for (const auto& p : curve.points) {
        append_number(out, p.threshold);
        out += ',';
        append_number(out, p.fppi);
        out += ',';
        append_number(out, p.miss_rate);
        out += '\n';
    }
    return out;
}

void save_curve(const MrFppiCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_curve(curve);
}

std::string format_summary(const MrFppiCurve& curve, double target_fppi) {
    std::string key = "mr_at_";
    append_number(key, target_fppi);
    key += "_fppi";
    nlohmann::json j;
    j[key] = mr_at_fppi(curve, target_fppi);
    j["frames"] = curve.frames;
    j["positives"] = curve.positives;
    return j.dump() + "\n";
}

}  // namespace pedpipe
