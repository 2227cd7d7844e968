#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pedpipe/geometry.hpp"
#include "pedpipe/proposals.hpp"

namespace pedpipe {

struct MatchResult {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    /// (detection index, ground-truth index)
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

inline constexpr double kDefaultMatchIou = 0.5;

/// Greedy one-to-one matching: detections in descending score (ties by
/// index) claim the unmatched ground truth of highest iou, if that iou
/// exceeds `iou_thresh`.
MatchResult match_detections(const std::vector<ScoredRegion>& dets, const std::vector<BoundingBox>& gts,
                             double iou_thresh = kDefaultMatchIou);

/// FN / P. Throws RangeError when p == 0.
double miss_rate(std::size_t fn, std::size_t p);

struct CurvePoint {
    double threshold = 0.0;
    double fppi = 0.0;
    double miss_rate = 1.0;
};

/// Points sorted by ascending threshold.
struct MrFppiCurve {
    std::vector<CurvePoint> points;
    std::size_t frames = 0;
    std::size_t positives = 0;
};

using FrameDetections = std::map<std::string, std::vector<ScoredRegion>>;
using FrameTruths = std::map<std::string, std::vector<BoundingBox>>;

/// Sweeps the score threshold over every distinct detection score plus
/// -inf/+inf; a detection survives when score >= threshold. Frame key sets
/// must match and contain at least one ground truth overall.
MrFppiCurve mr_fppi_curve(const FrameDetections& dets, const FrameTruths& gts, double iou_thresh = kDefaultMatchIou);

/// Miss rate at `target_fppi`, interpolated linearly in log(FPPI) between
/// neighbouring points; clamped to the end points outside the curve range.
double mr_at_fppi(const MrFppiCurve& curve, double target_fppi);

/// Greedy non-maximum suppression; output sorted by descending score.
std::vector<ScoredRegion> nms(const std::vector<ScoredRegion>& regions, double overlap_thresh = 0.5);

/// `threshold,fppi,miss_rate` CSV with header.
std::string format_curve(const MrFppiCurve& curve);
void save_curve(const MrFppiCurve& curve, const std::filesystem::path& path);

/// {"mr_at_0.1_fppi":..,"frames":..,"positives":..}; the key follows the
/// requested FPPI.
std::string format_summary(const MrFppiCurve& curve, double target_fppi);

}  // namespace pedpipe
