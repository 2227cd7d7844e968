#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pedpipe/geometry.hpp"

namespace pedpipe {

/// Multi-scale sliding-window grid. Defaults: 2:1 aspect, heights 50..200,
/// scale step 1.1, stride 10 px.
struct SlidingWindowParams {
    double aspect_ratio = 2.0;  // h : w
    double min_h = 50.0;
    double max_h = 200.0;
    double scale_step = 1.1;
    double stride = 10.0;
    /// Multiply the stride by the scale factor at each scale instead of
    /// keeping it constant in image pixels.
    bool scale_stride = false;

    void validate() const;
    friend bool operator==(const SlidingWindowParams&, const SlidingWindowParams&) = default;
};

/// Window heights h_k = min_h * scale_step^k for every k with h_k <= max_h.
std::vector<double> window_heights(const SlidingWindowParams& p);

/// All windows fully inside the frame, scale-major then row-major.
std::vector<BoundingBox> sliding_windows(FrameSize frame, const SlidingWindowParams& p);

struct ScoredRegion {
    std::string frame_id;
    BoundingBox box;
    double score = 0.0;

    friend bool operator==(const ScoredRegion&, const ScoredRegion&) = default;
};

using ProposalMap = std::map<std::string, std::vector<ScoredRegion>>;

/// Reads `frame_id,x,y,w,h,score` CSV (literal header row). Rows are grouped
/// by frame in file order. Throws ParseError naming the row.
ProposalMap load_external_proposals(const std::filesystem::path& path);
ProposalMap parse_proposals(const std::string& text);

/// Writes the same CSV format. Numbers use the shortest round-trip form.
void save_regions(const std::vector<ScoredRegion>& regions, const std::filesystem::path& path);
std::string format_regions(const std::vector<ScoredRegion>& regions);

/// Regions with score strictly greater than `t`, order preserved.
std::vector<ScoredRegion> threshold_proposals(const std::vector<ScoredRegion>& rs, double t);

/// Fraction of ground truths covered by some proposal with iou > iou_thresh.
/// 1.0 when `gts` is empty.
double proposal_recall(const std::vector<ScoredRegion>& proposals, const std::vector<BoundingBox>& gts,
                       double iou_thresh = 0.5);

}  // namespace pedpipe
