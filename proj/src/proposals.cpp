#include "pedpipe/proposals.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pedpipe/error.hpp"

namespace pedpipe {

void SlidingWindowParams::validate() const {
    if (!(scale_step > 1.0)) throw RangeError("sliding window: scale_step must be > 1");
    if (!(stride >= 1.0)) throw RangeError("sliding window: stride must be >= 1");
    if (!(min_h > 0.0) || min_h > max_h) throw RangeError("sliding window: need 0 < min_h <= max_h");
    if (!(aspect_ratio > 0.0)) throw RangeError("sliding window: aspect ratio must be positive");
}

std::vector<double> window_heights(const SlidingWindowParams& p) {
    p.validate();
    std::vector<double> out;
    // Relative slack so that heights landing on max_h up to rounding are kept.
    const double limit = p.max_h * (1.0 + 1e-12);
    for (int k = 0;; ++k) {
        const double h = p.min_h * std::pow(p.scale_step, k);
        if (h > limit) break;
        out.push_back(h);
    }
    return out;
}

std::vector<BoundingBox> sliding_windows(FrameSize frame, const SlidingWindowParams& p) {
    std::vector<BoundingBox> out;
    const auto heights = window_heights(p);
    for (std::size_t k = 0; k < heights.size(); ++k) {
        const double h = heights[k];
        const double w = h / p.aspect_ratio;
        if (h > frame.height || w > frame.width) continue;
        const double stride = p.scale_stride ? p.stride * std::pow(p.scale_step, static_cast<double>(k)) : p.stride;
        const long rows = static_cast<long>(std::floor((frame.height - h) / stride)) + 1;
        const long cols = static_cast<long>(std::floor((frame.width - w) / stride)) + 1;
        out.reserve(out.size() + static_cast<std::size_t>(rows * cols));
        for (long r = 0; r < rows; ++r) {
            for (long c = 0; c < cols; ++c) {
                out.push_back({c * stride, r * stride, w, h});
            }
        }
    }
    return out;
}

namespace {

double parse_number(std::string_view tok, std::size_t row, const char* name) {
    double v = 0.0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    while (first < last && *first == ' ') ++first;
    while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("proposals row " + std::to_string(row) + ": invalid " + name + " '" + std::string(tok) + "'");
    }
    return v;
}

void append_number(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

ProposalMap parse_proposals(const std::string& text) {
    ProposalMap out;
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (row == 1) {
            if (line != "frame_id,x,y,w,h,score") {
                throw ParseError("proposals row 1: expected header 'frame_id,x,y,w,h,score'");
            }
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> cols;
        std::string_view rest(line);
        for (;;) {
            const auto pos = rest.find(',');
            cols.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        if (cols.size() != 6) {
            throw ParseError("proposals row " + std::to_string(row) + ": expected 6 columns, got " +
                             std::to_string(cols.size()));
        }
        ScoredRegion r;
        r.frame_id = std::string(cols[0]);
        r.box = {parse_number(cols[1], row, "x"), parse_number(cols[2], row, "y"), parse_number(cols[3], row, "w"),
                 parse_number(cols[4], row, "h")};
        r.score = parse_number(cols[5], row, "score");
        if (!(r.box.w > 0.0) || !(r.box.h > 0.0)) {
            throw ParseError("proposals row " + std::to_string(row) + ": width and height must be positive");
        }
        out[r.frame_id].push_back(std::move(r));
    }
    return out;
}

ProposalMap load_external_proposals(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open proposals file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_proposals(buf.str());
}

std::string format_regions(const std::vector<ScoredRegion>& regions) {
    std::string out = "frame_id,x,y,w,h,score\n";
    for (const auto& r : regions) {
        out += r.frame_id;
        for (double v : {r.box.x, r.box.y, r.box.w, r.box.h, r.score}) {
            out += ',';
            append_number(out, v);
        }
        out += '\n';
    }
    return out;
}

void save_regions(const std::vector<ScoredRegion>& regions, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_regions(regions);
}

std::vector<ScoredRegion> threshold_proposals(const std::vector<ScoredRegion>& rs, double t) {
    std::vector<ScoredRegion> out;
    for (const auto& r : rs) {
        if (r.score > t) out.push_back(r);
    }
    return out;
}

double proposal_recall(const std::vector<ScoredRegion>& proposals, const std::vector<BoundingBox>& gts,
                       double iou_thresh) {
    if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) throw RangeError("proposal_recall: iou_thresh must lie in (0,1]");
    if (gts.empty()) return 1.0;
    std::size_t covered = 0;
    for (const auto& g : gts) {
        for (const auto& p : proposals) {
            if (iou(p.box, g) > iou_thresh) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(gts.size());
}

}  // namespace pedpipe
