#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pedpipe/geometry.hpp"
#include "pedpipe/image.hpp"
#include "pedpipe/random.hpp"
#include "vendor_json.hpp"

namespace pedpipe {

enum class Split { Train, Test };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct Annotation {
    BoundingBox box;
    bool occluded = false;
    int person_id = 0;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct FrameRecord {
    std::string frame_id;
    std::string image_path;
    int session = 0;
    Split split = Split::Train;
    std::vector<Annotation> annotations;

    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

/// Frames in temporal order within each session, plus free-form metadata.
struct DatasetManifest {
    std::vector<FrameRecord> frames;
    nlohmann::json metadata = nlohmann::json::object();
    /// Directory that relative image paths are resolved against.
    std::filesystem::path base_dir;

    const FrameRecord* find(const std::string& frame_id) const;
    std::filesystem::path image_path(const FrameRecord& f) const;
};

struct ManifestOptions {
    /// Enforce sessions 0-5 => train, 6-10 => test.
    bool caltech_convention = false;
};

/// Parses and validates a manifest file. Throws ParseError (with line or
/// field context) or InvariantError naming the offending frame.
DatasetManifest load_manifest(const std::filesystem::path& path, ManifestOptions opts = {});
DatasetManifest parse_manifest(const std::string& text, ManifestOptions opts = {});

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
std::string dump_manifest(const DatasetManifest& m);

void validate_manifest(const DatasetManifest& m, ManifestOptions opts = {});

inline constexpr int kDefaultTestStep = 30;
inline constexpr int kDefaultTrainStep = 3;

/// Keeps frames at per-session indices 0, step, 2*step, ... of the split,
/// returned in manifest order.
std::vector<FrameRecord> sample_frames(const DatasetManifest& m, Split split, int step);
std::vector<FrameRecord> sample_frames(const DatasetManifest& m, Split split);

inline constexpr double kDefaultMinHeight = 50.0;

/// Annotations taller than `min_height` (strictly) and, unless
/// `include_occluded`, not occluded.
std::vector<BoundingBox> extract_positives(const FrameRecord& f, double min_height = kDefaultMinHeight,
                                           bool include_occluded = false);

struct SizeRange {
    double min_h = 50.0;
    double max_h = 200.0;
};

struct NegativeSampling {
    SizeRange size{};
    double max_overlap = 0.0;
    double aspect_ratio = 2.0;  // h : w
    int max_attempts_per_box = 1000;
};

/// Uniform position, log-uniform height; every box has iou <= max_overlap
/// against every annotation of the frame and lies inside the image.
/// Throws SamplingExhaustedError when a box cannot be placed.
std::vector<BoundingBox> sample_random_negatives(const FrameRecord& f, const FrameImage& img, int count,
                                                 const NegativeSampling& params, Rng& rng);

/// Evaluation view of a frame: annotations that count as positives, and the
/// remaining ones (too small or occluded) that act as ignore regions.
struct EvaluationTargets {
    std::vector<BoundingBox> positives;
    std::vector<BoundingBox> ignore;
};

EvaluationTargets evaluation_targets(const FrameRecord& f, double min_height = kDefaultMinHeight,
                                     bool include_occluded = false);

/// Marks detections overlapping an ignore region (iou > iou_thresh); such
/// detections count neither as true nor false positives.
std::vector<bool> ignored_detections(const std::vector<BoundingBox>& dets, const std::vector<BoundingBox>& ignore,
                                     double iou_thresh = 0.5);

}  // namespace pedpipe
