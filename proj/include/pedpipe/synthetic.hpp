#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pedpipe/dataset.hpp"
#include "pedpipe/image.hpp"
#include "pedpipe/proposals.hpp"

namespace pedpipe {

/// Synthetic street scenes: textured, cluttered backgrounds with upright
/// 2:1 figures (head, torso, two legs) as pedestrians. Each frame also gets
/// scored sliding-window proposals whose score is the window's best iou
/// with a pedestrian plus Gaussian noise, standing in for an external
/// proposal detector.
struct SyntheticConfig {
    std::uint64_t seed = 2024;
    int width = 200;
    int height = 150;
    int train_frames = 200;
    int test_frames = 50;
    int max_pedestrians = 2;
    double min_pedestrian_h = 56.0;
    double max_pedestrian_h = 110.0;
    int clutter_objects = 7;
    double pixel_noise = 12.0;
    double score_noise = 0.15;
    SlidingWindowParams windows{};
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<FrameImage> images;  // parallel to manifest.frames
    ProposalMap proposals;
};

/// Train frames use sessions 0-5, test frames sessions 6-10.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Writes images/<frame>.ppm, manifest.json and proposals.csv into `dir`.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

}  // namespace pedpipe
