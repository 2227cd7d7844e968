#pragma once

#include <cstdint>
#include <vector>

#include "pedpipe/geometry.hpp"
#include "pedpipe/image.hpp"
#include "pedpipe/random.hpp"

namespace pedpipe {

// ---------------------------------------------------------------------------
// Color histograms

/// Per-pixel quantized colors, floor(I / delta), same layout as FrameImage.
struct QuantizedImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bins_per_channel = 0;
    std::vector<std::uint16_t> values;
};

int bins_per_channel(double delta);

QuantizedImage quantize_image(const FrameImage& img, double delta);

/// Occurrence counts of quantized color vectors, indexed lexicographically
/// with the first channel most significant. Length bins_per_channel^channels.
struct ColorHistogram {
    double delta = 32.0;
    int bins_per_channel = 8;
    int channels = 3;
    std::vector<double> values;
    bool normalized = false;
};

inline constexpr double kDefaultDelta = 32.0;

/// Histogram of quantized colors, L2-normalized unless `normalize` is false.
ColorHistogram color_histogram(const FrameImage& img, double delta = kDefaultDelta, bool normalize = true);

enum class DistanceMode { Direct, Cumulative };

/// Euclidean distance between histogram vectors (Direct) or between their
/// lexicographic prefix sums (Cumulative). Throws ShapeError on mismatch.
double histogram_distance(const ColorHistogram& a, const ColorHistogram& b, DistanceMode mode = DistanceMode::Direct);

// ---------------------------------------------------------------------------
// Negative decorrelation

enum class DiversityReference {
    /// Average distance to the other regions still in the pool.
    RemainingPool,
    /// Average distance to the regions selected so far.
    SelectedSet,
};

/// Symmetric matrix, row-major n x n.
struct DistanceMatrix {
    std::size_t n = 0;
    std::vector<double> d;
    double operator()(std::size_t i, std::size_t j) const { return d[i * n + j]; }
};

DistanceMatrix pairwise_distances(const std::vector<ColorHistogram>& hists, DistanceMode mode);

/// Greedy selection of K pool indices, in selection order. Each step takes
/// the region with the highest average distance to the reference set; ties
/// go to the lowest index.
std::vector<std::size_t> select_diverse(const DistanceMatrix& dist, std::size_t k,
                                        DiversityReference ref = DiversityReference::RemainingPool);

std::vector<std::size_t> select_diverse_negatives(const std::vector<FrameImage>& pool, std::size_t k,
                                                  double delta = kDefaultDelta,
                                                  DistanceMode mode = DistanceMode::Direct,
                                                  DiversityReference ref = DiversityReference::RemainingPool);

// ---------------------------------------------------------------------------
// Padding and crops

struct PaddingStat {
    std::vector<double> samples;
    double mean_alpha = 0.0;
};

/// Smallest alpha >= 0 such that `inner` lies inside expand_box(outer, alpha).
double containment_alpha(const BoundingBox& outer, const BoundingBox& inner);

/// Index of the proposal closest to `gt`: max iou, then smaller center
/// distance, then lower index.
std::size_t closest_proposal(const BoundingBox& gt, const std::vector<BoundingBox>& proposals);

/// For each ground truth, the padding factor its closest proposal needs to
/// contain it; mean_alpha is their arithmetic mean.
PaddingStat estimate_padding(const std::vector<BoundingBox>& gts, const std::vector<BoundingBox>& proposals);

inline constexpr int kDefaultCropsPerPositive = 5;

/// `n` boxes of b's size placed uniformly inside expand_box(b, alpha).
/// Positions are kept inside the frame when the padded box allows it.
std::vector<BoundingBox> random_crops(const FrameImage& img, const BoundingBox& b, double alpha, int n, Rng& rng);

}  // namespace pedpipe
