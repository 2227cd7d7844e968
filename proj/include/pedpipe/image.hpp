#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "pedpipe/geometry.hpp"

namespace pedpipe {

/// Interleaved multi-channel image with intensities in [0, 255], indexed
/// (row, column, channel). Stored as float so resampled patches keep their
/// sub-integer values.
class FrameImage {
public:
    FrameImage() = default;
    FrameImage(int width, int height, int channels, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    FrameSize size() const { return {width_, height_}; }
    bool empty() const { return pixels_.empty(); }

    float& at(int row, int col, int ch) { return pixels_[index(row, col, ch)]; }
    float at(int row, int col, int ch) const { return pixels_[index(row, col, ch)]; }

    const std::vector<float>& data() const { return pixels_; }
    std::vector<float>& data() { return pixels_; }

    friend bool operator==(const FrameImage&, const FrameImage&) = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> pixels_;
};

/// A FrameImage produced by crop_and_resize; its dimensions equal the
/// feature extractor's input size.
using Patch = FrameImage;

/// Crops `b` (clipped to the frame first) and resamples it to `target` with
/// bilinear interpolation, align-corners-false, each channel independently.
/// Aspect ratio is not preserved. Throws EmptyResultError if the clipped box
/// is empty.
Patch crop_and_resize(const FrameImage& img, const BoundingBox& b, FrameSize target);

/// Reads a binary PPM (P6) or PNG file.
FrameImage read_image(const std::filesystem::path& path);

/// Writes a binary PPM (P6); intensities are rounded and clamped to [0,255].
void write_ppm(const FrameImage& img, const std::filesystem::path& path);

}  // namespace pedpipe
