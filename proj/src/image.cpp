#include "pedpipe/image.hpp"

#include <algorithm>
#include <cmath>

#include "pedpipe/error.hpp"

namespace pedpipe {

FrameImage::FrameImage(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || channels <= 0) {
        throw RangeError("FrameImage: dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Patch crop_and_resize(const FrameImage& img, const BoundingBox& b, FrameSize target) {
    if (target.width <= 0 || target.height <= 0) {
        throw RangeError("crop_and_resize: target dimensions must be positive");
    }
    const BoundingBox box = clip_box(b, img.size());
    const int channels = img.channels();
    Patch out(target.width, target.height, channels);

    const double sx = box.w / target.width;
    const double sy = box.h / target.height;
    const int max_col = img.width() - 1;
    const int max_row = img.height() - 1;

    // Horizontal taps are shared by every output row.
    std::vector<int> x0(target.width), x1(target.width);
    std::vector<float> fx(target.width);
    for (int j = 0; j < target.width; ++j) {
        double src = box.x + (j + 0.5) * sx - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(max_col));
        const int lo = static_cast<int>(std::floor(src));
        x0[j] = lo;
        x1[j] = std::min(lo + 1, max_col);
        fx[j] = static_cast<float>(src - lo);
    }

    for (int i = 0; i < target.height; ++i) {
        double src = box.y + (i + 0.5) * sy - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(max_row));
        const int y0 = static_cast<int>(std::floor(src));
        const int y1 = std::min(y0 + 1, max_row);
        const float fy = static_cast<float>(src - y0);
        for (int j = 0; j < target.width; ++j) {
            for (int c = 0; c < channels; ++c) {
                const float top = img.at(y0, x0[j], c) + fx[j] * (img.at(y0, x1[j], c) - img.at(y0, x0[j], c));
                const float bot = img.at(y1, x0[j], c) + fx[j] * (img.at(y1, x1[j], c) - img.at(y1, x0[j], c));
                out.at(i, j, c) = std::clamp(top + fy * (bot - top), 0.0f, 255.0f);
            }
        }
    }
    return out;
}

}  // namespace pedpipe
