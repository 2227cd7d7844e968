#include "pedpipe/geometry.hpp"

#include <algorithm>
#include <sstream>

#include "pedpipe/error.hpp"

namespace pedpipe {

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

BoundingBox clip_box(const BoundingBox& b, FrameSize frame) {
    if (frame.width <= 0 || frame.height <= 0) {
        throw RangeError("clip_box: frame dimensions must be positive");
    }
    const double x0 = std::max(b.x, 0.0);
    const double y0 = std::max(b.y, 0.0);
    const double x1 = std::min(b.right(), static_cast<double>(frame.width));
    const double y1 = std::min(b.bottom(), static_cast<double>(frame.height));
    if (x1 <= x0 || y1 <= y0) {
        std::ostringstream os;
        os << "clip_box: box " << b << " lies outside the " << frame.width << 'x' << frame.height << " frame";
        throw EmptyResultError(os.str());
    }
    return {x0, y0, x1 - x0, y1 - y0};
}

BoundingBox expand_box(const BoundingBox& b, double alpha) {
    const double w = b.w * (1.0 + alpha);
    const double h = b.h * (1.0 + alpha);
    return {b.center_x() - 0.5 * w, b.center_y() - 0.5 * h, w, h};
}

}  // namespace pedpipe
