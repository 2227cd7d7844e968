#pragma once

#include <cmath>
#include <ostream>

namespace pedpipe {

/// Axis-aligned rectangle in continuous pixel coordinates, origin top-left,
/// y growing downward. Boxes may extend past the frame until clipped.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }
    double center_x() const { return x + 0.5 * w; }
    double center_y() const { return y + 0.5 * h; }
    bool valid() const { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y); }

    /// True when `other` lies inside this box (closed rectangles).
    bool contains(const BoundingBox& other) const {
        return other.x >= x && other.y >= y && other.right() <= right() && other.bottom() <= bottom();
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const BoundingBox& b) {
    return os << '(' << b.x << ',' << b.y << ',' << b.w << ',' << b.h << ')';
}

struct FrameSize {
    int width = 0;
    int height = 0;

    friend bool operator==(const FrameSize&, const FrameSize&) = default;
};

double intersection_area(const BoundingBox& a, const BoundingBox& b);

/// Intersection over union, in [0,1]. Symmetric; zero for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Intersection of `b` with the frame rectangle. Throws EmptyResultError when
/// nothing of `b` lies inside the frame.
BoundingBox clip_box(const BoundingBox& b, FrameSize frame);

/// Scales width and height by (1 + alpha) about the box center.
BoundingBox expand_box(const BoundingBox& b, double alpha);

}  // namespace pedpipe
