#include "pedpipe/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pedpipe/error.hpp"

namespace pedpipe {

int bins_per_channel(double delta) {
    if (!(delta > 0.0 && delta <= 256.0)) throw RangeError("quantization step must lie in (0, 256]");
    return static_cast<int>(std::ceil(256.0 / delta));
}

QuantizedImage quantize_image(const FrameImage& img, double delta) {
    QuantizedImage q;
    q.width = img.width();
    q.height = img.height();
    q.channels = img.channels();
    q.bins_per_channel = bins_per_channel(delta);
    q.values.resize(img.data().size());
    const int top = q.bins_per_channel - 1;
    std::transform(img.data().begin(), img.data().end(), q.values.begin(), [&](float v) {
        const int bin = static_cast<int>(std::floor(static_cast<double>(v) / delta));
        return static_cast<std::uint16_t>(std::clamp(bin, 0, top));
    });
    return q;
}

ColorHistogram color_histogram(const FrameImage& img, double delta, bool normalize) {
    const QuantizedImage q = quantize_image(img, delta);
    ColorHistogram h;
    h.delta = delta;
    h.bins_per_channel = q.bins_per_channel;
    h.channels = q.channels;
    std::size_t len = 1;
    for (int c = 0; c < q.channels; ++c) len *= static_cast<std::size_t>(q.bins_per_channel);
    h.values.assign(len, 0.0);

    const std::size_t pixels = static_cast<std::size_t>(q.width) * q.height;
    for (std::size_t px = 0; px < pixels; ++px) {
        std::size_t idx = 0;
        for (int c = 0; c < q.channels; ++c) {
            idx = idx * static_cast<std::size_t>(q.bins_per_channel) + q.values[px * q.channels + c];
        }
        h.values[idx] += 1.0;
    }
    if (normalize) {
        double norm = 0.0;
        for (double v : h.values) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (double& v : h.values) v /= norm;
        }
        h.normalized = true;
    }
    return h;
}

double histogram_distance(const ColorHistogram& a, const ColorHistogram& b, DistanceMode mode) {
    if (a.delta != b.delta || a.channels != b.channels || a.values.size() != b.values.size()) {
        throw ShapeError("histogram_distance: histograms differ in quantization step or channel count");
    }
    double sum = 0.0;
    if (mode == DistanceMode::Direct) {
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const double d = a.values[i] - b.values[i];
            sum += d * d;
        }
    } else {
        double ca = 0.0, cb = 0.0;
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            ca += a.values[i];
            cb += b.values[i];
            const double d = ca - cb;
            sum += d * d;
        }
    }
    return std::sqrt(sum);
}

DistanceMatrix pairwise_distances(const std::vector<ColorHistogram>& hists, DistanceMode mode) {
    DistanceMatrix m;
    m.n = hists.size();
    m.d.assign(m.n * m.n, 0.0);
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = i + 1; j < m.n; ++j) {
            const double d = histogram_distance(hists[i], hists[j], mode);
            m.d[i * m.n + j] = d;
            m.d[j * m.n + i] = d;
        }
    }
    return m;
}

std::vector<std::size_t> select_diverse(const DistanceMatrix& dist, std::size_t k, DiversityReference ref) {
    if (k < 1 || k > dist.n) {
        throw RangeError("select_diverse_negatives: K=" + std::to_string(k) + " outside [1, " +
                         std::to_string(dist.n) + "]");
    }
    std::vector<bool> in_pool(dist.n, true);
    std::vector<std::size_t> selected;
    selected.reserve(k);

    while (selected.size() < k) {
        // The selected-set criterion needs a reference; the first pick uses the pool.
        const bool against_selected = ref == DiversityReference::SelectedSet && !selected.empty();
        std::size_t best = dist.n;
        double best_avg = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < dist.n; ++i) {
            if (!in_pool[i]) continue;
            double sum = 0.0;
            std::size_t count = 0;
            if (against_selected) {
                for (std::size_t j : selected) {
                    sum += dist(i, j);
                    ++count;
                }
            } else {
                for (std::size_t j = 0; j < dist.n; ++j) {
                    if (j == i || !in_pool[j]) continue;
                    sum += dist(i, j);
                    ++count;
                }
            }
            const double avg = count ? sum / static_cast<double>(count) : 0.0;
            if (avg > best_avg) {
                best_avg = avg;
                best = i;
            }
        }
        in_pool[best] = false;
        selected.push_back(best);
    }
    return selected;
}

std::vector<std::size_t> select_diverse_negatives(const std::vector<FrameImage>& pool, std::size_t k, double delta,
                                                  DistanceMode mode, DiversityReference ref) {
    std::vector<ColorHistogram> hists;
    hists.reserve(pool.size());
    for (const auto& p : pool) hists.push_back(color_histogram(p, delta));
    return select_diverse(pairwise_distances(hists, mode), k, ref);
}

double containment_alpha(const BoundingBox& outer, const BoundingBox& inner) {
    const double cx = outer.center_x();
    const double cy = outer.center_y();
    const double need_x = 2.0 * std::max(cx - inner.x, inner.right() - cx) / outer.w - 1.0;
    const double need_y = 2.0 * std::max(cy - inner.y, inner.bottom() - cy) / outer.h - 1.0;
    double alpha = std::max({need_x, need_y, 0.0});
    // Rounding in expand_box can leave an edge one ulp short; step up until
    // containment holds exactly.
    while (!expand_box(outer, alpha).contains(inner)) {
        alpha = std::nextafter(alpha, std::numeric_limits<double>::infinity());
    }
    return alpha;
}

std::size_t closest_proposal(const BoundingBox& gt, const std::vector<BoundingBox>& proposals) {
    std::size_t best = 0;
    double best_iou = -1.0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        const double o = iou(gt, proposals[i]);
        const double d = std::hypot(gt.center_x() - proposals[i].center_x(), gt.center_y() - proposals[i].center_y());
        if (o > best_iou || (o == best_iou && d < best_dist)) {
            best = i;
            best_iou = o;
            best_dist = d;
        }
    }
    return best;
}

PaddingStat estimate_padding(const std::vector<BoundingBox>& gts, const std::vector<BoundingBox>& proposals) {
    if (gts.empty() || proposals.empty()) {
        throw RangeError("estimate_padding: ground truths and proposals must be nonempty");
    }
    PaddingStat stat;
    stat.samples.reserve(gts.size());
    double sum = 0.0;
    for (const auto& gt : gts) {
        const double a = containment_alpha(proposals[closest_proposal(gt, proposals)], gt);
        stat.samples.push_back(a);
        sum += a;
    }
    stat.mean_alpha = sum / static_cast<double>(gts.size());
    return stat;
}

std::vector<BoundingBox> random_crops(const FrameImage& img, const BoundingBox& b, double alpha, int n, Rng& rng) {
    if (n < 0) throw RangeError("random_crops: n must be >= 0");
    if (alpha < 0.0) throw RangeError("random_crops: alpha must be >= 0");
    const BoundingBox padded = expand_box(b, alpha);

    auto range = [](double lo, double hi, double frame_hi) {
        // Keep to the frame when the slack interval intersects it.
        const double flo = std::max(lo, 0.0);
        const double fhi = std::min(hi, frame_hi);
        return flo <= fhi ? std::pair{flo, fhi} : std::pair{lo, hi};
    };
    const auto [x_lo, x_hi] = range(padded.x, padded.right() - b.w, img.width() - b.w);
    const auto [y_lo, y_hi] = range(padded.y, padded.bottom() - b.h, img.height() - b.h);

    std::vector<BoundingBox> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        BoundingBox c{uniform(rng, x_lo, x_hi), uniform(rng, y_lo, y_hi), b.w, b.h};
        if (alpha == 0.0) c = b;
        while (c.right() > padded.right() && c.x > padded.x) c.x = std::nextafter(c.x, padded.x);
        while (c.bottom() > padded.bottom() && c.y > padded.y) c.y = std::nextafter(c.y, padded.y);
        out.push_back(c);
    }
    return out;
}

}  // namespace pedpipe
