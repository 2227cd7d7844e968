#include "pedpipe/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "pedpipe/random.hpp"

namespace pedpipe {

namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng, double lo, double hi) {
    return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
            static_cast<float>(uniform(rng, lo, hi))};
}

// Saturated color: one dominant channel, at least one dark channel.
Color vivid_color(Rng& rng) {
    Color c = random_color(rng, 20.0, 120.0);
    c[uniform_index(rng, 3)] = static_cast<float>(uniform(rng, 170.0, 250.0));
    return c;
}

void fill_rect(FrameImage& img, double x, double y, double w, double h, const Color& c, double noise, Rng& rng) {
    const int x0 = std::max(0, static_cast<int>(std::lround(x)));
    const int y0 = std::max(0, static_cast<int>(std::lround(y)));
    const int x1 = std::min(img.width(), static_cast<int>(std::lround(x + w)));
    const int y1 = std::min(img.height(), static_cast<int>(std::lround(y + h)));
    for (int r = y0; r < y1; ++r) {
        for (int col = x0; col < x1; ++col) {
            const double n = noise * (uniform01(rng) - 0.5) * 2.0;
            for (int ch = 0; ch < 3; ++ch) {
                img.at(r, col, ch) = static_cast<float>(std::clamp(c[static_cast<std::size_t>(ch)] + n, 0.0, 255.0));
            }
        }
    }
}

void draw_pedestrian(FrameImage& img, const BoundingBox& b, Rng& rng) {
    const Color head = {static_cast<float>(uniform(rng, 180, 235)), static_cast<float>(uniform(rng, 140, 190)),
                        static_cast<float>(uniform(rng, 110, 160))};
    const Color torso = vivid_color(rng);
    const Color legs = random_color(rng, 10.0, 70.0);
    const double hh = 0.2 * b.h;
    fill_rect(img, b.x + 0.3 * b.w, b.y, 0.4 * b.w, hh, head, 10.0, rng);
    fill_rect(img, b.x, b.y + hh, b.w, 0.4 * b.h, torso, 15.0, rng);
    fill_rect(img, b.x + 0.05 * b.w, b.y + 0.6 * b.h, 0.35 * b.w, 0.4 * b.h, legs, 10.0, rng);
    fill_rect(img, b.x + 0.6 * b.w, b.y + 0.6 * b.h, 0.35 * b.w, 0.4 * b.h, legs, 10.0, rng);
}

FrameImage render_background(const SyntheticConfig& cfg, Rng& rng) {
    FrameImage img(cfg.width, cfg.height, 3);
    const Color top = random_color(rng, 90.0, 170.0);
    const Color bottom = random_color(rng, 60.0, 140.0);
    for (int r = 0; r < cfg.height; ++r) {
        const double t = static_cast<double>(r) / (cfg.height - 1);
        for (int c = 0; c < cfg.width; ++c) {
            const double n = cfg.pixel_noise * (uniform01(rng) - 0.5) * 2.0;
            for (int ch = 0; ch < 3; ++ch) {
                const auto k = static_cast<std::size_t>(ch);
                img.at(r, c, ch) = static_cast<float>(std::clamp((1 - t) * top[k] + t * bottom[k] + n, 0.0, 255.0));
            }
        }
    }
    // Clutter: flat blocks of any color, with aspect ratios away from 2:1.
    for (int i = 0; i < cfg.clutter_objects; ++i) {
        const double h = uniform(rng, 15.0, 0.8 * cfg.height);
        double aspect = std::exp(uniform(rng, std::log(0.25), std::log(4.0)));  // h : w
        if (aspect > 1.5 && aspect < 2.7) aspect = uniform01(rng) < 0.5 ? 1.0 : 3.5;
        const double w = std::min(h / aspect, 0.8 * cfg.width);
        const Color c = uniform01(rng) < 0.5 ? vivid_color(rng) : random_color(rng, 20.0, 235.0);
        fill_rect(img, uniform(rng, -0.2 * w, cfg.width - 0.8 * w), uniform(rng, -0.2 * h, cfg.height - 0.8 * h), w, h,
                  c, cfg.pixel_noise, rng);
    }
    return img;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    SyntheticDataset out;
    out.manifest.metadata = {{"generator", "pedpipe synthetic"},
                             {"seed", cfg.seed},
                             {"width", cfg.width},
                             {"height", cfg.height}};
    Rng rng(cfg.seed);
    const auto windows = sliding_windows({cfg.width, cfg.height}, cfg.windows);
    int person_id = 0;

    const int total = cfg.train_frames + cfg.test_frames;
    for (int i = 0; i < total; ++i) {
        const bool train = i < cfg.train_frames;
        const int local = train ? i : i - cfg.train_frames;
        const int count = train ? cfg.train_frames : cfg.test_frames;
        // Contiguous blocks of frames per session: 6 train, 5 test sessions.
        const int sessions = train ? 6 : 5;
        const int session = (train ? 0 : 6) + std::min(sessions - 1, local * sessions / std::max(1, count));

        FrameRecord f;
        char id[32];
        std::snprintf(id, sizeof id, "%s%04d", train ? "train_" : "test_", local);
        f.frame_id = id;
        f.image_path = "images/" + f.frame_id + ".ppm";
        f.session = session;
        f.split = train ? Split::Train : Split::Test;

        FrameImage img = render_background(cfg, rng);
        const int n_peds = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_pedestrians)));
        for (int p = 0; p < n_peds; ++p) {
            for (int attempt = 0; attempt < 50; ++attempt) {
                const double h = uniform(rng, cfg.min_pedestrian_h, std::min(cfg.max_pedestrian_h, cfg.height - 2.0));
                const double w = h / 2.0;
                const BoundingBox b{std::round(uniform(rng, 1.0, cfg.width - w - 1.0)),
                                    std::round(uniform(rng, 1.0, cfg.height - h - 1.0)), w, h};
                const bool clear = std::none_of(f.annotations.begin(), f.annotations.end(), [&](const Annotation& a) {
                    return intersection_area(expand_box(a.box, 0.2), b) > 0.0;
                });
                if (!clear) continue;
                draw_pedestrian(img, b, rng);
                f.annotations.push_back({b, false, person_id++});
                break;
            }
        }

        for (float& v : img.data()) v = std::round(v);  // match the 8-bit PPM on disk

        auto& props = out.proposals[f.frame_id];
        props.reserve(windows.size());
        for (const auto& wbox : windows) {
            double best = 0.0;
            for (const auto& a : f.annotations) best = std::max(best, iou(wbox, a.box));
            props.push_back({f.frame_id, wbox, best + cfg.score_noise * normal(rng)});
        }
        out.manifest.frames.push_back(std::move(f));
        out.images.push_back(std::move(img));
    }
    return out;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < data.manifest.frames.size(); ++i) {
        write_ppm(data.images[i], dir / data.manifest.frames[i].image_path);
    }
    save_manifest(data.manifest, dir / "manifest.json");
    std::vector<ScoredRegion> all;
    for (const auto& f : data.manifest.frames) {
        const auto it = data.proposals.find(f.frame_id);
        if (it != data.proposals.end()) all.insert(all.end(), it->second.begin(), it->second.end());
    }
    save_regions(all, dir / "proposals.csv");
}

}  // namespace pedpipe
