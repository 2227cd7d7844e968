#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pedpipe/error.hpp"
#include "pedpipe/mining.hpp"

using namespace pedpipe;

namespace {

FrameImage random_image(Rng& rng, int w, int h, int levels = 256) {
    FrameImage img(w, h, 3);
    for (float& v : img.data()) v = static_cast<float>(uniform_index(rng, static_cast<std::uint64_t>(levels)) * (256 / levels));
    return img;
}

bool contains(const BoundingBox& outer, const BoundingBox& inner) {
    return inner.x >= outer.x && inner.y >= outer.y && inner.right() <= outer.right() && inner.bottom() <= outer.bottom();
}

}  // namespace

TEST_CASE("quantize_image") {
    FrameImage img(3, 1, 3);
    img.at(0, 0, 0) = 130;
    img.at(0, 1, 0) = 255;
    img.at(0, 2, 0) = 63.9f;
    const auto q64 = quantize_image(img, 64);
    CHECK(q64.bins_per_channel == 4);
    CHECK(q64.values[0] == 2);
    CHECK(q64.values[3] == 3);
    CHECK(q64.values[6] == 0);
    for (auto v : quantize_image(img, 256).values) CHECK(v == 0);

    CHECK(bins_per_channel(32) == 8);
    CHECK(bins_per_channel(100) == 3);
    CHECK_THROWS_AS(bins_per_channel(0), RangeError);
    CHECK_THROWS_AS(bins_per_channel(257), RangeError);

    Rng rng(1);
    const auto rimg = random_image(rng, 16, 16);
    for (double delta : {1.0, 7.0, 32.0, 100.0, 255.0}) {
        const auto q = quantize_image(rimg, delta);
        const int b = static_cast<int>(std::ceil(256.0 / delta));
        for (auto v : q.values) CHECK(v <= b - 1);
        for (std::size_t i = 0; i < q.values.size(); ++i)
            CHECK(q.values[i] == static_cast<int>(std::floor(rimg.data()[i] / delta)));
    }
}

TEST_CASE("color_histogram") {
    SUBCASE("single color") {
        const auto h = color_histogram(FrameImage(4, 4, 3, 200.0f), 32);
        CHECK(h.values.size() == 512);
        int nonzero = 0;
        for (double v : h.values) nonzero += v != 0.0;
        CHECK(nonzero == 1);
        CHECK(h.values[6 * 64 + 6 * 8 + 6] == 1.0);
    }
    SUBCASE("two halves") {
        FrameImage img(4, 2, 3, 10.0f);
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(1, c, ch) = 250.0f;
        const auto h = color_histogram(img, 32);
        CHECK(h.values[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
        CHECK(h.values[511] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    }
    SUBCASE("delta 256") {
        Rng rng(2);
        const auto h = color_histogram(random_image(rng, 9, 7), 256);
        REQUIRE(h.values.size() == 1);
        CHECK(h.values[0] == doctest::Approx(1.0));
    }
    SUBCASE("agrees with dictionary counting") {
        Rng rng(3);
        for (int delta : {16, 32, 64, 96}) {
            const auto img = random_image(rng, 12, 10, 8);
            const auto h = color_histogram(img, delta);
            const auto ref = oracle::dictionary_histogram(img, delta);
            REQUIRE(h.values.size() == ref.size());
            double norm = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                CHECK(h.values[i] == doctest::Approx(ref[i]).epsilon(1e-12));
                norm += h.values[i] * h.values[i];
            }
            CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("histogram_distance") {
    Rng rng(5);
    const auto a = color_histogram(random_image(rng, 8, 8, 4));
    CHECK(histogram_distance(a, a) == 0.0);
    CHECK(histogram_distance(a, a, DistanceMode::Cumulative) == 0.0);

    const auto red = color_histogram(FrameImage(2, 2, 3, 0.0f));
    const auto white = color_histogram(FrameImage(2, 2, 3, 255.0f));
    CHECK(histogram_distance(red, white) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

    CHECK_THROWS_AS(histogram_distance(a, color_histogram(FrameImage(2, 2, 3), 64)), ShapeError);
    CHECK_THROWS_AS(histogram_distance(a, color_histogram(FrameImage(2, 2, 1))), ShapeError);

    for (auto mode : {DistanceMode::Direct, DistanceMode::Cumulative}) {
        for (int t = 0; t < 50; ++t) {
            const auto x = color_histogram(random_image(rng, 6, 6, 4));
            const auto y = color_histogram(random_image(rng, 6, 6, 4));
            const auto z = color_histogram(random_image(rng, 6, 6, 4));
            const double xy = histogram_distance(x, y, mode);
            CHECK(xy >= 0.0);
            CHECK(xy == histogram_distance(y, x, mode));
            CHECK(xy <= histogram_distance(x, z, mode) + histogram_distance(z, y, mode) + 1e-12);
        }
    }
}

TEST_CASE("greedy diverse selection") {
    Rng rng(8);
    SUBCASE("matches the step-by-step replay") {
        for (int t = 0; t < 200; ++t) {
            const std::size_t n = 2 + uniform_index(rng, 9);
            std::vector<FrameImage> pool;
            for (std::size_t i = 0; i < n; ++i) pool.push_back(random_image(rng, 6, 6, 2 + 2 * static_cast<int>(i % 2)));
            std::vector<ColorHistogram> hists;
            for (const auto& p : pool) hists.push_back(color_histogram(p));
            const auto dist = pairwise_distances(hists, DistanceMode::Direct);
            std::vector<std::vector<double>> nested(n, std::vector<double>(n));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) nested[i][j] = histogram_distance(hists[i], hists[j]);
            const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(n, 4));
            CHECK(select_diverse_negatives(pool, k) == oracle::greedy_replay(nested, k));
        }
    }
    SUBCASE("K = 1 maximizes mean distance") {
        DistanceMatrix d{4, {0, 1, 2, 3, 1, 0, 4, 1, 2, 4, 0, 5, 3, 1, 5, 0}};
        // Row sums: 6, 6, 11, 9.
        CHECK(select_diverse(d, 1) == std::vector<std::size_t>{2});
        const auto all = select_diverse(d, 4);
        CHECK(all.size() == 4);
        CHECK(all.front() == 2);
    }
    SUBCASE("ties go to the lowest index") {
        DistanceMatrix d{3, {0, 1, 1, 1, 0, 1, 1, 1, 0}};
        CHECK(select_diverse(d, 3) == std::vector<std::size_t>{0, 1, 2});
    }
    SUBCASE("K out of range") {
        DistanceMatrix d{2, {0, 1, 1, 0}};
        CHECK_THROWS_AS(select_diverse(d, 0), RangeError);
        CHECK_THROWS_AS(select_diverse(d, 3), RangeError);
    }
    SUBCASE("selected-set reference") {
        DistanceMatrix d{4, {0, 1, 2, 3, 1, 0, 4, 1, 2, 4, 0, 5, 3, 1, 5, 0}};
        const auto s = select_diverse(d, 3, DiversityReference::SelectedSet);
        // First by pool mean (2), then farthest from {2}: 3 (5), then from {2,3}: mean 2.5 vs 2.5, lowest index 0.
        CHECK(s == std::vector<std::size_t>{2, 3, 0});
    }
}

TEST_CASE("padding estimation") {
    SUBCASE("identical proposals") {
        const std::vector<BoundingBox> gts{{0, 0, 10, 20}, {50, 50, 30, 60}};
        const auto s = estimate_padding(gts, gts);
        CHECK(s.mean_alpha == 0.0);
        for (double a : s.samples) CHECK(a == 0.0);
    }
    SUBCASE("inverse of the expansion") {
        const BoundingBox p{40, 40, 20, 40};
        const auto s = estimate_padding({expand_box(p, 0.2)}, {p, {200, 200, 20, 40}});
        REQUIRE(s.samples.size() == 1);
        CHECK(s.samples[0] == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("mean of two") {
        const BoundingBox p{0, 0, 20, 40}, q{100, 0, 20, 40};
        const auto s = estimate_padding({p, expand_box(q, 0.4)}, {p, q});
        CHECK(s.mean_alpha == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("disjoint ground truth gives a finite alpha") {
        const auto s = estimate_padding({{300, 300, 10, 20}}, {{0, 0, 10, 20}});
        CHECK(std::isfinite(s.mean_alpha));
        CHECK(contains(expand_box({0, 0, 10, 20}, s.mean_alpha), {300, 300, 10, 20}));
    }
    SUBCASE("alpha is minimal") {
        Rng rng(12);
        for (int t = 0; t < 300; ++t) {
            const BoundingBox gt{uniform(rng, 0, 100), uniform(rng, 0, 100), uniform(rng, 5, 40), uniform(rng, 10, 80)};
            const BoundingBox p{gt.x + uniform(rng, -8, 8), gt.y + uniform(rng, -8, 8), gt.w * uniform(rng, 0.7, 1.3),
                                gt.h * uniform(rng, 0.7, 1.3)};
            const double a = containment_alpha(p, gt);
            CHECK(a >= 0.0);
            CHECK(contains(expand_box(p, a), gt));
            if (a > 1e-6) CHECK_FALSE(contains(expand_box(p, a - 1e-6), gt));
        }
    }
    SUBCASE("closest proposal tie-breaks") {
        const BoundingBox gt{10, 10, 10, 20};
        // Equal iou, different centers: second is nearer.
        const std::vector<BoundingBox> ps{{0, 10, 10, 20}, {20, 10, 10, 20}, {10, 10, 10, 20}};
        CHECK(closest_proposal(gt, ps) == 2);
        const std::vector<BoundingBox> tied{{15, 10, 10, 20}, {5, 10, 10, 20}};
        CHECK(closest_proposal(gt, tied) == 0);
        const std::vector<BoundingBox> near{{16, 10, 10, 20}, {100, 100, 10, 20}, {5, 10, 10, 20}};
        CHECK(closest_proposal(gt, near) == 2);
    }
}

TEST_CASE("random_crops") {
    FrameImage img(200, 200, 3);
    const BoundingBox b{50, 40, 30, 60};
    Rng rng(21);
    CHECK(random_crops(img, b, 0.5, 0, rng).empty());
    for (const auto& c : random_crops(img, b, 0.0, 7, rng)) CHECK(c == b);

    const BoundingBox padded = expand_box(b, 0.3);
    const auto crops = random_crops(img, b, 0.3, 1000, rng);
    REQUIRE(crops.size() == 1000);
    double min_x = 1e9, max_x = -1e9;
    for (const auto& c : crops) {
        CHECK(c.w == b.w);
        CHECK(c.h == b.h);
        CHECK(contains(padded, c));
        min_x = std::min(min_x, c.x);
        max_x = std::max(max_x, c.x);
    }
    CHECK(max_x - min_x > 0.8 * (padded.w - b.w));

    Rng r1(5), r2(5);
    CHECK(random_crops(img, b, 0.2, 10, r1) == random_crops(img, b, 0.2, 10, r2));

    SUBCASE("degenerates to ground truth when proposals match") {
        const std::vector<BoundingBox> gts{b, {120, 20, 25, 50}};
        const double alpha = estimate_padding(gts, gts).mean_alpha;
        Rng r(3);
        for (const auto& g : gts)
            for (const auto& c : random_crops(img, g, alpha, 5, r)) CHECK(c == g);
    }
    SUBCASE("padded box near the border") {
        const BoundingBox edge{0, 0, 30, 60};
        Rng r(9);
        for (const auto& c : random_crops(img, edge, 0.5, 200, r)) {
            CHECK(contains(expand_box(edge, 0.5), c));
            CHECK(c.x >= 0.0);
            CHECK(c.y >= 0.0);
        }
    }
}
