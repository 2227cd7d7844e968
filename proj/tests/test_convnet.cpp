#include <doctest.h>

#include <cmath>
#include <limits>

#include "pedpipe/convnet.hpp"
#include "pedpipe/error.hpp"
#include "pedpipe/random.hpp"

using namespace pedpipe;

namespace {

ConvNetSpec tiny_spec() {
    ConvNetSpec s;
    s.input_height = 8;
    s.input_width = 8;
    s.input_channels = 1;
    s.layers = {LayerSpec::conv(3, 2), LayerSpec::fc(2), LayerSpec::softmax()};
    s.feature_layer = 0;
    return s;
}

ConvNetSpec small_spec() {
    ConvNetSpec s;
    s.input_height = 10;
    s.input_width = 8;
    s.input_channels = 2;
    s.layers = {LayerSpec::conv(3, 3),   LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(2, 4, 2),
                LayerSpec::relu(),       LayerSpec::fc(5),  LayerSpec::relu(),     LayerSpec::fc(2),
                LayerSpec::softmax()};
    s.feature_layer = 6;
    return s;
}

Patch random_patch(const ConvNetSpec& s, Rng& rng) {
    Patch p(s.input_width, s.input_height, s.input_channels);
    for (float& v : p.data()) v = static_cast<float>(uniform_index(rng, 256));
    return p;
}

void randomize(ConvNetWeights& w, Rng& rng, double scale) {
    for (auto& l : w.layers) {
        for (double& v : l.weights) v = normal(rng) * scale;
        for (double& v : l.bias) v = normal(rng) * scale;
    }
}

// Layer-by-layer reference written with plain index arithmetic.
std::vector<std::vector<double>> reference_forward(const ConvNetWeights& w, const Patch& p) {
    const auto& s = w.spec;
    int C = s.input_channels, H = s.input_height, W = s.input_width;
    std::vector<double> x;
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < H; ++r)
            for (int q = 0; q < W; ++q) x.push_back(p.at(r, q, c) / 127.5 - 1.0);
    std::vector<std::vector<double>> outs;
    for (std::size_t li = 0; li < s.layers.size(); ++li) {
        const auto& l = s.layers[li];
        const auto& prm = w.layers[li];
        std::vector<double> y;
        if (l.kind == LayerKind::Convolution || l.kind == LayerKind::MaxPool) {
            const int OC = l.kind == LayerKind::Convolution ? l.outputs : C;
            const int OH = (H - l.kernel) / l.stride + 1, OW = (W - l.kernel) / l.stride + 1;
            for (int o = 0; o < OC; ++o)
                for (int r = 0; r < OH; ++r)
                    for (int q = 0; q < OW; ++q) {
                        if (l.kind == LayerKind::MaxPool) {
                            double m = -std::numeric_limits<double>::infinity();
                            for (int a = 0; a < l.kernel; ++a)
                                for (int b = 0; b < l.kernel; ++b)
                                    m = std::max(m, x[(o * H + r * l.stride + a) * W + q * l.stride + b]);
                            y.push_back(m);
                        } else {
                            double acc = prm.bias[o];
                            for (int i = 0; i < C; ++i)
                                for (int a = 0; a < l.kernel; ++a)
                                    for (int b = 0; b < l.kernel; ++b)
                                        acc += prm.weights[((o * C + i) * l.kernel + a) * l.kernel + b] *
                                               x[(i * H + r * l.stride + a) * W + q * l.stride + b];
                            y.push_back(acc);
                        }
                    }
            C = OC;
            H = OH;
            W = OW;
        } else if (l.kind == LayerKind::Rectifier) {
            for (double v : x) y.push_back(v > 0 ? v : 0.0);
        } else if (l.kind == LayerKind::FullyConnected) {
            const int in = static_cast<int>(x.size());
            for (int o = 0; o < l.outputs; ++o) {
                double acc = prm.bias[o];
                for (int i = 0; i < in; ++i) acc += prm.weights[o * in + i] * x[i];
                y.push_back(acc);
            }
            C = l.outputs;
            H = W = 1;
        } else {
            const double m = std::max(x[0], x[1]);
            const double e0 = std::exp(x[0] - m), e1 = std::exp(x[1] - m);
            y = {e0 / (e0 + e1), e1 / (e0 + e1)};
        }
        outs.push_back(y);
        x = y;
    }
    return outs;
}

std::vector<LabeledPatch> toy_data(const ConvNetSpec& s, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledPatch> data;
    for (int i = 0; i < n; ++i) {
        LabeledPatch lp;
        lp.label = i % 2;
        lp.fold = (i / 2) % 6;
        lp.patch = Patch(s.input_width, s.input_height, s.input_channels);
        for (int r = 0; r < s.input_height; ++r)
            for (int c = 0; c < s.input_width; ++c)
                for (int ch = 0; ch < s.input_channels; ++ch) {
                    // Positives carry a bright vertical bar in the middle.
                    const bool bar = lp.label == 1 && std::abs(c - s.input_width / 2) <= 1;
                    lp.patch.at(r, c, ch) = static_cast<float>(bar ? 220 + uniform(rng, 0, 30) : uniform(rng, 0, 90));
                }
        data.push_back(std::move(lp));
    }
    return data;
}

double accuracy(const ConvNetWeights& w, const std::vector<LabeledPatch>& data) {
    int ok = 0;
    for (const auto& d : data) {
        const auto f = forward(w, d.patch);
        ok += (f.probabilities[1] > 0.5) == (d.label == 1);
    }
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("spec shapes") {
    const auto desk = ConvNetSpec::desk();
    const auto shapes = desk.shapes();
    CHECK(shapes[0] == TensorShape{16, 60, 28});
    CHECK(shapes[2] == TensorShape{16, 30, 14});
    CHECK(shapes[3] == TensorShape{32, 26, 10});
    CHECK(shapes[5] == TensorShape{32, 13, 5});
    CHECK(desk.feature_size() == 128);
    CHECK(ConvNetSpec::from_json(desk.to_json()) == desk);
    CHECK(ConvNetSpec::compact().feature_size() == 32);

    ConvNetSpec bad = desk;
    bad.layers.pop_back();
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = desk;
    bad.layers[bad.layers.size() - 2] = LayerSpec::fc(3);
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = desk;
    bad.feature_layer = static_cast<int>(bad.layers.size()) - 1;
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = desk;
    bad.input_height = 8;
    CHECK_THROWS_AS(bad.validate(), ShapeError);

    ConvNetSpec square = desk;
    square.input_height = square.input_width = 227;
    CHECK_NOTHROW(square.validate());
}

TEST_CASE("forward") {
    const auto spec = ConvNetSpec::desk();
    Rng rng(1);
    SUBCASE("zero weights give uniform probabilities") {
        const auto f = forward(zero_weights(spec), random_patch(spec, rng));
        CHECK(f.probabilities[0] == 0.5);
        CHECK(f.probabilities[1] == 0.5);
        CHECK(f.features.size() == 128);
    }
    SUBCASE("probabilities sum to one") {
        for (int t = 0; t < 10; ++t) {
            auto w = init_weights(spec, static_cast<std::uint64_t>(t));
            randomize(w, rng, 0.2);
            const auto f = forward(w, random_patch(spec, rng));
            CHECK(f.probabilities[0] >= 0.0);
            CHECK(f.probabilities[1] >= 0.0);
            CHECK(std::abs(f.probabilities[0] + f.probabilities[1] - 1.0) < 1e-9);
        }
    }
    SUBCASE("feature export matches an independent recomputation") {
        const auto s = small_spec();
        for (int t = 0; t < 5; ++t) {
            auto w = init_weights(s, 10 + static_cast<std::uint64_t>(t));
            randomize(w, rng, 0.5);
            const auto p = random_patch(s, rng);
            const auto ref = reference_forward(w, p);
            const auto acts = forward_activations(w, p);
            REQUIRE(acts.size() == ref.size());
            for (std::size_t l = 0; l < ref.size(); ++l) {
                REQUIRE(acts[l].size() == ref[l].size());
                for (std::size_t i = 0; i < ref[l].size(); ++i) CHECK(acts[l][i] == doctest::Approx(ref[l][i]).epsilon(1e-12));
            }
            const auto f = forward(w, p);
            REQUIRE(f.features.size() == ref[6].size());
            for (std::size_t i = 0; i < f.features.size(); ++i) CHECK(f.features[i] == doctest::Approx(ref[6][i]).epsilon(1e-12));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(forward(zero_weights(spec), Patch(31, 64, 3)), ShapeError);
        CHECK_THROWS_AS(forward(zero_weights(spec), Patch(32, 64, 1)), ShapeError);
    }
}

TEST_CASE("loss and gradients") {
    SUBCASE("uniform predictions cost ln 2") {
        const auto s = tiny_spec();
        const auto data = toy_data(s, 4, 1);
        CHECK(loss_and_gradients(zero_weights(s), data).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    SUBCASE("confident correct predictions cost nothing") {
        const auto s = tiny_spec();
        auto w = zero_weights(s);
        w.layers[1].bias = {-60.0, 60.0};
        std::vector<LabeledPatch> batch(3);
        for (auto& b : batch) {
            b.patch = Patch(8, 8, 1);
            b.label = 1;
        }
        CHECK(loss_and_gradients(w, batch).loss < 1e-20);
    }
    SUBCASE("gradients match central differences") {
        for (const auto& s : {tiny_spec(), small_spec()}) {
            Rng rng(77);
            auto w = init_weights(s, 3);
            randomize(w, rng, 0.3);
            std::vector<LabeledPatch> batch;
            for (int i = 0; i < 3; ++i) batch.push_back({random_patch(s, rng), i % 2, 0});
            const auto analytic = loss_and_gradients(w, batch).gradients;
            const double h = 1e-5;
            double worst = 0.0;
            for (std::size_t l = 0; l < w.layers.size(); ++l) {
                for (int which = 0; which < 2; ++which) {
                    auto& vec = which == 0 ? w.layers[l].weights : w.layers[l].bias;
                    const auto& g = which == 0 ? analytic[l].weights : analytic[l].bias;
                    for (std::size_t i = 0; i < vec.size(); ++i) {
                        const double keep = vec[i];
                        vec[i] = keep + h;
                        const double up = loss_and_gradients(w, batch).loss;
                        vec[i] = keep - h;
                        const double down = loss_and_gradients(w, batch).loss;
                        vec[i] = keep;
                        const double numeric = (up - down) / (2 * h);
                        const double denom = std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
                        worst = std::max(worst, std::abs(numeric - g[i]) / denom);
                    }
                }
            }
            CHECK(worst < 1e-4);
        }
    }
    SUBCASE("empty batch and non-finite loss") {
        const auto s = tiny_spec();
        CHECK_THROWS(loss_and_gradients(zero_weights(s), std::vector<LabeledPatch>{}));
        auto w = zero_weights(s);
        w.layers[1].bias = {std::numeric_limits<double>::quiet_NaN(), 0.0};
        CHECK_THROWS(loss_and_gradients(w, toy_data(s, 2, 1)));
    }
}

TEST_CASE("batch composition") {
    BatchComposer composer(24, 5.0);
    long pos = 0, total = 0;
    for (int i = 0; i < 1000; ++i) {
        const int p = composer.next_positive_count();
        CHECK(p >= 1);
        CHECK(p < 24);
        pos += p;
        total += 24;
    }
    const double ratio = static_cast<double>(total - pos) / static_cast<double>(pos);
    CHECK(std::abs(ratio - 5.0) <= 0.25);

    BatchComposer odd(7, 3.0);
    long p7 = 0;
    for (int i = 0; i < 1000; ++i) p7 += odd.next_positive_count();
    CHECK(std::abs((7000.0 - p7) / p7 - 3.0) <= 0.15);
}

TEST_CASE("training") {
    ConvNetSpec s;
    s.input_height = 8;
    s.input_width = 8;
    s.input_channels = 1;
    s.layers = {LayerSpec::conv(3, 4), LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::fc(8),
                LayerSpec::relu(),     LayerSpec::fc(2),  LayerSpec::softmax()};
    s.feature_layer = 4;
    const auto data = toy_data(s, 20, 5);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.max_iterations = 500;
    cfg.batch_size = 12;
    cfg.neg_pos_ratio = 1.0;

    const auto run = train(init_weights(s, cfg.seed), data, cfg);
    CHECK(run.loss_trace.size() == 500);
    CHECK(accuracy(run.weights, data) == 1.0);
    CHECK(run.weights.all_finite());

    const auto again = train(init_weights(s, cfg.seed), data, cfg);
    CHECK(again.weights == run.weights);
    CHECK(again.loss_trace == run.loss_trace);

    SUBCASE("finetune_full is train with the stop budget") {
        TrainConfig c = cfg;
        c.max_iterations = 120;
        const auto ref = train(init_weights(s, cfg.seed), data, c);
        const auto full = finetune_full(s, data, 120, cfg);
        CHECK(full == ref.weights);
        std::vector<const LabeledPatch*> all;
        for (const auto& d : data) all.push_back(&d);
        CHECK(mean_loss(full, all) <= ref.loss_trace.front());
        CHECK_THROWS_AS(finetune_full(s, data, 0, cfg), RangeError);
    }
    SUBCASE("single-class data is rejected") {
        std::vector<LabeledPatch> pos;
        for (const auto& d : data)
            if (d.label == 1) pos.push_back(d);
        CHECK_THROWS(train(init_weights(s, 1), pos, cfg));
    }
    SUBCASE("divergence is reported") {
        TrainConfig hot = cfg;
        hot.learning_rate = 1e30;
        hot.max_iterations = 50;
        CHECK_THROWS_AS(train(init_weights(s, 1), data, hot), DivergenceError);
    }
}

TEST_CASE("stop iteration selection") {
    SUBCASE("smoothing") {
        const auto sm = smooth_curve({1, 2, 3, 4, 5}, 3);
        CHECK(sm[0] == doctest::Approx(1.5));
        CHECK(sm[2] == doctest::Approx(3.0));
        CHECK(sm[4] == doctest::Approx(4.5));
        CHECK(smooth_curve({4, 1, 7}, 1) == std::vector<double>{4, 1, 7});
    }
    SUBCASE("decreasing curve stops at the end") {
        std::vector<int> its;
        std::vector<double> curve;
        for (int i = 1; i <= 30; ++i) {
            its.push_back(10 * i);
            curve.push_back(1.0 / i);
        }
        CHECK(select_stop_iteration(its, curve, 5) == 300);
    }
    SUBCASE("V-shaped curve") {
        std::vector<int> its;
        std::vector<double> curve;
        for (int i = 1; i <= 10; ++i) {
            its.push_back(10 * i);
            curve.push_back(std::abs(10.0 * i - 40.0));
        }
        CHECK(select_stop_iteration(its, curve, 5) == 40);
    }
    SUBCASE("fold runs through the injected runner") {
        ConvNetSpec s = tiny_spec();
        auto data = toy_data(s, 24, 3);
        TrainConfig cfg;
        cfg.folds = 6;
        cfg.eval_every = 10;
        int calls = 0;
        std::vector<int> seen;
        const auto res = crossval_stop_iteration(data, cfg, [&](auto tr, auto va, int fold) {
            ++calls;
            seen.push_back(fold);
            CHECK(tr.size() + va.size() == data.size());
            for (const auto* p : va) CHECK(p->fold == fold);
            std::vector<double> curve;
            for (int i = 1; i <= 10; ++i) curve.push_back(std::abs(10.0 * i - 40.0) + fold);
            return curve;
        });
        CHECK(calls == 6);
        CHECK(res.runs == 6);
        CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5});
        CHECK(res.stop_iteration == 40);
        CHECK(res.iterations.front() == 10);
        CHECK(res.mean_curve[3] == doctest::Approx(2.5));

        for (auto& d : data)
            if (d.fold == 2) d.label = 1;
        CHECK_THROWS_AS(crossval_stop_iteration(data, cfg, [](auto, auto, int) { return std::vector<double>{1.0}; }),
                        InvariantError);
    }
    SUBCASE("real folds") {
        ConvNetSpec s = tiny_spec();
        const auto data = toy_data(s, 36, 4);
        TrainConfig cfg;
        cfg.learning_rate = 0.01;
        cfg.max_iterations = 40;
        cfg.batch_size = 6;
        cfg.neg_pos_ratio = 1.0;
        const auto res = crossval_stop_iteration(s, data, cfg);
        CHECK(res.runs == 6);
        CHECK(res.mean_curve.size() == 4);
        CHECK(res.stop_iteration >= 10);
        CHECK(res.stop_iteration <= 40);
    }
}

TEST_CASE("weight file") {
    const auto spec = ConvNetSpec::desk();
    const auto w = init_weights(spec, 42);
    const std::string bytes = serialize_weights(w);
    CHECK(bytes.substr(0, 4) == "PPCN");
    const auto back = deserialize_weights(bytes);
    CHECK(back == w);
    CHECK(serialize_weights(back) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "pedpipe_weights.ppcn";
    save_weights(w, path);
    CHECK(load_weights(path) == w);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(deserialize_weights(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_weights("XXXX" + bytes.substr(4)), FormatError);
    CHECK_THROWS(deserialize_weights(bytes + "x"));
    std::string wrong_version = bytes;
    wrong_version[4] = 9;
    try {
        deserialize_weights(wrong_version);
        FAIL("expected version error");
    } catch (const Error& e) {
        CHECK(std::string(e.kind()) == "version_mismatch");
    }
}
