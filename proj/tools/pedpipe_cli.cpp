// Command-line front end: propose, prep, train, detect, eval, bench, synth.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <string>

#include "pedpipe/error.hpp"
#include "pedpipe/evaluate.hpp"
#include "pedpipe/pipeline.hpp"
#include "pedpipe/synthetic.hpp"

using namespace pedpipe;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<FrameRecord> select_frames(const DatasetManifest& m, const std::string& split, int step) {
    if (split == "all") {
        if (step != 1) throw RangeError("--step applies to a single split");
        return m.frames;
    }
    return sample_frames(m, parse_split(split), step);
}

std::vector<ScoredRegion> flatten(const std::vector<FrameRecord>& frames, const ProposalMap& regions) {
    std::vector<ScoredRegion> out;
    for (const auto& f : frames) {
        const auto it = regions.find(f.frame_id);
        if (it != regions.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

ConvNetSpec arch_spec(const std::string& arch) {
    if (arch == "desk") return ConvNetSpec::desk();
    if (arch == "compact") return ConvNetSpec::compact();
    throw RangeError("unknown architecture '" + arch + "'");
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-proposal pedestrian detection toolkit"};
    app.require_subcommand(1);
    std::function<void()> action;

    // propose ---------------------------------------------------------------
    struct {
        std::string manifest, mode = "sliding", proposals, out, split = "all";
        int step = 1;
        SlidingWindowParams sw;
    } po;
    auto* propose = app.add_subcommand("propose", "Generate or import scored candidate regions");
    propose->add_option("--manifest", po.manifest, "Dataset manifest")->required();
    propose->add_option("--mode", po.mode, "sliding or external")->check(CLI::IsMember({"sliding", "external"}));
    propose->add_option("--proposals", po.proposals, "External proposals CSV (external mode)");
    propose->add_option("--out", po.out, "Output CSV")->required();
    propose->add_option("--stride", po.sw.stride, "Window stride in pixels");
    propose->add_option("--min-h", po.sw.min_h, "Smallest window height");
    propose->add_option("--max-h", po.sw.max_h, "Largest window height");
    propose->add_option("--aspect", po.sw.aspect_ratio, "Window height:width ratio");
    propose->add_option("--scale-step", po.sw.scale_step, "Scale factor between window sizes");
    propose->add_flag("--scale-stride", po.sw.scale_stride, "Scale the stride with the window");
    propose->add_option("--split", po.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    propose->add_option("--step", po.step, "Keep every step-th frame per session");
    propose->callback([&] {
        action = [&] {
            const auto m = load_manifest(po.manifest);
            const auto frames = select_frames(m, po.split, po.step);
            std::vector<ScoredRegion> out;
            if (po.mode == "external") {
                if (po.proposals.empty()) throw RangeError("--proposals is required in external mode");
                const auto ext = load_external_proposals(po.proposals);
                for (const auto& f : frames) {
                    if (!ext.count(f.frame_id)) throw Error("missing_proposals", "no proposals for frame '" + f.frame_id + "'");
                }
                out = flatten(frames, ext);
            } else {
                po.sw.validate();
                for (const auto& f : frames) {
                    const FrameSize size = read_image(m.image_path(f)).size();
                    for (const auto& b : sliding_windows(size, po.sw)) out.push_back({f.frame_id, b, 0.0});
                }
            }
            save_regions(out, po.out);
        };
    });

    // prep ------------------------------------------------------------------
    struct {
        std::string manifest, proposals, out;
        PrepConfig cfg;
    } pp;
    auto* prep = app.add_subcommand("prep", "Estimate padding and select diverse negatives");
    prep->add_option("--manifest", pp.manifest, "Dataset manifest")->required();
    prep->add_option("--proposals", pp.proposals, "Scored proposals CSV for the training frames")->required();
    prep->add_option("--out-stats", pp.out, "Output statistics JSON")->required();
    prep->add_option("--delta", pp.cfg.delta, "Color quantization step");
    prep->add_option("--neg-pool", pp.cfg.neg_pool, "Random negatives drawn per frame");
    prep->add_option("--neg-keep", pp.cfg.neg_keep, "Negatives kept per frame after decorrelation");
    prep->add_option("--crops", pp.cfg.crops, "Random crops per positive");
    prep->add_option("--seed", pp.cfg.seed, "Random seed");
    prep->add_option("--step", pp.cfg.train_step, "Keep every step-th training frame per session");
    prep->add_option("--min-height", pp.cfg.min_height, "Minimum positive height");
    prep->add_option("--max-overlap", pp.cfg.negatives.max_overlap, "Largest iou of a negative with any annotation");
    prep->callback([&] {
        action = [&] {
            const auto m = load_manifest(pp.manifest);
            const auto props = load_external_proposals(pp.proposals);
            ImageCache images(m);
            auto stats = prepare_training_data(m, props, pp.cfg, images);
            stats.proposals_path = fs::absolute(pp.proposals).lexically_normal().string();
            write_text(pp.out, stats.to_json().dump(1) + "\n");
        };
    });

    // train -----------------------------------------------------------------
    struct {
        std::string manifest, stats, out, fuse = "parallel", arch = "desk", source = "external", proposals;
        double series_thresh = 0.0;
        bool no_crossval = false;
        TrainPipelineConfig cfg;
    } tr;
    auto* train_cmd = app.add_subcommand("train", "Train the network and the final SVM into a bundle");
    train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
    train_cmd->add_option("--stats", tr.stats, "Statistics JSON from prep")->required();
    train_cmd->add_option("--out-bundle", tr.out, "Output bundle directory")->required();
    train_cmd->add_option("--folds", tr.cfg.cnn.folds, "Cross-validation folds");
    train_cmd->add_option("--iters", tr.cfg.cnn.max_iterations, "Iteration budget");
    train_cmd->add_option("--lr", tr.cfg.cnn.learning_rate, "Learning rate");
    train_cmd->add_option("--momentum", tr.cfg.cnn.momentum, "Momentum");
    train_cmd->add_option("--batch", tr.cfg.cnn.batch_size, "Batch size");
    train_cmd->add_option("--neg-pos-ratio", tr.cfg.cnn.neg_pos_ratio, "Negatives per positive in each batch");
    train_cmd->add_option("--seed", tr.cfg.cnn.seed, "Random seed");
    train_cmd->add_option("--eval-every", tr.cfg.cnn.eval_every, "Validation interval during cross-validation");
    train_cmd->add_option("--smoothing", tr.cfg.cnn.smoothing_window, "Moving-average width of the validation curve");
    train_cmd->add_flag("--no-crossval", tr.no_crossval, "Train for --iters without selecting a stop iteration");
    train_cmd->add_option("--fuse", tr.fuse, "series or parallel")->check(CLI::IsMember({"series", "parallel"}));
    train_cmd->add_option("--series-thresh", tr.series_thresh, "Proposal score threshold in series mode");
    train_cmd->add_option("--svm-c", tr.cfg.svm.C, "SVM regularization parameter");
    train_cmd->add_option("--arch", tr.arch, "desk or compact")->check(CLI::IsMember({"desk", "compact"}));
    train_cmd->add_option("--source", tr.source, "Detection-time regions: external or sliding")
        ->check(CLI::IsMember({"external", "sliding"}));
    train_cmd->add_option("--proposals", tr.proposals, "Proposals CSV (defaults to the one used by prep)");
    train_cmd->callback([&] {
        action = [&] {
            const auto m = load_manifest(tr.manifest);
            std::ifstream in(tr.stats);
            if (!in) throw IoError("cannot open " + tr.stats);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(std::string("stats: ") + e.what());
            }
            const auto stats = PrepStats::from_json(j);
            auto& cfg = tr.cfg;
            cfg.spec = arch_spec(tr.arch);
            cfg.crossval = !tr.no_crossval;
            cfg.svm.seed = cfg.cnn.seed;
            cfg.fusion = tr.fuse == "series" ? FusionMode::series(tr.series_thresh) : FusionMode::parallel();
            ImageCache images(m);
            ProposalMap props;
            if (tr.source == "external") {
                cfg.source.kind = ProposalSource::Kind::External;
                cfg.source.external_path = tr.proposals.empty() ? stats.proposals_path : tr.proposals;
                props = load_external_proposals(cfg.source.external_path);
            } else {
                cfg.source.kind = ProposalSource::Kind::Sliding;
                for (const auto& f : sample_frames(m, Split::Train, stats.train_step)) {
                    auto& rs = props[f.frame_id];
                    for (const auto& b : sliding_windows(images.get(f).size(), cfg.source.sliding)) {
                        rs.push_back({f.frame_id, b, 0.0});
                    }
                }
            }
            TrainReport rep;
            const auto bundle = train_bundle(m, stats, props, cfg, images, &rep);
            save_bundle(bundle, tr.out);
            nlohmann::json report = {{"stop_iteration", rep.stop_iteration},
                                     {"cnn_positives", rep.cnn_positives},
                                     {"cnn_negatives", rep.cnn_negatives},
                                     {"svm_positives", rep.svm_positives},
                                     {"svm_negatives", rep.svm_negatives},
                                     {"crossval_runs", rep.crossval.runs},
                                     {"iterations", rep.crossval.iterations},
                                     {"mean_validation_loss", rep.crossval.mean_curve},
                                     {"smoothed_validation_loss", rep.crossval.smoothed_curve}};
            write_text(fs::path(tr.out) / "training.json", report.dump(1) + "\n");
        };
    });

    // detect ----------------------------------------------------------------
    struct {
        std::string manifest, bundle, out, proposals, split = "test";
        int step = 1, workers = 1;
        DetectionConfig cfg;
    } de;
    auto* detect = app.add_subcommand("detect", "Run the detector over manifest frames");
    detect->add_option("--manifest", de.manifest, "Dataset manifest")->required();
    detect->add_option("--bundle", de.bundle, "Model bundle directory")->required();
    detect->add_option("--out", de.out, "Output detections CSV")->required();
    detect->add_option("--nms-iou", de.cfg.nms_iou, "NMS overlap threshold");
    detect->add_option("--score-floor", de.cfg.score_floor, "Drop detections scoring at or below this value");
    detect->add_option("--workers", de.workers, "Worker threads");
    detect->add_option("--proposals", de.proposals, "Proposals CSV (defaults to the bundle's)");
    detect->add_option("--split", de.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    detect->add_option("--step", de.step, "Keep every step-th frame per session");
    detect->callback([&] {
        action = [&] {
            const auto m = load_manifest(de.manifest);
            const auto bundle = load_bundle(de.bundle);
            ProposalMap ext;
            if (bundle.proposals.kind == ProposalSource::Kind::External) {
                ext = load_external_proposals(de.proposals.empty() ? bundle.proposals.external_path : de.proposals);
                de.cfg.external = &ext;
            }
            const auto frames = select_frames(m, de.split, de.step);
            std::vector<FrameInput> inputs;
            for (const auto& f : frames) inputs.push_back({f.frame_id, read_image(m.image_path(f))});
            const auto dets = detect_frames(inputs, bundle, de.cfg, de.workers);
            std::vector<ScoredRegion> all;
            for (const auto& d : dets) all.insert(all.end(), d.begin(), d.end());
            save_regions(all, de.out);
        };
    });

    // eval ------------------------------------------------------------------
    struct {
        std::string detections, manifest, curve, summary, split = "test";
        double iou = kDefaultMatchIou, fppi = 0.1, min_height = kDefaultMinHeight;
        int step = 1;
    } ev;
    auto* eval = app.add_subcommand("eval", "Miss rate against false positives per image");
    eval->add_option("--detections", ev.detections, "Detections CSV")->required();
    eval->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
    eval->add_option("--out-curve", ev.curve, "Output curve CSV")->required();
    eval->add_option("--out-summary", ev.summary, "Output summary JSON")->required();
    eval->add_option("--iou", ev.iou, "Match threshold");
    eval->add_option("--fppi", ev.fppi, "Reference false positives per image");
    eval->add_option("--min-height", ev.min_height, "Minimum height of a counted pedestrian");
    eval->add_option("--split", ev.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    eval->add_option("--step", ev.step, "Keep every step-th frame per session");
    eval->callback([&] {
        action = [&] {
            const auto m = load_manifest(ev.manifest);
            const auto dets = load_external_proposals(ev.detections);
            const auto frames = select_frames(m, ev.split, ev.step);
            const auto curve = evaluate_frames(frames, dets, ev.iou, ev.min_height);
            save_curve(curve, ev.curve);
            write_text(ev.summary, format_summary(curve, ev.fppi));
        };
    });

    // bench -----------------------------------------------------------------
    struct {
        std::string manifest, bundle, out, proposals, split = "test";
        int reps = 5, step = 1, max_frames = 0;
    } be;
    auto* bench = app.add_subcommand("bench", "Per-stage timing of the detector");
    bench->add_option("--manifest", be.manifest, "Dataset manifest")->required();
    bench->add_option("--bundle", be.bundle, "Model bundle directory")->required();
    bench->add_option("--reps", be.reps, "Repetitions; the first is a warm-up");
    bench->add_option("--out", be.out, "Output timing JSON")->required();
    bench->add_option("--proposals", be.proposals, "Proposals CSV (defaults to the bundle's)");
    bench->add_option("--split", be.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    bench->add_option("--step", be.step, "Keep every step-th frame per session");
    bench->add_option("--max-frames", be.max_frames, "Limit the number of frames (0 = all)");
    bench->callback([&] {
        action = [&] {
            const auto m = load_manifest(be.manifest);
            const auto bundle = load_bundle(be.bundle);
            DetectionConfig cfg;
            ProposalMap ext;
            if (bundle.proposals.kind == ProposalSource::Kind::External) {
                ext = load_external_proposals(be.proposals.empty() ? bundle.proposals.external_path : be.proposals);
                cfg.external = &ext;
            }
            auto frames = select_frames(m, be.split, be.step);
            if (be.max_frames > 0 && frames.size() > static_cast<std::size_t>(be.max_frames)) frames.resize(be.max_frames);
            std::vector<FrameInput> inputs;
            for (const auto& f : frames) inputs.push_back({f.frame_id, read_image(m.image_path(f))});
            const auto report = run_benchmark(inputs, bundle, be.reps, cfg);
            write_text(be.out, report.to_json().dump(1) + "\n");
        };
    });

    // synth -----------------------------------------------------------------
    struct {
        std::string out;
        SyntheticConfig cfg;
    } sy;
    auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark dataset");
    synth->add_option("--out", sy.out, "Output directory")->required();
    synth->add_option("--seed", sy.cfg.seed, "Random seed");
    synth->add_option("--train-frames", sy.cfg.train_frames, "Training frames");
    synth->add_option("--test-frames", sy.cfg.test_frames, "Test frames");
    synth->add_option("--width", sy.cfg.width, "Frame width");
    synth->add_option("--height", sy.cfg.height, "Frame height");
    synth->callback([&] {
        action = [&] { write_synthetic(generate_synthetic(sy.cfg), sy.out); };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
        return 2;
    }
    try {
        action();
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), one_line(e.what()).c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
        return 1;
    }
    return 0;
}
