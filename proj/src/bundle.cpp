#include <cmath>
#include <fstream>
#include <sstream>

#include "pedpipe/error.hpp"
#include "pedpipe/pipeline.hpp"

namespace pedpipe {

using nlohmann::json;

void ModelBundle::validate() const {
    convnet.spec.validate();
    svm.validate();
    const std::size_t width = convnet.spec.feature_size();
    if (svm.feature_dim != width) {
        throw InvariantError("bundle: svm feature_dim " + std::to_string(svm.feature_dim) +
                             " does not match the network feature width " + std::to_string(width));
    }
    if (svm.fused != !fusion.is_series()) {
        throw InvariantError("bundle: parallel fusion requires a fused svm and series mode an unfused one");
    }
    if (!(mean_alpha >= 0.0) || !std::isfinite(mean_alpha)) throw InvariantError("bundle: mean_alpha must be >= 0");
    if (input_size.width != convnet.spec.input_width || input_size.height != convnet.spec.input_height) {
        throw InvariantError("bundle: input size does not match the network input");
    }
    if (proposals.kind == ProposalSource::Kind::Sliding) proposals.sliding.validate();
}

namespace {

json threshold_json(double t) { return std::isfinite(t) ? json(t) : json(nullptr); }

json source_json(const ProposalSource& s) {
    if (s.kind == ProposalSource::Kind::External) return {{"mode", "external"}, {"path", s.external_path}};
    const auto& p = s.sliding;
    return {{"mode", "sliding"},         {"aspect_ratio", p.aspect_ratio}, {"min_h", p.min_h},
            {"max_h", p.max_h},          {"scale_step", p.scale_step},     {"stride", p.stride},
            {"scale_stride", p.scale_stride}};
}

ProposalSource source_from_json(const json& j) {
    ProposalSource s;
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "external") {
        s.kind = ProposalSource::Kind::External;
        s.external_path = j.at("path").get<std::string>();
    } else if (mode == "sliding") {
        s.kind = ProposalSource::Kind::Sliding;
        s.sliding.aspect_ratio = j.at("aspect_ratio").get<double>();
        s.sliding.min_h = j.at("min_h").get<double>();
        s.sliding.max_h = j.at("max_h").get<double>();
        s.sliding.scale_step = j.at("scale_step").get<double>();
        s.sliding.stride = j.at("stride").get<double>();
        s.sliding.scale_stride = j.at("scale_stride").get<bool>();
    } else {
        throw ParseError("bundle: unknown proposal mode '" + mode + "'");
    }
    return s;
}

}  // namespace

void save_bundle(const ModelBundle& m, const std::filesystem::path& dir) {
    m.validate();
    std::filesystem::create_directories(dir);
    save_weights(m.convnet, dir / "convnet.ppcn");
    json j = {{"format_version", kBundleFormatVersion},
              {"svm", m.svm.to_json()},
              {"mean_alpha", m.mean_alpha},
              {"fusion",
               {{"mode", m.fusion.is_series() ? "series" : "parallel"}, {"threshold", threshold_json(m.fusion.threshold)}}},
              {"proposals", source_json(m.proposals)},
              {"input_size", {m.input_size.height, m.input_size.width}}};
    std::ofstream out(dir / "model.json");
    if (!out) throw IoError("cannot write " + (dir / "model.json").string());
    out << j.dump(1) << "\n";
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw IoError("cannot open " + (dir / "model.json").string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("bundle model.json: ") + e.what());
    }

    ModelBundle m;
    try {
        const auto version = j.at("format_version").get<std::uint32_t>();
        if (version != kBundleFormatVersion) {
            throw Error("version_mismatch", "bundle format version " + std::to_string(version) + ", expected " +
                                                std::to_string(kBundleFormatVersion));
        }
        m.convnet = load_weights(dir / "convnet.ppcn");
        m.svm = LinearSvm::from_json(j.at("svm"));
        m.mean_alpha = j.at("mean_alpha").get<double>();
        const auto& f = j.at("fusion");
        const auto mode = f.at("mode").get<std::string>();
        if (mode == "series") {
            const auto& t = f.at("threshold");
            m.fusion = FusionMode::series(t.is_null() ? -INFINITY : t.get<double>());
        } else if (mode == "parallel") {
            m.fusion = FusionMode::parallel();
        } else {
            throw ParseError("bundle: unknown fusion mode '" + mode + "'");
        }
        m.proposals = source_from_json(j.at("proposals"));
        m.input_size = {j.at("input_size").at(1).get<int>(), j.at("input_size").at(0).get<int>()};
    } catch (const json::exception& e) {
        throw ParseError(std::string("bundle model.json: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace pedpipe
