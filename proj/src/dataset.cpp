#include "pedpipe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pedpipe/error.hpp"

namespace pedpipe {

using nlohmann::json;

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ParseError("unknown split '" + s + "' (expected train|test)");
}

const FrameRecord* DatasetManifest::find(const std::string& frame_id) const {
    for (const auto& f : frames) {
        if (f.frame_id == frame_id) return &f;
    }
    return nullptr;
}

std::filesystem::path DatasetManifest::image_path(const FrameRecord& f) const {
    std::filesystem::path p(f.image_path);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

namespace {

int line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

template <typename T>
T field(const json& obj, const char* name, const std::string& where) {
    auto it = obj.find(name);
    if (it == obj.end()) throw ParseError(where + ": missing field '" + name + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ParseError(where + ": field '" + name + "' has the wrong type");
    }
}

double number_field(const json& obj, const char* name, const std::string& where) {
    auto it = obj.find(name);
    if (it == obj.end()) throw ParseError(where + ": missing field '" + name + "'");
    if (!it->is_number()) throw ParseError(where + ": field '" + name + "' must be a number");
    return it->get<double>();
}

}  // namespace

void validate_manifest(const DatasetManifest& m, ManifestOptions opts) {
    std::set<std::string> seen;
    for (const auto& f : m.frames) {
        if (!seen.insert(f.frame_id).second) {
            throw InvariantError("duplicate frame_id '" + f.frame_id + "'");
        }
        if (f.session < 0 || f.session > 10) {
            throw InvariantError("frame '" + f.frame_id + "': session must lie in [0,10]");
        }
        if (opts.caltech_convention) {
            const Split expected = f.session <= 5 ? Split::Train : Split::Test;
            if (f.split != expected) {
                throw InvariantError("frame '" + f.frame_id + "': session " + std::to_string(f.session) +
                                     " must belong to the " + to_string(expected) + " split");
            }
        }
        for (const auto& a : f.annotations) {
            if (!a.box.valid()) {
                throw InvariantError("frame '" + f.frame_id + "': annotation with non-positive width/height");
            }
        }
    }
}

DatasetManifest parse_manifest(const std::string& text, ManifestOptions opts) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        std::ostringstream os;
        os << "manifest line " << line_of_offset(text, e.byte) << ": " << e.what();
        throw ParseError(os.str());
    }
    if (!doc.is_object()) throw ParseError("manifest: top level must be an object");
    auto frames_it = doc.find("frames");
    if (frames_it == doc.end() || !frames_it->is_array()) {
        throw ParseError("manifest: missing 'frames' array");
    }

    DatasetManifest m;
    if (auto meta = doc.find("metadata"); meta != doc.end()) {
        if (!meta->is_object()) throw ParseError("manifest: 'metadata' must be an object");
        m.metadata = *meta;
    }
    m.frames.reserve(frames_it->size());
    for (std::size_t i = 0; i < frames_it->size(); ++i) {
        const json& jf = (*frames_it)[i];
        const std::string where = "frames[" + std::to_string(i) + "]";
        if (!jf.is_object()) throw ParseError(where + ": expected an object");
        FrameRecord f;
        f.frame_id = field<std::string>(jf, "frame_id", where);
        f.image_path = field<std::string>(jf, "image_path", where);
        f.session = field<int>(jf, "session", where);
        f.split = parse_split(field<std::string>(jf, "split", where));
        const auto anns = jf.find("annotations");
        if (anns == jf.end() || !anns->is_array()) throw ParseError(where + ": missing 'annotations' array");
        for (std::size_t k = 0; k < anns->size(); ++k) {
            const json& ja = (*anns)[k];
            const std::string awhere = where + ".annotations[" + std::to_string(k) + "]";
            Annotation a;
            a.box = {number_field(ja, "x", awhere), number_field(ja, "y", awhere), number_field(ja, "w", awhere),
                     number_field(ja, "h", awhere)};
            a.occluded = field<bool>(ja, "occluded", awhere);
            a.person_id = field<int>(ja, "person_id", awhere);
            f.annotations.push_back(a);
        }
        m.frames.push_back(std::move(f));
    }
    validate_manifest(m, opts);
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, ManifestOptions opts) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    DatasetManifest m = parse_manifest(buf.str(), opts);
    m.base_dir = path.parent_path();
    return m;
}

std::string dump_manifest(const DatasetManifest& m) {
    json frames = json::array();
    for (const auto& f : m.frames) {
        json anns = json::array();
        for (const auto& a : f.annotations) {
            anns.push_back({{"x", a.box.x},
                            {"y", a.box.y},
                            {"w", a.box.w},
                            {"h", a.box.h},
                            {"occluded", a.occluded},
                            {"person_id", a.person_id}});
        }
        frames.push_back({{"frame_id", f.frame_id},
                          {"image_path", f.image_path},
                          {"session", f.session},
                          {"split", to_string(f.split)},
                          {"annotations", std::move(anns)}});
    }
    json doc = {{"frames", std::move(frames)}, {"metadata", m.metadata}};
    return doc.dump(1) + "\n";
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << dump_manifest(m);
}

std::vector<FrameRecord> sample_frames(const DatasetManifest& m, Split split, int step) {
    if (step < 1) throw RangeError("sample_frames: step must be >= 1");
    std::map<int, int> index_in_session;
    std::vector<FrameRecord> out;
    for (const auto& f : m.frames) {
        if (f.split != split) continue;
        const int idx = index_in_session[f.session]++;
        if (idx % step == 0) out.push_back(f);
    }
    return out;
}

std::vector<FrameRecord> sample_frames(const DatasetManifest& m, Split split) {
    return sample_frames(m, split, split == Split::Test ? kDefaultTestStep : kDefaultTrainStep);
}

std::vector<BoundingBox> extract_positives(const FrameRecord& f, double min_height, bool include_occluded) {
    std::vector<BoundingBox> out;
    for (const auto& a : f.annotations) {
        if (a.box.h > min_height && (include_occluded || !a.occluded)) out.push_back(a.box);
    }
    return out;
}

std::vector<BoundingBox> sample_random_negatives(const FrameRecord& f, const FrameImage& img, int count,
                                                 const NegativeSampling& params, Rng& rng) {
    if (count < 0) throw RangeError("sample_random_negatives: count must be >= 0");
    if (params.max_overlap < 0.0 || params.max_overlap >= 1.0) {
        throw RangeError("sample_random_negatives: max_overlap must lie in [0,1)");
    }
    std::vector<BoundingBox> out;
    if (count == 0) return out;

    const double frame_w = img.width();
    const double frame_h = img.height();
    // Largest height whose box still fits the frame at the fixed aspect ratio.
    const double fit_h = std::min(frame_h, frame_w * params.aspect_ratio);
    const double max_h = std::min(params.size.max_h, fit_h);
    const double min_h = params.size.min_h;
    if (min_h <= 0.0 || min_h > max_h) {
        throw SamplingExhaustedError("frame '" + f.frame_id + "': no negative size fits the frame");
    }
    const double log_lo = std::log(min_h);
    const double log_hi = std::log(max_h);

    out.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < params.max_attempts_per_box && !placed; ++attempt) {
            const double h = std::exp(uniform(rng, log_lo, log_hi));
            const double w = h / params.aspect_ratio;
            const BoundingBox b{uniform(rng, 0.0, frame_w - w), uniform(rng, 0.0, frame_h - h), w, h};
            const bool clear = std::all_of(f.annotations.begin(), f.annotations.end(),
                                           [&](const Annotation& a) { return iou(b, a.box) <= params.max_overlap; });
            if (clear) {
                out.push_back(b);
                placed = true;
            }
        }
        if (!placed) {
            throw SamplingExhaustedError("frame '" + f.frame_id + "': could not place negative " + std::to_string(n) +
                                         " within " + std::to_string(params.max_attempts_per_box) + " attempts");
        }
    }
    return out;
}

EvaluationTargets evaluation_targets(const FrameRecord& f, double min_height, bool include_occluded) {
    EvaluationTargets t;
    for (const auto& a : f.annotations) {
        if (a.box.h > min_height && (include_occluded || !a.occluded)) {
            t.positives.push_back(a.box);
        } else {
            t.ignore.push_back(a.box);
        }
    }
    return t;
}

std::vector<bool> ignored_detections(const std::vector<BoundingBox>& dets, const std::vector<BoundingBox>& ignore,
                                     double iou_thresh) {
    std::vector<bool> out(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        for (const auto& g : ignore) {
            if (iou(dets[i], g) > iou_thresh) {
                out[i] = true;
                break;
            }
        }
    }
    return out;
}

}  // namespace pedpipe
