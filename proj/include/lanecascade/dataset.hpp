#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/image.hpp"
#include "lanecascade/image_io.hpp"
#include "lanecascade/rng.hpp"
#include "lanecascade/taxonomy.hpp"

namespace lanecascade {

// The missing-x sentinel used by TuSimple-style annotation records.
inline constexpr double kRecordMissingX = -2.0;

// One annotated frame: image (possibly deferred), its boundaries on a shared
// row grid, and one class per boundary.
struct Sample {
    std::string source_id;
    std::vector<int> grid_rows;  // the shared h_samples grid
    std::vector<Polyline> boundaries;
    std::vector<ClassLabel> classes;
    Image image;             // empty until materialized
    std::string image_path;  // relative path for lazy loading
    int native_width = 0;    // resolution the annotations refer to; 0 = unknown
    int native_height = 0;

    void validate() const {
        if (static_cast<int>(boundaries.size()) > kMaxInstances)
            throw InstanceBudgetError("sample '" + source_id + "' has " + std::to_string(boundaries.size()) +
                                      " boundaries, budget is " + std::to_string(kMaxInstances));
        if (classes.size() != boundaries.size())
            throw InvalidArgumentError("sample '" + source_id + "': classes/boundaries length mismatch");
        for (const auto& b : boundaries) b.validate();
    }
};

// Materializes the deferred image if needed. Annotations are never touched.
inline void load_sample_image(Sample& sample, const std::string& dataset_root) {
    if (!sample.image.empty() || sample.image_path.empty()) return;
    const std::string path = dataset_root.empty() ? sample.image_path : dataset_root + "/" + sample.image_path;
    sample.image = load_image(path);
    if (sample.native_width == 0) {
        sample.native_width = sample.image.width;
        sample.native_height = sample.image.height;
    }
}

namespace detail {

inline std::string record_name(const nlohmann::json& j, int line_no) {
    if (j.is_object() && j.contains("raw_file") && j["raw_file"].is_string())
        return "'" + j["raw_file"].get<std::string>() + "' (line " + std::to_string(line_no) + ")";
    return "line " + std::to_string(line_no);
}

}  // namespace detail

// Parses one TuSimple JSON-lines record: {"lanes": [[x,...],...],
// "h_samples": [y,...], "raw_file": path}, x = -2 meaning absent. The image
// stays deferred; boundary order is preserved; a lane with no samples becomes
// an empty polyline.
inline Sample parse_tusimple_line(const std::string& line, int line_no = 0) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecordError("malformed record at line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string name = detail::record_name(j, line_no);
    for (const char* key : {"lanes", "h_samples", "raw_file"})
        if (!j.contains(key))
            throw MalformedRecordError("malformed record " + name + ": missing key \"" + key + "\"");
    if (!j["lanes"].is_array() || !j["h_samples"].is_array() || !j["raw_file"].is_string())
        throw MalformedRecordError("malformed record " + name + ": wrong key types");

    Sample sample;
    sample.source_id = j["raw_file"].get<std::string>();
    sample.image_path = sample.source_id;
    try {
        sample.grid_rows = j["h_samples"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
        throw MalformedRecordError("malformed record " + name + ": h_samples must be integers");
    }
    for (std::size_t i = 1; i < sample.grid_rows.size(); ++i)
        if (sample.grid_rows[i] <= sample.grid_rows[i - 1])
            throw MalformedRecordError("malformed record " + name + ": h_samples not strictly increasing");

    if (j["lanes"].size() > static_cast<std::size_t>(kMaxInstances))
        throw InstanceBudgetError("record " + name + " has " + std::to_string(j["lanes"].size()) +
                                  " lanes, budget is " + std::to_string(kMaxInstances));

    for (const auto& lane : j["lanes"]) {
        if (!lane.is_array() || lane.size() != sample.grid_rows.size())
            throw MalformedRecordError("malformed record " + name + ": lane length does not match h_samples");
        Polyline poly;
        bool any = false;
        for (std::size_t i = 0; i < lane.size(); ++i) {
            if (!lane[i].is_number())
                throw MalformedRecordError("malformed record " + name + ": lane x must be numeric");
            const double x = lane[i].get<double>();
            if (x == kRecordMissingX) {
                poly.push_point(sample.grid_rows[i], kMissingX);
            } else {
                poly.push_point(sample.grid_rows[i], x);
                any = true;
            }
        }
        if (!any) poly = Polyline{};  // all-missing lane -> empty polyline
        sample.boundaries.push_back(std::move(poly));
    }
    sample.classes.assign(sample.boundaries.size(), ClassLabel::unknown);
    sample.validate();
    return sample;
}

// Serializes a sample back to the TuSimple record format.
inline std::string serialize_tusimple_line(const Sample& sample) {
    nlohmann::json lanes = nlohmann::json::array();
    for (const auto& boundary : sample.boundaries) {
        std::map<int, double> by_row;
        for (std::size_t i = 0; i < boundary.rows.size(); ++i)
            if (!is_missing(boundary.cols[i])) by_row[boundary.rows[i]] = boundary.cols[i];
        nlohmann::json lane = nlohmann::json::array();
        for (int row : sample.grid_rows) {
            const auto it = by_row.find(row);
            lane.push_back(it == by_row.end() ? kRecordMissingX : it->second);
        }
        lanes.push_back(std::move(lane));
    }
    nlohmann::json j;
    j["lanes"] = std::move(lanes);
    j["h_samples"] = sample.grid_rows;
    j["raw_file"] = sample.source_id;
    return j.dump();
}

inline std::vector<Sample> parse_tusimple_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open annotation file '" + path + "'");
    std::vector<Sample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_tusimple_line(line, line_no));
    }
    return out;
}

using ClassAnnotationMap = std::map<std::pair<std::string, int>, ClassLabel>;

namespace detail {

inline void insert_class_annotation(ClassAnnotationMap& map, const std::string& raw_file, int index,
                                    std::string_view token, int line_no) {
    ClassLabel label;
    try {
        label = parse_class_token(token);
    } catch (const InvalidArgumentError& e) {
        throw InvalidArgumentError("class annotation line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto key = std::make_pair(raw_file, index);
    if (map.count(key))
        throw InvalidArgumentError("duplicate class annotation for '" + raw_file + "' boundary " +
                                   std::to_string(index));
    map[key] = label;
}

}  // namespace detail

// Loads per-boundary class labels. Two layouts are accepted: JSON-lines
// {"raw_file": str, "classes": [token, ...]} aligned with the record's lane
// order, or (when the file ends in .csv) rows of raw_file,boundary_index,token.
// Lookups of unannotated boundaries default to unknown.
inline ClassAnnotationMap load_class_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open class annotation file '" + path + "'");
    const bool csv = path.size() >= 4 && path.substr(path.size() - 4) == ".csv";

    ClassAnnotationMap map;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (csv) {
            std::stringstream ss(line);
            std::string raw_file, index_str, token;
            if (!std::getline(ss, raw_file, ',') || !std::getline(ss, index_str, ',') || !std::getline(ss, token))
                throw MalformedRecordError("class annotation line " + std::to_string(line_no) +
                                           ": expected raw_file,boundary_index,class");
            if (line_no == 1 && index_str.find_first_not_of("0123456789") != std::string::npos)
                continue;  // header row
            int index = 0;
            try {
                index = std::stoi(index_str);
            } catch (const std::exception&) {
                throw MalformedRecordError("class annotation line " + std::to_string(line_no) +
                                           ": boundary_index is not an integer");
            }
            detail::insert_class_annotation(map, raw_file, index, token, line_no);
        } else {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw MalformedRecordError("class annotation line " + std::to_string(line_no) + ": " + e.what());
            }
            if (!j.contains("raw_file") || !j.contains("classes") || !j["classes"].is_array())
                throw MalformedRecordError("class annotation line " + std::to_string(line_no) +
                                           ": expected {\"raw_file\", \"classes\": [...]}");
            const auto raw_file = j["raw_file"].get<std::string>();
            for (std::size_t i = 0; i < j["classes"].size(); ++i)
                detail::insert_class_annotation(map, raw_file, static_cast<int>(i),
                                                j["classes"][i].get<std::string>(), line_no);
        }
    }
    return map;
}

inline ClassLabel annotation_for(const ClassAnnotationMap& map, const std::string& source_id, int boundary_index) {
    const auto it = map.find(std::make_pair(source_id, boundary_index));
    return it == map.end() ? ClassLabel::unknown : it->second;
}

// Applies loaded class annotations onto parsed samples.
inline void apply_class_annotations(std::vector<Sample>& samples, const ClassAnnotationMap& map) {
    for (auto& sample : samples)
        for (std::size_t i = 0; i < sample.classes.size(); ++i)
            sample.classes[i] = annotation_for(map, sample.source_id, static_cast<int>(i));
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

// Everything a scene render depends on; identical specs give bit-identical
// samples.
struct SceneSpec {
    std::uint64_t seed = 0;
    int width = 512;
    int height = 256;
    int lane_count = 3;  // boundaries in the scene, 2..4
    double curvature_min = 0.0;  // bow amplitude at mid-height, px
    double curvature_max = 8.0;
    double stroke_width_min = 2.5;
    double stroke_width_max = 4.0;
    std::vector<ClassLabel> class_palette = {
        ClassLabel::single_white_continuous, ClassLabel::double_white_continuous,
        ClassLabel::single_yellow_continuous, ClassLabel::double_yellow_continuous,
        ClassLabel::dashed, ClassLabel::double_dashed, ClassLabel::botts_dots};
};

namespace detail {

struct StrokeStyle {
    ClassLabel label;
    double width;
    std::array<std::uint8_t, 3> color;
};

inline bool stroke_pattern_on(ClassLabel label, double along, double perp, double w) {
    switch (label) {
        case ClassLabel::single_white_continuous:
        case ClassLabel::single_yellow_continuous:
        case ClassLabel::unknown:
            return perp <= 0.5 * w;
        case ClassLabel::double_white_continuous:
        case ClassLabel::double_yellow_continuous:
            return std::abs(perp - 0.7 * w) <= 0.3 * w;
        case ClassLabel::dashed:
            return perp <= 0.5 * w && std::fmod(along, 6.0 * w) < 3.0 * w;
        case ClassLabel::double_dashed:
            return std::abs(perp - 0.7 * w) <= 0.3 * w && std::fmod(along, 6.0 * w) < 3.0 * w;
        case ClassLabel::botts_dots: {
            const double spacing = 4.0 * w;
            const double nearest = std::round(along / spacing) * spacing;
            return std::hypot(perp, along - nearest) <= 0.55 * w;
        }
    }
    return false;
}

// Paints one boundary's stroke pattern over the image. Pixels are visited in
// a fixed order so rendering is reproducible.
inline void paint_stroke(Image& image, const Polyline& poly, const StrokeStyle& style) {
    const auto pts = poly.points();
    if (pts.size() < 2) return;
    const double reach = style.width + 1.0;
    double arc = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double x0 = pts[i].second, y0 = pts[i].first;
        const double x1 = pts[i + 1].second, y1 = pts[i + 1].first;
        const double seg_len = std::hypot(x1 - x0, y1 - y0);
        if (seg_len == 0.0) continue;
        const int min_x = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - reach)));
        const int max_x = std::min(image.width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + reach)));
        const int min_y = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - reach)));
        const int max_y = std::min(image.height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + reach)));
        for (int y = min_y; y <= max_y; ++y)
            for (int x = min_x; x <= max_x; ++x) {
                const double t =
                    std::clamp(((x - x0) * (x1 - x0) + (y - y0) * (y1 - y0)) / (seg_len * seg_len), 0.0, 1.0);
                const double fx = x0 + t * (x1 - x0);
                const double fy = y0 + t * (y1 - y0);
                const double perp = std::hypot(x - fx, y - fy);
                if (perp > style.width) continue;
                if (stroke_pattern_on(style.label, arc + t * seg_len, perp, style.width))
                    image.set_pixel(x, y, style.color[0], style.color[1], style.color[2]);
            }
        arc += seg_len;
    }
}

}  // namespace detail

// Renders a deterministic road-like scene with lane_count boundaries drawn as
// class-consistent stroke patterns over textured background, and returns the
// exact ground-truth polylines and classes.
inline Sample generate_scene(const SceneSpec& spec) {
    if (spec.lane_count > kMaxInstances)
        throw InstanceBudgetError("generate_scene: lane_count " + std::to_string(spec.lane_count) +
                                  " exceeds the instance budget of " + std::to_string(kMaxInstances));
    if (spec.lane_count < 2) throw InvalidArgumentError("generate_scene: lane_count must be at least 2");
    if (spec.width < 16 || spec.height < 16) throw InvalidArgumentError("generate_scene: image too small");
    if (spec.class_palette.empty()) throw InvalidArgumentError("generate_scene: empty class palette");

    Rng rng(spec.seed);
    const int w = spec.width, h = spec.height;

    // Background: gray road with a soft vertical gradient and per-pixel noise.
    Image image(w, h);
    const int base_gray = static_cast<int>(rng.uniform_int(70, 90));
    for (int y = 0; y < h; ++y) {
        const int row_gray = base_gray + (10 * y) / std::max(1, h - 1);
        for (int x = 0; x < w; ++x) {
            const int v = row_gray + static_cast<int>(rng.uniform_int(-8, 8));
            const auto g = clamp_u8(v);
            image.set_pixel(x, y, g, g, g);
        }
    }

    // Lane layout: boundaries fan out from a vanishing region near the top.
    const int n = spec.lane_count;
    const double cx = w * (0.5 + rng.uniform(-0.06, 0.06));
    const double spacing = w * rng.uniform(0.20, 0.25);
    const double convergence = rng.uniform(0.55, 0.75);
    const double top_shift = w * rng.uniform(-0.05, 0.05);
    const double bow = rng.uniform(spec.curvature_min, spec.curvature_max) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const int y_top = static_cast<int>(std::lround(0.12 * h));

    Sample sample;
    sample.source_id = "synthetic_" + std::to_string(spec.seed);
    sample.native_width = w;
    sample.native_height = h;
    for (int y = y_top; y < h; ++y) sample.grid_rows.push_back(y);

    std::vector<detail::StrokeStyle> styles;
    for (int i = 0; i < n; ++i) {
        const double jitter = w * rng.uniform(-0.015, 0.015);
        const double bottom_x = cx + (i - (n - 1) / 2.0) * spacing + jitter;
        const double top_x = cx + top_shift + (bottom_x - cx) * convergence;
        const double stroke_w = rng.uniform(spec.stroke_width_min, spec.stroke_width_max);
        const auto label = spec.class_palette[rng.uniform_int(0, static_cast<std::int64_t>(spec.class_palette.size()) - 1)];

        std::array<std::uint8_t, 3> color;
        const bool yellow = label == ClassLabel::single_yellow_continuous ||
                            label == ClassLabel::double_yellow_continuous;
        const std::array<int, 3> base =
            label == ClassLabel::unknown ? std::array<int, 3>{150, 150, 150}
            : yellow                     ? std::array<int, 3>{212, 178, 52}
                                         : std::array<int, 3>{232, 232, 228};
        for (int c = 0; c < 3; ++c) color[c] = clamp_u8(base[c] + static_cast<int>(rng.uniform_int(-6, 6)));

        Polyline poly;
        for (int y = y_top; y < h; ++y) {
            const double t = static_cast<double>(h - 1 - y) / (h - 1 - y_top);  // 0 at bottom, 1 at top
            double x = bottom_x + (top_x - bottom_x) * t + bow * 4.0 * t * (1.0 - t);
            x = std::clamp(x, 2.0, w - 3.0);
            poly.push_point(y, x);
        }
        sample.boundaries.push_back(std::move(poly));
        sample.classes.push_back(label);
        styles.push_back({label, stroke_w, color});
    }

    for (int i = 0; i < n; ++i) detail::paint_stroke(image, sample.boundaries[i], styles[i]);

    sample.image = std::move(image);
    sample.validate();
    return sample;
}

// A small corpus of scenes with varying lane counts, each seeded independently
// so parallel generation equals serial generation.
inline std::vector<Sample> make_scene_corpus(const SceneSpec& proto, int count, std::uint64_t corpus_seed) {
    std::vector<Sample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        SceneSpec spec = proto;
        spec.seed = derive_seed(corpus_seed, "scene", static_cast<std::uint64_t>(i));
        spec.lane_count = 2 + i % 3;
        out.push_back(generate_scene(spec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits and augmentation
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

// Disjoint, exhaustive, seed-deterministic split.
inline DatasetSplit split_dataset(const std::vector<Sample>& samples, const std::array<double, 3>& fractions,
                                  std::uint64_t seed) {
    if (samples.empty()) throw InvalidArgumentError("split_dataset: empty dataset");
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw InvalidArgumentError("split_dataset: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgumentError("split_dataset: fractions must sum to 1");

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto total = static_cast<std::int64_t>(samples.size());
    auto n_train = std::llround(fractions[0] * total);
    auto n_val = std::llround(fractions[1] * total);
    n_train = std::clamp<std::int64_t>(n_train, 0, total);
    n_val = std::clamp<std::int64_t>(n_val, 0, total - n_train);

    DatasetSplit split;
    for (std::int64_t i = 0; i < total; ++i) {
        const Sample& s = samples[order[i]];
        if (i < n_train)
            split.train.push_back(s);
        else if (i < n_train + n_val)
            split.val.push_back(s);
        else
            split.test.push_back(s);
    }
    return split;
}

struct AugmentConfig {
    bool horizontal_flip = false;
    double brightness_jitter = 0.0;  // fraction of full scale, 0..1
};

// Seed-driven horizontal flip and brightness jitter; annotations follow the
// image.
inline void apply_augmentation(Sample& sample, const AugmentConfig& config, Rng& rng) {
    if (config.horizontal_flip && rng.uniform() < 0.5) {
        const int w = sample.image.empty() ? sample.native_width : sample.image.width;
        if (w > 0) {
            if (!sample.image.empty()) {
                Image flipped(sample.image.width, sample.image.height);
                for (int y = 0; y < sample.image.height; ++y)
                    for (int x = 0; x < sample.image.width; ++x) {
                        const auto px = sample.image.pixel(sample.image.width - 1 - x, y);
                        flipped.set_pixel(x, y, px[0], px[1], px[2]);
                    }
                sample.image = std::move(flipped);
            }
            for (auto& boundary : sample.boundaries)
                for (auto& x : boundary.cols)
                    if (!is_missing(x)) x = (w - 1) - x;
        }
    }
    if (config.brightness_jitter > 0.0 && !sample.image.empty()) {
        const int delta = static_cast<int>(std::lround(rng.uniform(-config.brightness_jitter,
                                                                   config.brightness_jitter) * 255.0));
        for (auto& v : sample.image.data) v = clamp_u8(static_cast<int>(v) + delta);
    }
}

}  // namespace lanecascade
