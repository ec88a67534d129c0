#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanecascade/classifier.hpp"
#include "lanecascade/dataset.hpp"
#include "lanecascade/errors.hpp"
#include "lanecascade/losses.hpp"
#include "lanecascade/metrics.hpp"
#include "lanecascade/segmentation.hpp"

namespace lanecascade {

using json = nlohmann::json;

struct DataConfig {
    bool use_synthetic = true;
    int synthetic_count = 64;
    int synthetic_eval_count = 16;
    SceneSpec scene;  // seed field is overridden by the pipeline's root seed
    std::string train_json;
    std::string eval_json;
    std::string image_root;
    std::string class_annotations;
};

struct SegTrainConfig {
    int epochs = 150;
    int switch_epoch = 50;
    double learning_rate = 5e-4;
    double poly_power = 0.9;
    int batch_size = 4;
    double val_fraction = 0.2;
    InstanceLossConfig instance_loss;
    bool augment = true;
    AugmentConfig augment_config{true, 0.05};

    void validate() const {
        if (epochs < 1) throw ConfigError("seg_train.epochs must be >= 1");
        if (switch_epoch < 0) throw ConfigError("seg_train.switch_epoch must be >= 0");
        if (learning_rate <= 0) throw ConfigError("seg_train.learning_rate must be positive");
        if (batch_size < 1) throw ConfigError("seg_train.batch_size must be >= 1");
        if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("seg_train.val_fraction must be in [0,1)");
        instance_loss.validate();
    }
};

struct ClassifierStageConfig {
    TaxonomyScheme scheme = TaxonomyScheme::two_class;
    std::vector<int> conv_blocks = {16, 32, 64, 128};
    std::vector<int> fc_widths = {64};
    int epochs = 30;
    int batch_size = 32;
    double val_fraction = 0.2;
    double association_threshold_px = 20.0;
};

struct PipelineConfig {
    std::uint64_t seed = 42;
    std::string output_dir = "out";
    DataConfig data;
    SegModelConfig segmentation;
    SegTrainConfig seg_train;
    int descriptor_size = 32;
    ClassifierStageConfig classifier;
    MatchConfig metrics;
    int min_points = 3;
    bool rescale_to_native = false;

    void validate() const {
        segmentation.validate();
        seg_train.validate();
        metrics.validate();
        if (descriptor_size <= 0) throw ConfigError("descriptor_size must be positive");
        if (min_points < 1) throw ConfigError("min_points must be >= 1");
        if (classifier.association_threshold_px <= 0)
            throw ConfigError("classifier.association_threshold_px must be positive");
        if (classifier.epochs < 1) throw ConfigError("classifier.epochs must be >= 1");
    }
};

namespace detail {

// Strict key-tree reader: unknown keys are configuration mistakes, not noise.
inline void check_keys(const json& node, const std::vector<std::string>& allowed, const std::string& where) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        bool ok = false;
        for (const auto& key : allowed)
            if (it.key() == key) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config key '" + where + it.key() + "'");
    }
}

template <typename T>
void read_if(const json& node, const char* key, T& out) {
    if (node.contains(key)) {
        try {
            out = node.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type");
        }
    }
}

}  // namespace detail

inline json pipeline_config_to_json(const PipelineConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["data"] = {{"use_synthetic", cfg.data.use_synthetic},
                 {"synthetic_count", cfg.data.synthetic_count},
                 {"synthetic_eval_count", cfg.data.synthetic_eval_count},
                 {"train_json", cfg.data.train_json},
                 {"eval_json", cfg.data.eval_json},
                 {"image_root", cfg.data.image_root},
                 {"class_annotations", cfg.data.class_annotations},
                 {"scene",
                  {{"width", cfg.data.scene.width},
                   {"height", cfg.data.scene.height},
                   {"lane_count", cfg.data.scene.lane_count},
                   {"curvature_min", cfg.data.scene.curvature_min},
                   {"curvature_max", cfg.data.scene.curvature_max},
                   {"stroke_width_min", cfg.data.scene.stroke_width_min},
                   {"stroke_width_max", cfg.data.scene.stroke_width_max}}}};
    j["segmentation"] = {{"architecture", seg_arch_token(cfg.segmentation.architecture)},
                         {"input_width", cfg.segmentation.input_width},
                         {"input_height", cfg.segmentation.input_height},
                         {"width_multiplier", cfg.segmentation.width_multiplier}};
    j["seg_train"] = {{"epochs", cfg.seg_train.epochs},
                      {"switch_epoch", cfg.seg_train.switch_epoch},
                      {"learning_rate", cfg.seg_train.learning_rate},
                      {"poly_power", cfg.seg_train.poly_power},
                      {"batch_size", cfg.seg_train.batch_size},
                      {"val_fraction", cfg.seg_train.val_fraction},
                      {"margin", cfg.seg_train.instance_loss.margin},
                      {"pair_budget", cfg.seg_train.instance_loss.pair_budget},
                      {"symmetric", cfg.seg_train.instance_loss.symmetric},
                      {"augment", cfg.seg_train.augment},
                      {"horizontal_flip", cfg.seg_train.augment_config.horizontal_flip},
                      {"brightness_jitter", cfg.seg_train.augment_config.brightness_jitter}};
    j["descriptor"] = {{"size", cfg.descriptor_size}};
    j["classifier"] = {{"scheme", scheme_token(cfg.classifier.scheme)},
                       {"conv_blocks", cfg.classifier.conv_blocks},
                       {"fc_widths", cfg.classifier.fc_widths},
                       {"epochs", cfg.classifier.epochs},
                       {"batch_size", cfg.classifier.batch_size},
                       {"val_fraction", cfg.classifier.val_fraction},
                       {"association_threshold_px", cfg.classifier.association_threshold_px}};
    j["metrics"] = {{"threshold_px", cfg.metrics.threshold_px},
                    {"fraction_cutoff", cfg.metrics.fraction_cutoff},
                    {"min_points", cfg.min_points},
                    {"rescale_to_native", cfg.rescale_to_native}};
    return j;
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig cfg;
    detail::check_keys(j, {"seed", "output_dir", "data", "segmentation", "seg_train", "descriptor", "classifier",
                           "metrics"},
                       "");
    detail::read_if(j, "seed", cfg.seed);
    detail::read_if(j, "output_dir", cfg.output_dir);
    if (j.contains("data")) {
        const json& d = j.at("data");
        detail::check_keys(d,
                           {"use_synthetic", "synthetic_count", "synthetic_eval_count", "train_json", "eval_json",
                            "image_root", "class_annotations", "scene"},
                           "data.");
        detail::read_if(d, "use_synthetic", cfg.data.use_synthetic);
        detail::read_if(d, "synthetic_count", cfg.data.synthetic_count);
        detail::read_if(d, "synthetic_eval_count", cfg.data.synthetic_eval_count);
        detail::read_if(d, "train_json", cfg.data.train_json);
        detail::read_if(d, "eval_json", cfg.data.eval_json);
        detail::read_if(d, "image_root", cfg.data.image_root);
        detail::read_if(d, "class_annotations", cfg.data.class_annotations);
        if (d.contains("scene")) {
            const json& s = d.at("scene");
            detail::check_keys(s,
                               {"width", "height", "lane_count", "curvature_min", "curvature_max", "stroke_width_min",
                                "stroke_width_max"},
                               "data.scene.");
            detail::read_if(s, "width", cfg.data.scene.width);
            detail::read_if(s, "height", cfg.data.scene.height);
            detail::read_if(s, "lane_count", cfg.data.scene.lane_count);
            detail::read_if(s, "curvature_min", cfg.data.scene.curvature_min);
            detail::read_if(s, "curvature_max", cfg.data.scene.curvature_max);
            detail::read_if(s, "stroke_width_min", cfg.data.scene.stroke_width_min);
            detail::read_if(s, "stroke_width_max", cfg.data.scene.stroke_width_max);
        }
    }
    if (j.contains("segmentation")) {
        const json& s = j.at("segmentation");
        detail::check_keys(s, {"architecture", "input_width", "input_height", "width_multiplier"}, "segmentation.");
        if (s.contains("architecture")) cfg.segmentation.architecture = parse_seg_arch(s.at("architecture").get<std::string>());
        detail::read_if(s, "input_width", cfg.segmentation.input_width);
        detail::read_if(s, "input_height", cfg.segmentation.input_height);
        detail::read_if(s, "width_multiplier", cfg.segmentation.width_multiplier);
    }
    if (j.contains("seg_train")) {
        const json& t = j.at("seg_train");
        detail::check_keys(t,
                           {"epochs", "switch_epoch", "learning_rate", "poly_power", "batch_size", "val_fraction",
                            "margin", "pair_budget", "symmetric", "augment", "horizontal_flip", "brightness_jitter"},
                           "seg_train.");
        detail::read_if(t, "epochs", cfg.seg_train.epochs);
        detail::read_if(t, "switch_epoch", cfg.seg_train.switch_epoch);
        detail::read_if(t, "learning_rate", cfg.seg_train.learning_rate);
        detail::read_if(t, "poly_power", cfg.seg_train.poly_power);
        detail::read_if(t, "batch_size", cfg.seg_train.batch_size);
        detail::read_if(t, "val_fraction", cfg.seg_train.val_fraction);
        detail::read_if(t, "margin", cfg.seg_train.instance_loss.margin);
        detail::read_if(t, "pair_budget", cfg.seg_train.instance_loss.pair_budget);
        detail::read_if(t, "symmetric", cfg.seg_train.instance_loss.symmetric);
        detail::read_if(t, "augment", cfg.seg_train.augment);
        detail::read_if(t, "horizontal_flip", cfg.seg_train.augment_config.horizontal_flip);
        detail::read_if(t, "brightness_jitter", cfg.seg_train.augment_config.brightness_jitter);
    }
    if (j.contains("descriptor")) {
        detail::check_keys(j.at("descriptor"), {"size"}, "descriptor.");
        detail::read_if(j.at("descriptor"), "size", cfg.descriptor_size);
    }
    if (j.contains("classifier")) {
        const json& c = j.at("classifier");
        detail::check_keys(c,
                           {"scheme", "conv_blocks", "fc_widths", "epochs", "batch_size", "val_fraction",
                            "association_threshold_px"},
                           "classifier.");
        if (c.contains("scheme")) cfg.classifier.scheme = parse_scheme(c.at("scheme").get<std::string>());
        detail::read_if(c, "conv_blocks", cfg.classifier.conv_blocks);
        detail::read_if(c, "fc_widths", cfg.classifier.fc_widths);
        detail::read_if(c, "epochs", cfg.classifier.epochs);
        detail::read_if(c, "batch_size", cfg.classifier.batch_size);
        detail::read_if(c, "val_fraction", cfg.classifier.val_fraction);
        detail::read_if(c, "association_threshold_px", cfg.classifier.association_threshold_px);
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        detail::check_keys(m, {"threshold_px", "fraction_cutoff", "min_points", "rescale_to_native"}, "metrics.");
        detail::read_if(m, "threshold_px", cfg.metrics.threshold_px);
        detail::read_if(m, "fraction_cutoff", cfg.metrics.fraction_cutoff);
        detail::read_if(m, "min_points", cfg.min_points);
        detail::read_if(m, "rescale_to_native", cfg.rescale_to_native);
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return pipeline_config_from_json(j);
}

inline void save_pipeline_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << pipeline_config_to_json(cfg).dump(2) << "\n";
}

// Derived configs ------------------------------------------------------------

inline ClsModelConfig make_cls_model_config(const PipelineConfig& cfg) {
    ClsModelConfig mc;
    mc.descriptor_size = cfg.descriptor_size;
    mc.outputs = num_outputs(cfg.classifier.scheme);
    mc.conv_blocks = cfg.classifier.conv_blocks;
    mc.fc_widths = cfg.classifier.fc_widths;
    return mc;
}

inline MetricsConfigEcho make_metrics_echo(const PipelineConfig& cfg) {
    MetricsConfigEcho echo;
    echo.threshold_px = cfg.metrics.threshold_px;
    echo.fraction_cutoff = cfg.metrics.fraction_cutoff;
    echo.min_points = cfg.min_points;
    echo.eval_width = cfg.segmentation.input_width;
    echo.eval_height = cfg.segmentation.input_height;
    echo.rescale_to_native = cfg.rescale_to_native;
    return echo;
}

}  // namespace lanecascade
