#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lanecascade/checkpoint.hpp"
#include "lanecascade/classifier.hpp"
#include "lanecascade/config.hpp"
#include "lanecascade/dataset.hpp"
#include "lanecascade/descriptor.hpp"
#include "lanecascade/errors.hpp"
#include "lanecascade/image_io.hpp"
#include "lanecascade/losses.hpp"
#include "lanecascade/metrics.hpp"
#include "lanecascade/segmentation.hpp"

namespace lanecascade {

// Painted boundary width used when rasterizing ground truth.
inline constexpr int kBoundaryStrokeWidth = 5;

// ---------------------------------------------------------------------------
// Resolution plumbing
// ---------------------------------------------------------------------------

// Endpoint-preserving rescale: corner rows/columns map onto corner rows/columns.
inline Polyline polyline_to_resolution(const Polyline& poly, int from_w, int from_h, int to_w, int to_h) {
    if (from_w < 1 || from_h < 1 || to_w < 1 || to_h < 1)
        throw InvalidArgumentError("polyline_to_resolution: sizes must be positive");
    const double sx = from_w > 1 ? static_cast<double>(to_w - 1) / (from_w - 1) : 1.0;
    const double sy = from_h > 1 ? static_cast<double>(to_h - 1) / (from_h - 1) : 1.0;
    return scale_polyline(poly, sx, sy);
}

// A sample brought to network resolution: image, boundaries, instance raster.
struct NetSample {
    Image image;
    std::vector<Polyline> boundaries;
    std::vector<ClassLabel> classes;
    InstanceMap instance_map;
    std::string source_id;
    int native_width = 0;
    int native_height = 0;
};

inline NetSample materialize_at_network(const Sample& sample, int width, int height,
                                        const std::string& image_root = {}) {
    Sample s = sample;
    load_sample_image(s, image_root);
    if (s.image.empty())
        throw InvalidArgumentError("sample '" + s.source_id + "' has no image data or image path");
    const int nw = s.native_width > 0 ? s.native_width : s.image.width;
    const int nh = s.native_height > 0 ? s.native_height : s.image.height;
    NetSample net;
    net.source_id = s.source_id;
    net.native_width = nw;
    net.native_height = nh;
    net.image = resize_bilinear(s.image, width, height);
    net.boundaries.reserve(s.boundaries.size());
    for (const auto& b : s.boundaries) net.boundaries.push_back(polyline_to_resolution(b, nw, nh, width, height));
    net.classes = s.classes;
    net.instance_map = rasterize_boundaries(net.boundaries, kBoundaryStrokeWidth, width, height);
    return net;
}

// ---------------------------------------------------------------------------
// Segmentation training (two-phase curriculum)
// ---------------------------------------------------------------------------

struct SegTrainReport {
    std::vector<double> train_losses;  // one per epoch
    std::vector<double> val_losses;
    std::vector<TrainPhase> phases;
    int best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

// Everything needed to continue a training run exactly where it stopped.
struct SegTrainState {
    int next_epoch = 0;
    TrainPhase phase = TrainPhase::binary;
    std::vector<float> model_state;
    std::vector<float> adam_m, adam_v;
    std::int64_t adam_t = 0;
};

struct SegTrainResult {
    SegModel model;  // best-validation weights of the final phase
    SegTrainReport report;
    SegTrainState final_state;
};

namespace detail {

inline const char* phase_name(TrainPhase phase) { return phase == TrainPhase::binary ? "binary" : "instance"; }

}  // namespace detail

// Runs the curriculum: a binary boundary/background warm-up, then the pairwise
// instance objective with a fresh 5-channel head over the same backbone.
// `stop_after_epoch` ends the run early (for checkpoint/resume) without
// changing the learning-rate schedule, which always spans `epochs`.
inline SegTrainResult train_segmentation(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                                         const SegModelConfig& model_cfg, const SegTrainConfig& train_cfg,
                                         std::uint64_t seed, const SegTrainState* resume = nullptr,
                                         std::ostream* log = nullptr, int stop_after_epoch = -1,
                                         const std::string& image_root = {}) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_set.empty()) throw InvalidArgumentError("segmentation training set is empty");
    if (train_cfg.switch_epoch == 0 && log)
        *log << "warning: switch_epoch 0 skips the binary warm-up phase\n";

    const int W = model_cfg.input_width, H = model_cfg.input_height;

    // Materialize once; augmentation re-derives from these originals per epoch.
    std::vector<Sample> originals = train_set;
    for (auto& s : originals) load_sample_image(s, image_root);
    std::vector<NetSample> base_train;
    base_train.reserve(originals.size());
    for (const auto& s : originals) base_train.push_back(materialize_at_network(s, W, H));
    std::vector<NetSample> net_val;
    net_val.reserve(val_set.size());
    for (const auto& s : val_set) net_val.push_back(materialize_at_network(s, W, H, image_root));

    SegTrainResult result{SegModel(model_cfg, derive_seed(seed, "seg_model", 0)), {}, {}};
    SegModel& model = result.model;

    CurriculumState curriculum;
    curriculum.switch_epoch = train_cfg.switch_epoch;

    int start_epoch = 0;
    TrainPhase phase = curriculum_step(curriculum, 0).phase;
    auto head_seed = [&](TrainPhase p) {
        return derive_seed(seed, p == TrainPhase::binary ? "head_binary" : "head_instance", 0);
    };
    std::optional<nn::Adam> opt;
    auto rebuild_optimizer = [&] {
        nn::ParamSet params = model.parameters();
        opt.emplace(params);
    };

    if (resume) {
        start_epoch = resume->next_epoch;
        phase = resume->phase;
        // The stored phase belongs to the last epoch that actually ran, so a
        // stop exactly at the switch still resumes (the loop swaps the head).
        if (start_epoch > 0 && phase != curriculum_step(curriculum, start_epoch - 1).phase)
            throw CheckpointError("training state phase does not match the curriculum at epoch " +
                                  std::to_string(start_epoch));
        model.set_head_channels(phase == TrainPhase::binary ? 2 : kMaxInstances + 1, head_seed(phase));
        nn::unflatten_params(model.parameters(), resume->model_state);
        rebuild_optimizer();
        opt->set_state(resume->adam_m, resume->adam_v, resume->adam_t);
    } else {
        model.set_head_channels(phase == TrainPhase::binary ? 2 : kMaxInstances + 1, head_seed(phase));
        rebuild_optimizer();
    }

    // Best-validation tracking within the phase the run ends in.
    std::vector<float> best_snapshot;
    TrainPhase best_phase = phase;

    const std::uint64_t val_pair_seed = derive_seed(seed, "val_pairs", 0);

    auto batch_loss = [&](const std::vector<const NetSample*>& batch, TrainPhase p, bool train,
                          std::uint64_t pair_seed, nn::Tensor* dlogits) {
        std::vector<const Image*> images;
        std::vector<const InstanceMap*> maps;
        images.reserve(batch.size());
        maps.reserve(batch.size());
        for (const auto* ns : batch) {
            images.push_back(&ns->image);
            maps.push_back(&ns->instance_map);
        }
        SegOutput out = model.forward(images_to_input(images), train);
        if (p == TrainPhase::binary) return binary_phase_loss_grad(out.logits, maps, dlogits);
        return instance_pair_loss_grad(out.logits, maps, train_cfg.instance_loss, pair_seed, dlogits);
    };

    auto eval_split_loss = [&](const std::vector<NetSample>& split, TrainPhase p) {
        if (split.empty()) return std::numeric_limits<double>::quiet_NaN();
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
            const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
            std::vector<const NetSample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&split[i]);
            total += batch_loss(batch, p, false, derive_seed(val_pair_seed, "batch", static_cast<int>(batches)),
                                nullptr);
            ++batches;
        }
        return total / static_cast<double>(batches);
    };

    const int last_epoch = stop_after_epoch >= 0 ? std::min(stop_after_epoch, train_cfg.epochs) : train_cfg.epochs;
    for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
        const CurriculumState next = curriculum_step(curriculum, epoch);
        if (next.phase != phase) {
            phase = next.phase;
            model.set_head_channels(kMaxInstances + 1, head_seed(phase));
            rebuild_optimizer();  // the head changed shape; moments restart
        }
        model.begin_epoch(epoch);

        std::vector<std::size_t> order(base_train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(seed, "order", epoch));
        order_rng.shuffle(order);

        // Per-epoch augmented views.
        std::vector<NetSample> epoch_train;
        if (train_cfg.augment) {
            epoch_train.reserve(originals.size());
            Rng aug_rng(derive_seed(seed, "augment", epoch));
            for (const auto& s : originals) {
                Sample aug = s;
                apply_augmentation(aug, train_cfg.augment_config, aug_rng);
                epoch_train.push_back(materialize_at_network(aug, W, H));
            }
        }
        const std::vector<NetSample>& pool = train_cfg.augment ? epoch_train : base_train;

        const double lr = nn::poly_lr(train_cfg.learning_rate, epoch, train_cfg.epochs, train_cfg.poly_power);
        const std::uint64_t epoch_pair_seed = derive_seed(seed, "pairs", epoch);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
            std::vector<const NetSample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&pool[order[i]]);
            opt->zero_grad();
            nn::Tensor dlogits;
            const double loss =
                batch_loss(batch, phase, true, derive_seed(epoch_pair_seed, "batch", static_cast<int>(batches)),
                           &dlogits);
            if (!std::isfinite(loss))
                throw DivergenceError(std::string("loss diverged in the ") + detail::phase_name(phase) +
                                      " phase at epoch " + std::to_string(epoch));
            model.backward(dlogits);
            opt->step(lr);
            epoch_loss += loss;
            ++batches;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));

        const double val_loss = eval_split_loss(net_val, phase);
        if (!net_val.empty() && !std::isfinite(val_loss))
            throw DivergenceError(std::string("validation loss diverged in the ") + detail::phase_name(phase) +
                                  " phase at epoch " + std::to_string(epoch));

        result.report.train_losses.push_back(epoch_loss);
        result.report.val_losses.push_back(val_loss);
        result.report.phases.push_back(phase);
        if (log)
            *log << "epoch " << epoch << " phase " << detail::phase_name(phase) << " lr " << lr << " train_loss "
                 << epoch_loss << " val_loss " << val_loss << "\n";

        const double score = net_val.empty() ? epoch_loss : val_loss;
        if (phase != best_phase || score < result.report.best_val_loss) {
            // Entering a new phase resets the tracking: the final model must
            // come from the phase the run ends in.
            if (phase != best_phase) result.report.best_val_loss = std::numeric_limits<double>::infinity();
            best_phase = phase;
            if (score < result.report.best_val_loss) {
                result.report.best_val_loss = score;
                result.report.best_epoch = epoch;
                best_snapshot = nn::flatten_params(model.parameters());
            }
        }
    }

    // Final raw state (for resume), then restore the best snapshot.
    result.final_state.next_epoch = last_epoch;
    result.final_state.phase = phase;
    result.final_state.model_state = nn::flatten_params(model.parameters());
    opt->get_state(result.final_state.adam_m, result.final_state.adam_v);
    result.final_state.adam_t = opt->step_count();
    if (!best_snapshot.empty()) nn::unflatten_params(model.parameters(), best_snapshot);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint adapters
// ---------------------------------------------------------------------------

inline json seg_model_config_to_json(const SegModelConfig& cfg) {
    return {{"architecture", seg_arch_token(cfg.architecture)},
            {"input_width", cfg.input_width},
            {"input_height", cfg.input_height},
            {"width_multiplier", cfg.width_multiplier},
            {"channels", cfg.channels}};
}

inline SegModelConfig seg_model_config_from_json(const json& j) {
    SegModelConfig cfg;
    cfg.architecture = parse_seg_arch(j.at("architecture").get<std::string>());
    cfg.input_width = j.at("input_width").get<int>();
    cfg.input_height = j.at("input_height").get<int>();
    cfg.width_multiplier = j.at("width_multiplier").get<double>();
    cfg.channels = j.at("channels").get<int>();
    return cfg;
}

inline json cls_model_config_to_json(const ClsModelConfig& cfg) {
    return {{"descriptor_size", cfg.descriptor_size},
            {"outputs", cfg.outputs},
            {"conv_blocks", cfg.conv_blocks},
            {"fc_widths", cfg.fc_widths}};
}

inline ClsModelConfig cls_model_config_from_json(const json& j) {
    ClsModelConfig cfg;
    cfg.descriptor_size = j.at("descriptor_size").get<int>();
    cfg.outputs = j.at("outputs").get<int>();
    cfg.conv_blocks = j.at("conv_blocks").get<std::vector<int>>();
    cfg.fc_widths = j.at("fc_widths").get<std::vector<int>>();
    return cfg;
}

inline Checkpoint make_seg_checkpoint(SegModel& model, TrainPhase phase) {
    Checkpoint ckpt;
    ckpt.kind = "segmentation";
    ckpt.config = seg_model_config_to_json(model.config());
    ckpt.extra = {{"phase", detail::phase_name(phase)}, {"head_channels", model.head_channels()}};
    ckpt.blob = nn::flatten_params(model.parameters());
    return ckpt;
}

inline SegModel seg_model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "segmentation")
        throw CheckpointError("expected a segmentation checkpoint, found kind '" + ckpt.kind + "'");
    SegModelConfig cfg = seg_model_config_from_json(ckpt.config);
    SegModel model(cfg, 0);
    const int head_channels = ckpt.extra.at("head_channels").get<int>();
    if (head_channels != model.head_channels()) model.set_head_channels(head_channels, 0);
    apply_blob(model.parameters(), ckpt.blob, "segmentation checkpoint");
    return model;
}

inline Checkpoint make_seg_train_state_checkpoint(const SegModelConfig& cfg, const SegTrainState& state) {
    Checkpoint ckpt;
    ckpt.kind = "seg_train_state";
    ckpt.config = seg_model_config_to_json(cfg);
    ckpt.extra = {{"next_epoch", state.next_epoch},
                  {"phase", detail::phase_name(state.phase)},
                  {"adam_t", state.adam_t},
                  {"model_floats", state.model_state.size()},
                  {"adam_floats", state.adam_m.size()}};
    ckpt.blob = state.model_state;
    ckpt.blob.insert(ckpt.blob.end(), state.adam_m.begin(), state.adam_m.end());
    ckpt.blob.insert(ckpt.blob.end(), state.adam_v.begin(), state.adam_v.end());
    return ckpt;
}

inline SegTrainState seg_train_state_from_checkpoint(const Checkpoint& ckpt, const SegModelConfig& expected_cfg) {
    if (ckpt.kind != "seg_train_state")
        throw CheckpointError("expected a training-state checkpoint, found kind '" + ckpt.kind + "'");
    if (config_hash(ckpt.config) != config_hash(seg_model_config_to_json(expected_cfg)))
        throw CheckpointError("training state was produced under a different segmentation config");
    SegTrainState state;
    state.next_epoch = ckpt.extra.at("next_epoch").get<int>();
    const std::string phase = ckpt.extra.at("phase").get<std::string>();
    state.phase = phase == "binary" ? TrainPhase::binary : TrainPhase::instance;
    state.adam_t = ckpt.extra.at("adam_t").get<std::int64_t>();
    const auto model_floats = ckpt.extra.at("model_floats").get<std::size_t>();
    const auto adam_floats = ckpt.extra.at("adam_floats").get<std::size_t>();
    if (ckpt.blob.size() != model_floats + 2 * adam_floats)
        throw CheckpointError("training-state blob size does not match its metadata");
    auto it = ckpt.blob.begin();
    state.model_state.assign(it, it + static_cast<std::ptrdiff_t>(model_floats));
    it += static_cast<std::ptrdiff_t>(model_floats);
    state.adam_m.assign(it, it + static_cast<std::ptrdiff_t>(adam_floats));
    it += static_cast<std::ptrdiff_t>(adam_floats);
    state.adam_v.assign(it, ckpt.blob.end());
    return state;
}

inline Checkpoint make_cls_checkpoint(ClsModel& model, TaxonomyScheme scheme) {
    Checkpoint ckpt;
    ckpt.kind = "classifier";
    ckpt.config = cls_model_config_to_json(model.config());
    ckpt.extra = {{"scheme", scheme_token(scheme)}};
    ckpt.blob = nn::flatten_params(model.parameters());
    return ckpt;
}

inline ClsModel cls_model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "classifier")
        throw CheckpointError("expected a classifier checkpoint, found kind '" + ckpt.kind + "'");
    ClsModel model(cls_model_config_from_json(ckpt.config), 0);
    apply_blob(model.parameters(), ckpt.blob, "classifier checkpoint");
    return model;
}

// ---------------------------------------------------------------------------
// Classifier training data (stage-1 output -> {descriptor, class} pairs)
// ---------------------------------------------------------------------------

// Stage-1 results for one frame, cached so several descriptor sizes can be
// extracted without re-running the network.
struct DecodedFrame {
    Image net_image;
    std::vector<std::vector<Pixel>> boundary_pixels;
    std::vector<std::optional<ClassLabel>> associated;  // per boundary
    std::vector<int> predicted_outputs;                 // filled by evaluate
    std::string source_id;
};

inline std::vector<DecodedFrame> run_segmentation_stage(SegModel& seg, const std::vector<Sample>& samples,
                                                        int min_points, double assoc_threshold_px,
                                                        const std::string& image_root = {}) {
    const int W = seg.config().input_width, H = seg.config().input_height;
    std::vector<DecodedFrame> frames;
    frames.reserve(samples.size());
    for (const auto& sample : samples) {
        NetSample net = materialize_at_network(sample, W, H, image_root);
        SegOutput out = seg.forward(image_to_input(net.image), false);
        auto decoded = decode_instances(out, 0, min_points);
        DecodedFrame frame;
        frame.source_id = net.source_id;
        std::vector<std::pair<Polyline, ClassLabel>> gt;
        for (std::size_t i = 0; i < net.boundaries.size(); ++i) gt.emplace_back(net.boundaries[i], net.classes[i]);
        for (auto& inst : decoded) {
            frame.associated.push_back(associate_to_gt(inst.polyline, gt, assoc_threshold_px));
            frame.boundary_pixels.push_back(std::move(inst.pixels));
        }
        frame.net_image = std::move(net.image);
        frames.push_back(std::move(frame));
    }
    return frames;
}

inline std::vector<LabeledDescriptor> pairs_from_frames(const std::vector<DecodedFrame>& frames, int S,
                                                        TaxonomyScheme scheme) {
    std::vector<LabeledDescriptor> pairs;
    for (const auto& frame : frames) {
        for (std::size_t i = 0; i < frame.boundary_pixels.size(); ++i) {
            if (!frame.associated[i]) continue;
            const auto target = remap_class(*frame.associated[i], scheme);
            if (!target) continue;
            Descriptor d = extract_descriptor(frame.net_image, frame.boundary_pixels[i], S);
            d.source_id = frame.source_id;
            d.boundary_index = static_cast<int>(i);
            pairs.push_back({std::move(d), *target});
        }
    }
    return pairs;
}

// The full second-stage training op: run stage 1, associate, remap, train.
inline ClsTrainResult train_classification(SegModel& seg, const std::vector<Sample>& train_samples,
                                           const PipelineConfig& cfg, std::ostream* log = nullptr) {
    const auto frames = run_segmentation_stage(seg, train_samples, cfg.min_points,
                                               cfg.classifier.association_threshold_px, cfg.data.image_root);
    const auto pairs = pairs_from_frames(frames, cfg.descriptor_size, cfg.classifier.scheme);
    if (pairs.empty())
        throw EmptyAssociationError("no {descriptor, class} pairs survived association over " +
                                    std::to_string(train_samples.size()) + " images (threshold " +
                                    std::to_string(cfg.classifier.association_threshold_px) + " px)");
    if (log) *log << "classifier training pairs: " << pairs.size() << "\n";
    ClsTrainConfig tc;
    tc.epochs = cfg.classifier.epochs;
    tc.batch_size = cfg.classifier.batch_size;
    tc.val_fraction = cfg.classifier.val_fraction;
    tc.seed = derive_seed(cfg.seed, "cls_stage", 0);
    return train_classifier(pairs, make_cls_model_config(cfg), tc);
}

// ---------------------------------------------------------------------------
// Cascade inference
// ---------------------------------------------------------------------------

struct ClassifiedBoundary {
    Polyline polyline;
    std::vector<Pixel> pixels;
    int output_index = 0;
    double confidence = 0.0;
};

struct CascadeResult {
    std::vector<ClassifiedBoundary> boundaries;
    double seg_ms = 0.0;
    double descriptor_ms = 0.0;
    double cls_ms = 0.0;
};

// Both stages loaded and compatibility-checked once; then one segmentation
// forward and at most one classifier forward per frame.
class CascadePipeline {
public:
    CascadePipeline(const Checkpoint& seg_ckpt, const Checkpoint& cls_ckpt, int min_points = 3,
                    int expected_descriptor_size = 0)
        : seg_(seg_model_from_checkpoint(seg_ckpt)), cls_(cls_model_from_checkpoint(cls_ckpt)),
          min_points_(min_points) {
        if (seg_ckpt.extra.at("phase").get<std::string>() != "instance")
            throw CheckpointError("segmentation checkpoint is from the binary phase; it cannot decode instances");
        if (seg_.head_channels() != kMaxInstances + 1)
            throw CheckpointError("segmentation checkpoint head does not have " +
                                  std::to_string(kMaxInstances + 1) + " channels");
        scheme_ = parse_scheme(cls_ckpt.extra.at("scheme").get<std::string>());
        if (expected_descriptor_size > 0 && cls_.config().descriptor_size != expected_descriptor_size)
            throw CheckpointError("classifier checkpoint descriptor size " +
                                  std::to_string(cls_.config().descriptor_size) +
                                  " does not match the configured size " + std::to_string(expected_descriptor_size));
    }

    CascadeResult run(const Image& image) {
        using clock = std::chrono::steady_clock;
        const auto ms_since = [](clock::time_point a, clock::time_point b) {
            // Clamp to a nanosecond so a stage never reports a zero duration.
            return std::max(std::chrono::duration<double, std::milli>(b - a).count(), 1e-6);
        };
        CascadeResult result;
        const auto t0 = clock::now();
        const Image net_image = resize_bilinear(image, seg_.config().input_width, seg_.config().input_height);
        SegOutput out = seg_.forward(image_to_input(net_image), false);
        const auto t1 = clock::now();
        auto decoded = decode_instances(out, 0, min_points_);
        std::vector<std::vector<Pixel>> pixel_lists;
        for (const auto& inst : decoded) pixel_lists.push_back(inst.pixels);
        auto descriptors = batch_descriptors(net_image, pixel_lists, cls_.config().descriptor_size);
        const auto t2 = clock::now();
        const auto labels = classify(cls_, descriptors);
        const auto t3 = clock::now();
        for (std::size_t i = 0; i < decoded.size(); ++i)
            result.boundaries.push_back({std::move(decoded[i].polyline), std::move(decoded[i].pixels),
                                         labels[i].output_index, labels[i].confidence});
        result.seg_ms = ms_since(t0, t1);
        result.descriptor_ms = ms_since(t1, t2);
        result.cls_ms = ms_since(t2, t3);
        return result;
    }

    SegModel& seg() { return seg_; }
    ClsModel& cls() { return cls_; }
    TaxonomyScheme scheme() const { return scheme_; }
    int min_points() const { return min_points_; }

private:
    SegModel seg_;
    ClsModel cls_;
    int min_points_;
    TaxonomyScheme scheme_ = TaxonomyScheme::two_class;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalArtifacts {
    MetricsReport report;
    std::optional<double> classification_accuracy;
};

inline EvalArtifacts evaluate_dataset(CascadePipeline& pipeline, const std::vector<Sample>& samples,
                                      const PipelineConfig& cfg) {
    if (samples.empty()) throw UndefinedMetricError("evaluate: dataset is empty (0 images)");
    const int W = pipeline.seg().config().input_width, H = pipeline.seg().config().input_height;
    EvalArtifacts artifacts;
    artifacts.report.config = make_metrics_echo(cfg);
    std::vector<int> cls_preds;
    std::vector<ClassLabel> cls_labels;
    for (const auto& sample : samples) {
        NetSample net = materialize_at_network(sample, W, H, cfg.data.image_root);
        CascadeResult result = pipeline.run(net.image);

        std::vector<Polyline> pred, gt;
        for (const auto& b : result.boundaries) pred.push_back(b.polyline);
        if (cfg.rescale_to_native && net.native_width > 0) {
            for (auto& p : pred) p = polyline_to_resolution(p, W, H, net.native_width, net.native_height);
            gt = sample.boundaries;  // gt stays at native resolution
        } else {
            gt = net.boundaries;
        }
        const LaneMatchResult match = match_lanes(pred, gt, cfg.metrics);
        artifacts.report.per_image.push_back(match.counts);
        artifacts.report.totals.merge(match.counts);

        // Classification accuracy over boundaries that associate to a gt lane.
        std::vector<std::pair<Polyline, ClassLabel>> gt_pairs;
        for (std::size_t i = 0; i < net.boundaries.size(); ++i)
            gt_pairs.emplace_back(net.boundaries[i], net.classes[i]);
        for (const auto& b : result.boundaries) {
            const auto assoc = associate_to_gt(b.polyline, gt_pairs, cfg.classifier.association_threshold_px);
            if (!assoc) continue;
            cls_preds.push_back(b.output_index);
            cls_labels.push_back(*assoc);
        }
    }
    try {
        artifacts.report.accuracy = accuracy(artifacts.report.totals);
        artifacts.report.fp_rate = fp_rate(artifacts.report.totals);
        artifacts.report.fn_rate = fn_rate(artifacts.report.totals);
    } catch (const UndefinedMetricError& e) {
        throw UndefinedMetricError(std::string(e.what()) + " (dataset: " + std::to_string(samples.size()) +
                                   " images, " + std::to_string(artifacts.report.totals.gt_lanes) + " gt lanes, " +
                                   std::to_string(artifacts.report.totals.predicted_lanes) + " predicted lanes)");
    }
    if (!cls_labels.empty()) {
        try {
            artifacts.classification_accuracy =
                classification_accuracy(cls_preds, cls_labels, pipeline.scheme());
        } catch (const UndefinedMetricError&) {
            // every associated label remaps to ignore — no accuracy to report
        }
    }
    return artifacts;
}

// ---------------------------------------------------------------------------
// Overlay rendering
// ---------------------------------------------------------------------------

// Class palette: continuous boundaries draw red, dashed green, double-dashed
// yellow. The full taxonomy extends this (documented in the README): the four
// continuous labels use red/crimson/orange/gold, dashed green, double-dashed
// yellow, botts dots cyan, unknown gray.
inline std::array<std::uint8_t, 3> overlay_color(TaxonomyScheme scheme, int output_index) {
    if (scheme == TaxonomyScheme::full) {
        static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette = {{{230, 40, 40},
                                                                                {160, 20, 60},
                                                                                {240, 150, 30},
                                                                                {200, 160, 10},
                                                                                {50, 200, 70},
                                                                                {245, 220, 50},
                                                                                {60, 200, 220},
                                                                                {160, 160, 160}}};
        if (output_index < 0 || output_index >= static_cast<int>(palette.size()))
            throw InvalidArgumentError("overlay: output index out of range");
        return palette[static_cast<std::size_t>(output_index)];
    }
    switch (output_index) {
        case 0: return {230, 40, 40};   // continuous -> red
        case 1: return {50, 200, 70};   // dashed -> green
        case 2: return {245, 220, 50};  // double-dashed -> yellow
        default: throw InvalidArgumentError("overlay: output index out of range");
    }
}

// Instance mode ignores classes and colors by boundary order.
inline std::array<std::uint8_t, 3> instance_color(int instance_index) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 4> palette = {
        {{60, 90, 230}, {250, 150, 40}, {160, 70, 200}, {60, 200, 220}}};
    return palette[static_cast<std::size_t>(instance_index % 4)];
}

namespace detail {

inline void paint_dot(Image& image, int x, int y, const std::array<std::uint8_t, 3>& color) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            if (image.in_bounds(x + dx, y + dy)) image.set_pixel(x + dx, y + dy, color[0], color[1], color[2]);
}

inline void draw_polyline(Image& image, const Polyline& poly, const std::array<std::uint8_t, 3>& color) {
    const auto pts = poly.points();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        paint_dot(image, static_cast<int>(std::lround(pts[i].second)), pts[i].first, color);
        if (i + 1 < pts.size()) {
            const int r0 = pts[i].first, r1 = pts[i + 1].first;
            for (int r = r0 + 1; r < r1; ++r) {
                const double t = static_cast<double>(r - r0) / (r1 - r0);
                const double x = pts[i].second + t * (pts[i + 1].second - pts[i].second);
                paint_dot(image, static_cast<int>(std::lround(x)), r, color);
            }
        }
    }
}

}  // namespace detail

inline Image render_overlay(const Image& image, const CascadeResult& result, TaxonomyScheme scheme,
                            bool by_instance = false) {
    Image out = image;
    for (std::size_t i = 0; i < result.boundaries.size(); ++i) {
        const auto& b = result.boundaries[i];
        const auto color =
            by_instance ? instance_color(static_cast<int>(i)) : overlay_color(scheme, b.output_index);
        detail::draw_polyline(out, b.polyline, color);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Descriptor-size ablation harness
// ---------------------------------------------------------------------------

// Trains one classifier per (size, scheme) cell over the same cached stage-1
// output; a failing cell records its error and the rest continue. Each cell is
// independently seeded from the root seed, so re-running any one cell is
// reproducible in isolation.
inline std::vector<AblationCell> ablate_descriptor_sizes(SegModel& seg, const std::vector<Sample>& train_samples,
                                                         const std::vector<Sample>& eval_samples,
                                                         const PipelineConfig& cfg,
                                                         const std::vector<int>& sizes,
                                                         const std::vector<TaxonomyScheme>& schemes,
                                                         std::ostream* log = nullptr) {
    const auto train_frames = run_segmentation_stage(seg, train_samples, cfg.min_points,
                                                     cfg.classifier.association_threshold_px, cfg.data.image_root);
    const auto eval_frames = run_segmentation_stage(seg, eval_samples, cfg.min_points,
                                                    cfg.classifier.association_threshold_px, cfg.data.image_root);
    std::vector<AblationCell> cells;
    for (const int size : sizes)
        for (const TaxonomyScheme scheme : schemes) {
            AblationCell cell;
            cell.size = size;
            cell.scheme = scheme;
            try {
                const auto train_pairs = pairs_from_frames(train_frames, size, scheme);
                const auto eval_pairs = pairs_from_frames(eval_frames, size, scheme);
                if (train_pairs.empty()) throw EmptyAssociationError("no training pairs for this cell");
                if (eval_pairs.empty()) throw EmptyAssociationError("no evaluation pairs for this cell");
                ClsModelConfig mc = make_cls_model_config(cfg);
                mc.descriptor_size = size;
                mc.outputs = num_outputs(scheme);
                ClsTrainConfig tc;
                tc.epochs = cfg.classifier.epochs;
                tc.batch_size = cfg.classifier.batch_size;
                tc.val_fraction = cfg.classifier.val_fraction;
                tc.seed = derive_seed(cfg.seed, "ablate_" + std::to_string(size) + "_" + scheme_token(scheme), 0);
                ClsTrainResult trained = train_classifier(train_pairs, mc, tc);
                cell.accuracy = eval_classifier_accuracy(trained.model, eval_pairs);
            } catch (const Error& e) {
                cell.error = e.what();
            }
            if (log) {
                *log << "ablation size=" << cell.size << " scheme=" << scheme_token(cell.scheme) << " ";
                if (cell.accuracy)
                    *log << "accuracy=" << *cell.accuracy << "\n";
                else
                    *log << "error=" << cell.error << "\n";
            }
            cells.push_back(std::move(cell));
        }
    return cells;
}

// ---------------------------------------------------------------------------
// Synthetic dataset plumbing
// ---------------------------------------------------------------------------

struct PreparedData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> eval;
};

// Synthetic scenes are generated at the network resolution; real datasets are
// split train/val by the configured fraction.
inline PreparedData prepare_data(const PipelineConfig& cfg) {
    PreparedData data;
    if (cfg.data.use_synthetic) {
        SceneSpec proto = cfg.data.scene;
        proto.width = cfg.segmentation.input_width;
        proto.height = cfg.segmentation.input_height;
        const int val_count =
            std::max(1, static_cast<int>(std::lround(cfg.data.synthetic_count * cfg.seg_train.val_fraction)));
        data.train = make_scene_corpus(proto, cfg.data.synthetic_count, derive_seed(cfg.seed, "corpus_train", 0));
        data.val = make_scene_corpus(proto, val_count, derive_seed(cfg.seed, "corpus_val", 0));
        data.eval = make_scene_corpus(proto, cfg.data.synthetic_eval_count, derive_seed(cfg.seed, "corpus_eval", 0));
        return data;
    }
    if (cfg.data.train_json.empty()) throw ConfigError("data.train_json is required when use_synthetic is false");
    std::vector<Sample> all = parse_tusimple_file(cfg.data.train_json);
    if (!cfg.data.class_annotations.empty())
        apply_class_annotations(all, load_class_annotations(cfg.data.class_annotations));
    DatasetSplit split =
        split_dataset(all, {1.0 - cfg.seg_train.val_fraction, cfg.seg_train.val_fraction, 0.0},
                      derive_seed(cfg.seed, "split", 0));
    data.train = std::move(split.train);
    data.val = std::move(split.val);
    if (!cfg.data.eval_json.empty()) {
        data.eval = parse_tusimple_file(cfg.data.eval_json);
        if (!cfg.data.class_annotations.empty())
            apply_class_annotations(data.eval, load_class_annotations(cfg.data.class_annotations));
    }
    return data;
}

// Writes a generated corpus as a TuSimple-style dataset: images/, labels.jsonl
// (one record per frame), classes.jsonl (per-boundary class sidecar).
inline void write_dataset(std::vector<Sample> samples, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream labels(dir / "labels.jsonl");
    std::ofstream classes(dir / "classes.jsonl");
    if (!labels || !classes) throw Error("cannot write dataset files under " + dir.string());
    for (auto& sample : samples) {
        const std::string rel = "images/" + sanitize_source_id(sample.source_id) + ".png";
        save_image(sample.image, (dir / rel).string());
        sample.source_id = rel;
        sample.image_path = rel;
        labels << serialize_tusimple_line(sample) << "\n";
        json cj;
        cj["raw_file"] = rel;
        std::vector<std::string> tokens;
        for (const auto label : sample.classes) tokens.emplace_back(class_token(label));
        cj["classes"] = tokens;
        classes << cj.dump() << "\n";
    }
}

}  // namespace lanecascade
