#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lanecascade/descriptor.hpp"
#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/nn/adam.hpp"
#include "lanecascade/nn/layers.hpp"
#include "lanecascade/rng.hpp"
#include "lanecascade/taxonomy.hpp"

namespace lanecascade {

enum class TaxonomyScheme { two_class, three_class, full };

inline std::string scheme_token(TaxonomyScheme scheme) {
    switch (scheme) {
        case TaxonomyScheme::two_class: return "two_class";
        case TaxonomyScheme::three_class: return "three_class";
        default: return "full";
    }
}

inline TaxonomyScheme parse_scheme(const std::string& token) {
    if (token == "two_class") return TaxonomyScheme::two_class;
    if (token == "three_class") return TaxonomyScheme::three_class;
    if (token == "full") return TaxonomyScheme::full;
    throw ConfigError("unknown taxonomy scheme '" + token + "' (valid: two_class, three_class, full)");
}

inline int num_outputs(TaxonomyScheme scheme) {
    switch (scheme) {
        case TaxonomyScheme::two_class: return 2;
        case TaxonomyScheme::three_class: return 3;
        default: return kNumClasses;
    }
}

// Collapses the 8-label taxonomy to the scheme's output indices; nullopt means
// the label is excluded from training and scoring.
inline std::optional<int> remap_class(ClassLabel label, TaxonomyScheme scheme) {
    if (scheme == TaxonomyScheme::full) return static_cast<int>(label);
    switch (label) {
        case ClassLabel::single_white_continuous:
        case ClassLabel::double_white_continuous:
        case ClassLabel::single_yellow_continuous:
        case ClassLabel::double_yellow_continuous:
            return 0;  // continuous
        case ClassLabel::dashed:
        case ClassLabel::botts_dots:
            return 1;  // dashed
        case ClassLabel::double_dashed:
            return scheme == TaxonomyScheme::three_class ? 2 : 1;
        case ClassLabel::unknown:
        default:
            return std::nullopt;
    }
}

inline std::string output_class_name(TaxonomyScheme scheme, int output_index) {
    if (scheme == TaxonomyScheme::full) return class_token(static_cast<ClassLabel>(output_index));
    switch (output_index) {
        case 0: return "continuous";
        case 1: return "dashed";
        case 2: return "double_dashed";
        default: throw InvalidArgumentError("output index out of range for scheme " + scheme_token(scheme));
    }
}

// Nearest ground-truth boundary by average row-wise distance, accepted only
// under the threshold; ties resolve to the lower gt index. Filters the first
// stage's false positives out of classifier training.
inline std::optional<ClassLabel> associate_to_gt(const Polyline& detected,
                                                 const std::vector<std::pair<Polyline, ClassLabel>>& gt,
                                                 double threshold_px) {
    if (threshold_px <= 0.0) throw InvalidArgumentError("association threshold must be positive");
    std::optional<ClassLabel> best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& [line, label] : gt) {
        const auto dist = average_distance(detected, line);
        if (dist && *dist < best_dist) {
            best_dist = *dist;
            best = label;
        }
    }
    if (best && best_dist < threshold_px) return best;
    return std::nullopt;
}

struct ClsModelConfig {
    int descriptor_size = 32;
    int outputs = 2;
    std::vector<int> conv_blocks = {16, 32, 64, 128};
    std::vector<int> fc_widths = {64};

    void validate() const {
        if (outputs < 2) throw ConfigError("classifier needs at least 2 outputs");
        if (descriptor_size <= 0) throw ConfigError("descriptor size must be positive");
        if (conv_blocks.empty()) throw ConfigError("classifier needs at least one conv block");
        const int factor = 1 << conv_blocks.size();
        if (descriptor_size % factor)
            throw ConfigError("descriptor size " + std::to_string(descriptor_size) + " not divisible by 2^" +
                              std::to_string(conv_blocks.size()) + " conv-block downsamples");
    }
};

inline nn::Tensor descriptors_to_input(const std::vector<Descriptor>& batch) {
    if (batch.empty()) throw InvalidArgumentError("descriptors_to_input: empty batch");
    const int S = batch[0].size;
    nn::Tensor x({static_cast<int>(batch.size()), 3, S, S});
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].size != S) throw InvalidArgumentError("mixed descriptor sizes in batch");
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < S; ++h)
                for (int w = 0; w < S; ++w)
                    x.at(static_cast<int>(n), c, h, w) = static_cast<float>(batch[n].pixels.at(w, h, c)) / 255.0f;
    }
    return x;
}

// Compact conv-block classifier: each block is conv3x3 + BN + ReLU + 2x pool,
// then global average pooling and fully connected layers to the logits.
class ClsModel {
public:
    ClsModel(const ClsModelConfig& config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        int in_ch = 3;
        for (int out_ch : cfg_.conv_blocks) {
            net_.emplace<nn::Conv2d>(in_ch, out_ch, 3, 3, 1, 1, 1);
            net_.emplace<nn::BatchNorm2d>(out_ch);
            net_.emplace<nn::ReLU>();
            net_.emplace<nn::MaxPool2d>();
            in_ch = out_ch;
        }
        net_.emplace<nn::GlobalAvgPool>();
        int in_dim = in_ch;
        for (int width : cfg_.fc_widths) {
            net_.emplace<nn::Linear>(in_dim, width);
            net_.emplace<nn::ReLU>();
            in_dim = width;
        }
        net_.emplace<nn::Linear>(in_dim, cfg_.outputs);
        Rng rng(derive_seed(seed, "classifier", 0));
        net_.init_params(rng);
    }

    nn::Tensor forward(const nn::Tensor& x, bool train) {
        if (x.shape.size() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.descriptor_size ||
            x.dim(3) != cfg_.descriptor_size)
            throw InvalidArgumentError("classifier forward: expected (N,3," + std::to_string(cfg_.descriptor_size) +
                                       "," + std::to_string(cfg_.descriptor_size) + "), got " + x.shape_str());
        ++forward_count_;
        return net_.forward(x, train);
    }

    nn::Tensor backward(const nn::Tensor& dy) { return net_.backward(dy); }

    nn::ParamSet parameters() {
        nn::ParamSet set;
        net_.collect(set);
        return set;
    }

    std::int64_t param_count() { return parameters().param_count(); }
    std::int64_t forward_count() const { return forward_count_; }
    const ClsModelConfig& config() const { return cfg_; }

private:
    ClsModelConfig cfg_;
    nn::Sequential net_;
    std::int64_t forward_count_ = 0;
};

// Softmax per row of (N, K) logits.
inline nn::Tensor softmax_rows(const nn::Tensor& logits) {
    const int N = logits.dim(0), K = logits.dim(1);
    nn::Tensor probs(logits.shape);
    for (int n = 0; n < N; ++n) {
        float mx = logits.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k));
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            const double e = std::exp(static_cast<double>(logits.at(n, k)) - mx);
            probs.at(n, k) = static_cast<float>(e);
            sum += e;
        }
        for (int k = 0; k < K; ++k) probs.at(n, k) = static_cast<float>(probs.at(n, k) / sum);
    }
    return probs;
}

struct Classification {
    int output_index = 0;
    double confidence = 0.0;
};

// One forward pass over the whole batch; an empty batch costs no inference.
inline std::vector<Classification> classify(ClsModel& model, const std::vector<Descriptor>& batch) {
    if (batch.empty()) return {};
    for (const auto& d : batch)
        if (d.size != model.config().descriptor_size)
            throw InvalidArgumentError("descriptor size " + std::to_string(d.size) + " does not match classifier size " +
                                       std::to_string(model.config().descriptor_size));
    const nn::Tensor probs = softmax_rows(model.forward(descriptors_to_input(batch), false));
    std::vector<Classification> out(batch.size());
    const int K = probs.dim(1);
    for (int n = 0; n < probs.dim(0); ++n) {
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (probs.at(n, k) > probs.at(n, best)) best = k;
        out[static_cast<std::size_t>(n)] = {best, static_cast<double>(probs.at(n, best))};
    }
    return out;
}

struct LabeledDescriptor {
    Descriptor descriptor;
    int label = 0;
};

struct ClsTrainConfig {
    double learning_rate = 5e-4;
    double poly_power = 0.9;
    int epochs = 30;
    int batch_size = 32;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct ClsTrainReport {
    std::vector<double> epoch_losses;
    double best_val_accuracy = 0.0;
    int best_epoch = -1;
    std::vector<double> class_weights;
};

namespace detail {

// Weighted softmax cross entropy over a batch; returns loss, fills dlogits.
inline double weighted_ce_grad(const nn::Tensor& logits, const std::vector<int>& labels,
                               const std::vector<double>& class_weights, nn::Tensor* dlogits) {
    const int N = logits.dim(0), K = logits.dim(1);
    if (dlogits) *dlogits = nn::Tensor(logits.shape);
    double weight_sum = 0.0;
    for (int n = 0; n < N; ++n) weight_sum += class_weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
    double loss = 0.0;
    std::vector<double> lp(static_cast<std::size_t>(K));
    for (int n = 0; n < N; ++n) {
        double mx = logits.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(n, k)));
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(logits.at(n, k) - mx);
        const double lse = mx + std::log(sum);
        const int y = labels[static_cast<std::size_t>(n)];
        const double w = class_weights[static_cast<std::size_t>(y)] / weight_sum;
        loss += w * (lse - logits.at(n, y));
        if (dlogits)
            for (int k = 0; k < K; ++k) {
                const double p = std::exp(logits.at(n, k) - lse);
                dlogits->at(n, k) = static_cast<float>(w * (p - (k == y ? 1.0 : 0.0)));
            }
    }
    return loss;
}

}  // namespace detail

// Evaluation accuracy of a frozen model on labeled descriptors.
inline double eval_classifier_accuracy(ClsModel& model, const std::vector<LabeledDescriptor>& set) {
    if (set.empty()) throw UndefinedMetricError("classification accuracy undefined on an empty set");
    std::vector<Descriptor> batch;
    batch.reserve(set.size());
    for (const auto& ex : set) batch.push_back(ex.descriptor);
    const auto preds = classify(model, batch);
    int correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (preds[i].output_index == set[i].label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

struct ClsTrainResult {
    ClsModel model;
    ClsTrainReport report;
};

// Cross-entropy training with the segmentation stage's optimizer settings;
// returns the epoch snapshot with the best validation accuracy.
inline ClsTrainResult train_classifier(std::vector<LabeledDescriptor> pairs, const ClsModelConfig& config,
                                       const ClsTrainConfig& train_cfg) {
    config.validate();
    if (pairs.empty()) throw InvalidArgumentError("classifier training set is empty");
    if (train_cfg.epochs < 1) throw InvalidArgumentError("epochs must be >= 1");
    for (const auto& ex : pairs)
        if (ex.label < 0 || ex.label >= config.outputs)
            throw InvalidArgumentError("label " + std::to_string(ex.label) + " outside [0, " +
                                       std::to_string(config.outputs) + ")");

    Rng rng(derive_seed(train_cfg.seed, "cls_train", 0));
    rng.shuffle(pairs);
    std::size_t val_count = static_cast<std::size_t>(std::llround(pairs.size() * train_cfg.val_fraction));
    val_count = std::min(val_count, pairs.size() - 1);
    if (val_count == 0 && pairs.size() > 1) val_count = 1;
    std::vector<LabeledDescriptor> val_set(pairs.end() - static_cast<std::ptrdiff_t>(val_count), pairs.end());
    pairs.resize(pairs.size() - val_count);

    // Inverse-frequency weights; classes absent from the training set get a
    // warning and the weighting keeps the rest balanced.
    std::vector<std::int64_t> counts(static_cast<std::size_t>(config.outputs), 0);
    for (const auto& ex : pairs) ++counts[static_cast<std::size_t>(ex.label)];
    std::vector<double> weights(static_cast<std::size_t>(config.outputs), 1.0);
    for (int k = 0; k < config.outputs; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0)
            std::cerr << "warning: class " << k << " has zero training examples; applying class weighting\n";
        weights[static_cast<std::size_t>(k)] =
            static_cast<double>(pairs.size()) /
            (static_cast<double>(config.outputs) * std::max<std::int64_t>(counts[static_cast<std::size_t>(k)], 1));
    }

    ClsTrainResult result{ClsModel(config, derive_seed(train_cfg.seed, "cls_init", 0)), {}};
    result.report.class_weights = weights;
    ClsModel& model = result.model;
    nn::ParamSet params = model.parameters();
    nn::Adam opt(params);

    std::vector<float> best_snapshot = nn::flatten_params(params);
    double best_acc = -1.0;

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = nn::poly_lr(train_cfg.learning_rate, epoch, train_cfg.epochs, train_cfg.poly_power);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
            std::vector<Descriptor> batch;
            std::vector<int> labels;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(pairs[order[i]].descriptor);
                labels.push_back(pairs[order[i]].label);
            }
            opt.zero_grad();
            nn::Tensor logits = model.forward(descriptors_to_input(batch), true);
            nn::Tensor dlogits;
            epoch_loss += detail::weighted_ce_grad(logits, labels, weights, &dlogits);
            model.backward(dlogits);
            opt.step(lr);
            ++batches;
        }
        result.report.epoch_losses.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
        const double acc = val_set.empty() ? 0.0 : eval_classifier_accuracy(model, val_set);
        if (acc > best_acc) {
            best_acc = acc;
            best_snapshot = nn::flatten_params(params);
            result.report.best_epoch = epoch;
        }
    }
    nn::unflatten_params(params, best_snapshot);
    result.report.best_val_accuracy = std::max(best_acc, 0.0);
    return result;
}

}  // namespace lanecascade
