#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lanecascade/errors.hpp"
#include "lanecascade/geometry.hpp"
#include "lanecascade/image.hpp"
#include "lanecascade/nn/adam.hpp"
#include "lanecascade/nn/layers.hpp"
#include "lanecascade/rng.hpp"

namespace lanecascade {

enum class SegArch { erfnet_like, mini };

inline std::string seg_arch_token(SegArch arch) { return arch == SegArch::erfnet_like ? "erfnet_like" : "mini"; }

inline SegArch parse_seg_arch(const std::string& token) {
    if (token == "erfnet_like") return SegArch::erfnet_like;
    if (token == "mini") return SegArch::mini;
    throw ConfigError("unknown architecture '" + token + "' (valid: erfnet_like, mini)");
}

struct SegModelConfig {
    int input_width = 512;
    int input_height = 256;
    int channels = kMaxInstances + 1;
    double width_multiplier = 1.0;
    SegArch architecture = SegArch::erfnet_like;

    void validate() const {
        if (channels != kMaxInstances + 1)
            throw ConfigError("segmentation channels must be " + std::to_string(kMaxInstances + 1));
        if (width_multiplier <= 0.0) throw ConfigError("width_multiplier must be positive");
        if (input_width < 16 || input_height < 16) throw ConfigError("input size too small");
        // Both architectures downsample 3x by factor 2 (the mini decoder restores
        // a 4th); input dims must survive the halvings exactly.
        const int div = architecture == SegArch::mini ? 16 : 8;
        if (input_width % div || input_height % div)
            throw ConfigError("input size must be divisible by " + std::to_string(div) + " for " +
                              seg_arch_token(architecture));
    }
};

struct SegOutput {
    nn::Tensor logits;         // (N, C, H, W)
    nn::Tensor probabilities;  // per-pixel softmax over channels
};

// Numerically stable per-pixel softmax over the channel dimension.
inline nn::Tensor softmax_channels(const nn::Tensor& logits) {
    const int N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    nn::Tensor probs(logits.shape);
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                float mx = logits.at(n, 0, h, w);
                for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(n, c, h, w));
                double sum = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double e = std::exp(static_cast<double>(logits.at(n, c, h, w)) - mx);
                    probs.at(n, c, h, w) = static_cast<float>(e);
                    sum += e;
                }
                const float inv = static_cast<float>(1.0 / sum);
                for (int c = 0; c < C; ++c) probs.at(n, c, h, w) *= inv;
            }
    return probs;
}

// Scales images to [0,1] floats, NCHW.
inline nn::Tensor images_to_input(const std::vector<const Image*>& images) {
    if (images.empty()) throw InvalidArgumentError("images_to_input: empty batch");
    const int H = images[0]->height, W = images[0]->width;
    nn::Tensor x({static_cast<int>(images.size()), 3, H, W});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.width != W || img.height != H)
            throw InvalidArgumentError("images_to_input: mixed image sizes in batch");
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    x.at(static_cast<int>(n), c, h, w) = static_cast<float>(img.at(w, h, c)) / 255.0f;
    }
    return x;
}

inline nn::Tensor image_to_input(const Image& image) { return images_to_input({&image}); }

// Encoder-decoder with a swappable classification head. The backbone survives
// head swaps, which is how the binary warm-up phase hands its features to the
// instance phase.
class SegModel {
public:
    SegModel(const SegModelConfig& config, std::uint64_t seed) : cfg_(config), seed_(seed) {
        cfg_.validate();
        feat_channels_ = scale_ch(16);
        build_backbone();
        Rng rng(derive_seed(seed_, "backbone", 0));
        backbone_.init_params(rng);
        set_head_channels(cfg_.channels, derive_seed(seed_, "head", cfg_.channels));
    }

    // Replaces the head with a freshly initialized one; backbone weights persist.
    void set_head_channels(int channels, std::uint64_t head_seed) {
        if (channels < 1) throw InvalidArgumentError("head channels must be >= 1");
        head_channels_ = channels;
        if (cfg_.architecture == SegArch::erfnet_like) {
            // The final upsampling deconvolution doubles H/2 -> H and emits logits.
            head_ = std::make_unique<nn::ConvTranspose2d>(feat_channels_, channels, 2, 2, 0, 0);
        } else {
            head_ = std::make_unique<nn::Conv2d>(feat_channels_, channels, 3, 3, 1, 1, 1);
        }
        Rng rng(head_seed);
        head_->init_params(rng);
        if (channels == kMaxInstances + 1) {
            // The pairwise clustering loss is channel-permutation symmetric, so
            // nothing else ties the background cluster to channel 0 — the slot
            // decoding treats as background. A positive channel-0 bias puts the
            // majority (background) basin there from the first step.
            nn::ParamSet head_params;
            head_->collect(head_params);
            (*head_params.params[1].value)[0] = 1.0f;
        }
    }

    // Re-derives per-epoch randomness (dropout streams) from the epoch index.
    void begin_epoch(int epoch) { backbone_.reseed(derive_seed(seed_, "epoch", epoch)); }

    SegOutput forward(const nn::Tensor& images, bool train) {
        if (images.shape.size() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.input_height ||
            images.dim(3) != cfg_.input_width)
            throw InvalidArgumentError("segmentation forward: expected (N,3," + std::to_string(cfg_.input_height) +
                                       "," + std::to_string(cfg_.input_width) + "), got " + images.shape_str());
        ++forward_count_;
        nn::Tensor h = backbone_.forward(images, train);
        SegOutput out;
        out.logits = head_->forward(h, train);
        out.probabilities = softmax_channels(out.logits);
        return out;
    }

    nn::Tensor backward(const nn::Tensor& dlogits) { return backbone_.backward(head_->backward(dlogits)); }

    nn::ParamSet parameters() {
        nn::ParamSet set;
        backbone_.collect(set);
        head_->collect(set);
        return set;
    }

    std::int64_t param_count() { return parameters().param_count(); }
    std::int64_t forward_count() const { return forward_count_; }
    int head_channels() const { return head_channels_; }
    const SegModelConfig& config() const { return cfg_; }

private:
    int scale_ch(int base) const {
        return std::max(1, static_cast<int>(std::lround(base * cfg_.width_multiplier)));
    }

    void build_backbone() {
        using namespace nn;
        std::uint64_t drop_idx = 0;
        auto drop_seed = [&] { return derive_seed(seed_, "dropout", drop_idx++); };
        if (cfg_.architecture == SegArch::erfnet_like) {
            const int c16 = scale_ch(16), c64 = scale_ch(64), c128 = scale_ch(128);
            backbone_.emplace<DownsamplerBlock>(3, c16);
            backbone_.emplace<DownsamplerBlock>(c16, c64);
            for (int i = 0; i < 5; ++i) backbone_.emplace<NonBottleneck1d>(c64, 0.03, 1, drop_seed());
            backbone_.emplace<DownsamplerBlock>(c64, c128);
            for (int rep = 0; rep < 2; ++rep)
                for (int dil : {2, 4, 8, 16}) backbone_.emplace<NonBottleneck1d>(c128, 0.3, dil, drop_seed());
            backbone_.emplace<UpsamplerBlock>(c128, c64);
            backbone_.emplace<NonBottleneck1d>(c64, 0.0, 1, drop_seed());
            backbone_.emplace<NonBottleneck1d>(c64, 0.0, 1, drop_seed());
            backbone_.emplace<UpsamplerBlock>(c64, c16);
            backbone_.emplace<NonBottleneck1d>(c16, 0.0, 1, drop_seed());
            backbone_.emplace<NonBottleneck1d>(c16, 0.0, 1, drop_seed());
            // feat: (N, c16, H/2, W/2); the deconvolution head restores full size.
        } else {
            const int c16 = scale_ch(16), c32 = scale_ch(32), c64 = scale_ch(64);
            auto down = [&](int in, int out) {
                backbone_.emplace<Conv2d>(in, out, 3, 3, 2, 1, 1);
                backbone_.emplace<BatchNorm2d>(out);
                backbone_.emplace<ReLU>();
            };
            down(3, c16);
            down(c16, c32);
            down(c32, c64);
            down(c64, c64);
            backbone_.emplace<UpsamplerBlock>(c64, c64);
            backbone_.emplace<UpsamplerBlock>(c64, c32);
            backbone_.emplace<UpsamplerBlock>(c32, c16);
            backbone_.emplace<UpsamplerBlock>(c16, c16);
            // feat: (N, c16, H, W); a 3x3 conv head emits logits.
        }
    }

    SegModelConfig cfg_;
    std::uint64_t seed_;
    nn::Sequential backbone_;
    std::unique_ptr<nn::Layer> head_;
    int head_channels_ = 0;
    int feat_channels_ = 0;
    std::int64_t forward_count_ = 0;
};

struct DecodedInstance {
    int channel = 0;                  // instance slot, 1..kMaxInstances
    std::vector<Pixel> pixels;        // argmax pixels in row-major scan order
    Polyline polyline;                // row-averaged curve
};

// Per-pixel argmax; pixels for each nonzero channel in row-major order.
inline std::array<std::vector<Pixel>, kMaxInstances> decode_instance_pixels(const nn::Tensor& logits, int n) {
    const int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    std::array<std::vector<Pixel>, kMaxInstances> sets;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            int best = 0;
            float bv = logits.at(n, 0, h, w);
            for (int c = 1; c < C; ++c) {
                const float v = logits.at(n, c, h, w);
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            if (best > 0) sets[best - 1].push_back({w, h});
        }
    return sets;
}

inline std::vector<DecodedInstance> decode_instances(const SegOutput& output, int n, int min_points = 3) {
    if (min_points < 1) throw InvalidArgumentError("decode_instances: min_points must be >= 1");
    auto sets = decode_instance_pixels(output.logits, n);
    std::vector<DecodedInstance> result;
    for (int c = 0; c < kMaxInstances; ++c) {
        if (sets[c].empty()) continue;
        Polyline line = row_average(sets[c]);
        if (line.point_count() < min_points) continue;
        DecodedInstance inst;
        inst.channel = c + 1;
        inst.pixels = std::move(sets[c]);
        inst.polyline = std::move(line);
        result.push_back(std::move(inst));
    }
    return result;
}

}  // namespace lanecascade
