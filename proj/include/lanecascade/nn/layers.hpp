#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "lanecascade/errors.hpp"
#include "lanecascade/nn/tensor.hpp"
#include "lanecascade/rng.hpp"

namespace lanecascade::nn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatF>;
using CMapMat = Eigen::Map<const MatF>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using CMapVec = Eigen::Map<const Eigen::VectorXf>;

struct ParamRef {
    std::vector<float>* value;
    std::vector<float>* grad;
};

// Learnable parameters plus non-learnable state (running statistics).
struct ParamSet {
    std::vector<ParamRef> params;
    std::vector<std::vector<float>*> buffers;

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& p : params) n += static_cast<std::int64_t>(p.value->size());
        return n;
    }

    std::int64_t state_count() const {
        std::int64_t n = param_count();
        for (const auto* b : buffers) n += static_cast<std::int64_t>(b->size());
        return n;
    }
};

// Parameters then buffers, flattened in registration order — the layout the
// checkpoint format stores.
inline std::vector<float> flatten_params(const ParamSet& set) {
    std::vector<float> flat;
    flat.reserve(static_cast<std::size_t>(set.state_count()));
    for (const auto& p : set.params) flat.insert(flat.end(), p.value->begin(), p.value->end());
    for (const auto* b : set.buffers) flat.insert(flat.end(), b->begin(), b->end());
    return flat;
}

inline void unflatten_params(const ParamSet& set, const std::vector<float>& flat) {
    if (flat.size() != static_cast<std::size_t>(set.state_count()))
        throw InvalidArgumentError("parameter blob holds " + std::to_string(flat.size()) + " values, model needs " +
                                   std::to_string(set.state_count()));
    std::size_t off = 0;
    for (const auto& p : set.params) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.value->size(), p.value->begin());
        off += p.value->size();
    }
    for (auto* b : set.buffers) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), b->size(), b->begin());
        off += b->size();
    }
}

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual void collect(ParamSet&) {}
    virtual void init_params(Rng&) {}
    // Re-derives any internal random stream from the given key; makes
    // per-epoch randomness a pure function of (construction seed, key) so
    // training can resume mid-run bit-exactly.
    virtual void reseed(std::uint64_t) {}
};

namespace detail {

// Unpacks x (C,H,W) into cols ((C*kh*kw) x (Lh*Lw)) where position (lh, lw)
// reads input pixel (lh*sh - ph + i*dh, lw*sw - pw + j*dw).
inline void im2col(const float* x, int C, int H, int W, int kh, int kw, int sh, int sw, int ph, int pw, int dh,
                   int dw, int Lh, int Lw, float* cols) {
    const std::int64_t L = static_cast<std::int64_t>(Lh) * Lw;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                float* row = cols + (static_cast<std::int64_t>((c * kh + i) * kw + j)) * L;
                const float* plane = x + static_cast<std::int64_t>(c) * H * W;
                for (int lh = 0; lh < Lh; ++lh) {
                    const int ih = lh * sh - ph + i * dh;
                    float* dst = row + static_cast<std::int64_t>(lh) * Lw;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + Lw, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::int64_t>(ih) * W;
                    for (int lw = 0; lw < Lw; ++lw) {
                        const int iw = lw * sw - pw + j * dw;
                        dst[lw] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                    }
                }
            }
}

// Scatter-adds cols back into x; exact adjoint of im2col.
inline void col2im_add(const float* cols, int C, int H, int W, int kh, int kw, int sh, int sw, int ph, int pw,
                       int dh, int dw, int Lh, int Lw, float* x) {
    const std::int64_t L = static_cast<std::int64_t>(Lh) * Lw;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const float* row = cols + (static_cast<std::int64_t>((c * kh + i) * kw + j)) * L;
                float* plane = x + static_cast<std::int64_t>(c) * H * W;
                for (int lh = 0; lh < Lh; ++lh) {
                    const int ih = lh * sh - ph + i * dh;
                    if (ih < 0 || ih >= H) continue;
                    const float* src = row + static_cast<std::int64_t>(lh) * Lw;
                    float* dst = plane + static_cast<std::int64_t>(ih) * W;
                    for (int lw = 0; lw < Lw; ++lw) {
                        const int iw = lw * sw - pw + j * dw;
                        if (iw >= 0 && iw < W) dst[iw] += src[lw];
                    }
                }
            }
}

}  // namespace detail

// 2D convolution; rectangular kernels and dilation are supported so the same
// layer serves 3x3, 3x1 and 1x3 factorized convolutions.
class Conv2d : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int kh, int kw, int stride = 1, int ph = -1, int pw = -1, int dh = 1, int dw = 1)
        : in_ch_(in_ch), out_ch_(out_ch), kh_(kh), kw_(kw), stride_(stride),
          ph_(ph >= 0 ? ph : dh * (kh - 1) / 2), pw_(pw >= 0 ? pw : dw * (kw - 1) / 2), dh_(dh), dw_(dw) {
        weight_.assign(static_cast<std::size_t>(out_ch_) * in_ch_ * kh_ * kw_, 0.0f);
        bias_.assign(static_cast<std::size_t>(out_ch_), 0.0f);
        wgrad_.assign(weight_.size(), 0.0f);
        bgrad_.assign(bias_.size(), 0.0f);
    }

    void init_params(Rng& rng) override {
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch_) * kh_ * kw_));
        for (auto& w : weight_) w = static_cast<float>(rng.normal(0.0, stddev));
        std::fill(bias_.begin(), bias_.end(), 0.0f);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.shape.size() != 4 || x.dim(1) != in_ch_)
            throw InvalidArgumentError("Conv2d: bad input shape " + x.shape_str());
        x_ = x;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int Ho = (H + 2 * ph_ - dh_ * (kh_ - 1) - 1) / stride_ + 1;
        const int Wo = (W + 2 * pw_ - dw_ * (kw_ - 1) - 1) / stride_ + 1;
        Tensor y({N, out_ch_, Ho, Wo});
        const int K = in_ch_ * kh_ * kw_;
        const std::int64_t L = static_cast<std::int64_t>(Ho) * Wo;
        MatF cols(K, L);
        CMapMat wmap(weight_.data(), out_ch_, K);
        for (int n = 0; n < N; ++n) {
            detail::im2col(&x.at(n, 0, 0, 0), in_ch_, H, W, kh_, kw_, stride_, stride_, ph_, pw_, dh_, dw_, Ho, Wo,
                           cols.data());
            MapMat ymap(&y.at(n, 0, 0, 0), out_ch_, L);
            ymap.noalias() = wmap * cols;
            for (int oc = 0; oc < out_ch_; ++oc) ymap.row(oc).array() += bias_[oc];
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        const int N = x_.dim(0), H = x_.dim(2), W = x_.dim(3);
        const int Ho = dy.dim(2), Wo = dy.dim(3);
        const int K = in_ch_ * kh_ * kw_;
        const std::int64_t L = static_cast<std::int64_t>(Ho) * Wo;
        Tensor dx({N, in_ch_, H, W});
        MatF cols(K, L), dcols(K, L);
        CMapMat wmap(weight_.data(), out_ch_, K);
        MapMat wg(wgrad_.data(), out_ch_, K);
        for (int n = 0; n < N; ++n) {
            detail::im2col(&x_.at(n, 0, 0, 0), in_ch_, H, W, kh_, kw_, stride_, stride_, ph_, pw_, dh_, dw_, Ho,
                           Wo, cols.data());
            CMapMat dymap(&dy.at(n, 0, 0, 0), out_ch_, L);
            wg.noalias() += dymap * cols.transpose();
            for (int oc = 0; oc < out_ch_; ++oc) bgrad_[oc] += dymap.row(oc).sum();
            dcols.noalias() = wmap.transpose() * dymap;
            detail::col2im_add(dcols.data(), in_ch_, H, W, kh_, kw_, stride_, stride_, ph_, pw_, dh_, dw_, Ho, Wo,
                               &dx.at(n, 0, 0, 0));
        }
        return dx;
    }

    void collect(ParamSet& set) override {
        set.params.push_back({&weight_, &wgrad_});
        set.params.push_back({&bias_, &bgrad_});
    }

private:
    int in_ch_, out_ch_, kh_, kw_, stride_, ph_, pw_, dh_, dw_;
    std::vector<float> weight_, bias_, wgrad_, bgrad_;
    Tensor x_;
};

// Transposed convolution (stride-2 upsampling in the decoders).
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(int in_ch, int out_ch, int k, int stride, int pad, int out_pad)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), out_pad_(out_pad) {
        weight_.assign(static_cast<std::size_t>(in_ch_) * out_ch_ * k_ * k_, 0.0f);
        bias_.assign(static_cast<std::size_t>(out_ch_), 0.0f);
        wgrad_.assign(weight_.size(), 0.0f);
        bgrad_.assign(bias_.size(), 0.0f);
    }

    void init_params(Rng& rng) override {
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch_) * k_ * k_));
        for (auto& w : weight_) w = static_cast<float>(rng.normal(0.0, stddev));
        std::fill(bias_.begin(), bias_.end(), 0.0f);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.shape.size() != 4 || x.dim(1) != in_ch_)
            throw InvalidArgumentError("ConvTranspose2d: bad input shape " + x.shape_str());
        x_ = x;
        const int N = x.dim(0), Hi = x.dim(2), Wi = x.dim(3);
        const int Ho = (Hi - 1) * stride_ - 2 * pad_ + k_ + out_pad_;
        const int Wo = (Wi - 1) * stride_ - 2 * pad_ + k_ + out_pad_;
        Tensor y({N, out_ch_, Ho, Wo});
        const int K = out_ch_ * k_ * k_;
        const std::int64_t L = static_cast<std::int64_t>(Hi) * Wi;
        MatF cols(K, L);
        CMapMat wmap(weight_.data(), in_ch_, K);
        for (int n = 0; n < N; ++n) {
            CMapMat xmap(&x.at(n, 0, 0, 0), in_ch_, L);
            cols.noalias() = wmap.transpose() * xmap;
            detail::col2im_add(cols.data(), out_ch_, Ho, Wo, k_, k_, stride_, stride_, pad_, pad_, 1, 1, Hi, Wi,
                               &y.at(n, 0, 0, 0));
            MapMat ymap(&y.at(n, 0, 0, 0), out_ch_, static_cast<std::int64_t>(Ho) * Wo);
            for (int oc = 0; oc < out_ch_; ++oc) ymap.row(oc).array() += bias_[oc];
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        const int N = x_.dim(0), Hi = x_.dim(2), Wi = x_.dim(3);
        const int Ho = dy.dim(2), Wo = dy.dim(3);
        const int K = out_ch_ * k_ * k_;
        const std::int64_t L = static_cast<std::int64_t>(Hi) * Wi;
        Tensor dx({N, in_ch_, Hi, Wi});
        MatF cols(K, L);
        CMapMat wmap(weight_.data(), in_ch_, K);
        MapMat wg(wgrad_.data(), in_ch_, K);
        for (int n = 0; n < N; ++n) {
            detail::im2col(&dy.at(n, 0, 0, 0), out_ch_, Ho, Wo, k_, k_, stride_, stride_, pad_, pad_, 1, 1, Hi, Wi,
                           cols.data());
            CMapMat xmap(&x_.at(n, 0, 0, 0), in_ch_, L);
            wg.noalias() += xmap * cols.transpose();
            MapMat dxmap(&dx.at(n, 0, 0, 0), in_ch_, L);
            dxmap.noalias() = wmap * cols;
            CMapMat dymap(&dy.at(n, 0, 0, 0), out_ch_, static_cast<std::int64_t>(Ho) * Wo);
            for (int oc = 0; oc < out_ch_; ++oc) bgrad_[oc] += dymap.row(oc).sum();
        }
        return dx;
    }

    void collect(ParamSet& set) override {
        set.params.push_back({&weight_, &wgrad_});
        set.params.push_back({&bias_, &bgrad_});
    }

private:
    int in_ch_, out_ch_, k_, stride_, pad_, out_pad_;
    std::vector<float> weight_, bias_, wgrad_, bgrad_;
    Tensor x_;
};

class BatchNorm2d : public Layer {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
        : channels_(channels), momentum_(static_cast<float>(momentum)), eps_(static_cast<float>(eps)) {
        gamma_.assign(channels_, 1.0f);
        beta_.assign(channels_, 0.0f);
        ggrad_.assign(channels_, 0.0f);
        bgrad_.assign(channels_, 0.0f);
        running_mean_.assign(channels_, 0.0f);
        running_var_.assign(channels_, 1.0f);
    }

    Tensor forward(const Tensor& x, bool train) override {
        if (x.shape.size() != 4 || x.dim(1) != channels_)
            throw InvalidArgumentError("BatchNorm2d: bad input shape " + x.shape_str());
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::int64_t per_ch = static_cast<std::int64_t>(N) * H * W;
        Tensor y(x.shape);
        train_ = train;
        if (train) {
            xhat_ = Tensor(x.shape);
            inv_std_.assign(channels_, 0.0f);
            count_ = per_ch;
            for (int c = 0; c < channels_; ++c) {
                double sum = 0.0, sq = 0.0;
                for (int n = 0; n < N; ++n)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double v = x.at(n, c, h, w);
                            sum += v;
                            sq += v * v;
                        }
                const double mean = sum / per_ch;
                const double var = std::max(0.0, sq / per_ch - mean * mean);
                const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps_));
                inv_std_[c] = inv_std;
                running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * static_cast<float>(mean);
                running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * static_cast<float>(var);
                for (int n = 0; n < N; ++n)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const float xh = (x.at(n, c, h, w) - static_cast<float>(mean)) * inv_std;
                            xhat_.at(n, c, h, w) = xh;
                            y.at(n, c, h, w) = gamma_[c] * xh + beta_[c];
                        }
            }
        } else {
            for (int c = 0; c < channels_; ++c) {
                const float inv_std = 1.0f / std::sqrt(running_var_[c] + eps_);
                const float scale = gamma_[c] * inv_std;
                const float shift = beta_[c] - running_mean_[c] * scale;
                for (int n = 0; n < N; ++n)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) y.at(n, c, h, w) = scale * x.at(n, c, h, w) + shift;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!train_) throw Error("BatchNorm2d: backward after eval-mode forward");
        const int N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
        Tensor dx(dy.shape);
        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const double d = dy.at(n, c, h, w);
                        sum_dy += d;
                        sum_dy_xhat += d * xhat_.at(n, c, h, w);
                    }
            ggrad_[c] += static_cast<float>(sum_dy_xhat);
            bgrad_[c] += static_cast<float>(sum_dy);
            const double scale = gamma_[c] * inv_std_[c] / static_cast<double>(count_);
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const double d = dy.at(n, c, h, w);
                        dx.at(n, c, h, w) = static_cast<float>(
                            scale * (count_ * d - sum_dy - xhat_.at(n, c, h, w) * sum_dy_xhat));
                    }
        }
        return dx;
    }

    void collect(ParamSet& set) override {
        set.params.push_back({&gamma_, &ggrad_});
        set.params.push_back({&beta_, &bgrad_});
        set.buffers.push_back(&running_mean_);
        set.buffers.push_back(&running_var_);
    }

private:
    int channels_;
    float momentum_, eps_;
    std::vector<float> gamma_, beta_, ggrad_, bgrad_, running_mean_, running_var_, inv_std_;
    Tensor xhat_;
    std::int64_t count_ = 0;
    bool train_ = false;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x, bool) override {
        mask_.assign(x.data.size(), 0);
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] > 0.0f) {
                y.data[i] = x.data[i];
                mask_[i] = 1;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dx(dy.shape);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = mask_[i] ? dy.data[i] : 0.0f;
        return dx;
    }

private:
    std::vector<char> mask_;
};

// 2x2 max pooling, stride 2.
class MaxPool2d : public Layer {
public:
    Tensor forward(const Tensor& x, bool) override {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        if (H % 2 || W % 2) throw InvalidArgumentError("MaxPool2d: spatial dims must be even, got " + x.shape_str());
        in_shape_ = x.shape;
        Tensor y({N, C, H / 2, W / 2});
        argmax_.assign(static_cast<std::size_t>(y.numel()), 0);
        std::size_t out = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; h += 2)
                    for (int w = 0; w < W; w += 2) {
                        float best = x.at(n, c, h, w);
                        int bi = 0;
                        const float cand[3] = {x.at(n, c, h, w + 1), x.at(n, c, h + 1, w), x.at(n, c, h + 1, w + 1)};
                        for (int k = 0; k < 3; ++k)
                            if (cand[k] > best) {
                                best = cand[k];
                                bi = k + 1;
                            }
                        const int dh = bi >> 1, dw = bi & 1;
                        argmax_[out] = ((static_cast<std::int64_t>(n) * C + c) * H + h + dh) * W + w + dw;
                        y.data[out++] = best;
                    }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dx(in_shape_);
        for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[static_cast<std::size_t>(argmax_[i])] += dy.data[i];
        return dx;
    }

private:
    std::vector<int> in_shape_;
    std::vector<std::int64_t> argmax_;
};

// Channel dropout; whole feature maps are zeroed, matching the regularizer
// used by the reference encoder-decoder.
class Dropout2d : public Layer {
public:
    explicit Dropout2d(double p, std::uint64_t seed = 0) : p_(p), base_seed_(seed), rng_(seed) {}

    void reseed(std::uint64_t key) override { rng_ = Rng(mix64(base_seed_) ^ mix64(key)); }

    Tensor forward(const Tensor& x, bool train) override {
        if (!train || p_ <= 0.0) {
            active_ = false;
            return x;
        }
        active_ = true;
        const int N = x.dim(0), C = x.dim(1);
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
        keep_.assign(static_cast<std::size_t>(N) * C, 1.0f);
        const float scale = static_cast<float>(1.0 / (1.0 - p_));
        Tensor y(x.shape);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t idx = static_cast<std::size_t>(n) * C + c;
                keep_[idx] = rng_.uniform() < p_ ? 0.0f : scale;
                const float* src = &x.at(n, c, 0, 0);
                float* dst = &y.at(n, c, 0, 0);
                for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * keep_[idx];
            }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!active_) return dy;
        const int N = dy.dim(0), C = dy.dim(1);
        const std::int64_t plane = static_cast<std::int64_t>(dy.dim(2)) * dy.dim(3);
        Tensor dx(dy.shape);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const float k = keep_[static_cast<std::size_t>(n) * C + c];
                const float* src = &dy.at(n, c, 0, 0);
                float* dst = &dx.at(n, c, 0, 0);
                for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
            }
        return dx;
    }

private:
    double p_;
    std::uint64_t base_seed_;
    Rng rng_;
    bool active_ = false;
    std::vector<float> keep_;
};

class Linear : public Layer {
public:
    Linear(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
        weight_.assign(static_cast<std::size_t>(out_dim_) * in_dim_, 0.0f);
        bias_.assign(static_cast<std::size_t>(out_dim_), 0.0f);
        wgrad_.assign(weight_.size(), 0.0f);
        bgrad_.assign(bias_.size(), 0.0f);
    }

    void init_params(Rng& rng) override {
        const double stddev = std::sqrt(2.0 / in_dim_);
        for (auto& w : weight_) w = static_cast<float>(rng.normal(0.0, stddev));
        std::fill(bias_.begin(), bias_.end(), 0.0f);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.shape.size() != 2 || x.dim(1) != in_dim_)
            throw InvalidArgumentError("Linear: bad input shape " + x.shape_str());
        x_ = x;
        const int N = x.dim(0);
        Tensor y({N, out_dim_});
        CMapMat wmap(weight_.data(), out_dim_, in_dim_);
        for (int n = 0; n < N; ++n) {
            CMapVec xv(&x.at(n, 0), in_dim_);
            MapVec yv(&y.at(n, 0), out_dim_);
            yv.noalias() = wmap * xv;
            for (int k = 0; k < out_dim_; ++k) yv[k] += bias_[k];
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        const int N = x_.dim(0);
        Tensor dx({N, in_dim_});
        CMapMat wmap(weight_.data(), out_dim_, in_dim_);
        MapMat wg(wgrad_.data(), out_dim_, in_dim_);
        for (int n = 0; n < N; ++n) {
            CMapVec dyv(&dy.at(n, 0), out_dim_);
            CMapVec xv(&x_.at(n, 0), in_dim_);
            wg.noalias() += dyv * xv.transpose();
            for (int k = 0; k < out_dim_; ++k) bgrad_[k] += dyv[k];
            MapVec dxv(&dx.at(n, 0), in_dim_);
            dxv.noalias() = wmap.transpose() * dyv;
        }
        return dx;
    }

    void collect(ParamSet& set) override {
        set.params.push_back({&weight_, &wgrad_});
        set.params.push_back({&bias_, &bgrad_});
    }

private:
    int in_dim_, out_dim_;
    std::vector<float> weight_, bias_, wgrad_, bgrad_;
    Tensor x_;
};

// (N,C,H,W) -> (N,C) spatial mean.
class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x, bool) override {
        in_shape_ = x.shape;
        const int N = x.dim(0), C = x.dim(1);
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
        Tensor y({N, C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                double sum = 0.0;
                const float* src = &x.at(n, c, 0, 0);
                for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
                y.at(n, c) = static_cast<float>(sum / plane);
            }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dx(in_shape_);
        const int N = dx.dim(0), C = dx.dim(1);
        const std::int64_t plane = static_cast<std::int64_t>(dx.dim(2)) * dx.dim(3);
        const float inv = 1.0f / static_cast<float>(plane);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float* dst = &dx.at(n, 0, 0, 0) + static_cast<std::int64_t>(c) * plane;
                const float g = dy.at(n, c) * inv;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] = g;
            }
        return dx;
    }

private:
    std::vector<int> in_shape_;
};

class Sequential : public Layer {
public:
    Sequential() = default;

    template <typename L, typename... Args>
    L* emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* ptr = layer.get();
        layers_.push_back(std::move(layer));
        return ptr;
    }

    void append(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor cur = x;
        for (auto& layer : layers_) cur = layer->forward(cur, train);
        return cur;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor cur = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
        return cur;
    }

    void collect(ParamSet& set) override {
        for (auto& layer : layers_) layer->collect(set);
    }

    void init_params(Rng& rng) override {
        for (auto& layer : layers_) layer->init_params(rng);
    }

    void reseed(std::uint64_t key) override {
        for (auto& layer : layers_) layer->reseed(key);
    }

    std::size_t size() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Downsampler: stride-2 conv and 2x2 max pool concatenated channel-wise, then
// BN + ReLU. Requires out_ch > in_ch.
class DownsamplerBlock : public Layer {
public:
    DownsamplerBlock(int in_ch, int out_ch)
        : in_ch_(in_ch), out_ch_(out_ch), conv_(in_ch, out_ch - in_ch, 3, 3, 2, 1, 1), bn_(out_ch) {
        if (out_ch <= in_ch) throw InvalidArgumentError("DownsamplerBlock: out channels must exceed in channels");
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor a = conv_.forward(x, train);
        Tensor b = pool_.forward(x, train);
        const int N = x.dim(0), Ho = a.dim(2), Wo = a.dim(3);
        Tensor cat({N, out_ch_, Ho, Wo});
        const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
        const int conv_ch = out_ch_ - in_ch_;
        for (int n = 0; n < N; ++n) {
            std::copy_n(&a.at(n, 0, 0, 0), conv_ch * plane, &cat.at(n, 0, 0, 0));
            std::copy_n(&b.at(n, 0, 0, 0), in_ch_ * plane, &cat.at(n, conv_ch, 0, 0));
        }
        return relu_.forward(bn_.forward(cat, train), train);
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dcat = bn_.backward(relu_.backward(dy));
        const int N = dcat.dim(0), Ho = dcat.dim(2), Wo = dcat.dim(3);
        const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
        const int conv_ch = out_ch_ - in_ch_;
        Tensor da({N, conv_ch, Ho, Wo}), db({N, in_ch_, Ho, Wo});
        for (int n = 0; n < N; ++n) {
            std::copy_n(&dcat.at(n, 0, 0, 0), conv_ch * plane, &da.at(n, 0, 0, 0));
            std::copy_n(&dcat.at(n, conv_ch, 0, 0), in_ch_ * plane, &db.at(n, 0, 0, 0));
        }
        Tensor dx = conv_.backward(da);
        Tensor dxp = pool_.backward(db);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dxp.data[i];
        return dx;
    }

    void collect(ParamSet& set) override {
        conv_.collect(set);
        bn_.collect(set);
    }

    void init_params(Rng& rng) override { conv_.init_params(rng); }

private:
    int in_ch_, out_ch_;
    Conv2d conv_;
    MaxPool2d pool_;
    BatchNorm2d bn_;
    ReLU relu_;
};

// Factorized residual block: 3x1/1x3 convolution pairs, the second pair
// dilated, with a residual connection.
class NonBottleneck1d : public Layer {
public:
    NonBottleneck1d(int ch, double drop_p, int dilation, std::uint64_t drop_seed = 0)
        : conv3x1_1_(ch, ch, 3, 1, 1, 1, 0), conv1x3_1_(ch, ch, 1, 3, 1, 0, 1), bn1_(ch),
          conv3x1_2_(ch, ch, 3, 1, 1, dilation, 0, dilation, 1), conv1x3_2_(ch, ch, 1, 3, 1, 0, dilation, 1, dilation),
          bn2_(ch), drop_(drop_p, drop_seed) {}

    Tensor forward(const Tensor& x, bool train) override {
        x_ = x;
        Tensor h = relu1_.forward(conv3x1_1_.forward(x, train), train);
        h = relu2_.forward(bn1_.forward(conv1x3_1_.forward(h, train), train), train);
        h = relu3_.forward(conv3x1_2_.forward(h, train), train);
        h = drop_.forward(bn2_.forward(conv1x3_2_.forward(h, train), train), train);
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
        return relu_out_.forward(h, train);
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dsum = relu_out_.backward(dy);
        Tensor dh = conv1x3_2_.backward(bn2_.backward(drop_.backward(dsum)));
        dh = conv3x1_2_.backward(relu3_.backward(dh));
        dh = conv1x3_1_.backward(bn1_.backward(relu2_.backward(dh)));
        dh = conv3x1_1_.backward(relu1_.backward(dh));
        for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dsum.data[i];
        return dh;
    }

    void collect(ParamSet& set) override {
        conv3x1_1_.collect(set);
        conv1x3_1_.collect(set);
        bn1_.collect(set);
        conv3x1_2_.collect(set);
        conv1x3_2_.collect(set);
        bn2_.collect(set);
    }

    void init_params(Rng& rng) override {
        conv3x1_1_.init_params(rng);
        conv1x3_1_.init_params(rng);
        conv3x1_2_.init_params(rng);
        conv1x3_2_.init_params(rng);
    }

    void reseed(std::uint64_t key) override { drop_.reseed(key); }

private:
    Conv2d conv3x1_1_, conv1x3_1_;
    BatchNorm2d bn1_;
    Conv2d conv3x1_2_, conv1x3_2_;
    BatchNorm2d bn2_;
    Dropout2d drop_;
    ReLU relu1_, relu2_, relu3_, relu_out_;
    Tensor x_;
};

// Deconvolution upsampler: transposed conv + BN + ReLU.
class UpsamplerBlock : public Layer {
public:
    UpsamplerBlock(int in_ch, int out_ch, int k = 3, int pad = 1, int out_pad = 1)
        : convt_(in_ch, out_ch, k, 2, pad, out_pad), bn_(out_ch) {}

    Tensor forward(const Tensor& x, bool train) override {
        return relu_.forward(bn_.forward(convt_.forward(x, train), train), train);
    }

    Tensor backward(const Tensor& dy) override { return convt_.backward(bn_.backward(relu_.backward(dy))); }

    void collect(ParamSet& set) override {
        convt_.collect(set);
        bn_.collect(set);
    }

    void init_params(Rng& rng) override { convt_.init_params(rng); }

private:
    ConvTranspose2d convt_;
    BatchNorm2d bn_;
    ReLU relu_;
};

}  // namespace lanecascade::nn
