#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhm/rng.hpp"
#include "rhm/tensor.hpp"

namespace rhm {

enum class Mode { train, infer };

/// Per-layer, per-pass saved state. Passes own their caches, so the same
/// network can run several forward passes (e.g. both twins of a pair)
/// before any backward pass.
struct Cache {
    std::vector<Tensor> t;
    std::vector<int> shape;
};

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

/// A differentiable layer over batched tensors. Activations are NHWC
/// (channels last); dense layers take {N, D}. backward() accumulates
/// parameter gradients internally (callers zero them per step) and
/// returns the gradient with respect to the input.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode, Rng* rng, Cache* cache) = 0;
    virtual Tensor backward(const Tensor& grad_out, const Cache& cache) = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<Tensor*> grads() { return {}; }
    /// Non-trainable buffers carried by the layer (running statistics).
    virtual std::vector<Tensor*> state() { return {}; }
    virtual std::string kind() const = 0;
    virtual std::vector<int> output_shape(const std::vector<int>& in) const = 0;
};

namespace detail {

inline void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace detail

/// 2-D cross-correlation with zero "same" padding: output spatial extent
/// is ceil(in/stride), with the extra pad cell (odd totals) on the
/// high-index side. Weights are {kh, kw, in_ch, out_ch}.
class Conv2d : public Layer {
public:
    Conv2d(int kernel_h, int kernel_w, int stride, int in_channels, int out_channels, Rng& init)
        : kh_(kernel_h), kw_(kernel_w), stride_(stride), cin_(in_channels), cout_(out_channels) {
        detail::require(kh_ >= 1 && kw_ >= 1 && stride_ >= 1 && cin_ >= 1 && cout_ >= 1,
                        "Conv2d: kernel, stride and channel counts must be positive");
        weights_ = Tensor({kh_, kw_, cin_, cout_});
        bias_ = Tensor({cout_});
        const double limit = std::sqrt(6.0 / static_cast<double>(kh_ * kw_ * cin_));
        for (double& w : weights_.data) w = init.uniform(-limit, limit);
        grad_weights_ = Tensor({kh_, kw_, cin_, cout_});
        grad_bias_ = Tensor({cout_});
    }

    Tensor forward(const Tensor& x, Mode, Rng*, Cache* cache) override {
        detail::require(x.rank() == 4 && x.dim(3) == cin_, "Conv2d: input shape mismatch");
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        const int oh = detail::ceil_div(h, stride_), ow = detail::ceil_div(w, stride_);

        const MatRM& col = im2col(x, oh, ow);
        ConstMapRM wmat(weights_.data.data(), kh_ * kw_ * cin_, cout_);
        Tensor out({n, oh, ow, cout_});
        MapRM omat(out.data.data(), static_cast<long>(n) * oh * ow, cout_);
        omat.noalias() = col * wmat;
        omat.rowwise() += ConstMapRM(bias_.data.data(), 1, cout_).row(0);

        if (cache) cache->t = {x};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        const Tensor& x = cache.t.at(0);
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        const int oh = grad_out.dim(1), ow = grad_out.dim(2);
        detail::require(grad_out.rank() == 4 && grad_out.dim(0) == n && grad_out.dim(3) == cout_,
                        "Conv2d: gradient shape mismatch");
        const long rows = static_cast<long>(n) * oh * ow;
        ConstMapRM gflat(grad_out.data.data(), rows, cout_);

        // Fixed-order accumulation: Eigen's vectorized column reduction
        // reorders sums based on runtime buffer alignment, which breaks
        // byte-reproducibility across process layouts.
        {
            double* gb = grad_bias_.data.data();
            const double* gp = grad_out.data.data();
            for (long r = 0; r < rows; ++r)
                for (int c = 0; c < cout_; ++c) gb[c] += gp[r * cout_ + c];
        }

        const MatRM& col = im2col(x, oh, ow);
        MapRM gw(grad_weights_.data.data(), kh_ * kw_ * cin_, cout_);
        gw.noalias() += col.transpose() * gflat;

        ConstMapRM wmat(weights_.data.data(), kh_ * kw_ * cin_, cout_);
        gcol_.resize(rows, kh_ * kw_ * cin_);
        gcol_.noalias() = gflat * wmat.transpose();

        Tensor grad_in({n, h, w, cin_});
        col2im(gcol_, grad_in, oh, ow);
        return grad_in;
    }

    std::vector<Tensor*> params() override { return {&weights_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weights_, &grad_bias_}; }
    std::string kind() const override { return "conv"; }

    std::vector<int> output_shape(const std::vector<int>& in) const override {
        detail::require(in.size() == 3 && in[2] == cin_, "Conv2d: bad trace shape");
        return {detail::ceil_div(in[0], stride_), detail::ceil_div(in[1], stride_), cout_};
    }

    Tensor& weights() { return weights_; }
    Tensor& bias() { return bias_; }

private:
    void pads(int h, int w, int oh, int ow, int& pad_top, int& pad_left) const {
        const int total_h = std::max(0, (oh - 1) * stride_ + kh_ - h);
        const int total_w = std::max(0, (ow - 1) * stride_ + kw_ - w);
        pad_top = total_h / 2;
        pad_left = total_w / 2;
    }

    // Fills the reusable scratch matrix (every cell is written, so no
    // zeroing pass or fresh allocation per call).
    const MatRM& im2col(const Tensor& x, int oh, int ow) {
        const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
        int pad_top = 0, pad_left = 0;
        pads(h, w, oh, ow, pad_top, pad_left);
        const std::size_t kwc = static_cast<std::size_t>(kw_) * cin_;
        col_.resize(static_cast<long>(n) * oh * ow, kh_ * kw_ * cin_);
        const double* src = x.data.data();
        for (int img = 0; img < n; ++img) {
            const double* base = src + static_cast<std::size_t>(img) * h * w * cin_;
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    double* dst =
                        col_.data() + (static_cast<std::size_t>(img) * oh * ow +
                                       static_cast<std::size_t>(r) * ow + c) *
                                          static_cast<std::size_t>(kh_ * kw_ * cin_);
                    for (int i = 0; i < kh_; ++i) {
                        const int ih = r * stride_ - pad_top + i;
                        double* row = dst + static_cast<std::size_t>(i) * kwc;
                        if (ih < 0 || ih >= h) {
                            std::fill(row, row + kwc, 0.0);
                            continue;
                        }
                        for (int j = 0; j < kw_; ++j) {
                            const int iw = c * stride_ - pad_left + j;
                            double* cell = row + static_cast<std::size_t>(j) * cin_;
                            if (iw < 0 || iw >= w)
                                std::fill(cell, cell + cin_, 0.0);
                            else
                                std::memcpy(cell, base + (static_cast<std::size_t>(ih) * w + iw) * cin_,
                                            sizeof(double) * static_cast<std::size_t>(cin_));
                        }
                    }
                }
            }
        }
        return col_;
    }

    void col2im(const MatRM& gcol, Tensor& grad_in, int oh, int ow) const {
        const int n = grad_in.dim(0), h = grad_in.dim(1), w = grad_in.dim(2);
        int pad_top = 0, pad_left = 0;
        pads(h, w, oh, ow, pad_top, pad_left);
        double* dst = grad_in.data.data();
        for (int img = 0; img < n; ++img) {
            double* base = dst + static_cast<std::size_t>(img) * h * w * cin_;
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    const double* g =
                        gcol.data() + (static_cast<std::size_t>(img) * oh * ow +
                                       static_cast<std::size_t>(r) * ow + c) *
                                          static_cast<std::size_t>(kh_ * kw_ * cin_);
                    for (int i = 0; i < kh_; ++i) {
                        const int ih = r * stride_ - pad_top + i;
                        if (ih < 0 || ih >= h) continue;
                        for (int j = 0; j < kw_; ++j) {
                            const int iw = c * stride_ - pad_left + j;
                            if (iw < 0 || iw >= w) continue;
                            double* cell = base + (static_cast<std::size_t>(ih) * w + iw) * cin_;
                            const double* gc = g + (static_cast<std::size_t>(i) * kw_ + j) * cin_;
                            for (int ch = 0; ch < cin_; ++ch) cell[ch] += gc[ch];
                        }
                    }
                }
            }
        }
    }

    int kh_, kw_, stride_, cin_, cout_;
    Tensor weights_, bias_, grad_weights_, grad_bias_;
    MatRM col_, gcol_;  // scratch reused across forward/backward calls
};

/// Per-channel batch normalization over NHWC activations. Training mode
/// standardizes by the batch statistics and updates the running buffers;
/// inference standardizes by the running buffers.
class BatchNorm : public Layer {
public:
    explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.9)
        : channels_(channels), eps_(eps), momentum_(momentum) {
        detail::require(channels_ >= 1, "BatchNorm: channel count must be positive");
        gamma_ = Tensor({channels_});
        gamma_.fill(1.0);
        beta_ = Tensor({channels_});
        grad_gamma_ = Tensor({channels_});
        grad_beta_ = Tensor({channels_});
        running_mean_ = Tensor({channels_});
        running_var_ = Tensor({channels_});
        running_var_.fill(1.0);
    }

    Tensor forward(const Tensor& x, Mode mode, Rng*, Cache* cache) override {
        detail::require(x.rank() == 4 && x.dim(3) == channels_, "BatchNorm: input shape mismatch");
        const std::size_t count = x.data.size() / static_cast<std::size_t>(channels_);
        Tensor out(x.shape);

        if (mode == Mode::infer) {
            std::vector<double> scale(static_cast<std::size_t>(channels_)),
                shift(static_cast<std::size_t>(channels_));
            for (int c = 0; c < channels_; ++c) {
                const std::size_t ci = static_cast<std::size_t>(c);
                const double inv = 1.0 / std::sqrt(running_var_.data[ci] + eps_);
                scale[ci] = gamma_.data[ci] * inv;
                shift[ci] = beta_.data[ci] - running_mean_.data[ci] * scale[ci];
            }
            for (std::size_t i = 0; i < count; ++i)
                for (int c = 0; c < channels_; ++c) {
                    const std::size_t idx = i * static_cast<std::size_t>(channels_) +
                                            static_cast<std::size_t>(c);
                    out.data[idx] = x.data[idx] * scale[static_cast<std::size_t>(c)] +
                                    shift[static_cast<std::size_t>(c)];
                }
            return out;
        }

        detail::require(x.dim(0) >= 2, "BatchNorm: training mode needs a batch of at least 2");
        std::vector<double> mean(static_cast<std::size_t>(channels_), 0.0),
            var(static_cast<std::size_t>(channels_), 0.0);
        for (std::size_t i = 0; i < count; ++i)
            for (int c = 0; c < channels_; ++c)
                mean[static_cast<std::size_t>(c)] +=
                    x.data[i * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(c)];
        for (double& m : mean) m /= static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i)
            for (int c = 0; c < channels_; ++c) {
                const double d =
                    x.data[i * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(c)] -
                    mean[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += d * d;
            }
        for (double& v : var) v /= static_cast<double>(count);

        Tensor xhat(x.shape);
        Tensor invstd({channels_});
        for (int c = 0; c < channels_; ++c)
            invstd.data[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps_);
        for (std::size_t i = 0; i < count; ++i)
            for (int c = 0; c < channels_; ++c) {
                const std::size_t ci = static_cast<std::size_t>(c);
                const std::size_t idx = i * static_cast<std::size_t>(channels_) + ci;
                xhat.data[idx] = (x.data[idx] - mean[ci]) * invstd.data[ci];
                out.data[idx] = gamma_.data[ci] * xhat.data[idx] + beta_.data[ci];
            }
        for (int c = 0; c < channels_; ++c) {
            const std::size_t ci = static_cast<std::size_t>(c);
            running_mean_.data[ci] = momentum_ * running_mean_.data[ci] + (1.0 - momentum_) * mean[ci];
            running_var_.data[ci] = momentum_ * running_var_.data[ci] + (1.0 - momentum_) * var[ci];
        }
        if (cache) cache->t = {std::move(xhat), std::move(invstd)};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        if (cache.t.size() != 2)
            throw std::logic_error("BatchNorm: backward without a training-mode cache");
        const Tensor& xhat = cache.t[0];
        const Tensor& invstd = cache.t[1];
        detail::require(grad_out.same_shape(xhat), "BatchNorm: gradient shape mismatch");
        const std::size_t count = grad_out.data.size() / static_cast<std::size_t>(channels_);
        const double m = static_cast<double>(count);

        std::vector<double> sum_g(static_cast<std::size_t>(channels_), 0.0),
            sum_gx(static_cast<std::size_t>(channels_), 0.0);
        for (std::size_t i = 0; i < count; ++i)
            for (int c = 0; c < channels_; ++c) {
                const std::size_t ci = static_cast<std::size_t>(c);
                const std::size_t idx = i * static_cast<std::size_t>(channels_) + ci;
                sum_g[ci] += grad_out.data[idx];
                sum_gx[ci] += grad_out.data[idx] * xhat.data[idx];
            }
        for (int c = 0; c < channels_; ++c) {
            const std::size_t ci = static_cast<std::size_t>(c);
            grad_gamma_.data[ci] += sum_gx[ci];
            grad_beta_.data[ci] += sum_g[ci];
        }

        Tensor grad_in(grad_out.shape);
        for (std::size_t i = 0; i < count; ++i)
            for (int c = 0; c < channels_; ++c) {
                const std::size_t ci = static_cast<std::size_t>(c);
                const std::size_t idx = i * static_cast<std::size_t>(channels_) + ci;
                grad_in.data[idx] = gamma_.data[ci] * invstd.data[ci] / m *
                                    (m * grad_out.data[idx] - sum_g[ci] -
                                     xhat.data[idx] * sum_gx[ci]);
            }
        return grad_in;
    }

    std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> grads() override { return {&grad_gamma_, &grad_beta_}; }
    std::vector<Tensor*> state() override { return {&running_mean_, &running_var_}; }
    std::string kind() const override { return "batchnorm"; }

    std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

private:
    int channels_;
    double eps_, momentum_;
    Tensor gamma_, beta_, grad_gamma_, grad_beta_;
    Tensor running_mean_, running_var_;
};

/// Inverted dropout: units are zeroed with the given probability during
/// training and survivors are scaled by 1/(1-rate), so inference is the
/// identity.
class Dropout : public Layer {
public:
    explicit Dropout(double rate) : rate_(rate) {
        detail::require(rate_ >= 0.0 && rate_ < 1.0, "Dropout: rate must lie in [0, 1)");
    }

    Tensor forward(const Tensor& x, Mode mode, Rng* rng, Cache* cache) override {
        if (mode == Mode::infer) {
            if (cache) cache->t.clear();
            return x;
        }
        if (rng == nullptr) throw std::logic_error("Dropout: training mode needs a random source");
        Tensor mask(x.shape);
        const double keep_scale = 1.0 / (1.0 - rate_);
        for (double& v : mask.data) v = (rng->uniform() < rate_) ? 0.0 : keep_scale;
        Tensor out(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * mask.data[i];
        if (cache) cache->t = {std::move(mask)};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        if (cache.t.empty()) return grad_out;  // inference pass-through
        const Tensor& mask = cache.t[0];
        Tensor grad_in(grad_out.shape);
        for (std::size_t i = 0; i < grad_out.data.size(); ++i)
            grad_in.data[i] = grad_out.data[i] * mask.data[i];
        return grad_in;
    }

    std::string kind() const override { return "dropout"; }
    std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
    double rate() const { return rate_; }

private:
    double rate_;
};

class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x, Mode, Rng*, Cache* cache) override {
        detail::require(x.rank() >= 2, "Flatten: input must be batched");
        Tensor out = x;
        const int n = x.dim(0);
        out.shape = {n, static_cast<int>(x.numel() / n)};
        if (cache) cache->shape = x.shape;
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        Tensor grad_in = grad_out;
        grad_in.shape = cache.shape;
        return grad_in;
    }

    std::string kind() const override { return "flatten"; }
    std::vector<int> output_shape(const std::vector<int>& in) const override {
        int n = 1;
        for (int e : in) n *= e;
        return {n};
    }
};

class Relu : public Layer {
public:
    Tensor forward(const Tensor& x, Mode, Rng*, Cache* cache) override {
        Tensor out(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
        if (cache) cache->t = {x};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        const Tensor& x = cache.t.at(0);
        Tensor grad_in(grad_out.shape);
        for (std::size_t i = 0; i < grad_out.data.size(); ++i)
            grad_in.data[i] = x.data[i] > 0.0 ? grad_out.data[i] : 0.0;
        return grad_in;
    }

    std::string kind() const override { return "relu"; }
    std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
};

/// Numerically stable logistic function; never overflows, and saturates
/// strictly inside (0, 1) so the result is always usable as a
/// probability even when exp() underflows.
inline double stable_sigmoid(double x) {
    double v;
    if (x >= 0.0) {
        const double z = std::exp(-x);
        v = 1.0 / (1.0 + z);
    } else {
        const double z = std::exp(x);
        v = z / (1.0 + z);
    }
    if (v <= 0.0) return 1e-300;
    if (v >= 1.0) return 1.0 - 1e-16;
    return v;
}

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x, Mode, Rng*, Cache* cache) override {
        Tensor out(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = stable_sigmoid(x.data[i]);
        if (cache) cache->t = {out};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        const Tensor& y = cache.t.at(0);
        Tensor grad_in(grad_out.shape);
        for (std::size_t i = 0; i < grad_out.data.size(); ++i)
            grad_in.data[i] = grad_out.data[i] * y.data[i] * (1.0 - y.data[i]);
        return grad_in;
    }

    std::string kind() const override { return "sigmoid"; }
    std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
};

/// Affine map y = x W + b over a batch of row vectors.
class Dense : public Layer {
public:
    Dense(int in_features, int out_features, Rng& init) : in_(in_features), out_(out_features) {
        detail::require(in_ >= 1 && out_ >= 1, "Dense: feature counts must be positive");
        weights_ = Tensor({in_, out_});
        bias_ = Tensor({out_});
        const double limit = std::sqrt(6.0 / static_cast<double>(in_));
        for (double& w : weights_.data) w = init.uniform(-limit, limit);
        grad_weights_ = Tensor({in_, out_});
        grad_bias_ = Tensor({out_});
    }

    Tensor forward(const Tensor& x, Mode, Rng*, Cache* cache) override {
        detail::require(x.rank() == 2 && x.dim(1) == in_, "Dense: input shape mismatch");
        const int n = x.dim(0);
        Tensor out({n, out_});
        ConstMapRM xm(x.data.data(), n, in_);
        ConstMapRM wm(weights_.data.data(), in_, out_);
        MapRM om(out.data.data(), n, out_);
        om.noalias() = xm * wm;
        om.rowwise() += ConstMapRM(bias_.data.data(), 1, out_).row(0);
        if (cache) cache->t = {x};
        return out;
    }

    Tensor backward(const Tensor& grad_out, const Cache& cache) override {
        const Tensor& x = cache.t.at(0);
        detail::require(grad_out.rank() == 2 && grad_out.dim(1) == out_ &&
                            grad_out.dim(0) == x.dim(0),
                        "Dense: gradient shape mismatch");
        const int n = x.dim(0);
        ConstMapRM xm(x.data.data(), n, in_);
        ConstMapRM gm(grad_out.data.data(), n, out_);
        MapRM(grad_weights_.data.data(), in_, out_).noalias() += xm.transpose() * gm;
        // Fixed-order accumulation, same reproducibility concern as Conv2d.
        {
            double* gb = grad_bias_.data.data();
            const double* gp = grad_out.data.data();
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < out_; ++c) gb[c] += gp[static_cast<std::size_t>(r) * out_ + c];
        }
        Tensor grad_in({n, in_});
        MapRM(grad_in.data.data(), n, in_).noalias() =
            gm * ConstMapRM(weights_.data.data(), in_, out_).transpose();
        return grad_in;
    }

    std::vector<Tensor*> params() override { return {&weights_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weights_, &grad_bias_}; }
    std::string kind() const override { return "dense"; }

    std::vector<int> output_shape(const std::vector<int>& in) const override {
        detail::require(in.size() == 1 && in[0] == in_, "Dense: bad trace shape");
        return {out_};
    }

    Tensor& weights() { return weights_; }
    Tensor& bias() { return bias_; }
    int in_features() const { return in_; }
    int out_features() const { return out_; }

private:
    int in_, out_;
    Tensor weights_, bias_, grad_weights_, grad_bias_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct BceResult {
    double loss;
    double dloss_dp;
};

/// Binary cross entropy -[b log p + (1-b) log(1-p)] with p clamped to
/// [1e-12, 1 - 1e-12]; the gradient is taken at the clamped value.
inline BceResult bce_loss(double p, int target) {
    if (target != 0 && target != 1)
        throw std::invalid_argument("bce_loss: target must be 0 or 1");
    constexpr double kEps = 1e-12;
    const double pc = std::clamp(p, kEps, 1.0 - kEps);
    const double loss = -(target == 1 ? std::log(pc) : std::log(1.0 - pc));
    const double grad = target == 1 ? -1.0 / pc : 1.0 / (1.0 - pc);
    return {loss, grad};
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

struct CeResult {
    double loss;
    std::vector<double> dlogits;
};

inline CeResult softmax_cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
    std::vector<double> p = softmax(logits);
    const double loss = -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
    p[static_cast<std::size_t>(label)] -= 1.0;
    return {loss, std::move(p)};
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam state: first/second moment accumulators per parameter tensor and
/// the shared step counter.
struct AdamState {
    double lr = 0.006;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->shape);
            v.emplace_back(p->shape);
        }
        t = 0;
    }
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
                      AdamState& st) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (st.m.size() != params.size()) st.init(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(st.m[i]))
            throw std::invalid_argument("adam_step: shape mismatch");
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* th = params[i]->data.data();
        const double* g = grads[i]->data.data();
        double* m = st.m[i].data.data();
        double* v = st.v[i].data.data();
        const std::size_t n = params[i]->data.size();
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            th[k] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Sequential network
// ---------------------------------------------------------------------------

class Network {
public:
    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    /// Runs all layers in order. When a tape is supplied it receives one
    /// cache per layer, enabling a later backward() over this pass.
    Tensor forward(const Tensor& x, Mode mode, Rng* rng, std::vector<Cache>* tape) {
        if (tape) tape->assign(layers_.size(), Cache{});
        Tensor cur = x;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            cur = layers_[i]->forward(cur, mode, rng, tape ? &(*tape)[i] : nullptr);
        return cur;
    }

    /// Backpropagates through the pass recorded on the tape, accumulating
    /// parameter gradients; returns the gradient w.r.t. the pass input.
    Tensor backward(const Tensor& grad_out, const std::vector<Cache>& tape) {
        if (tape.size() != layers_.size())
            throw std::invalid_argument("Network: tape does not match layer count");
        Tensor g = grad_out;
        for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, tape[i]);
        return g;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& l : layers_)
            for (Tensor* p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<Tensor*> grads() {
        std::vector<Tensor*> out;
        for (auto& l : layers_)
            for (Tensor* g : l->grads()) out.push_back(g);
        return out;
    }
    std::vector<Tensor*> state() {
        std::vector<Tensor*> out;
        for (auto& l : layers_)
            for (Tensor* s : l->state()) out.push_back(s);
        return out;
    }

    void zero_grad() {
        for (Tensor* g : grads()) g->fill(0.0);
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        for (Tensor* p : params()) n += p->numel();
        return n;
    }

    /// Per-layer output shapes (batch dimension excluded) for the given
    /// per-sample input shape.
    std::vector<std::vector<int>> shape_trace(const std::vector<int>& input) const {
        std::vector<std::vector<int>> out;
        std::vector<int> cur = input;
        for (const auto& l : layers_) {
            cur = l->output_shape(cur);
            out.push_back(cur);
        }
        return out;
    }

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Flat snapshot of a set of tensors, used to keep the best-validation
/// parameters during training and to serialize checkpoints.
inline std::vector<double> snapshot_values(const std::vector<Tensor*>& tensors) {
    std::vector<double> out;
    std::size_t total = 0;
    for (const Tensor* t : tensors) total += t->data.size();
    out.reserve(total);
    for (const Tensor* t : tensors) out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
}

inline void restore_values(const std::vector<Tensor*>& tensors, const std::vector<double>& flat) {
    std::size_t off = 0;
    for (Tensor* t : tensors) {
        if (off + t->data.size() > flat.size())
            throw std::invalid_argument("restore_values: snapshot too small");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + t->data.size()),
                  t->data.begin());
        off += t->data.size();
    }
    if (off != flat.size()) throw std::invalid_argument("restore_values: snapshot size mismatch");
}

}  // namespace rhm
