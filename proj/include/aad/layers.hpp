#pragma once
// Network building blocks with explicit forward/backward passes.
// Convolution layout is NCHW: H = mel bins, W = time frames. "Same"-padded
// convolutions pad the mel axis with zeros and wrap the time axis circularly,
// so a signal tiled in time maps to a tiled feature map.

#include <cmath>
#include <memory>
#include <vector>

#include "aad/common.hpp"
#include "aad/tensor.hpp"

namespace aad::net {

enum class PadMode { zero, circular };

template <typename S>
struct Layer {
    virtual ~Layer() = default;
    virtual const Tensor<S>& forward(const Tensor<S>& x, bool train, Rng* rng) = 0;
    virtual const Tensor<S>& backward(const Tensor<S>& dy) = 0;
    virtual void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) {}
    // buffers are saved in checkpoints but not touched by the optimizer
    virtual void collect_buffers(std::vector<ParamRef<S>>& out, const std::string& prefix) {}
};

namespace detail {

inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline int pad_before(int in, int out, int k, int stride) {
    const int total = std::max((out - 1) * stride + k - in, 0);
    return total / 2;
}

// The wrapped input column for output position ow and kernel tap j depends on
// neither the sample nor the row, so hoist the modulo out of the inner loops:
// tab[ow * kw + j] = input column, or -1 where zero padding falls outside.
inline void fill_wrap_table(std::vector<int>& tab, int ow_count, int kw, int stride, int pl,
                            int width, PadMode pad_w_mode) {
    tab.resize(static_cast<size_t>(ow_count) * kw);
    for (int ow = 0; ow < ow_count; ++ow)
        for (int j = 0; j < kw; ++j) {
            int iw = ow * stride - pl + j;
            if (pad_w_mode == PadMode::circular) iw = ((iw % width) + width) % width;
            tab[static_cast<size_t>(ow) * kw + j] = (iw < 0 || iw >= width) ? -1 : iw;
        }
}

}  // namespace detail

template <typename S>
class Conv2d : public Layer<S> {
  public:
    Conv2d(int in_ch, int out_ch, int kh, int kw, int stride, PadMode pad_w_mode, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), kh_(kh), kw_(kw), stride_(stride),
          pad_w_mode_(pad_w_mode) {
        w_.reshape({out_ch, in_ch, kh, kw});
        b_.reshape({out_ch});
        dw_.reshape({out_ch, in_ch, kh, kw});
        db_.reshape({out_ch});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
        for (auto& v : w_.data) v = static_cast<S>(rng.normal() * stddev);
    }

    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        x_ = x;
        const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
        if (x.dim(1) != in_ch_)
            throw ShapeMismatch("conv expects " + std::to_string(in_ch_) + " channels, got " +
                                std::to_string(x.dim(1)));
        oh_ = detail::same_out(height, stride_);
        ow_ = detail::same_out(width, stride_);
        pt_ = detail::pad_before(height, oh_, kh_, stride_);
        pl_ = detail::pad_before(width, ow_, kw_, stride_);
        out_.reshape_for_overwrite({batch, out_ch_, oh_, ow_});
        col_.resize(static_cast<size_t>(in_ch_) * kh_ * kw_ * oh_ * ow_);
        detail::fill_wrap_table(iw_tab_, ow_, kw_, stride_, pl_, width, pad_w_mode_);
        for (int n = 0; n < batch; ++n) {
            im2col(x, n);
            matmul(w_.data.data(), col_.data(), &out_.at4(n, 0, 0, 0), out_ch_,
                   in_ch_ * kh_ * kw_, oh_ * ow_);
            for (int c = 0; c < out_ch_; ++c) {
                S* row = &out_.at4(n, c, 0, 0);
                for (int i = 0; i < oh_ * ow_; ++i) row[i] += b_.data[c];
            }
        }
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const int batch = x_.dim(0);
        dx_.reshape({batch, in_ch_, x_.dim(2), x_.dim(3)});
        dcol_.resize(col_.size());
        for (int n = 0; n < batch; ++n) {
            im2col(x_, n);
            // dW += dy_n * col^T ; db += row sums of dy_n
            matmul(&dy.at4(n, 0, 0, 0), col_.data(), dw_.data.data(), out_ch_, oh_ * ow_,
                   in_ch_ * kh_ * kw_, true, false, true);
            for (int c = 0; c < out_ch_; ++c) {
                const S* row = &dy.at4(n, c, 0, 0);
                double acc = 0.0;
                for (int i = 0; i < oh_ * ow_; ++i) acc += static_cast<double>(row[i]);
                db_.data[c] += static_cast<S>(acc);
            }
            // dcol = W^T * dy_n, then scatter back
            matmul(w_.data.data(), &dy.at4(n, 0, 0, 0), dcol_.data(), in_ch_ * kh_ * kw_,
                   out_ch_, oh_ * ow_, false, true, false);
            col2im(dcol_, n);
        }
        return dx_;
    }

    void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        out.push_back({prefix + ".weight", &w_, &dw_});
        out.push_back({prefix + ".bias", &b_, &db_});
    }

    Tensor<S> w_, b_, dw_, db_;

  private:
    void im2col(const Tensor<S>& x, int n) {
        const int height = x.dim(2);
        const int cols = oh_ * ow_;
        for (int c = 0; c < in_ch_; ++c)
            for (int i = 0; i < kh_; ++i) {
                const S* plane = &x.at4(n, c, 0, 0);
                for (int j = 0; j < kw_; ++j) {
                    S* dst = col_.data() + (static_cast<size_t>((c * kh_ + i) * kw_ + j)) * cols;
                    for (int oh = 0; oh < oh_; ++oh) {
                        const int ih = oh * stride_ - pt_ + i;
                        if (ih < 0 || ih >= height) {
                            for (int ow = 0; ow < ow_; ++ow) dst[oh * ow_ + ow] = S(0);
                            continue;
                        }
                        const S* xrow = plane + static_cast<size_t>(ih) * x.dim(3);
                        const int* tab = iw_tab_.data();
                        for (int ow = 0; ow < ow_; ++ow) {
                            const int iw = tab[ow * kw_ + j];
                            dst[oh * ow_ + ow] = iw < 0 ? S(0) : xrow[iw];
                        }
                    }
                }
            }
    }

    void col2im(const std::vector<S>& dcol, int n) {
        const int height = x_.dim(2);
        const int cols = oh_ * ow_;
        for (int c = 0; c < in_ch_; ++c)
            for (int i = 0; i < kh_; ++i) {
                S* plane = &dx_.at4(n, c, 0, 0);
                for (int j = 0; j < kw_; ++j) {
                    const S* src = dcol.data() + (static_cast<size_t>((c * kh_ + i) * kw_ + j)) * cols;
                    for (int oh = 0; oh < oh_; ++oh) {
                        const int ih = oh * stride_ - pt_ + i;
                        if (ih < 0 || ih >= height) continue;
                        S* drow = plane + static_cast<size_t>(ih) * dx_.dim(3);
                        for (int ow = 0; ow < ow_; ++ow) {
                            const int iw = iw_tab_[static_cast<size_t>(ow) * kw_ + j];
                            if (iw >= 0) drow[iw] += src[oh * ow_ + ow];
                        }
                    }
                }
            }
    }

    int in_ch_, out_ch_, kh_, kw_, stride_;
    PadMode pad_w_mode_;
    int oh_ = 0, ow_ = 0, pt_ = 0, pl_ = 0;
    Tensor<S> x_, out_, dx_;
    std::vector<S> col_, dcol_;
    std::vector<int> iw_tab_;
};

template <typename S>
class DepthwiseConv2d : public Layer<S> {
  public:
    // valid_full_height makes the kernel span the whole input height (set at
    // construction) with no padding: the global depthwise convolution.
    DepthwiseConv2d(int channels, int kh, int kw, int stride, bool valid, PadMode pad_w_mode,
                    Rng& rng)
        : ch_(channels), kh_(kh), kw_(kw), stride_(stride), valid_(valid),
          pad_w_mode_(pad_w_mode) {
        w_.reshape({channels, kh, kw});
        b_.reshape({channels});
        dw_.reshape({channels, kh, kw});
        db_.reshape({channels});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(kh) * kw));
        for (auto& v : w_.data) v = static_cast<S>(rng.normal() * stddev);
    }

    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        if (x.dim(1) != ch_) throw ShapeMismatch("depthwise channel mismatch");
        x_ = x;
        const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
        if (valid_) {
            if (height < kh_ || width < kw_)
                throw InputTooSmall("input " + x.shape_str() + " smaller than kernel");
            oh_ = (height - kh_) / stride_ + 1;
            ow_ = (width - kw_) / stride_ + 1;
            pt_ = pl_ = 0;
        } else {
            oh_ = detail::same_out(height, stride_);
            ow_ = detail::same_out(width, stride_);
            pt_ = detail::pad_before(height, oh_, kh_, stride_);
            pl_ = detail::pad_before(width, ow_, kw_, stride_);
        }
        out_.reshape_for_overwrite({batch, ch_, oh_, ow_});
        detail::fill_wrap_table(iw_tab_, ow_, kw_, stride_, pl_, width, pad_w_mode_);
        const int* tab = iw_tab_.data();
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < ch_; ++c) {
                const S* kernel = &w_.data[static_cast<size_t>(c) * kh_ * kw_];
                const S* plane = &x.at4(n, c, 0, 0);
                for (int oh = 0; oh < oh_; ++oh)
                    for (int ow = 0; ow < ow_; ++ow) {
                        double acc = b_.data[c];
                        for (int i = 0; i < kh_; ++i) {
                            const int ih = oh * stride_ - pt_ + i;
                            if (ih < 0 || ih >= height) continue;
                            const S* xrow = plane + static_cast<size_t>(ih) * width;
                            for (int j = 0; j < kw_; ++j) {
                                const int iw = tab[ow * kw_ + j];
                                if (iw < 0) continue;
                                acc += static_cast<double>(kernel[i * kw_ + j]) * xrow[iw];
                            }
                        }
                        out_.at4(n, c, oh, ow) = static_cast<S>(acc);
                    }
            }
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const int batch = x_.dim(0), height = x_.dim(2), width = x_.dim(3);
        dx_.reshape({batch, ch_, height, width});
        const int* tab = iw_tab_.data();
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < ch_; ++c) {
                S* dkernel = &dw_.data[static_cast<size_t>(c) * kh_ * kw_];
                const S* kernel = &w_.data[static_cast<size_t>(c) * kh_ * kw_];
                const S* xplane = &x_.at4(n, c, 0, 0);
                S* dplane = &dx_.at4(n, c, 0, 0);
                for (int oh = 0; oh < oh_; ++oh)
                    for (int ow = 0; ow < ow_; ++ow) {
                        const S g = dy.at4(n, c, oh, ow);
                        db_.data[c] += g;
                        for (int i = 0; i < kh_; ++i) {
                            const int ih = oh * stride_ - pt_ + i;
                            if (ih < 0 || ih >= height) continue;
                            const S* xrow = xplane + static_cast<size_t>(ih) * width;
                            S* drow = dplane + static_cast<size_t>(ih) * width;
                            for (int j = 0; j < kw_; ++j) {
                                const int iw = tab[ow * kw_ + j];
                                if (iw < 0) continue;
                                dkernel[i * kw_ + j] += g * xrow[iw];
                                drow[iw] += g * kernel[i * kw_ + j];
                            }
                        }
                    }
            }
        return dx_;
    }

    void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        out.push_back({prefix + ".weight", &w_, &dw_});
        out.push_back({prefix + ".bias", &b_, &db_});
    }

    Tensor<S> w_, b_, dw_, db_;

  private:
    int ch_, kh_, kw_, stride_;
    bool valid_;
    PadMode pad_w_mode_;
    int oh_ = 0, ow_ = 0, pt_ = 0, pl_ = 0;
    Tensor<S> x_, out_, dx_;
    std::vector<int> iw_tab_;
};

template <typename S>
class BatchNorm2d : public Layer<S> {
  public:
    explicit BatchNorm2d(int channels) : ch_(channels) {
        gamma_.reshape({channels});
        beta_.reshape({channels});
        dgamma_.reshape({channels});
        dbeta_.reshape({channels});
        running_mean_.reshape({channels});
        running_var_.reshape({channels});
        for (auto& v : gamma_.data) v = S(1);
        for (auto& v : running_var_.data) v = S(1);
    }

    const Tensor<S>& forward(const Tensor<S>& x, bool train, Rng*) override {
        if (x.dim(1) != ch_) throw ShapeMismatch("batchnorm channel mismatch");
        const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
        const long m = static_cast<long>(batch) * height * width;
        const size_t hw = static_cast<size_t>(height) * width;
        out_.reshape_for_overwrite(x.shape);
        xhat_.reshape_for_overwrite(x.shape);
        inv_std_.assign(static_cast<size_t>(ch_), 0.0);
        train_ = train;
        m_ = m;
        for (int c = 0; c < ch_; ++c) {
            double mean, var;
            if (train) {
                double sum = 0.0, sq = 0.0;
                for (int n = 0; n < batch; ++n) {
                    const S* px = x.data.data() + (static_cast<size_t>(n) * ch_ + c) * hw;
                    for (size_t i = 0; i < hw; ++i) {
                        const double v = px[i];
                        sum += v;
                        sq += v * v;
                    }
                }
                mean = sum / m;
                var = std::max(0.0, sq / m - mean * mean);
                const double unbiased = m > 1 ? var * m / (m - 1) : var;
                running_mean_.data[c] =
                    static_cast<S>((1.0 - kMomentum) * running_mean_.data[c] + kMomentum * mean);
                running_var_.data[c] = static_cast<S>((1.0 - kMomentum) * running_var_.data[c] +
                                                      kMomentum * unbiased);
            } else {
                mean = running_mean_.data[c];
                var = running_var_.data[c];
            }
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_[c] = inv;
            const double g = gamma_.data[c], b = beta_.data[c];
            for (int n = 0; n < batch; ++n) {
                const size_t base = (static_cast<size_t>(n) * ch_ + c) * hw;
                const S* px = x.data.data() + base;
                S* pxh = xhat_.data.data() + base;
                S* pout = out_.data.data() + base;
                for (size_t i = 0; i < hw; ++i) {
                    const double xh = (px[i] - mean) * inv;
                    pxh[i] = static_cast<S>(xh);
                    pout[i] = static_cast<S>(g * xh + b);
                }
            }
        }
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const int batch = dy.dim(0), height = dy.dim(2), width = dy.dim(3);
        const size_t hw = static_cast<size_t>(height) * width;
        dx_.reshape_for_overwrite(dy.shape);
        for (int c = 0; c < ch_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < batch; ++n) {
                const size_t base = (static_cast<size_t>(n) * ch_ + c) * hw;
                const S* pdy = dy.data.data() + base;
                const S* pxh = xhat_.data.data() + base;
                for (size_t i = 0; i < hw; ++i) {
                    const double g = pdy[i];
                    sum_dy += g;
                    sum_dy_xhat += g * pxh[i];
                }
            }
            dbeta_.data[c] += static_cast<S>(sum_dy);
            dgamma_.data[c] += static_cast<S>(sum_dy_xhat);
            const double g = gamma_.data[c], inv = inv_std_[c];
            if (train_) {
                const double scale = g * inv / static_cast<double>(m_);
                for (int n = 0; n < batch; ++n) {
                    const size_t base = (static_cast<size_t>(n) * ch_ + c) * hw;
                    const S* pdy = dy.data.data() + base;
                    const S* pxh = xhat_.data.data() + base;
                    S* pdx = dx_.data.data() + base;
                    for (size_t i = 0; i < hw; ++i)
                        pdx[i] = static_cast<S>(
                            scale * (m_ * pdy[i] - sum_dy - pxh[i] * sum_dy_xhat));
                }
            } else {
                for (int n = 0; n < batch; ++n) {
                    const size_t base = (static_cast<size_t>(n) * ch_ + c) * hw;
                    const S* pdy = dy.data.data() + base;
                    S* pdx = dx_.data.data() + base;
                    for (size_t i = 0; i < hw; ++i) pdx[i] = static_cast<S>(g * inv * pdy[i]);
                }
            }
        }
        return dx_;
    }

    void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
        out.push_back({prefix + ".beta", &beta_, &dbeta_});
    }
    void collect_buffers(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        out.push_back({prefix + ".running_mean", &running_mean_, nullptr});
        out.push_back({prefix + ".running_var", &running_var_, nullptr});
    }

    static constexpr double kMomentum = 0.1;
    static constexpr double kEps = 1e-5;
    Tensor<S> gamma_, beta_, dgamma_, dbeta_, running_mean_, running_var_;

  private:
    int ch_;
    bool train_ = false;
    long m_ = 0;
    Tensor<S> out_, xhat_, dx_;
    std::vector<double> inv_std_;
};

template <typename S>
class ReLU6 : public Layer<S> {
  public:
    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        x_ = x;
        out_.reshape_for_overwrite(x.shape);
        for (size_t i = 0; i < x.data.size(); ++i)
            out_.data[i] = std::min(std::max(x.data[i], S(0)), S(6));
        return out_;
    }
    const Tensor<S>& backward(const Tensor<S>& dy) override {
        dx_.reshape_for_overwrite(dy.shape);
        for (size_t i = 0; i < dy.data.size(); ++i)
            dx_.data[i] = (x_.data[i] > S(0) && x_.data[i] < S(6)) ? dy.data[i] : S(0);
        return dx_;
    }

  private:
    Tensor<S> x_, out_, dx_;
};

template <typename S>
class ReLU : public Layer<S> {
  public:
    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        x_ = x;
        out_.reshape_for_overwrite(x.shape);
        for (size_t i = 0; i < x.data.size(); ++i) out_.data[i] = std::max(x.data[i], S(0));
        return out_;
    }
    const Tensor<S>& backward(const Tensor<S>& dy) override {
        dx_.reshape_for_overwrite(dy.shape);
        for (size_t i = 0; i < dy.data.size(); ++i)
            dx_.data[i] = x_.data[i] > S(0) ? dy.data[i] : S(0);
        return dx_;
    }

  private:
    Tensor<S> x_, out_, dx_;
};

template <typename S>
class Dense : public Layer<S> {
  public:
    Dense(int in, int out, Rng& rng) : in_(in), out_(out) {
        w_.reshape({out, in});
        b_.reshape({out});
        dw_.reshape({out, in});
        db_.reshape({out});
        const double stddev = std::sqrt(2.0 / in);
        for (auto& v : w_.data) v = static_cast<S>(rng.normal() * stddev);
    }

    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        if (x.dim(1) != in_) throw ShapeMismatch("dense expects width " + std::to_string(in_));
        x_ = x;
        const int batch = x.dim(0);
        y_.reshape_for_overwrite({batch, out_});
        matmul(x.data.data(), w_.data.data(), y_.data.data(), batch, in_, out_, false, false,
               true);
        for (int n = 0; n < batch; ++n)
            for (int o = 0; o < out_; ++o) y_.at2(n, o) += b_.data[o];
        return y_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const int batch = x_.dim(0);
        matmul(dy.data.data(), x_.data.data(), dw_.data.data(), out_, batch, in_, true, true,
               false);
        for (int n = 0; n < batch; ++n)
            for (int o = 0; o < out_; ++o) db_.data[o] += dy.at2(n, o);
        dx_.reshape_for_overwrite({batch, in_});
        matmul(dy.data.data(), w_.data.data(), dx_.data.data(), batch, out_, in_);
        return dx_;
    }

    void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        out.push_back({prefix + ".weight", &w_, &dw_});
        out.push_back({prefix + ".bias", &b_, &db_});
    }

    Tensor<S> w_, b_, dw_, db_;

  private:
    int in_, out_;
    Tensor<S> x_, y_, dx_;
};

template <typename S>
class Dropout : public Layer<S> {
  public:
    explicit Dropout(double rate) : rate_(rate) {}

    const Tensor<S>& forward(const Tensor<S>& x, bool train, Rng* rng) override {
        out_.reshape_for_overwrite(x.shape);
        mask_.assign(x.data.size(), 1);
        if (train && rate_ > 0.0) {
            if (!rng) throw InvalidConfig("dropout in train mode needs a generator");
            const S scale = static_cast<S>(1.0 / (1.0 - rate_));
            for (size_t i = 0; i < x.data.size(); ++i) {
                if (rng->bernoulli(rate_)) {
                    mask_[i] = 0;
                    out_.data[i] = S(0);
                } else {
                    out_.data[i] = x.data[i] * scale;
                }
            }
        } else {
            out_.data = x.data;
        }
        train_ = train;
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        dx_.reshape_for_overwrite(dy.shape);
        if (train_ && rate_ > 0.0) {
            const S scale = static_cast<S>(1.0 / (1.0 - rate_));
            for (size_t i = 0; i < dy.data.size(); ++i)
                dx_.data[i] = mask_[i] ? dy.data[i] * scale : S(0);
        } else {
            dx_.data = dy.data;
        }
        return dx_;
    }

  private:
    double rate_;
    bool train_ = false;
    Tensor<S> out_, dx_;
    std::vector<uint8_t> mask_;
};

template <typename S>
class GlobalAvgPool2d : public Layer<S> {
  public:
    const Tensor<S>& forward(const Tensor<S>& x, bool, Rng*) override {
        const int batch = x.dim(0), ch = x.dim(1);
        h_ = x.dim(2);
        w_ = x.dim(3);
        out_.reshape_for_overwrite({batch, ch});
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int h = 0; h < h_; ++h)
                    for (int w = 0; w < w_; ++w) acc += x.at4(n, c, h, w);
                out_.at2(n, c) = static_cast<S>(acc / (static_cast<double>(h_) * w_));
            }
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const int batch = dy.dim(0), ch = dy.dim(1);
        dx_.reshape_for_overwrite({batch, ch, h_, w_});
        const S scale = static_cast<S>(1.0 / (static_cast<double>(h_) * w_));
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < ch; ++c) {
                const S g = dy.at2(n, c) * scale;
                for (int h = 0; h < h_; ++h)
                    for (int w = 0; w < w_; ++w) dx_.at4(n, c, h, w) = g;
            }
        return dx_;
    }

  private:
    int h_ = 0, w_ = 0;
    Tensor<S> out_, dx_;
};

// Inverted residual: 1x1 expand -> BN -> ReLU6 -> 3x3 depthwise (stride s) ->
// BN -> ReLU6 -> 1x1 project -> BN (linear). Residual when stride 1 and the
// channel count is unchanged.
template <typename S>
class Bottleneck : public Layer<S> {
  public:
    Bottleneck(int in_ch, int out_ch, int expansion, int stride, Rng& rng)
        : residual_(stride == 1 && in_ch == out_ch),
          expand_(in_ch, in_ch * expansion, 1, 1, 1, PadMode::circular, rng),
          bn1_(in_ch * expansion),
          dw_(in_ch * expansion, 3, 3, stride, false, PadMode::circular, rng),
          bn2_(in_ch * expansion),
          project_(in_ch * expansion, out_ch, 1, 1, 1, PadMode::circular, rng),
          bn3_(out_ch) {}

    const Tensor<S>& forward(const Tensor<S>& x, bool train, Rng* rng) override {
        if (residual_) x_ = x;
        const Tensor<S>* t = &expand_.forward(x, train, rng);
        t = &bn1_.forward(*t, train, rng);
        t = &act1_.forward(*t, train, rng);
        t = &dw_.forward(*t, train, rng);
        t = &bn2_.forward(*t, train, rng);
        t = &act2_.forward(*t, train, rng);
        t = &project_.forward(*t, train, rng);
        t = &bn3_.forward(*t, train, rng);
        if (!residual_) return *t;
        out_ = *t;
        for (size_t i = 0; i < out_.data.size(); ++i) out_.data[i] += x_.data[i];
        return out_;
    }

    const Tensor<S>& backward(const Tensor<S>& dy) override {
        const Tensor<S>* g = &bn3_.backward(dy);
        g = &project_.backward(*g);
        g = &act2_.backward(*g);
        g = &bn2_.backward(*g);
        g = &dw_.backward(*g);
        g = &act1_.backward(*g);
        g = &bn1_.backward(*g);
        g = &expand_.backward(*g);
        if (!residual_) return *g;
        dx_ = *g;
        for (size_t i = 0; i < dx_.data.size(); ++i) dx_.data[i] += dy.data[i];
        return dx_;
    }

    void collect_params(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        expand_.collect_params(out, prefix + ".expand");
        bn1_.collect_params(out, prefix + ".bn1");
        dw_.collect_params(out, prefix + ".dw");
        bn2_.collect_params(out, prefix + ".bn2");
        project_.collect_params(out, prefix + ".project");
        bn3_.collect_params(out, prefix + ".bn3");
    }
    void collect_buffers(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
        bn1_.collect_buffers(out, prefix + ".bn1");
        bn2_.collect_buffers(out, prefix + ".bn2");
        bn3_.collect_buffers(out, prefix + ".bn3");
    }

    bool residual_;
    Conv2d<S> expand_;
    BatchNorm2d<S> bn1_;
    DepthwiseConv2d<S> dw_;
    BatchNorm2d<S> bn2_;
    Conv2d<S> project_;
    BatchNorm2d<S> bn3_;

  private:
    ReLU6<S> act1_, act2_;
    Tensor<S> x_, out_, dx_;
};

// Softmax over rows fused with cross-entropy against soft targets.
template <typename S>
class SoftmaxCrossEntropy {
  public:
    // probabilities, numerically stable, 64-bit accumulation
    const Tensor<S>& forward(const Tensor<S>& logits) {
        const int batch = logits.dim(0), classes = logits.dim(1);
        probs_.reshape_for_overwrite({batch, classes});
        for (int n = 0; n < batch; ++n) {
            double mx = -1e300;
            for (int c = 0; c < classes; ++c)
                mx = std::max(mx, static_cast<double>(logits.at2(n, c)));
            double denom = 0.0;
            for (int c = 0; c < classes; ++c)
                denom += std::exp(static_cast<double>(logits.at2(n, c)) - mx);
            for (int c = 0; c < classes; ++c)
                probs_.at2(n, c) = static_cast<S>(
                    std::exp(static_cast<double>(logits.at2(n, c)) - mx) / denom);
        }
        return probs_;
    }

    double loss(const Tensor<S>& logits, const Tensor<S>& targets) {
        forward(logits);
        const int batch = logits.dim(0), classes = logits.dim(1);
        double total = 0.0;
        for (int n = 0; n < batch; ++n) {
            double mx = -1e300;
            for (int c = 0; c < classes; ++c)
                mx = std::max(mx, static_cast<double>(logits.at2(n, c)));
            double denom = 0.0;
            for (int c = 0; c < classes; ++c)
                denom += std::exp(static_cast<double>(logits.at2(n, c)) - mx);
            const double log_denom = std::log(denom);
            for (int c = 0; c < classes; ++c) {
                const double t = targets.at2(n, c);
                if (t != 0.0)
                    total -= t * (static_cast<double>(logits.at2(n, c)) - mx - log_denom);
            }
        }
        return total / batch;
    }

    const Tensor<S>& backward(const Tensor<S>& targets) {
        const int batch = probs_.dim(0), classes = probs_.dim(1);
        dlogits_.reshape({batch, classes});
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < classes; ++c)
                dlogits_.at2(n, c) =
                    (probs_.at2(n, c) - targets.at2(n, c)) / static_cast<S>(batch);
        return dlogits_;
    }

    const Tensor<S>& probs() const { return probs_; }

  private:
    Tensor<S> probs_, dlogits_;
};

}  // namespace aad::net
