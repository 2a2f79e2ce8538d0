#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace dcnn {

// Parameters of a same-padded, stride-1 convolution.
// kernels: (K, K, C_in, C_out), bias: (C_out). K must be odd so the padding
// is symmetric.
template <typename T>
struct ConvParams {
    Tensor<T> kernels;
    Tensor<T> bias;

    std::size_t kernel_size() const { return kernels.dim(0); }
    std::size_t in_channels() const { return kernels.dim(2); }
    std::size_t out_channels() const { return kernels.dim(3); }

    void validate() const {
        if (kernels.rank() != 4) {
            throw ShapeMismatch("conv kernels must be rank-4 (K,K,C_in,C_out), got " +
                                detail::shape_str(kernels.shape()));
        }
        if (kernels.dim(0) != kernels.dim(1)) {
            throw ShapeMismatch("conv kernels must be square, got " +
                                detail::shape_str(kernels.shape()));
        }
        if (kernels.dim(0) % 2 == 0) {
            throw InvalidConfig("conv kernel size must be odd, got " +
                                std::to_string(kernels.dim(0)));
        }
        if (bias.rank() != 1 || bias.dim(0) != out_channels()) {
            throw ShapeMismatch("conv bias must be (C_out), got " +
                                detail::shape_str(bias.shape()));
        }
    }
};

// Parameters of a fully connected layer. weights: (n_in, n_out), bias: (n_out).
template <typename T>
struct DenseParams {
    Tensor<T> weights;
    Tensor<T> bias;

    std::size_t n_in() const { return weights.dim(0); }
    std::size_t n_out() const { return weights.dim(1); }

    void validate() const {
        if (weights.rank() != 2) {
            throw ShapeMismatch("dense weights must be rank-2, got " +
                                detail::shape_str(weights.shape()));
        }
        if (bias.rank() != 1 || bias.dim(0) != weights.dim(1)) {
            throw ShapeMismatch("dense bias must be (n_out), got " +
                                detail::shape_str(bias.shape()));
        }
    }
};

// Mask recorded by a training-mode dropout pass; entries are exactly 0 or 1.
template <typename T>
struct DropoutMask {
    Tensor<T> mask;
    T rate = T(0);
};

// Flat input index of the maximum of each 2x2 window, recorded by
// maxpool_forward so the backward pass can route gradients.
struct PoolArgmax {
    Shape input_shape;
    Shape output_shape;
    std::vector<std::size_t> indices; // one per output cell, row-major
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernels;
    Tensor<T> bias;
};

template <typename T>
struct DenseGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

namespace detail {

// Extracts zero-padded KxK patches of a (H,W,C) input into a row-major
// (H*W, K*K*C) matrix. Row (h*W + w) holds the receptive field of output
// (h, w); column layout matches the flattened first three kernel axes.
template <typename T>
void im2col(const Tensor<T>& input, std::size_t ksize, std::vector<T>& patches) {
    const std::size_t height = input.dim(0);
    const std::size_t width = input.dim(1);
    const std::size_t chans = input.dim(2);
    const std::size_t pad = ksize / 2;
    const std::size_t row_len = ksize * ksize * chans;
    patches.assign(height * width * row_len, T(0));

    const T* in = input.data().data();
    for (std::size_t h = 0; h < height; ++h) {
        for (std::size_t w = 0; w < width; ++w) {
            T* row = patches.data() + (h * width + w) * row_len;
            for (std::size_t dh = 0; dh < ksize; ++dh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h + dh) - static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
                for (std::size_t dw = 0; dw < ksize; ++dw) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w + dw) - static_cast<std::ptrdiff_t>(pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
                    const T* src = in + (static_cast<std::size_t>(ih) * width + static_cast<std::size_t>(iw)) * chans;
                    T* dst = row + (dh * ksize + dw) * chans;
                    std::copy(src, src + chans, dst);
                }
            }
        }
    }
}

// Scatter-adds a (H*W, K*K*C) patch-gradient matrix back onto the (H,W,C)
// input layout, dropping positions that fell in the zero padding.
template <typename T>
void col2im_acc(const std::vector<T>& patches, std::size_t ksize, Tensor<T>& grad_input) {
    const std::size_t height = grad_input.dim(0);
    const std::size_t width = grad_input.dim(1);
    const std::size_t chans = grad_input.dim(2);
    const std::size_t pad = ksize / 2;
    const std::size_t row_len = ksize * ksize * chans;

    T* out = grad_input.data().data();
    for (std::size_t h = 0; h < height; ++h) {
        for (std::size_t w = 0; w < width; ++w) {
            const T* row = patches.data() + (h * width + w) * row_len;
            for (std::size_t dh = 0; dh < ksize; ++dh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h + dh) - static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
                for (std::size_t dw = 0; dw < ksize; ++dw) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w + dw) - static_cast<std::ptrdiff_t>(pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
                    T* dst = out + (static_cast<std::size_t>(ih) * width + static_cast<std::size_t>(iw)) * chans;
                    const T* src = row + (dh * ksize + dw) * chans;
                    for (std::size_t c = 0; c < chans; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

template <typename T>
void check_rank3(const Tensor<T>& t, const char* what) {
    if (t.rank() != 3) {
        throw ShapeMismatch(std::string(what) + " must be rank-3 (H,W,C), got " +
                            shape_str(t.shape()));
    }
}

} // namespace detail

// Same-padded stride-1 convolution: out[h,w,f] = bias[f] +
// sum over (dh,dw,c) of padded_input[h+dh, w+dw, c] * kernel[dh,dw,c,f].
// Implemented as im2col followed by a matrix product.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& p) {
    detail::check_rank3(input, "conv input");
    p.validate();
    if (input.dim(2) != p.in_channels()) {
        throw ShapeMismatch("conv input has " + std::to_string(input.dim(2)) +
                            " channels, kernels expect " + std::to_string(p.in_channels()));
    }

    const std::size_t height = input.dim(0);
    const std::size_t width = input.dim(1);
    const std::size_t ksize = p.kernel_size();
    const std::size_t fout = p.out_channels();
    const std::size_t row_len = ksize * ksize * p.in_channels();

    std::vector<T> patches;
    detail::im2col(input, ksize, patches);

    // Seed the output with the bias, then accumulate the products; the
    // per-element addition order then equals the defining sum
    // bias + sum over (dh,dw,c).
    Tensor<T> out = Tensor<T>::zeros({height, width, fout});
    T* o = out.data().data();
    const T* b = p.bias.data().data();
    for (std::size_t cell = 0; cell < height * width; ++cell) {
        for (std::size_t f = 0; f < fout; ++f) o[cell * fout + f] = b[f];
    }
    detail::gemm_acc(patches.data(), p.kernels.data().data(), out.data().data(),
                     height * width, row_len, fout);
    return out;
}

// Gradients of conv2d_forward with respect to input, kernels and bias.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out) {
    detail::check_rank3(input, "conv input");
    p.validate();
    if (input.dim(2) != p.in_channels()) {
        throw ShapeMismatch("conv input channels disagree with kernels");
    }
    if (grad_out.rank() != 3 || grad_out.dim(0) != input.dim(0) ||
        grad_out.dim(1) != input.dim(1) || grad_out.dim(2) != p.out_channels()) {
        throw ShapeMismatch("conv grad_out shape " + detail::shape_str(grad_out.shape()) +
                            " does not match forward output");
    }

    const std::size_t height = input.dim(0);
    const std::size_t width = input.dim(1);
    const std::size_t cells = height * width;
    const std::size_t ksize = p.kernel_size();
    const std::size_t fout = p.out_channels();
    const std::size_t row_len = ksize * ksize * p.in_channels();

    ConvGrads<T> g;
    g.bias = Tensor<T>::zeros(p.bias.shape());
    T* gb = g.bias.data().data();
    const T* go = grad_out.data().data();
    for (std::size_t cell = 0; cell < cells; ++cell) {
        for (std::size_t f = 0; f < fout; ++f) gb[f] += go[cell * fout + f];
    }

    std::vector<T> patches;
    detail::im2col(input, ksize, patches);

    g.kernels = Tensor<T>::zeros(p.kernels.shape());
    detail::gemm_at_b_acc(patches.data(), go, g.kernels.data().data(), cells, row_len, fout);

    std::vector<T> grad_patches(cells * row_len, T(0));
    detail::gemm_a_bt_acc(go, p.kernels.data().data(), grad_patches.data(), cells, fout, row_len);

    g.input = Tensor<T>::zeros(input.shape());
    detail::col2im_acc(grad_patches, ksize, g.input);
    return g;
}

// 2x2 max pooling with stride 2, per channel. Records the flat input index of
// each selected maximum; ties go to the lowest flat index.
template <typename T>
std::pair<Tensor<T>, PoolArgmax> maxpool_forward(const Tensor<T>& input) {
    detail::check_rank3(input, "pool input");
    const std::size_t height = input.dim(0);
    const std::size_t width = input.dim(1);
    const std::size_t chans = input.dim(2);
    if (height % 2 != 0 || width % 2 != 0) {
        throw OddDimension("maxpool needs even spatial dims, got " +
                           detail::shape_str(input.shape()));
    }

    Tensor<T> out = Tensor<T>::zeros({height / 2, width / 2, chans});
    PoolArgmax argmax;
    argmax.input_shape = input.shape();
    argmax.output_shape = out.shape();
    argmax.indices.resize(out.size());

    const T* in = input.data().data();
    T* o = out.data().data();
    for (std::size_t oh = 0; oh < height / 2; ++oh) {
        for (std::size_t ow = 0; ow < width / 2; ++ow) {
            for (std::size_t c = 0; c < chans; ++c) {
                // Scan the window in ascending flat order so ties keep the
                // first (lowest) index.
                std::size_t best = (2 * oh * width + 2 * ow) * chans + c;
                T best_val = in[best];
                const std::size_t candidates[3] = {
                    (2 * oh * width + 2 * ow + 1) * chans + c,
                    ((2 * oh + 1) * width + 2 * ow) * chans + c,
                    ((2 * oh + 1) * width + 2 * ow + 1) * chans + c,
                };
                for (std::size_t idx : candidates) {
                    if (in[idx] > best_val) {
                        best = idx;
                        best_val = in[idx];
                    }
                }
                const std::size_t out_idx = (oh * (width / 2) + ow) * chans + c;
                o[out_idx] = best_val;
                argmax.indices[out_idx] = best;
            }
        }
    }
    return {std::move(out), std::move(argmax)};
}

// Routes each output-cell gradient to the input position recorded at forward
// time; all other positions receive zero.
template <typename T>
Tensor<T> maxpool_backward(const PoolArgmax& argmax, const Tensor<T>& grad_out) {
    if (grad_out.shape() != argmax.output_shape) {
        throw ShapeMismatch("pool grad_out shape " + detail::shape_str(grad_out.shape()) +
                            " does not match recorded output " +
                            detail::shape_str(argmax.output_shape));
    }
    Tensor<T> grad_input = Tensor<T>::zeros(argmax.input_shape);
    T* gi = grad_input.data().data();
    const T* go = grad_out.data().data();
    for (std::size_t i = 0; i < argmax.indices.size(); ++i) {
        gi[argmax.indices[i]] += go[i];
    }
    return grad_input;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (T& v : y.data()) {
        if (v < T(0)) v = T(0);
    }
    return y;
}

// grad_input = grad_out where x > 0, else 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    if (!x.same_shape(grad_out)) {
        throw ShapeMismatch("relu grad_out shape does not match input");
    }
    Tensor<T> g = Tensor<T>::zeros(x.shape());
    const T* xv = x.data().data();
    const T* go = grad_out.data().data();
    T* gi = g.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > T(0)) gi[i] = go[i];
    }
    return g;
}

// Inverted dropout. Training mode zeroes each activation independently with
// probability `rate` and scales survivors by 1/(1-rate); inference mode is
// the identity with an all-ones mask.
template <typename T>
std::pair<Tensor<T>, DropoutMask<T>> dropout_forward(const Tensor<T>& x, T rate,
                                                     bool training, Rng& rng) {
    if (!(rate >= T(0) && rate < T(1))) {
        throw InvalidRate("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    DropoutMask<T> mask;
    mask.rate = rate;
    if (!training || rate == T(0)) {
        mask.mask = Tensor<T>::full(x.shape(), T(1));
        return {x, std::move(mask)};
    }
    mask.mask = Tensor<T>::zeros(x.shape());
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    const T keep_scale = T(1) / (T(1) - rate);
    const T* xv = x.data().data();
    T* mv = mask.mask.data().data();
    T* yv = y.data().data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (rng.uniform01() >= static_cast<double>(rate)) {
            mv[i] = T(1);
            yv[i] = xv[i] * keep_scale;
        }
    }
    return {std::move(y), std::move(mask)};
}

// grad_input = grad_out * mask / (1 - rate); mirrors the forward scaling.
template <typename T>
Tensor<T> dropout_backward(const DropoutMask<T>& mask, T rate, const Tensor<T>& grad_out) {
    if (!mask.mask.same_shape(grad_out)) {
        throw ShapeMismatch("dropout grad_out shape does not match mask");
    }
    Tensor<T> g = Tensor<T>::zeros(grad_out.shape());
    const T keep_scale = T(1) / (T(1) - rate);
    const T* mv = mask.mask.data().data();
    const T* go = grad_out.data().data();
    T* gi = g.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        gi[i] = go[i] * mv[i] * keep_scale;
    }
    return g;
}

// (H,W,C) -> (H*W*C) in row-major channel-last order:
// out[(h*W + w)*C + c] = x[h,w,c]. The inverse is a plain reshape.
template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x) {
    detail::check_rank3(x, "flatten input");
    return x.reshape({x.size()});
}

// y = x^T W + b for a single sample.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseParams<T>& p) {
    p.validate();
    if (x.rank() != 1 || x.dim(0) != p.n_in()) {
        throw ShapeMismatch("dense input shape " + detail::shape_str(x.shape()) +
                            " does not match weights " + detail::shape_str(p.weights.shape()));
    }
    Tensor<T> y = p.bias;
    const T* xv = x.data().data();
    const T* w = p.weights.data().data();
    T* yv = y.data().data();
    const std::size_t n_out = p.n_out();
    for (std::size_t i = 0; i < p.n_in(); ++i) {
        const T xi = xv[i];
        if (xi == T(0)) continue;
        const T* wrow = w + i * n_out;
        for (std::size_t j = 0; j < n_out; ++j) yv[j] += xi * wrow[j];
    }
    return y;
}

// grad_weights = outer(x, grad_out); grad_bias = grad_out;
// grad_input = W * grad_out.
template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseParams<T>& p,
                             const Tensor<T>& grad_out) {
    p.validate();
    if (x.rank() != 1 || x.dim(0) != p.n_in()) {
        throw ShapeMismatch("dense input shape does not match weights");
    }
    if (grad_out.rank() != 1 || grad_out.dim(0) != p.n_out()) {
        throw ShapeMismatch("dense grad_out shape " + detail::shape_str(grad_out.shape()) +
                            " does not match output size " + std::to_string(p.n_out()));
    }
    DenseGrads<T> g;
    g.bias = grad_out;
    g.weights = Tensor<T>::zeros(p.weights.shape());
    g.input = Tensor<T>::zeros(x.shape());

    const std::size_t n_in = p.n_in();
    const std::size_t n_out = p.n_out();
    const T* xv = x.data().data();
    const T* go = grad_out.data().data();
    const T* w = p.weights.data().data();
    T* gw = g.weights.data().data();
    T* gi = g.input.data().data();
    for (std::size_t i = 0; i < n_in; ++i) {
        const T xi = xv[i];
        const T* wrow = w + i * n_out;
        T* gwrow = gw + i * n_out;
        T acc = T(0);
        for (std::size_t j = 0; j < n_out; ++j) {
            gwrow[j] = xi * go[j];
            acc += wrow[j] * go[j];
        }
        gi[i] = acc;
    }
    return g;
}

// Numerically stable softmax: subtracts the max logit before exponentiating,
// so p_i > 0 and sum p_i = 1 with no overflow.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 1) {
        throw ShapeMismatch("softmax expects a rank-1 tensor, got " +
                            detail::shape_str(logits.shape()));
    }
    Tensor<T> p = Tensor<T>::zeros(logits.shape());
    const T* z = logits.data().data();
    T* pv = p.data().data();
    T zmax = z[0];
    for (std::size_t i = 1; i < logits.size(); ++i) zmax = std::max(zmax, z[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        pv[i] = std::exp(z[i] - zmax);
        sum += pv[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) pv[i] /= sum;
    return p;
}

} // namespace dcnn
