#ifndef MIXLINK_OPS_HPP
#define MIXLINK_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixlink/tensor.hpp"

// Forward and backward kernels for every primitive the architecture needs.
// All ops build autodiff nodes when an input carries requires_grad and plain
// value nodes otherwise. Loops are single-threaded with a fixed iteration
// order, so repeated passes produce bit-identical results.

namespace mixlink {

namespace detail {

template <class T>
bool wants_grad(const TensorPtrT<T>& a) {
    return a && a->requires_grad;
}

inline int conv_out_extent(int in, int pad, int kernel, int stride) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Patch-matrix expansion of one batch item: col is (C*kh*kw) x (OH*OW).
template <class T>
void im2col(const TensorT<T>& x, int n, int kh, int kw, int stride, int pad,
            int oh, int ow, std::vector<T>& col) {
    const int c = x.shape.c, h = x.shape.h, w = x.shape.w;
    col.assign(static_cast<std::size_t>(c) * kh * kw * oh * ow, T(0));
    std::size_t idx = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j)
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride + i - pad;
                    for (int ox = 0; ox < ow; ++ox, ++idx) {
                        const int xx = ox * stride + j - pad;
                        if (y >= 0 && y < h && xx >= 0 && xx < w)
                            col[idx] = x.at(n, ch, y, xx);
                    }
                }
}

// Scatter-add of a col matrix back onto the (padded) input of one batch item.
template <class T>
void col2im_accum(const std::vector<T>& col, int n, int kh, int kw, int stride, int pad,
                  int oh, int ow, TensorT<T>& dx_tensor, std::vector<T>& dx) {
    const int c = dx_tensor.shape.c, h = dx_tensor.shape.h, w = dx_tensor.shape.w;
    std::size_t idx = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j)
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride + i - pad;
                    for (int ox = 0; ox < ow; ++ox, ++idx) {
                        const int xx = ox * stride + j - pad;
                        if (y >= 0 && y < h && xx >= 0 && xx < w)
                            dx[dx_tensor.offset(n, ch, y, xx)] += col[idx];
                    }
                }
}

} // namespace detail

/// 2-D convolution, no bias. kernel is (F, C, kh, kw).
template <class T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& x, const TensorPtrT<T>& kernel, int stride, int pad) {
    const Shape& xs = x->shape;
    const Shape& ks = kernel->shape;
    if (xs.c != ks.c)
        throw std::invalid_argument("conv2d channel mismatch: input has " + std::to_string(xs.c) +
                                    " channels, kernel expects " + std::to_string(ks.c));
    if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d pad must be >= 0");
    const int oh = detail::conv_out_extent(xs.h, pad, ks.h, stride);
    const int ow = detail::conv_out_extent(xs.w, pad, ks.w, stride);
    if (oh <= 0 || ow <= 0)
        throw std::invalid_argument("conv2d output extent is non-positive for input " + xs.str() +
                                    ", kernel " + ks.str());

    auto out = TensorT<T>::make({xs.n, ks.n, oh, ow});
    const int patch = ks.c * ks.h * ks.w;
    const int cells = oh * ow;
    std::vector<T> col;
    for (int n = 0; n < xs.n; ++n) {
        detail::im2col(*x, n, ks.h, ks.w, stride, pad, oh, ow, col);
        for (int f = 0; f < ks.n; ++f) {
            T* dst = &out->data[out->offset(n, f, 0, 0)];
            const T* kf = &kernel->data[static_cast<std::size_t>(f) * patch];
            for (int p = 0; p < patch; ++p) {
                const T kv = kf[p];
                if (kv == T(0)) continue;
                const T* src = &col[static_cast<std::size_t>(p) * cells];
                for (int q = 0; q < cells; ++q) dst[q] += kv * src[q];
            }
        }
    }

    if (detail::wants_grad(x) || detail::wants_grad(kernel)) {
        out->requires_grad = true;
        out->parents = {x, kernel};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, kernel, stride, pad, oh, ow, patch, cells]() {
            const auto& g = self->grad();
            const Shape& ks = kernel->shape;
            std::vector<T> col, dcol;
            for (int n = 0; n < x->shape.n; ++n) {
                if (x->requires_grad || kernel->requires_grad)
                    detail::im2col(*x, n, ks.h, ks.w, stride, pad, oh, ow, col);
                if (kernel->requires_grad) {
                    auto& dk = kernel->grad();
                    for (int f = 0; f < ks.n; ++f) {
                        const T* gf = &g[self->offset(n, f, 0, 0)];
                        T* dkf = &dk[static_cast<std::size_t>(f) * patch];
                        for (int p = 0; p < patch; ++p) {
                            const T* src = &col[static_cast<std::size_t>(p) * cells];
                            T acc = T(0);
                            for (int q = 0; q < cells; ++q) acc += gf[q] * src[q];
                            dkf[p] += acc;
                        }
                    }
                }
                if (x->requires_grad) {
                    dcol.assign(static_cast<std::size_t>(patch) * cells, T(0));
                    for (int f = 0; f < ks.n; ++f) {
                        const T* gf = &g[self->offset(n, f, 0, 0)];
                        const T* kf = &kernel->data[static_cast<std::size_t>(f) * patch];
                        for (int p = 0; p < patch; ++p) {
                            const T kv = kf[p];
                            if (kv == T(0)) continue;
                            T* dst = &dcol[static_cast<std::size_t>(p) * cells];
                            for (int q = 0; q < cells; ++q) dst[q] += kv * gf[q];
                        }
                    }
                    detail::col2im_accum(dcol, n, ks.h, ks.w, stride, pad, oh, ow, *x, x->grad());
                }
            }
        };
    }
    return out;
}

/// Running statistics owned by a batch-norm site. Not trainable parameters.
template <class T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormState(int channels)
        : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel batch normalization. scale/shift have shape (1, C, 1, 1).
/// Train mode normalizes with batch statistics over (batch, height, width)
/// and folds them into the running buffers; eval mode uses the running
/// buffers. Variance is the biased estimator throughout.
template <class T>
TensorPtrT<T> batch_norm(const TensorPtrT<T>& x, const TensorPtrT<T>& scale,
                         const TensorPtrT<T>& shift, BatchNormState<T>& state, Mode mode,
                         T eps = T(1e-5), T momentum = T(0.1)) {
    const Shape& xs = x->shape;
    if (scale->shape.c != xs.c || shift->shape.c != xs.c)
        throw std::invalid_argument("batch_norm scale/shift length must equal channel count " +
                                    std::to_string(xs.c));
    if (!(eps > T(0))) throw std::invalid_argument("batch_norm eps must be positive");
    const std::size_t set_size = static_cast<std::size_t>(xs.n) * xs.h * xs.w;
    if (set_size == 0)
        throw std::invalid_argument("batch_norm over an empty normalization set " + xs.str());

    const int C = xs.c;
    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::Train) {
        for (int c = 0; c < C; ++c) {
            T m = T(0);
            for (int n = 0; n < xs.n; ++n)
                for (int h = 0; h < xs.h; ++h)
                    for (int w = 0; w < xs.w; ++w) m += x->at(n, c, h, w);
            m /= static_cast<T>(set_size);
            T v = T(0);
            for (int n = 0; n < xs.n; ++n)
                for (int h = 0; h < xs.h; ++h)
                    for (int w = 0; w < xs.w; ++w) {
                        const T d = x->at(n, c, h, w) - m;
                        v += d * d;
                    }
            v /= static_cast<T>(set_size);
            mean[c] = m;
            inv_std[c] = T(1) / std::sqrt(v + eps);
            state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * m;
            state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * v;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
        }
    }

    auto out = TensorT<T>::make(xs);
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < C; ++c) {
            const T g = scale->data[c], b = shift->data[c];
            for (int h = 0; h < xs.h; ++h)
                for (int w = 0; w < xs.w; ++w)
                    out->at(n, c, h, w) = g * ((x->at(n, c, h, w) - mean[c]) * inv_std[c]) + b;
        }

    if (detail::wants_grad(x) || detail::wants_grad(scale) || detail::wants_grad(shift)) {
        out->requires_grad = true;
        out->parents = {x, scale, shift};
        TensorT<T>* self = out.get();
        const bool batch_stats = (mode == Mode::Train);
        out->backward_fn = [self, x, scale, shift, mean, inv_std, batch_stats, set_size]() {
            const auto& g = self->grad();
            const Shape& xs = x->shape;
            const T inv_count = T(1) / static_cast<T>(set_size);
            for (int c = 0; c < xs.c; ++c) {
                T sum_dy = T(0), sum_dy_xhat = T(0);
                for (int n = 0; n < xs.n; ++n)
                    for (int h = 0; h < xs.h; ++h)
                        for (int w = 0; w < xs.w; ++w) {
                            const std::size_t o = x->offset(n, c, h, w);
                            const T xhat = (x->data[o] - mean[c]) * inv_std[c];
                            sum_dy += g[o];
                            sum_dy_xhat += g[o] * xhat;
                        }
                if (shift->requires_grad) shift->grad()[c] += sum_dy;
                if (scale->requires_grad) scale->grad()[c] += sum_dy_xhat;
                if (x->requires_grad) {
                    auto& dx = x->grad();
                    const T gam = scale->data[c];
                    for (int n = 0; n < xs.n; ++n)
                        for (int h = 0; h < xs.h; ++h)
                            for (int w = 0; w < xs.w; ++w) {
                                const std::size_t o = x->offset(n, c, h, w);
                                if (batch_stats) {
                                    const T xhat = (x->data[o] - mean[c]) * inv_std[c];
                                    dx[o] += gam * inv_std[c] *
                                             (g[o] - inv_count * sum_dy - xhat * inv_count * sum_dy_xhat);
                                } else {
                                    dx[o] += gam * inv_std[c] * g[o];
                                }
                            }
                }
            }
        };
    }
    return out;
}

/// Elementwise max(0, x). Subgradient at 0 is 0.
template <class T>
TensorPtrT<T> relu(const TensorPtrT<T>& x) {
    auto out = TensorT<T>::make(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x->data[i] > T(0)) dx[i] += g[i];
        };
    }
    return out;
}

/// Concatenate along the channel axis; a occupies the leading range.
template <class T>
TensorPtrT<T> channel_concat(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (!a->shape.same_spatial(b->shape))
        throw std::invalid_argument("channel_concat batch/spatial mismatch: " + a->shape.str() +
                                    " vs " + b->shape.str());
    const Shape& as = a->shape;
    const int cb = b->shape.c;
    auto out = TensorT<T>::make({as.n, as.c + cb, as.h, as.w});
    const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
    for (int n = 0; n < as.n; ++n) {
        std::copy_n(&a->data[static_cast<std::size_t>(n) * as.c * plane], as.c * plane,
                    &out->data[out->offset(n, 0, 0, 0)]);
        if (cb > 0)
            std::copy_n(&b->data[static_cast<std::size_t>(n) * cb * plane], cb * plane,
                        &out->data[out->offset(n, as.c, 0, 0)]);
    }
    if (detail::wants_grad(a) || detail::wants_grad(b)) {
        out->requires_grad = true;
        out->parents = {a, b};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, a, b, plane]() {
            const auto& g = self->grad();
            const int ca = a->shape.c, cb = b->shape.c;
            for (int n = 0; n < a->shape.n; ++n) {
                if (a->requires_grad) {
                    auto& da = a->grad();
                    const T* src = &g[self->offset(n, 0, 0, 0)];
                    T* dst = &da[static_cast<std::size_t>(n) * ca * plane];
                    for (std::size_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
                }
                if (b->requires_grad && cb > 0) {
                    auto& db = b->grad();
                    const T* src = &g[self->offset(n, ca, 0, 0)];
                    T* dst = &db[static_cast<std::size_t>(n) * cb * plane];
                    for (std::size_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return out;
}

/// base with delta added element-wise into channel range
/// [offset, offset + delta.channels). Channels outside the range keep the
/// exact bits of base.
template <class T>
TensorPtrT<T> channel_add_at(const TensorPtrT<T>& base, const TensorPtrT<T>& delta, int offset) {
    if (!base->shape.same_spatial(delta->shape))
        throw std::invalid_argument("channel_add_at batch/spatial mismatch: " + base->shape.str() +
                                    " vs " + delta->shape.str());
    if (offset < 0 || offset + delta->shape.c > base->shape.c)
        throw std::invalid_argument("channel_add_at range [" + std::to_string(offset) + ", " +
                                    std::to_string(offset + delta->shape.c) +
                                    ") overflows base width " + std::to_string(base->shape.c));
    const Shape& bs = base->shape;
    const int cd = delta->shape.c;
    auto out = TensorT<T>::make(bs, base->data);
    for (int n = 0; n < bs.n; ++n)
        for (int c = 0; c < cd; ++c)
            for (int h = 0; h < bs.h; ++h)
                for (int w = 0; w < bs.w; ++w)
                    out->at(n, offset + c, h, w) += delta->at(n, c, h, w);

    if (detail::wants_grad(base) || detail::wants_grad(delta)) {
        out->requires_grad = true;
        out->parents = {base, delta};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, base, delta, offset]() {
            const auto& g = self->grad();
            if (base->requires_grad) base->accum_grad(g);
            if (delta->requires_grad) {
                auto& dd = delta->grad();
                const Shape& ds = delta->shape;
                for (int n = 0; n < ds.n; ++n)
                    for (int c = 0; c < ds.c; ++c)
                        for (int h = 0; h < ds.h; ++h)
                            for (int w = 0; w < ds.w; ++w)
                                dd[delta->offset(n, c, h, w)] +=
                                    g[self->offset(n, offset + c, h, w)];
            }
        };
    }
    return out;
}

/// Elementwise a + b for identically shaped tensors.
template <class T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (!(a->shape == b->shape))
        throw std::invalid_argument("add shape mismatch: " + a->shape.str() + " vs " +
                                    b->shape.str());
    return channel_add_at(a, b, 0);
}

/// Mean over each window; gradient spreads 1/window^2.
template <class T>
TensorPtrT<T> avg_pool(const TensorPtrT<T>& x, int window, int stride) {
    if (window < 1) throw std::invalid_argument("avg_pool window must be >= 1");
    if (stride < 1) throw std::invalid_argument("avg_pool stride must be >= 1");
    const Shape& xs = x->shape;
    if (window > xs.h || window > xs.w)
        throw std::invalid_argument("avg_pool window " + std::to_string(window) +
                                    " larger than spatial extent of " + xs.str());
    const int oh = (xs.h - window) / stride + 1;
    const int ow = (xs.w - window) / stride + 1;
    auto out = TensorT<T>::make({xs.n, xs.c, oh, ow});
    const T inv = T(1) / static_cast<T>(window * window);
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (int i = 0; i < window; ++i)
                        for (int j = 0; j < window; ++j)
                            acc += x->at(n, c, oy * stride + i, ox * stride + j);
                    out->at(n, c, oy, ox) = acc * inv;
                }
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, window, stride, oh, ow, inv]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            const Shape& xs = x->shape;
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c)
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const T gv = g[self->offset(n, c, oy, ox)] * inv;
                            for (int i = 0; i < window; ++i)
                                for (int j = 0; j < window; ++j)
                                    dx[x->offset(n, c, oy * stride + i, ox * stride + j)] += gv;
                        }
        };
    }
    return out;
}

/// Max over each window, gradient routed to the argmax. Padded cells never
/// win; ties break to the first element in row-major scan order.
template <class T>
TensorPtrT<T> max_pool(const TensorPtrT<T>& x, int window, int stride, int pad = 0) {
    if (window < 1) throw std::invalid_argument("max_pool window must be >= 1");
    if (stride < 1) throw std::invalid_argument("max_pool stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("max_pool pad must be >= 0");
    const Shape& xs = x->shape;
    if (window > xs.h + 2 * pad || window > xs.w + 2 * pad)
        throw std::invalid_argument("max_pool window " + std::to_string(window) +
                                    " larger than padded spatial extent of " + xs.str());
    const int oh = (xs.h + 2 * pad - window) / stride + 1;
    const int ow = (xs.w + 2 * pad - window) / stride + 1;
    auto out = TensorT<T>::make({xs.n, xs.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
    std::size_t oi = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    bool found = false;
                    for (int i = 0; i < window; ++i) {
                        const int y = oy * stride + i - pad;
                        if (y < 0 || y >= xs.h) continue;
                        for (int j = 0; j < window; ++j) {
                            const int xx = ox * stride + j - pad;
                            if (xx < 0 || xx >= xs.w) continue;
                            const T v = x->at(n, c, y, xx);
                            if (!found || v > best) {
                                best = v;
                                best_idx = x->offset(n, c, y, xx);
                                found = true;
                            }
                        }
                    }
                    if (!found)
                        throw std::invalid_argument("max_pool window covers only padding");
                    out->data[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, argmax]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            for (std::size_t i = 0; i < g.size(); ++i) dx[(*argmax)[i]] += g[i];
        };
    }
    return out;
}

/// Spatial mean per channel; output shape (N, C, 1, 1).
template <class T>
TensorPtrT<T> global_avg_pool(const TensorPtrT<T>& x) {
    const Shape& xs = x->shape;
    if (xs.h < 1 || xs.w < 1)
        throw std::invalid_argument("global_avg_pool on empty spatial extent " + xs.str());
    auto out = TensorT<T>::make({xs.n, xs.c, 1, 1});
    const T inv = T(1) / static_cast<T>(xs.h * xs.w);
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            T acc = T(0);
            for (int h = 0; h < xs.h; ++h)
                for (int w = 0; w < xs.w; ++w) acc += x->at(n, c, h, w);
            out->at(n, c, 0, 0) = acc * inv;
        }
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, inv]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            const Shape& xs = x->shape;
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c) {
                    const T gv = g[self->offset(n, c, 0, 0)] * inv;
                    for (int h = 0; h < xs.h; ++h)
                        for (int w = 0; w < xs.w; ++w) dx[x->offset(n, c, h, w)] += gv;
                }
        };
    }
    return out;
}

/// Affine map per batch row: x (N, C, 1, 1), weight (K, C, 1, 1), bias
/// (1, K, 1, 1) -> (N, K, 1, 1).
template <class T>
TensorPtrT<T> linear(const TensorPtrT<T>& x, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias) {
    const Shape& xs = x->shape;
    if (xs.h != 1 || xs.w != 1)
        throw std::invalid_argument("linear expects spatially reduced input, got " + xs.str());
    const int K = weight->shape.n, C = weight->shape.c;
    if (xs.c != C)
        throw std::invalid_argument("linear dimension mismatch: input width " +
                                    std::to_string(xs.c) + " vs weight " + weight->shape.str());
    if (bias->shape.c != K)
        throw std::invalid_argument("linear bias length " + std::to_string(bias->shape.c) +
                                    " does not match output width " + std::to_string(K));
    auto out = TensorT<T>::make({xs.n, K, 1, 1});
    for (int n = 0; n < xs.n; ++n)
        for (int k = 0; k < K; ++k) {
            T acc = bias->data[k];
            for (int c = 0; c < C; ++c) acc += weight->data[static_cast<std::size_t>(k) * C + c] *
                                               x->data[static_cast<std::size_t>(n) * C + c];
            out->data[static_cast<std::size_t>(n) * K + k] = acc;
        }
    if (detail::wants_grad(x) || detail::wants_grad(weight) || detail::wants_grad(bias)) {
        out->requires_grad = true;
        out->parents = {x, weight, bias};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, weight, bias]() {
            const auto& g = self->grad();
            const int N = x->shape.n, C = weight->shape.c, K = weight->shape.n;
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    const T gv = g[static_cast<std::size_t>(n) * K + k];
                    if (bias->requires_grad) bias->grad()[k] += gv;
                    for (int c = 0; c < C; ++c) {
                        if (weight->requires_grad)
                            weight->grad()[static_cast<std::size_t>(k) * C + c] +=
                                gv * x->data[static_cast<std::size_t>(n) * C + c];
                        if (x->requires_grad)
                            x->grad()[static_cast<std::size_t>(n) * C + c] +=
                                gv * weight->data[static_cast<std::size_t>(k) * C + c];
                    }
                }
        };
    }
    return out;
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by max
/// subtraction. logits (N, K, 1, 1); returns a scalar tensor.
template <class T>
TensorPtrT<T> softmax_cross_entropy(const TensorPtrT<T>& logits, std::span<const int> labels) {
    const Shape& ls = logits->shape;
    if (ls.h != 1 || ls.w != 1)
        throw std::invalid_argument("softmax_cross_entropy expects (N,K,1,1) logits, got " +
                                    ls.str());
    if (static_cast<int>(labels.size()) != ls.n)
        throw std::invalid_argument("softmax_cross_entropy label count mismatch");
    const int N = ls.n, K = ls.c;
    for (int n = 0; n < N; ++n)
        if (labels[n] < 0 || labels[n] >= K)
            throw std::invalid_argument("label " + std::to_string(labels[n]) +
                                        " out of range [0, " + std::to_string(K) + ")");

    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * K);
    T loss = T(0);
    for (int n = 0; n < N; ++n) {
        const T* row = &logits->data[static_cast<std::size_t>(n) * K];
        T m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        T denom = T(0);
        for (int k = 0; k < K; ++k) denom += std::exp(row[k] - m);
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - m) / denom;
        loss -= (row[labels[n]] - m) - std::log(denom);
    }
    loss /= static_cast<T>(N);

    auto out = TensorT<T>::make({1, 1, 1, 1}, std::vector<T>{loss});
    if (detail::wants_grad(logits)) {
        out->requires_grad = true;
        out->parents = {logits};
        TensorT<T>* self = out.get();
        std::vector<int> owned_labels(labels.begin(), labels.end());
        out->backward_fn = [self, logits, probs, owned_labels]() {
            const T gv = self->grad()[0];
            auto& dl = logits->grad();
            const int N = logits->shape.n, K = logits->shape.c;
            const T inv_n = T(1) / static_cast<T>(N);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    T p = (*probs)[static_cast<std::size_t>(n) * K + k];
                    if (k == owned_labels[n]) p -= T(1);
                    dl[static_cast<std::size_t>(n) * K + k] += gv * p * inv_n;
                }
        };
    }
    return out;
}

/// Inverted dropout. Train mode zeroes elements with probability rate and
/// scales survivors by 1/(1-rate); eval mode (or rate 0) is the identity and
/// returns the input tensor itself.
template <class T>
TensorPtrT<T> dropout(const TensorPtrT<T>& x, double rate, Mode mode, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout rate must be in [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) return x;

    auto mask = std::make_shared<std::vector<T>>(x->size());
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const T keep_scale = T(1.0 / (1.0 - rate));
    for (auto& m : *mask) m = uni(rng) < rate ? T(0) : keep_scale;

    auto out = TensorT<T>::make(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * (*mask)[i];
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, mask]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
        };
    }
    return out;
}

/// Sum of every element as a scalar tensor.
template <class T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& x) {
    T acc = T(0);
    for (const T v : x->data) acc += v;
    auto out = TensorT<T>::make({1, 1, 1, 1}, std::vector<T>{acc});
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x]() {
            const T gv = self->grad()[0];
            auto& dx = x->grad();
            for (auto& d : dx) d += gv;
        };
    }
    return out;
}

/// Inner product with a fixed coefficient vector, as a scalar tensor.
template <class T>
TensorPtrT<T> weighted_sum(const TensorPtrT<T>& x, std::vector<T> weights) {
    if (weights.size() != x->size())
        throw std::invalid_argument("weighted_sum coefficient count mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x->data[i];
    auto out = TensorT<T>::make({1, 1, 1, 1}, std::vector<T>{acc});
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        auto w = std::make_shared<std::vector<T>>(std::move(weights));
        out->backward_fn = [self, x, w]() {
            const T gv = self->grad()[0];
            auto& dx = x->grad();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv * (*w)[i];
        };
    }
    return out;
}

/// Copy of the channel range [start, start + count).
template <class T>
TensorPtrT<T> slice_channels(const TensorPtrT<T>& x, int start, int count) {
    if (start < 0 || count < 0 || start + count > x->shape.c)
        throw std::invalid_argument("slice_channels range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") overflows width " +
                                    std::to_string(x->shape.c));
    const Shape& xs = x->shape;
    auto out = TensorT<T>::make({xs.n, count, xs.h, xs.w});
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
        if (count > 0)
            std::copy_n(&x->data[x->offset(n, start, 0, 0)], count * plane,
                        &out->data[out->offset(n, 0, 0, 0)]);
    if (detail::wants_grad(x)) {
        out->requires_grad = true;
        out->parents = {x};
        TensorT<T>* self = out.get();
        out->backward_fn = [self, x, start, plane]() {
            const auto& g = self->grad();
            auto& dx = x->grad();
            const int count = self->shape.c;
            for (int n = 0; n < x->shape.n; ++n)
                for (std::size_t i = 0; i < count * plane; ++i)
                    dx[x->offset(n, start, 0, 0) + i] += g[self->offset(n, 0, 0, 0) + i];
        };
    }
    return out;
}

} // namespace mixlink

#endif
