#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff::nn {

enum class Activation { identity, relu };

template <typename T>
inline T silu(T v) {
    return T(double(v) / (1.0 + std::exp(-double(v))));
}

namespace detail {

// Rows of a possibly batched input: the last extent is the vector width,
// leading extents are flattened into a batch dimension.
template <typename T>
inline std::size_t batch_rows(const Tensor<T>& x, std::size_t width, const char* who) {
    if (x.rank() == 0 || x.shape.back() != width)
        throw DimensionError(std::string(who) + ": last extent does not match layer input width");
    return x.size() / width;
}

}  // namespace detail

// Fully connected layer, y = act(W x + b) with W stored out x in.
template <typename T>
struct Dense {
    Tensor<T> w;
    Tensor<T> b;
    Activation act = Activation::identity;

    static Dense seeded(std::size_t in, std::size_t out, Activation act, Rng& rng) {
        Dense d;
        d.w = Tensor<T>({out, in});
        d.b = Tensor<T>({out});
        d.act = act;
        const double bound = std::sqrt(6.0 / double(in));
        for (auto& v : d.w.data) v = T(rng.uniform(-bound, bound));
        return d;
    }

    static Dense zeros(std::size_t in, std::size_t out, Activation act) {
        Dense d;
        d.w = Tensor<T>({out, in});
        d.b = Tensor<T>({out});
        d.act = act;
        return d;
    }

    std::size_t in_width() const { return w.shape[1]; }
    std::size_t out_width() const { return w.shape[0]; }

    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t in = in_width(), out = out_width();
        const std::size_t n = detail::batch_rows(x, in, "dense_forward");
        auto shape = x.shape;
        shape.back() = out;
        Tensor<T> y(std::move(shape));
        for (std::size_t r = 0; r < n; ++r) {
            const T* xi = x.data.data() + r * in;
            T* yo = y.data.data() + r * out;
            for (std::size_t o = 0; o < out; ++o) {
                const T* wr = w.data.data() + o * in;
                T acc = b.data[o];
                for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xi[i];
                yo[o] = act == Activation::relu ? (acc > T(0) ? acc : T(0)) : acc;
            }
        }
        return y;
    }
};

template <typename T>
struct GradTape {
    std::vector<Tensor<T>> dw;
    std::vector<Tensor<T>> db;

    static GradTape like(const std::vector<Dense<T>>& layers) {
        GradTape t;
        for (const auto& l : layers) {
            t.dw.emplace_back(l.w.shape);
            t.db.emplace_back(l.b.shape);
        }
        return t;
    }

    void zero() {
        for (auto& g : dw) g.fill(T(0));
        for (auto& g : db) g.fill(T(0));
    }
};

template <typename T>
struct MlpCache {
    Tensor<T> input;                 // n x in
    std::vector<Tensor<T>> pre;      // per layer, n x out, before activation
    std::vector<Tensor<T>> post;     // per layer, n x out, after activation
    bool valid = false;
};

// Stack of dense layers with exact reverse-mode gradients.
template <typename T>
struct Mlp {
    std::vector<Dense<T>> layers;

    std::size_t in_width() const { return layers.front().in_width(); }
    std::size_t out_width() const { return layers.back().out_width(); }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& l : layers) h = l.forward(h);
        return h;
    }

    // Forward pass that keeps pre/post activations for a later backward call.
    Tensor<T> forward_cached(const Tensor<T>& x, MlpCache<T>& cache) const {
        cache.pre.clear();
        cache.post.clear();
        cache.input = x;
        Tensor<T> h = x;
        for (const auto& l : layers) {
            const std::size_t in = l.in_width(), out = l.out_width();
            const std::size_t n = detail::batch_rows(h, in, "mlp_forward");
            Tensor<T> pre({n, out});
            for (std::size_t r = 0; r < n; ++r) {
                const T* xi = h.data.data() + r * in;
                T* po = pre.data.data() + r * out;
                for (std::size_t o = 0; o < out; ++o) {
                    const T* wr = l.w.data.data() + o * in;
                    T acc = l.b.data[o];
                    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xi[i];
                    po[o] = acc;
                }
            }
            Tensor<T> post = pre;
            if (l.act == Activation::relu)
                for (auto& v : post.data) v = v > T(0) ? v : T(0);
            cache.pre.push_back(std::move(pre));
            cache.post.push_back(post);
            h = std::move(post);
        }
        cache.valid = true;
        return h;
    }

    // Accumulates parameter gradients into the tape and returns dL/dinput.
    // upstream is dL/doutput of the last layer, n x out.
    Tensor<T> backward(const MlpCache<T>& cache, const Tensor<T>& upstream, GradTape<T>& tape) const {
        if (!cache.valid || cache.pre.size() != layers.size())
            throw StateError("backprop called without a cached forward pass");
        if (tape.dw.size() != layers.size())
            throw DimensionError("gradient tape does not match network layout");
        const std::size_t n = cache.input.size() / layers.front().in_width();
        if (upstream.size() != n * layers.back().out_width())
            throw DimensionError("upstream gradient does not match network output");

        Tensor<T> g = upstream;
        for (std::size_t li = layers.size(); li-- > 0;) {
            const auto& l = layers[li];
            const std::size_t in = l.in_width(), out = l.out_width();
            const Tensor<T>& x = li == 0 ? cache.input : cache.post[li - 1];
            const Tensor<T>& pre = cache.pre[li];

            if (l.act == Activation::relu)
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (pre.data[i] <= T(0)) g.data[i] = T(0);

            auto& dw = tape.dw[li];
            auto& db = tape.db[li];
            Tensor<T> gx({n, in});
            for (std::size_t r = 0; r < n; ++r) {
                const T* gr = g.data.data() + r * out;
                const T* xr = x.data.data() + r * in;
                T* gxr = gx.data.data() + r * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const T go = gr[o];
                    if (go == T(0)) continue;
                    T* dwr = dw.data.data() + o * in;
                    const T* wr = l.w.data.data() + o * in;
                    db.data[o] += go;
                    for (std::size_t i = 0; i < in; ++i) {
                        dwr[i] += go * xr[i];
                        gxr[i] += go * wr[i];
                    }
                }
            }
            g = std::move(gx);
        }
        return g;
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> ps;
        for (auto& l : layers) {
            ps.push_back(&l.w);
            ps.push_back(&l.b);
        }
        return ps;
    }
};

// Softmax over the last extent, numerically stabilised by the row max.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const std::size_t width = logits.shape.back();
    const std::size_t n = logits.size() / width;
    Tensor<T> out = logits;
    for (std::size_t r = 0; r < n; ++r) {
        T* row = out.data.data() + r * width;
        T m = row[0];
        for (std::size_t c = 1; c < width; ++c) m = std::max(m, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < width; ++c) {
            row[c] = T(std::exp(double(row[c] - m)));
            sum += row[c];
        }
        for (std::size_t c = 0; c < width; ++c) row[c] /= sum;
    }
    return out;
}

// Mean softmax cross-entropy over the batch; labels are 0-based class ids.
// When dlogits is given it receives (softmax - onehot) / n.
template <typename T>
T softmax_xent(const Tensor<T>& logits, const std::vector<std::size_t>& labels, Tensor<T>* dlogits = nullptr) {
    const std::size_t width = logits.shape.back();
    const std::size_t n = logits.size() / width;
    if (labels.size() != n)
        throw DimensionError("cross-entropy: label count does not match logit rows");
    Tensor<T> p = softmax_rows(logits);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= width) throw RangeError("cross-entropy: label out of range");
        const double pc = std::max(double(p.data[r * width + labels[r]]), 1e-300);
        loss -= std::log(pc);
    }
    loss /= double(n);
    if (dlogits) {
        *dlogits = p;
        for (std::size_t r = 0; r < n; ++r) {
            T* row = dlogits->data.data() + r * width;
            row[labels[r]] -= T(1);
            for (std::size_t c = 0; c < width; ++c) row[c] /= T(double(n));
        }
    }
    return T(loss);
}

// Multi-head scaled dot-product self-attention over a token matrix (n x C).
// forward() is the residual form x + path(x); path() omits the residual so a
// caller can normalise its input separately.
template <typename T>
struct SelfAttention {
    std::size_t heads = 1;
    Dense<T> q, k, v, o;

    static SelfAttention seeded(std::size_t channels, std::size_t heads, Rng& rng) {
        if (heads == 0 || channels % heads != 0)
            throw ConfigError("attention width must be divisible by the head count");
        SelfAttention a;
        a.heads = heads;
        a.q = Dense<T>::seeded(channels, channels, Activation::identity, rng);
        a.k = Dense<T>::seeded(channels, channels, Activation::identity, rng);
        a.v = Dense<T>::seeded(channels, channels, Activation::identity, rng);
        a.o = Dense<T>::seeded(channels, channels, Activation::identity, rng);
        return a;
    }

    std::size_t channels() const { return q.in_width(); }

    Tensor<T> path(const Tensor<T>& x) const {
        const std::size_t c = channels();
        if (c % heads != 0)
            throw ConfigError("attention width must be divisible by the head count");
        const std::size_t n = detail::batch_rows(x, c, "self_attention");
        const std::size_t dh = c / heads;
        const Tensor<T> Q = q.forward(x), K = k.forward(x), V = v.forward(x);
        Tensor<T> mixed({n, c});
        const double scale = 1.0 / std::sqrt(double(dh));
        std::vector<double> row(n);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < n; ++i) {
                const T* qi = Q.data.data() + i * c + off;
                double m = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    const T* kj = K.data.data() + j * c + off;
                    double s = 0;
                    for (std::size_t d = 0; d < dh; ++d) s += double(qi[d]) * double(kj[d]);
                    row[j] = s * scale;
                    m = std::max(m, row[j]);
                }
                double sum = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - m);
                    sum += row[j];
                }
                T* out = mixed.data.data() + i * c + off;
                for (std::size_t j = 0; j < n; ++j) {
                    const T wj = T(row[j] / sum);
                    const T* vj = V.data.data() + j * c + off;
                    for (std::size_t d = 0; d < dh; ++d) out[d] += wj * vj[d];
                }
            }
        }
        return o.forward(mixed);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = path(x);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
        return y;
    }

    // Row-stochastic attention weights, stacked head-major: (heads*n) x n.
    Tensor<T> attention_weights(const Tensor<T>& x) const {
        const std::size_t c = channels();
        const std::size_t n = detail::batch_rows(x, c, "self_attention");
        const std::size_t dh = c / heads;
        const Tensor<T> Q = q.forward(x), K = k.forward(x);
        Tensor<T> w({heads * n, n});
        const double scale = 1.0 / std::sqrt(double(dh));
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < n; ++i) {
                T* row = w.data.data() + (h * n + i) * n;
                double m = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    const T* kj = K.data.data() + j * c + off;
                    const T* qi = Q.data.data() + i * c + off;
                    double s = 0;
                    for (std::size_t d = 0; d < dh; ++d) s += double(qi[d]) * double(kj[d]);
                    row[j] = T(s * scale);
                    m = std::max(m, double(row[j]));
                }
                double sum = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = T(std::exp(double(row[j]) - m));
                    sum += double(row[j]);
                }
                for (std::size_t j = 0; j < n; ++j) row[j] = T(double(row[j]) / sum);
            }
        }
        return w;
    }
};

// 3x3 (or kxk) convolution over an H x W x C tensor with zero padding
// (k-1)/2 and configurable stride. Weights are stored out x k x k x in.
template <typename T>
struct Conv2d {
    std::size_t in_ch = 0, out_ch = 0, ksize = 3, stride = 1;
    Tensor<T> w;
    Tensor<T> b;

    static Conv2d seeded(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride, Rng& rng) {
        Conv2d c;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.ksize = ksize;
        c.stride = stride;
        c.w = Tensor<T>({out_ch, ksize, ksize, in_ch});
        c.b = Tensor<T>({out_ch});
        const double bound = std::sqrt(6.0 / double(ksize * ksize * in_ch));
        for (auto& v : c.w.data) v = T(rng.uniform(-bound, bound));
        return c;
    }

    // Variance-preserving init for convolutions that are not preceded by a
    // rectifier (skip projections, resampling convolutions, the stem).
    static Conv2d seeded_linear(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                                std::size_t stride, Rng& rng) {
        Conv2d c = seeded(in_ch, out_ch, ksize, stride, rng);
        const double shrink = 1.0 / std::sqrt(2.0);
        for (auto& v : c.w.data) v = T(double(v) * shrink);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.shape[2] != in_ch)
            throw DimensionError("conv2d: input channels do not match");
        const std::size_t H = x.shape[0], W = x.shape[1];
        const std::size_t pad = (ksize - 1) / 2;
        const std::size_t Ho = (H + 2 * pad - ksize) / stride + 1;
        const std::size_t Wo = (W + 2 * pad - ksize) / stride + 1;
        Tensor<T> y({Ho, Wo, out_ch});
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                T* out = y.data.data() + (oy * Wo + ox) * out_ch;
                for (std::size_t oc = 0; oc < out_ch; ++oc) out[oc] = b.data[oc];
                for (std::size_t ky = 0; ky < ksize; ++ky) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                    if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                    for (std::size_t kx = 0; kx < ksize; ++kx) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                        if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                        const T* in = x.data.data() + (std::size_t(iy) * W + std::size_t(ix)) * in_ch;
                        for (std::size_t oc = 0; oc < out_ch; ++oc) {
                            const T* wr = w.data.data() + ((oc * ksize + ky) * ksize + kx) * in_ch;
                            T acc = T(0);
                            for (std::size_t ic = 0; ic < in_ch; ++ic) acc += wr[ic] * in[ic];
                            out[oc] += acc;
                        }
                    }
                }
            }
        }
        return y;
    }
};

// Group normalisation over an H x W x C tensor (forward only), eps 1e-5.
template <typename T>
struct GroupNorm {
    std::size_t groups = 1;
    Tensor<T> gamma;
    Tensor<T> beta;

    // largest divisor of channels that is <= 8
    static std::size_t default_groups(std::size_t channels) {
        for (std::size_t g = std::min<std::size_t>(8, channels); g > 1; --g)
            if (channels % g == 0) return g;
        return 1;
    }

    static GroupNorm unit(std::size_t channels, std::size_t groups = 0) {
        GroupNorm n;
        n.groups = groups == 0 ? default_groups(channels) : groups;
        if (channels % n.groups != 0)
            throw ConfigError("group count must divide the channel count");
        n.gamma = Tensor<T>({channels}, T(1));
        n.beta = Tensor<T>({channels});
        return n;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.shape[2] != gamma.size())
            throw DimensionError("group norm: channel count does not match");
        const std::size_t HW = x.shape[0] * x.shape[1];
        const std::size_t C = x.shape[2];
        const std::size_t gc = C / groups;
        Tensor<T> y = x;
        for (std::size_t g = 0; g < groups; ++g) {
            double mean = 0;
            for (std::size_t p = 0; p < HW; ++p)
                for (std::size_t c = g * gc; c < (g + 1) * gc; ++c) mean += double(x.data[p * C + c]);
            mean /= double(HW * gc);
            double var = 0;
            for (std::size_t p = 0; p < HW; ++p)
                for (std::size_t c = g * gc; c < (g + 1) * gc; ++c) {
                    const double d = double(x.data[p * C + c]) - mean;
                    var += d * d;
                }
            var /= double(HW * gc);
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::size_t p = 0; p < HW; ++p)
                for (std::size_t c = g * gc; c < (g + 1) * gc; ++c) {
                    const double norm = (double(x.data[p * C + c]) - mean) * inv;
                    y.data[p * C + c] = T(norm * double(gamma.data[c]) + double(beta.data[c]));
                }
        }
        return y;
    }
};

// Nearest-neighbour 2x upsampling of an H x W x C tensor.
template <typename T>
Tensor<T> nearest_upsample2(const Tensor<T>& x) {
    if (x.rank() != 3) throw DimensionError("upsample: expected an H x W x C tensor");
    const std::size_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
    Tensor<T> y({2 * H, 2 * W, C});
    for (std::size_t r = 0; r < 2 * H; ++r)
        for (std::size_t c = 0; c < 2 * W; ++c) {
            const T* in = x.data.data() + ((r / 2) * W + (c / 2)) * C;
            T* out = y.data.data() + (r * 2 * W + c) * C;
            for (std::size_t ch = 0; ch < C; ++ch) out[ch] = in[ch];
        }
    return y;
}

// Bilinear resize (align-corners) of an H x W x C tensor. Resizing to the
// source extent is an exact copy.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t H2, std::size_t W2) {
    if (x.rank() != 3) throw DimensionError("resize: expected an H x W x C tensor");
    const std::size_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
    if (H2 == H && W2 == W) return x;
    Tensor<T> y({H2, W2, C});
    const double sy = H2 > 1 ? double(H - 1) / double(H2 - 1) : 0.0;
    const double sx = W2 > 1 ? double(W - 1) / double(W2 - 1) : 0.0;
    for (std::size_t r = 0; r < H2; ++r) {
        const double fy = H2 > 1 ? sy * double(r) : 0.5 * double(H - 1);
        const std::size_t y0 = std::min(std::size_t(fy), H - 1);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - double(y0);
        for (std::size_t c = 0; c < W2; ++c) {
            const double fx = W2 > 1 ? sx * double(c) : 0.5 * double(W - 1);
            const std::size_t x0 = std::min(std::size_t(fx), W - 1);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - double(x0);
            const T* p00 = x.data.data() + (y0 * W + x0) * C;
            const T* p01 = x.data.data() + (y0 * W + x1) * C;
            const T* p10 = x.data.data() + (y1 * W + x0) * C;
            const T* p11 = x.data.data() + (y1 * W + x1) * C;
            T* out = y.data.data() + (r * W2 + c) * C;
            for (std::size_t ch = 0; ch < C; ++ch) {
                const double top = double(p00[ch]) * (1 - wx) + double(p01[ch]) * wx;
                const double bot = double(p10[ch]) * (1 - wx) + double(p11[ch]) * wx;
                out[ch] = T(top * (1 - wy) + bot * wy);
            }
        }
    }
    return y;
}

}  // namespace geodiff::nn
