#include "dasr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dasr {

namespace {

thread_local KinkMonitor* g_kink_monitor = nullptr;

// Dot product with eight independent partial sums, combined in a fixed
// tree; vectorizes without reassociation flags and stays deterministic.
template <class T>
T dot_fixed(const T* __restrict a, const T* __restrict b, int len) {
    T lanes[8] = {};
    int i = 0;
    for (; i + 8 <= len; i += 8) {
        for (int k = 0; k < 8; ++k) lanes[k] += a[i + k] * b[i + k];
    }
    for (int k = 0; i < len; ++i, ++k) lanes[k] += a[i] * b[i];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <class T>
void axpy(T* __restrict y, const T* __restrict x, T a, int len) {
    for (int i = 0; i < len; ++i) y[i] += a * x[i];
}

int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Output columns x with 0 <= x*stride + kx - pad < width.
void valid_range(int out_extent, int in_extent, int k_off, int stride, int& lo, int& hi) {
    // x*stride >= -k_off  and  x*stride <= in_extent - 1 - k_off
    lo = k_off >= 0 ? 0 : (-k_off + stride - 1) / stride;
    const int last = in_extent - 1 - k_off;
    hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
    if (hi < lo) hi = lo;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape " + a.shape().str() + " does not match " + b.shape().str());
    }
}

// Either identical shapes or `b` is (N, C, 1, 1) with a's N and C.
template <class T>
bool check_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return false;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.h == 1 && sb.w == 1 && sb.n == sa.n && sb.c == sa.c) return true;
    std::string which = sb.n != sa.n ? "batch" : sb.c != sa.c ? "channel" : "spatial";
    throw ShapeError(std::string(op) + ": cannot broadcast " + sb.str() + " onto " + sa.str() + " (" + which +
                     " dimension)");
}

}  // namespace

KinkMonitor::KinkMonitor()
    : previous_(g_kink_monitor) {
    g_kink_monitor = this;
}

KinkMonitor::~KinkMonitor() { g_kink_monitor = previous_; }

KinkMonitor* KinkMonitor::current() noexcept { return g_kink_monitor; }

void KinkMonitor::observe(bool positive) noexcept {
    hash_ ^= positive ? 0x9eULL : 0x3bULL;
    hash_ *= 1099511628211ULL;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

// Copies each (h, w) plane into a zero-bordered (h + 2·pad, w + 2·pad) plane.
template <class T>
std::vector<T> pad_planes(const T* src, int planes, int h, int w, int pad) {
    const int ph = h + 2 * pad, pw = w + 2 * pad;
    std::vector<T> out(static_cast<std::size_t>(planes) * ph * pw, T(0));
    for (int p = 0; p < planes; ++p) {
        const T* s = src + static_cast<std::size_t>(p) * h * w;
        T* d = out.data() + static_cast<std::size_t>(p) * ph * pw;
        for (int y = 0; y < h; ++y) std::copy(s + y * w, s + (y + 1) * w, d + static_cast<std::size_t>(y + pad) * pw + pad);
    }
    return out;
}

// Accumulates COB output planes of one sample: out[j] += Σ_ci Σ_ky Σ_kx
// w[j][ci][ky][kx] · in[ci][y+ky][x+kx], every element summed in the order
// (ci, ky, kx). `in` holds already padded planes of width pw.
template <class T, int KH, int KW, int COB>
void conv_block_fixed(const T* __restrict in, int cin, int ph, int pw, const T* __restrict w, T* const* out, int ho,
                      int wo) {
    constexpr int K = KH * KW;
    constexpr int L = 8;
    for (int ci = 0; ci < cin; ++ci) {
        const T* plane = in + static_cast<std::size_t>(ci) * ph * pw;
        T wk[COB][K];
        for (int j = 0; j < COB; ++j)
            for (int k = 0; k < K; ++k) wk[j][k] = w[(static_cast<std::size_t>(j) * cin + ci) * K + k];
        for (int y = 0; y < ho; ++y) {
            const T* rows[KH];
            for (int ky = 0; ky < KH; ++ky) rows[ky] = plane + static_cast<std::size_t>(y + ky) * pw;
            T* orow[COB];
            for (int j = 0; j < COB; ++j) orow[j] = out[j] + static_cast<std::size_t>(y) * wo;
            int x = 0;
            // Eight columns at a time in local registers; same per-element
            // order as the scalar tail.
            for (; x + L <= wo; x += L) {
                T t[COB][L];
                for (int j = 0; j < COB; ++j)
                    for (int l = 0; l < L; ++l) t[j][l] = orow[j][x + l];
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx) {
                        T v[L];
                        for (int l = 0; l < L; ++l) v[l] = rows[ky][x + kx + l];
                        for (int j = 0; j < COB; ++j) {
                            const T c = wk[j][ky * KW + kx];
                            for (int l = 0; l < L; ++l) t[j][l] += c * v[l];
                        }
                    }
                for (int j = 0; j < COB; ++j)
                    for (int l = 0; l < L; ++l) orow[j][x + l] = t[j][l];
            }
            for (; x < wo; ++x) {
                T t[COB];
                for (int j = 0; j < COB; ++j) t[j] = orow[j][x];
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx) {
                        const T v = rows[ky][x + kx];
                        for (int j = 0; j < COB; ++j) t[j] += wk[j][ky * KW + kx] * v;
                    }
                for (int j = 0; j < COB; ++j) orow[j][x] = t[j];
            }
        }
    }
}

template <class T>
void conv_block_generic(const T* in, int cin, int ph, int pw, const T* w, int kh, int kw, T* out, int ho, int wo) {
    for (int ci = 0; ci < cin; ++ci) {
        const T* plane = in + static_cast<std::size_t>(ci) * ph * pw;
        const T* wk = w + static_cast<std::size_t>(ci) * kh * kw;
        for (int y = 0; y < ho; ++y) {
            T* orow = out + static_cast<std::size_t>(y) * wo;
            for (int ky = 0; ky < kh; ++ky) {
                const T* row = plane + static_cast<std::size_t>(y + ky) * pw;
                for (int kx = 0; kx < kw; ++kx) axpy(orow, row + kx, wk[ky * kw + kx], wo);
            }
        }
    }
}

template <class T, int KH, int KW>
void conv_sample_fixed(const T* in, int cin, int ph, int pw, const T* w, T* out, int cout, int ho, int wo) {
    const std::size_t wstride = static_cast<std::size_t>(cin) * KH * KW;
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    int co = 0;
    for (; co + 8 <= cout; co += 8) {
        T* outs[8];
        for (int j = 0; j < 8; ++j) outs[j] = out + (co + j) * plane;
        conv_block_fixed<T, KH, KW, 8>(in, cin, ph, pw, w + co * wstride, outs, ho, wo);
    }
    for (; co + 4 <= cout; co += 4) {
        T* outs[4] = {out + co * plane, out + (co + 1) * plane, out + (co + 2) * plane, out + (co + 3) * plane};
        conv_block_fixed<T, KH, KW, 4>(in, cin, ph, pw, w + co * wstride, outs, ho, wo);
    }
    for (; co < cout; ++co) {
        T* outs[1] = {out + co * plane};
        conv_block_fixed<T, KH, KW, 1>(in, cin, ph, pw, w + co * wstride, outs, ho, wo);
    }
}

// Stride-1 correlation of (n, cin, h, w) with (cout, cin, kh, kw) and zero
// padding `pad`; `out` must be pre-filled (bias or zeros) and is accumulated into.
template <class T>
void conv_stride1(const T* x, int n_batch, int cin, int h, int w, const T* wt, int cout, int kh, int kw, int pad,
                  T* out) {
    const int ph = h + 2 * pad, pw = w + 2 * pad;
    const int ho = ph - kh + 1, wo = pw - kw + 1;
    const std::size_t in_per = static_cast<std::size_t>(cin) * h * w;
    const std::size_t out_per = static_cast<std::size_t>(cout) * ho * wo;
    for (int n = 0; n < n_batch; ++n) {
        const std::vector<T> padded = pad_planes(x + n * in_per, cin, h, w, pad);
        T* o = out + n * out_per;
        if (kh == 3 && kw == 3) {
            conv_sample_fixed<T, 3, 3>(padded.data(), cin, ph, pw, wt, o, cout, ho, wo);
        } else if (kh == 1 && kw == 1) {
            conv_sample_fixed<T, 1, 1>(padded.data(), cin, ph, pw, wt, o, cout, ho, wo);
        } else {
            for (int co = 0; co < cout; ++co) {
                conv_block_generic(padded.data(), cin, ph, pw, wt + static_cast<std::size_t>(co) * cin * kh * kw, kh,
                                   kw, o + static_cast<std::size_t>(co) * ho * wo, ho, wo);
            }
        }
    }
}

// gw[co][ci][k] += Σ_n Σ_y Σ_x g[n][co][y][x] · xpad[n][ci][y+ky][x+kx]
// using eight lane-partial sums per tap reduced in a fixed tree.
template <class T, int KH, int KW>
void weight_grad_fixed(const T* xpad, const T* g, int cin, int ph, int pw, int ho, int wo, T* gw_co) {
    constexpr int K = KH * KW;
    constexpr int L = 8;
    for (int ci = 0; ci < cin; ++ci) {
        const T* plane = xpad + static_cast<std::size_t>(ci) * ph * pw;
        T acc[K][L] = {};
        for (int y = 0; y < ho; ++y) {
            const T* grow = g + static_cast<std::size_t>(y) * wo;
            int x = 0;
            for (; x + L <= wo; x += L) {
                for (int ky = 0; ky < KH; ++ky) {
                    const T* row = plane + static_cast<std::size_t>(y + ky) * pw + x;
                    for (int kx = 0; kx < KW; ++kx)
                        for (int l = 0; l < L; ++l) acc[ky * KW + kx][l] += grow[x + l] * row[kx + l];
                }
            }
            for (int l = 0; x < wo; ++x, ++l) {
                for (int ky = 0; ky < KH; ++ky) {
                    const T* row = plane + static_cast<std::size_t>(y + ky) * pw + x;
                    for (int kx = 0; kx < KW; ++kx) acc[ky * KW + kx][l] += grow[x] * row[kx];
                }
            }
        }
        for (int k = 0; k < K; ++k) {
            const T* a = acc[k];
            gw_co[static_cast<std::size_t>(ci) * K + k] +=
                ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        }
    }
}

template <class T>
void weight_grad_generic(const T* xpad, const T* g, int cin, int ph, int pw, int kh, int kw, int ho, int wo,
                         T* gw_co) {
    for (int ci = 0; ci < cin; ++ci) {
        const T* plane = xpad + static_cast<std::size_t>(ci) * ph * pw;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T acc = T(0);
                for (int y = 0; y < ho; ++y)
                    acc += dot_fixed(g + static_cast<std::size_t>(y) * wo,
                                     plane + static_cast<std::size_t>(y + ky) * pw + kx, wo);
                gw_co[(static_cast<std::size_t>(ci) * kh + ky) * kw + kx] += acc;
            }
    }
}

// Strided fallback: straightforward loops, same per-element order.
template <class T>
void conv_strided(const T* x, int n_batch, int cin, int h, int w, const T* wt, int cout, int kh, int kw, int stride,
                  int pad, int ho, int wo, T* out) {
    for (int n = 0; n < n_batch; ++n)
        for (int co = 0; co < cout; ++co) {
            T* o = out + (static_cast<std::size_t>(n) * cout + co) * ho * wo;
            for (int ci = 0; ci < cin; ++ci) {
                const T* in = x + (static_cast<std::size_t>(n) * cin + ci) * h * w;
                const T* wk = wt + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    int y0, y1;
                    valid_range(ho, h, ky - pad, stride, y0, y1);
                    for (int y = y0; y < y1; ++y) {
                        const T* irow = in + static_cast<std::size_t>(y * stride + ky - pad) * w;
                        T* orow = o + static_cast<std::size_t>(y) * wo;
                        for (int kx = 0; kx < kw; ++kx) {
                            int x0, x1;
                            valid_range(wo, w, kx - pad, stride, x0, x1);
                            for (int xx = x0; xx < x1; ++xx) orow[xx] += wk[ky * kw + kx] * irow[xx * stride + kx - pad];
                        }
                    }
                }
            }
        }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    if (stride < 1) throw ShapeError("conv2d: stride must be positive");
    if (padding < 0) throw ShapeError("conv2d: padding must be non-negative");
    if (si.c != sw.c) {
        throw ShapeError("conv2d: input channels (" + std::to_string(si.c) + ") != weight input channels (" +
                         std::to_string(sw.c) + ")");
    }
    if (sw.h % 2 == 0 || sw.w % 2 == 0) throw ShapeError("conv2d: kernel height/width must be odd, got " + sw.str());
    if (!bias.empty() && bias.numel() != static_cast<std::size_t>(sw.n)) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " != output channels " +
                         std::to_string(sw.n));
    }
    const int ho = conv_out_extent(si.h, sw.h, stride, padding);
    const int wo = conv_out_extent(si.w, sw.w, stride, padding);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input height/width too small for kernel " + sw.str());

    const int n_batch = si.n, cin = si.c, cout = sw.n, kh = sw.h, kw = sw.w;
    const int h = si.h, w = si.w;
    const Shape so{n_batch, cout, ho, wo};
    const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
    std::vector<T> out(so.numel());
    for (int n = 0; n < n_batch; ++n)
        for (int co = 0; co < cout; ++co) {
            T* o = out.data() + (static_cast<std::size_t>(n) * cout + co) * oplane;
            std::fill(o, o + oplane, bias.empty() ? T(0) : bias.data()[co]);
        }
    if (stride == 1) {
        conv_stride1(input.data(), n_batch, cin, h, w, weight.data(), cout, kh, kw, padding, out.data());
    } else {
        conv_strided(input.data(), n_batch, cin, h, w, weight.data(), cout, kh, kw, stride, padding, ho, wo, out.data());
    }

    Tape<T>* tape = Tape<T>::recording_for({&input, &weight, &bias});
    if (tape == nullptr) return Tensor<T>(so, std::move(out));

    const int id_x = tape->node_for(input);
    const int id_w = tape->node_for(weight);
    const int id_b = tape->node_for(bias);
    Tensor<T> xin = input.detach();
    Tensor<T> wgt = weight.detach();
    return tape->record(
        "conv2d", so, std::move(out), {id_x, id_w, id_b},
        [=](std::span<const T> g, Tape<T>& t) {
            const T* gout = g.data();
            if (id_x >= 0) {
                auto& gin = t.grad_buffer(id_x);
                if (stride == 1) {
                    // Full correlation of the output gradient with the
                    // spatially flipped, channel-transposed kernel.
                    std::vector<T> wt_flip(wgt.numel());
                    const T* wp = wgt.data();
                    for (int co = 0; co < cout; ++co)
                        for (int ci = 0; ci < cin; ++ci)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx)
                                    wt_flip[((static_cast<std::size_t>(ci) * cout + co) * kh + ky) * kw + kx] =
                                        wp[((static_cast<std::size_t>(co) * cin + ci) * kh + (kh - 1 - ky)) * kw +
                                           (kw - 1 - kx)];
                    const int pad_t = kh - 1 - padding;
                    if (pad_t >= 0 && kw - 1 - padding == pad_t) {
                        conv_stride1(gout, n_batch, cout, ho, wo, wt_flip.data(), cin, kh, kw, pad_t, gin.data());
                    } else {
                        // Padding wider than the kernel reach: crop a
                        // centered full correlation.
                        const int extra = padding - (kh - 1);
                        const int fh = ho + kh - 1, fw = wo + kw - 1;
                        std::vector<T> full(static_cast<std::size_t>(n_batch) * cin * fh * fw, T(0));
                        conv_stride1(gout, n_batch, cout, ho, wo, wt_flip.data(), cin, kh, kw, kh - 1, full.data());
                        for (int n = 0; n < n_batch; ++n)
                            for (int ci = 0; ci < cin; ++ci)
                                for (int y = 0; y < h; ++y)
                                    for (int xx = 0; xx < w; ++xx)
                                        gin[((static_cast<std::size_t>(n) * cin + ci) * h + y) * w + xx] +=
                                            full[((static_cast<std::size_t>(n) * cin + ci) * fh + y + extra) * fw +
                                                 xx + extra];
                    }
                } else {
                    const T* wp = wgt.data();
                    for (int n = 0; n < n_batch; ++n)
                        for (int ci = 0; ci < cin; ++ci) {
                            T* gi = gin.data() + (static_cast<std::size_t>(n) * cin + ci) * h * w;
                            for (int co = 0; co < cout; ++co) {
                                const T* go = gout + (static_cast<std::size_t>(n) * cout + co) * oplane;
                                const T* wk = wp + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
                                for (int ky = 0; ky < kh; ++ky) {
                                    int y0, y1;
                                    valid_range(ho, h, ky - padding, stride, y0, y1);
                                    for (int y = y0; y < y1; ++y)
                                        for (int kx = 0; kx < kw; ++kx) {
                                            int x0, x1;
                                            valid_range(wo, w, kx - padding, stride, x0, x1);
                                            for (int xx = x0; xx < x1; ++xx)
                                                gi[static_cast<std::size_t>(y * stride + ky - padding) * w + xx * stride +
                                                   kx - padding] += wk[ky * kw + kx] * go[y * wo + xx];
                                        }
                                }
                            }
                        }
                }
            }
            if (id_w >= 0) {
                auto& gw = t.grad_buffer(id_w);
                const std::size_t wper = static_cast<std::size_t>(cin) * kh * kw;
                if (stride == 1) {
                    const int ph = h + 2 * padding, pw = w + 2 * padding;
                    for (int n = 0; n < n_batch; ++n) {
                        const auto xpad =
                            pad_planes(xin.data() + static_cast<std::size_t>(n) * cin * h * w, cin, h, w, padding);
                        for (int co = 0; co < cout; ++co) {
                            const T* go = gout + (static_cast<std::size_t>(n) * cout + co) * oplane;
                            T* gk = gw.data() + co * wper;
                            if (kh == 3 && kw == 3) {
                                weight_grad_fixed<T, 3, 3>(xpad.data(), go, cin, ph, pw, ho, wo, gk);
                            } else if (kh == 1 && kw == 1) {
                                weight_grad_fixed<T, 1, 1>(xpad.data(), go, cin, ph, pw, ho, wo, gk);
                            } else {
                                weight_grad_generic(xpad.data(), go, cin, ph, pw, kh, kw, ho, wo, gk);
                            }
                        }
                    }
                } else {
                    const T* xp = xin.data();
                    for (int n = 0; n < n_batch; ++n)
                        for (int co = 0; co < cout; ++co) {
                            const T* go = gout + (static_cast<std::size_t>(n) * cout + co) * oplane;
                            for (int ci = 0; ci < cin; ++ci) {
                                const T* in = xp + (static_cast<std::size_t>(n) * cin + ci) * h * w;
                                for (int ky = 0; ky < kh; ++ky)
                                    for (int kx = 0; kx < kw; ++kx) {
                                        int y0, y1, x0, x1;
                                        valid_range(ho, h, ky - padding, stride, y0, y1);
                                        valid_range(wo, w, kx - padding, stride, x0, x1);
                                        T acc = T(0);
                                        for (int y = y0; y < y1; ++y)
                                            for (int xx = x0; xx < x1; ++xx)
                                                acc += go[y * wo + xx] *
                                                       in[static_cast<std::size_t>(y * stride + ky - padding) * w +
                                                          xx * stride + kx - padding];
                                        gw[co * wper + (static_cast<std::size_t>(ci) * kh + ky) * kw + kx] += acc;
                                    }
                            }
                        }
                }
            }
            if (id_b >= 0) {
                auto& gb = t.grad_buffer(id_b);
                for (int n = 0; n < n_batch; ++n) {
                    for (int co = 0; co < cout; ++co) {
                        const T* go = gout + (static_cast<std::size_t>(n) * cout + co) * oplane;
                        T acc = T(0);
                        for (std::size_t k = 0; k < oplane; ++k) acc += go[k];
                        gb[co] += acc;
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// pixel shuffle

namespace {

template <class T>
std::vector<T> shuffle_values(const T* in, const Shape& si, int r) {
    const int co = si.c / (r * r);
    const int ho = si.h * r, wo = si.w * r;
    std::vector<T> out(si.numel());
    for (int n = 0; n < si.n; ++n)
        for (int c = 0; c < co; ++c)
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b) {
                    const T* src = in + ((static_cast<std::size_t>(n) * si.c + c * r * r + a * r + b) * si.h) * si.w;
                    T* dst = out.data() + (static_cast<std::size_t>(n) * co + c) * ho * wo;
                    for (int y = 0; y < si.h; ++y)
                        for (int x = 0; x < si.w; ++x)
                            dst[static_cast<std::size_t>(y * r + a) * wo + x * r + b] = src[y * si.w + x];
                }
    return out;
}

template <class T>
std::vector<T> unshuffle_values(const T* in, const Shape& si, int r) {
    const int co = si.c * r * r;
    const int ho = si.h / r, wo = si.w / r;
    std::vector<T> out(si.numel());
    for (int n = 0; n < si.n; ++n)
        for (int c = 0; c < si.c; ++c)
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b) {
                    T* dst = out.data() + ((static_cast<std::size_t>(n) * co + c * r * r + a * r + b) * ho) * wo;
                    const T* src = in + (static_cast<std::size_t>(n) * si.c + c) * si.h * si.w;
                    for (int y = 0; y < ho; ++y)
                        for (int x = 0; x < wo; ++x)
                            dst[y * wo + x] = src[static_cast<std::size_t>(y * r + a) * si.w + x * r + b];
                }
    return out;
}

}  // namespace

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r) {
    const Shape& si = input.shape();
    if (r < 1) throw ShapeError("pixel_shuffle: factor must be positive");
    if (si.c % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: channels " + std::to_string(si.c) + " not divisible by r^2 = " +
                         std::to_string(r * r));
    }
    const Shape so{si.n, si.c / (r * r), si.h * r, si.w * r};
    auto out = shuffle_values(input.data(), si, r);
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(so, std::move(out));
    const int id = tape->node_for(input);
    return tape->record("pixel_shuffle", so, std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        auto back = unshuffle_values(g.data(), so, r);
        t.accumulate(id, back);
    });
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r) {
    const Shape& si = input.shape();
    if (r < 1) throw ShapeError("pixel_unshuffle: factor must be positive");
    if (si.h % r != 0 || si.w % r != 0) {
        throw ShapeError("pixel_unshuffle: height/width of " + si.str() + " not divisible by " + std::to_string(r));
    }
    const Shape so{si.n, si.c * r * r, si.h / r, si.w / r};
    auto out = unshuffle_values(input.data(), si, r);
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(so, std::move(out));
    const int id = tape->node_for(input);
    return tape->record("pixel_unshuffle", so, std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        auto back = shuffle_values(g.data(), so, r);
        t.accumulate(id, back);
    });
}

// ---------------------------------------------------------------------------
// pooling and pointwise

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    const Shape& si = input.shape();
    if (si.h < 1 || si.w < 1) throw ShapeError("global_avg_pool: empty spatial extent in " + si.str());
    const Shape so{si.n, si.c, 1, 1};
    const std::size_t plane = si.plane();
    std::vector<T> out(so.numel());
    const T* x = input.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        T acc = T(0);
        const T* p = x + i * plane;
        for (std::size_t k = 0; k < plane; ++k) acc += p[k];
        out[i] = acc / static_cast<T>(plane);
    }
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(so, std::move(out));
    const int id = tape->node_for(input);
    return tape->record("global_avg_pool", so, std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        if (id < 0) return;
        auto& gi = t.grad_buffer(id);
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = g[i] * inv;
            T* p = gi.data() + i * plane;
            for (std::size_t k = 0; k < plane; ++k) p[k] += v;
        }
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
    const auto x = input.values();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    if (KinkMonitor* km = KinkMonitor::current()) {
        for (T v : x) km->observe(v > T(0));
    }
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(input.shape(), std::move(out));
    const int id = tape->node_for(input);
    Tensor<T> xin = input.detach();
    return tape->record("relu", input.shape(), std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        if (id < 0) return;
        auto& gi = t.grad_buffer(id);
        const T* xv = xin.data();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += xv[i] > T(0) ? g[i] : T(0);
    });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& input) {
    const auto x = input.values();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(input.shape(), std::move(out));
    const int id = tape->node_for(input);
    auto y = std::make_shared<const std::vector<T>>(out);
    return tape->record("sigmoid", input.shape(), std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        if (id < 0) return;
        auto& gi = t.grad_buffer(id);
        const auto& yv = *y;
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * yv[i] * (T(1) - yv[i]);
    });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool bcast = check_broadcast(a, b, "add");
    const Shape& s = a.shape();
    const std::size_t plane = bcast ? s.plane() : 1;
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i / plane];
    Tape<T>* tape = Tape<T>::recording_for({&a, &b});
    if (tape == nullptr) return Tensor<T>(s, std::move(out));
    const int ia = tape->node_for(a);
    const int ib = tape->node_for(b);
    return tape->record("add", s, std::move(out), {ia, ib}, [=](std::span<const T> g, Tape<T>& t) {
        t.accumulate(ia, g);
        if (ib < 0) return;
        if (!bcast) {
            t.accumulate(ib, g);
            return;
        }
        auto& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            T acc = T(0);
            for (std::size_t k = 0; k < plane; ++k) acc += g[i * plane + k];
            gb[i] += acc;
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool bcast = check_broadcast(a, b, "mul");
    const Shape& s = a.shape();
    const std::size_t plane = bcast ? s.plane() : 1;
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i / plane];
    Tape<T>* tape = Tape<T>::recording_for({&a, &b});
    if (tape == nullptr) return Tensor<T>(s, std::move(out));
    const int ia = tape->node_for(a);
    const int ib = tape->node_for(b);
    Tensor<T> ad = a.detach();
    Tensor<T> bd = b.detach();
    return tape->record("mul", s, std::move(out), {ia, ib}, [=](std::span<const T> g, Tape<T>& t) {
        const T* ap = ad.data();
        const T* bp = bd.data();
        if (ia >= 0) {
            auto& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bp[i / plane];
        }
        if (ib >= 0) {
            auto& gb = t.grad_buffer(ib);
            if (!bcast) {
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * ap[i];
            } else {
                for (std::size_t i = 0; i < gb.size(); ++i) {
                    gb[i] += dot_fixed(g.data() + i * plane, ap + i * plane, static_cast<int>(plane));
                }
            }
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& input, T s) {
    const auto x = input.values();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
    Tape<T>* tape = Tape<T>::recording_for({&input});
    if (tape == nullptr) return Tensor<T>(input.shape(), std::move(out));
    const int id = tape->node_for(input);
    return tape->record("scale", input.shape(), std::move(out), {id}, [=](std::span<const T> g, Tape<T>& t) {
        if (id < 0) return;
        auto& gi = t.grad_buffer(id);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * s;
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& input) {
    T acc = T(0);
    for (T v : input.values()) acc += v;
    Tape<T>* tape = Tape<T>::recording_for({&input});
    const Shape so{1, 1, 1, 1};
    if (tape == nullptr) return Tensor<T>(so, std::vector<T>{acc});
    const int id = tape->node_for(input);
    return tape->record("sum", so, {acc}, {id}, [=](std::span<const T> g, Tape<T>& t) {
        if (id < 0) return;
        auto& gi = t.grad_buffer(id);
        for (auto& v : gi) v += g[0];
    });
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "l1_loss");
    const auto p = pred.values();
    const auto q = target.values();
    if (p.empty()) throw ShapeError("l1_loss: empty tensors");
    T acc = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    const T count = static_cast<T>(p.size());
    if (KinkMonitor* km = KinkMonitor::current()) {
        for (std::size_t i = 0; i < p.size(); ++i) km->observe(p[i] > q[i]);
    }
    const Shape so{1, 1, 1, 1};
    Tape<T>* tape = Tape<T>::recording_for({&pred, &target});
    if (tape == nullptr) return Tensor<T>(so, std::vector<T>{acc / count});
    const int ip = tape->node_for(pred);
    const int iq = tape->node_for(target);
    Tensor<T> pd = pred.detach();
    Tensor<T> qd = target.detach();
    return tape->record("l1_loss", so, {acc / count}, {ip, iq}, [=](std::span<const T> g, Tape<T>& t) {
        const T* pp = pd.data();
        const T* qp = qd.data();
        const std::size_t len = pd.numel();
        const T step = g[0] / count;
        auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
        if (ip >= 0) {
            auto& gp = t.grad_buffer(ip);
            for (std::size_t i = 0; i < len; ++i) gp[i] += step * sign(pp[i] - qp[i]);
        }
        if (iq >= 0) {
            auto& gq = t.grad_buffer(iq);
            for (std::size_t i = 0; i < len; ++i) gq[i] -= step * sign(pp[i] - qp[i]);
        }
    });
}

#define DASR_INSTANTIATE_OPS(T)                                                                     \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
    template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                        \
    template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                      \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                           \
    template Tensor<T> relu(const Tensor<T>&);                                                      \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> scale(const Tensor<T>&, T);                                                  \
    template Tensor<T> sum(const Tensor<T>&);                                                       \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);

DASR_INSTANTIATE_OPS(float)
DASR_INSTANTIATE_OPS(double)

#undef DASR_INSTANTIATE_OPS

}  // namespace dasr
