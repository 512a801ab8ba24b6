#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/kernels.hpp"
#include "stwave/rng.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

// Shape that `a` and `b` broadcast to (trailing-axis alignment, extent-1 axes
// stretch). Throws ShapeError naming both shapes when incompatible.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t ea = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t eb = i < r - rb ? 1 : b[i - (r - rb)];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

namespace detail {

// Strides of `s` aligned to the broadcast result `out`; 0 where `s` stretches.
inline std::vector<int64_t> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    auto own = row_major_strides(s);
    size_t off = out.size() - s.size();
    for (size_t i = 0; i < s.size(); ++i)
        st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : own[i];
    return st;
}

// Odometer walk over `out`, handing (flat_out, off_a, off_b) to fn.
template <typename F>
void bcast_walk(const Shape& out, const std::vector<int64_t>& sa,
                const std::vector<int64_t>& sb, F&& fn) {
    int64_t n = shape_numel(out);
    int64_t r = static_cast<int64_t>(out.size());
    if (r == 0) {
        fn(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int64_t> c(static_cast<size_t>(r), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, oa, ob);
        for (int64_t ax = r - 1; ax >= 0; --ax) {
            ++c[ax];
            oa += sa[ax];
            ob += sb[ax];
            if (c[ax] < out[ax]) break;
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            c[ax] = 0;
        }
    }
}

inline std::vector<int64_t> inverse_perm(const std::vector<int64_t>& perm) {
    std::vector<int64_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
    return inv;
}

} // namespace detail

// Reverse-mode tape. Usage per step: register leaves, build the graph through
// op methods, call backward(scalar_loss) once, read grads, then reset().
// Tensors remember which tape generation created them, so values from before
// a reset are rejected instead of silently aliasing new nodes.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- registration ---------------------------------------------------

    Tensor<T> leaf(const Tensor<T>& value, bool requires_grad) {
        Tensor<T> v = value;
        v.requires_grad_ = requires_grad;
        return push("leaf", std::move(v), {}, requires_grad, nullptr);
    }

    Tensor<T> constant(const Tensor<T>& value) { return leaf(value, false); }

    // ---- elementwise binary (broadcasting) -------------------------------

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("add", a, b,
                         [](T x, T y) { return x + y; },
                         /*da*/ [](T, T, T g) { return g; },
                         /*db*/ [](T, T, T g) { return g; });
    }

    Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("sub", a, b,
                         [](T x, T y) { return x - y; },
                         [](T, T, T g) { return g; },
                         [](T, T, T g) { return -g; });
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("mul", a, b,
                         [](T x, T y) { return x * y; },
                         [](T, T y, T g) { return g * y; },
                         [](T x, T, T g) { return g * x; });
    }

    // ---- elementwise unary ----------------------------------------------

    Tensor<T> relu(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
        Tensor<T> xv = x;
        return push("relu", Tensor<T>::unchecked(x.shape(), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, xv](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        auto v = xv.data();
                        for (size_t i = 0; i < g.size(); ++i)
                            if (v[i] > T(0)) dx[i] += g[i];
                    });
    }

    Tensor<T> abs(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] < T(0) ? -xd[i] : xd[i];
        Tensor<T> xv = x;
        return push("abs", Tensor<T>::unchecked(x.shape(), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, xv](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        auto v = xv.data();
                        for (size_t i = 0; i < g.size(); ++i) {
                            if (v[i] > T(0)) dx[i] += g[i];
                            else if (v[i] < T(0)) dx[i] -= g[i];
                        }
                    });
    }

    Tensor<T> sigmoid(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (size_t i = 0; i < out.size(); ++i) {
            double v = static_cast<double>(xd[i]);
            // sign-branched form keeps exp() argument non-positive
            double e = std::exp(-std::fabs(v));
            double s = v >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
            out[i] = static_cast<T>(s);
        }
        Tensor<T> y = Tensor<T>::unchecked(x.shape(), std::move(out));
        return push("sigmoid", y, {xi}, node_needs_grad(xi),
                    [this, xi, y](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        auto yv = y.data();
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i] * (T(1) - yv[i]);
                    });
    }

    Tensor<T> tanh(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(std::tanh(static_cast<double>(xd[i])));
        Tensor<T> y = Tensor<T>::unchecked(x.shape(), std::move(out));
        return push("tanh", y, {xi}, node_needs_grad(xi),
                    [this, xi, y](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        auto yv = y.data();
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (T(1) - yv[i] * yv[i]);
                    });
    }

    // y = mul * x + add with scalar constants (e.g. undoing a z-score scaler).
    Tensor<T> affine(const Tensor<T>& x, double mul_c, double add_c) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<T>(mul_c * static_cast<double>(xd[i]) + add_c);
        T m = static_cast<T>(mul_c);
        return push("affine", Tensor<T>::unchecked(x.shape(), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, m](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * m;
                    });
    }

    // ---- softmax ----------------------------------------------------------

    Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
        int32_t xi = resolve(x);
        if (axis < 0 || axis >= x.rank())
            throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
        const Shape& s = x.shape();
        int64_t ax_ext = s[static_cast<size_t>(axis)];
        int64_t inner = 1, outer = 1;
        for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
        for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
        auto xd = x.data();
        std::vector<T> out(xd.size());
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                int64_t base = o * ax_ext * inner + in;
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t a = 0; a < ax_ext; ++a)
                    mx = std::max(mx, static_cast<double>(xd[base + a * inner]));
                double z = 0;
                for (int64_t a = 0; a < ax_ext; ++a) {
                    double e = std::exp(static_cast<double>(xd[base + a * inner]) - mx);
                    out[static_cast<size_t>(base + a * inner)] = static_cast<T>(e);
                    z += e;
                }
                for (int64_t a = 0; a < ax_ext; ++a)
                    out[static_cast<size_t>(base + a * inner)] = static_cast<T>(
                        static_cast<double>(out[static_cast<size_t>(base + a * inner)]) / z);
            }
        }
        Tensor<T> y = Tensor<T>::unchecked(s, std::move(out));
        return push("softmax", y, {xi}, node_needs_grad(xi),
                    [this, xi, y, ax_ext, inner, outer](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        auto yv = y.data();
                        for (int64_t o = 0; o < outer; ++o) {
                            for (int64_t in = 0; in < inner; ++in) {
                                int64_t base = o * ax_ext * inner + in;
                                T dot = T(0);
                                for (int64_t a = 0; a < ax_ext; ++a) {
                                    int64_t k = base + a * inner;
                                    dot += g[static_cast<size_t>(k)] * yv[static_cast<size_t>(k)];
                                }
                                for (int64_t a = 0; a < ax_ext; ++a) {
                                    int64_t k = base + a * inner;
                                    dx[static_cast<size_t>(k)] +=
                                        yv[static_cast<size_t>(k)] * (g[static_cast<size_t>(k)] - dot);
                                }
                            }
                        }
                    });
    }

    // ---- matmul (rank-2) --------------------------------------------------

    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        int32_t ai = resolve(a), bi = resolve(b);
        if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
            throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
        int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
        std::vector<T> out(static_cast<size_t>(m * n), T(0));
        gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
        Tensor<T> av = a, bv = b;
        bool need_a = node_needs_grad(ai), need_b = node_needs_grad(bi);
        return push("matmul", Tensor<T>::unchecked({m, n}, std::move(out)), {ai, bi},
                    need_a || need_b, [this, ai, bi, av, bv, m, k, n, need_a, need_b](std::span<const T> g) {
                        if (need_a) {
                            auto& da = grad_buf(ai);
                            gemm_a_bt_acc(g.data(), bv.data().data(), da.data(), m, n, k);
                        }
                        if (need_b) {
                            auto& db = grad_buf(bi);
                            gemm_at_b_acc(av.data().data(), g.data(), db.data(), k, m, n);
                        }
                    });
    }

    // ---- dilated causal convolution along the trailing (time) axis --------
    //
    // x: (B, C_in, N, T), w: (C_out, C_in, 1, K), output (B, C_out, N, T') with
    // T' = T - (K-1)*dilation. Kernel tap k=K-1 multiplies the newest input
    // column of its window:
    //   y[b,o,n,t] = sum_{c,k} w[o,c,0,k] * x[b,c,n,t + (K-1-k)*dilation]
    Tensor<T> conv_time(const Tensor<T>& x, const Tensor<T>& w, int64_t dilation) {
        int32_t xi = resolve(x), wi = resolve(w);
        if (x.rank() != 4 || w.rank() != 4 || w.extent(2) != 1)
            throw ShapeError("conv_time: want x rank 4 and w (C_out,C_in,1,K); got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
        if (dilation < 1) throw ShapeError("conv_time: dilation must be >= 1");
        int64_t B = x.extent(0), C_in = x.extent(1), N = x.extent(2), Tt = x.extent(3);
        int64_t C_out = w.extent(0), K = w.extent(3);
        if (w.extent(1) != C_in)
            throw ShapeError("conv_time: w expects " + std::to_string(w.extent(1)) +
                             " input channels, x has " + std::to_string(C_in));
        int64_t T_out = Tt - (K - 1) * dilation;
        if (T_out < 1)
            throw ShapeError("conv_time: time extent " + std::to_string(Tt) + " too short for K=" +
                             std::to_string(K) + ", dilation=" + std::to_string(dilation));

        int64_t cols = N * T_out, ck = C_in * K;
        std::vector<T> out(static_cast<size_t>(B * C_out * cols), T(0));
        auto xd = x.data();
        auto wd = w.data();
        if (K == 1) {
            for (int64_t b = 0; b < B; ++b)
                gemm_acc(wd.data(), xd.data() + b * C_in * cols, out.data() + b * C_out * cols,
                         C_out, C_in, cols);
        } else {
            std::vector<T> col(static_cast<size_t>(ck * cols));
            for (int64_t b = 0; b < B; ++b) {
                im2col(xd.data() + b * C_in * N * Tt, col.data(), C_in, N, Tt, K, dilation, T_out);
                gemm_acc(wd.data(), col.data(), out.data() + b * C_out * cols, C_out, ck, cols);
            }
        }

        Tensor<T> xv = x, wv = w;
        bool need_x = node_needs_grad(xi), need_w = node_needs_grad(wi);
        return push("conv_time", Tensor<T>::unchecked({B, C_out, N, T_out}, std::move(out)),
                    {xi, wi}, need_x || need_w,
                    [this, xi, wi, xv, wv, dilation, B, C_in, N, Tt, C_out, K, T_out, need_x,
                     need_w](std::span<const T> g) {
                        int64_t cols = N * T_out, ck = C_in * K;
                        auto xd = xv.data();
                        auto wd = wv.data();
                        if (K == 1) {
                            for (int64_t b = 0; b < B; ++b) {
                                const T* gb = g.data() + b * C_out * cols;
                                if (need_w)
                                    gemm_a_bt_acc(gb, xd.data() + b * C_in * cols,
                                                  grad_buf(wi).data(), C_out, cols, C_in);
                                if (need_x)
                                    gemm_at_b_acc(wd.data(), gb, grad_buf(xi).data() + b * C_in * cols,
                                                  C_in, C_out, cols);
                            }
                            return;
                        }
                        std::vector<T> col(static_cast<size_t>(ck * cols));
                        std::vector<T> dcol;
                        if (need_x) dcol.resize(static_cast<size_t>(ck * cols));
                        for (int64_t b = 0; b < B; ++b) {
                            const T* gb = g.data() + b * C_out * cols;
                            if (need_w) {
                                im2col(xd.data() + b * C_in * N * Tt, col.data(), C_in, N, Tt, K,
                                       dilation, T_out);
                                gemm_a_bt_acc(gb, col.data(), grad_buf(wi).data(), C_out, cols, ck);
                            }
                            if (need_x) {
                                std::fill(dcol.begin(), dcol.end(), T(0));
                                gemm_at_b_acc(wd.data(), gb, dcol.data(), ck, C_out, cols);
                                col2im_acc(dcol.data(), grad_buf(xi).data() + b * C_in * N * Tt,
                                           C_in, N, Tt, K, dilation, T_out);
                            }
                        }
                    });
    }

    // ---- graph mixing: y[b,c,i,t] = sum_j p[i,j] * x[b,c,j,t] -------------

    Tensor<T> node_matmul(const Tensor<T>& p, const Tensor<T>& x) {
        int32_t pi = resolve(p), xi = resolve(x);
        if (p.rank() != 2 || p.extent(0) != p.extent(1))
            throw ShapeError("node_matmul: p must be square rank 2, got " + shape_str(p.shape()));
        if (x.rank() != 4 || x.extent(2) != p.extent(0))
            throw ShapeError("node_matmul: x " + shape_str(x.shape()) + " node axis mismatches p " +
                             shape_str(p.shape()));
        int64_t B = x.extent(0), C = x.extent(1), N = x.extent(2), Tt = x.extent(3);
        std::vector<T> out(static_cast<size_t>(B * C * N * Tt), T(0));
        auto pd = p.data();
        auto xd = x.data();
        for (int64_t s = 0; s < B * C; ++s)
            gemm_acc(pd.data(), xd.data() + s * N * Tt, out.data() + s * N * Tt, N, N, Tt);
        Tensor<T> pv = p, xv = x;
        bool need_p = node_needs_grad(pi), need_x = node_needs_grad(xi);
        return push("node_matmul", Tensor<T>::unchecked(x.shape(), std::move(out)), {pi, xi},
                    need_p || need_x,
                    [this, pi, xi, pv, xv, B, C, N, Tt, need_p, need_x](std::span<const T> g) {
                        auto pd = pv.data();
                        auto xd = xv.data();
                        for (int64_t s = 0; s < B * C; ++s) {
                            const T* gs = g.data() + s * N * Tt;
                            if (need_p)
                                gemm_a_bt_acc(gs, xd.data() + s * N * Tt, grad_buf(pi).data(), N, Tt, N);
                            if (need_x)
                                gemm_at_b_acc(pd.data(), gs, grad_buf(xi).data() + s * N * Tt, N, N, Tt);
                        }
                    });
    }

    // ---- time-axis padding / slicing ---------------------------------------

    Tensor<T> pad_time_left(const Tensor<T>& x, int64_t pad) {
        int32_t xi = resolve(x);
        if (x.rank() < 1) throw ShapeError("pad_time_left: scalar input");
        if (pad < 0) throw ShapeError("pad_time_left: negative pad");
        if (pad == 0) return x;
        int64_t Tt = x.shape().back();
        int64_t outer = x.size() / Tt;
        Shape os = x.shape();
        os.back() = Tt + pad;
        std::vector<T> out(static_cast<size_t>(outer * (Tt + pad)), T(0));
        auto xd = x.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(xd.data() + o * Tt, Tt, out.data() + o * (Tt + pad) + pad);
        return push("pad_time_left", Tensor<T>::unchecked(std::move(os), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, outer, Tt, pad](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t t = 0; t < Tt; ++t)
                                dx[static_cast<size_t>(o * Tt + t)] +=
                                    g[static_cast<size_t>(o * (Tt + pad) + pad + t)];
                    });
    }

    Tensor<T> slice_time(const Tensor<T>& x, int64_t start, int64_t len) {
        int32_t xi = resolve(x);
        if (x.rank() < 1) throw ShapeError("slice_time: scalar input");
        int64_t Tt = x.shape().back();
        if (start < 0 || len < 1 || start + len > Tt)
            throw ShapeError("slice_time: window [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") outside time extent " + std::to_string(Tt));
        if (start == 0 && len == Tt) return x;
        int64_t outer = x.size() / Tt;
        Shape os = x.shape();
        os.back() = len;
        std::vector<T> out(static_cast<size_t>(outer * len));
        auto xd = x.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(xd.data() + o * Tt + start, len, out.data() + o * len);
        return push("slice_time", Tensor<T>::unchecked(std::move(os), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, outer, Tt, start, len](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t t = 0; t < len; ++t)
                                dx[static_cast<size_t>(o * Tt + start + t)] +=
                                    g[static_cast<size_t>(o * len + t)];
                    });
    }

    // ---- layout ------------------------------------------------------------

    Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
        int32_t xi = resolve(x);
        check_shape_valid(shape);
        if (shape_numel(shape) != x.size())
            throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
        Tensor<T> y = x; // payload shared, only the shape changes
        y.shape_ = shape;
        return push("reshape", std::move(y), {xi}, node_needs_grad(xi),
                    [this, xi](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                    });
    }

    Tensor<T> transpose(const Tensor<T>& x, std::vector<int64_t> perm) {
        int32_t xi = resolve(x);
        if (static_cast<int64_t>(perm.size()) != x.rank())
            throw ShapeError("transpose: perm size " + std::to_string(perm.size()) + " vs rank " +
                             std::to_string(x.rank()));
        std::vector<bool> seen(perm.size(), false);
        for (int64_t p : perm) {
            if (p < 0 || p >= x.rank() || seen[static_cast<size_t>(p)])
                throw ShapeError("transpose: invalid permutation");
            seen[static_cast<size_t>(p)] = true;
        }
        Shape os(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) os[i] = x.extent(perm[i]);
        std::vector<T> out(static_cast<size_t>(x.size()));
        permute_copy(x.data().data(), out.data(), x.shape(), perm);
        Tensor<T> y = Tensor<T>::unchecked(std::move(os), std::move(out));
        auto inv = detail::inverse_perm(perm);
        Shape yshape = y.shape();
        return push("transpose", std::move(y), {xi}, node_needs_grad(xi),
                    [this, xi, inv, yshape](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        std::vector<T> gt(g.size());
                        permute_copy(g.data(), gt.data(), yshape, inv);
                        for (size_t i = 0; i < gt.size(); ++i) dx[i] += gt[i];
                    });
    }

    Tensor<T> concat(const std::vector<Tensor<T>>& xs, int64_t axis) {
        if (xs.empty()) throw ShapeError("concat: no inputs");
        std::vector<int32_t> idx;
        idx.reserve(xs.size());
        bool any = false;
        for (const auto& x : xs) {
            idx.push_back(resolve(x));
            any = any || node_needs_grad(idx.back());
        }
        int64_t r = xs[0].rank();
        if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
        Shape os = xs[0].shape();
        int64_t total = 0;
        for (const auto& x : xs) {
            if (x.rank() != r) throw ShapeError("concat: rank mismatch");
            for (int64_t a = 0; a < r; ++a)
                if (a != axis && x.extent(a) != os[static_cast<size_t>(a)])
                    throw ShapeError("concat: extent mismatch at axis " + std::to_string(a) + ": " +
                                     shape_str(xs[0].shape()) + " vs " + shape_str(x.shape()));
            total += x.extent(axis);
        }
        os[static_cast<size_t>(axis)] = total;
        int64_t inner = 1, outer = 1;
        for (int64_t a = axis + 1; a < r; ++a) inner *= os[static_cast<size_t>(a)];
        for (int64_t a = 0; a < axis; ++a) outer *= os[static_cast<size_t>(a)];
        std::vector<T> out(static_cast<size_t>(shape_numel(os)));
        int64_t off = 0;
        std::vector<int64_t> offs;
        std::vector<int64_t> blocks;
        for (const auto& x : xs) {
            int64_t blk = x.extent(axis) * inner;
            auto xd = x.data();
            for (int64_t o = 0; o < outer; ++o)
                std::copy_n(xd.data() + o * blk, blk, out.data() + o * total * inner + off);
            blocks.push_back(blk);
            offs.push_back(off);
            off += blk;
        }
        return push("concat", Tensor<T>::unchecked(std::move(os), std::move(out)), idx, any,
                    [this, idx, offs, blocks, outer, total, inner](std::span<const T> g) {
                        for (size_t q = 0; q < idx.size(); ++q) {
                            if (!node_needs_grad(idx[q])) continue;
                            auto& dx = grad_buf(idx[q]);
                            for (int64_t o = 0; o < outer; ++o) {
                                const T* src = g.data() + o * total * inner + offs[q];
                                T* dst = dx.data() + o * blocks[q];
                                for (int64_t i = 0; i < blocks[q]; ++i) dst[i] += src[i];
                            }
                        }
                    });
    }

    // ---- reductions ---------------------------------------------------------

    Tensor<T> sum(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        double acc = 0;
        for (T v : xd) acc += static_cast<double>(v);
        return push("sum", Tensor<T>::unchecked({}, {static_cast<T>(acc)}), {xi},
                    node_needs_grad(xi), [this, xi](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (auto& v : dx) v += g[0];
                    });
    }

    Tensor<T> mean(const Tensor<T>& x) {
        int32_t xi = resolve(x);
        auto xd = x.data();
        double acc = 0;
        for (T v : xd) acc += static_cast<double>(v);
        T inv_n = static_cast<T>(1.0 / static_cast<double>(xd.size()));
        return push("mean", Tensor<T>::unchecked({}, {static_cast<T>(acc / static_cast<double>(xd.size()))}),
                    {xi}, node_needs_grad(xi), [this, xi, inv_n](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (auto& v : dx) v += g[0] * inv_n;
                    });
    }

    // ---- dropout -------------------------------------------------------------
    //
    // Inverted scaling: kept entries are multiplied by 1/(1-p) so eval needs no
    // rescale. `training=false` or p=0 is the identity (no node pushed).
    Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
        if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
        int32_t xi = resolve(x);
        if (!training || p == 0.0) return x;
        std::vector<T> mask(static_cast<size_t>(x.size()));
        T keep = static_cast<T>(1.0 / (1.0 - p));
        for (auto& m : mask) m = rng.next_double() >= p ? keep : T(0);
        auto xd = x.data();
        std::vector<T> out(mask.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
        auto mk = std::make_shared<const std::vector<T>>(std::move(mask));
        return push("dropout", Tensor<T>::unchecked(x.shape(), std::move(out)), {xi},
                    node_needs_grad(xi), [this, xi, mk](std::span<const T> g) {
                        auto& dx = grad_buf(xi);
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mk)[i];
                    });
    }

    // ---- backward ------------------------------------------------------------

    void backward(const Tensor<T>& loss) {
        int32_t li = resolve(loss);
        if (loss.size() != 1 || loss.rank() != 0)
            throw ContractError("backward: loss must be a rank-0 scalar, got shape " +
                                shape_str(loss.shape()));
        if (sealed_)
            throw ContractError("backward: tape already back-propagated; reset() before reuse");
        sealed_ = true;
        grads_.assign(nodes_.size(), {});
        grad_buf(li)[0] = T(1);
        for (int32_t i = li; i >= 0; --i) {
            if (grads_[static_cast<size_t>(i)].empty()) continue;
            Node& nd = nodes_[static_cast<size_t>(i)];
            if (!nd.needs_grad || !nd.backward) continue;
            nd.backward(std::span<const T>(grads_[static_cast<size_t>(i)]));
        }
        for (size_t i = 0; i < grads_.size(); ++i) {
            for (T v : grads_[i]) {
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericalFault(std::string("backward: non-finite gradient at op '") +
                                         nodes_[i].op + "'");
            }
        }
    }

    bool has_grad(const Tensor<T>& t) const {
        int32_t i = resolve(t);
        return i < static_cast<int32_t>(grads_.size()) && !grads_[static_cast<size_t>(i)].empty();
    }

    Tensor<T> grad(const Tensor<T>& t) const {
        int32_t i = resolve(t);
        if (i >= static_cast<int32_t>(grads_.size()) || grads_[static_cast<size_t>(i)].empty())
            throw ContractError("grad: no gradient recorded for this tensor (did backward run, and is "
                                "the tensor on the path to the loss?)");
        return Tensor<T>::from_data(t.shape(), grads_[static_cast<size_t>(i)]);
    }

    // Invalidates every tensor made by this tape and starts a new generation.
    void reset() {
        nodes_.clear();
        grads_.clear();
        ++generation_;
        sealed_ = false;
    }

    int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }
    uint64_t generation() const { return generation_; }
    bool sealed() const { return sealed_; }

    // Distance from the nearest relu/abs kink over all recorded inputs, for
    // finite-difference checks to reject configurations where a subgradient
    // could legitimately disagree with the numeric slope.
    double min_kink_distance() const {
        double best = std::numeric_limits<double>::infinity();
        for (const Node& nd : nodes_) {
            if (std::string_view(nd.op) != "relu" && std::string_view(nd.op) != "abs") continue;
            auto in = nodes_[static_cast<size_t>(nd.inputs[0])].value.data();
            for (T v : in) best = std::min(best, std::fabs(static_cast<double>(v)));
        }
        return best;
    }

private:
    struct Node {
        const char* op;
        Tensor<T> value;
        std::vector<int32_t> inputs;
        bool needs_grad;
        std::function<void(std::span<const T>)> backward;
    };

    static constexpr int64_t kGenStride = int64_t(1) << 32;

    int32_t resolve(const Tensor<T>& t) const {
        if (!t.on_tape())
            throw ContractError("tensor is not registered on any tape; wrap it with leaf()/constant()");
        int64_t id = t.tape_id();
        uint64_t gen = static_cast<uint64_t>(id / kGenStride);
        int64_t idx = id % kGenStride;
        if (gen != generation_)
            throw ContractError("tensor belongs to tape generation " + std::to_string(gen) +
                                " but the tape is at generation " + std::to_string(generation_) +
                                " (stale value used after reset)");
        if (idx < 0 || idx >= static_cast<int64_t>(nodes_.size()))
            throw ContractError("tensor id out of range for this tape");
        return static_cast<int32_t>(idx);
    }

    bool node_needs_grad(int32_t i) const { return nodes_[static_cast<size_t>(i)].needs_grad; }

    std::vector<T>& grad_buf(int32_t i) {
        auto& g = grads_[static_cast<size_t>(i)];
        if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(i)].value.size()), T(0));
        return g;
    }

    Tensor<T> push(const char* op, Tensor<T> value, std::vector<int32_t> inputs, bool needs_grad,
                   std::function<void(std::span<const T>)> bw) {
        if (sealed_)
            throw ContractError(std::string("tape sealed by backward(); reset() before recording '") +
                                op + "'");
        for (T v : value.data()) {
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericalFault(std::string("op '") + op + "' produced a non-finite value");
        }
        if (static_cast<int64_t>(nodes_.size()) >= kGenStride)
            throw ContractError("tape node limit exceeded");
        value.tape_id_ = static_cast<int64_t>(generation_) * kGenStride +
                         static_cast<int64_t>(nodes_.size());
        value.requires_grad_ = needs_grad;
        nodes_.push_back(Node{op, value, std::move(inputs), needs_grad, std::move(bw)});
        return value;
    }

    template <typename FwdF, typename DaF, typename DbF>
    Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, FwdF f, DaF fa, DbF fb) {
        int32_t ai = resolve(a), bi = resolve(b);
        Shape os = broadcast_shape(a.shape(), b.shape());
        auto ad = a.data();
        auto bd = b.data();
        std::vector<T> out(static_cast<size_t>(shape_numel(os)));
        bool same = a.shape() == b.shape();
        std::vector<int64_t> sa, sb;
        if (same) {
            for (size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
        } else {
            sa = detail::bcast_strides(a.shape(), os);
            sb = detail::bcast_strides(b.shape(), os);
            detail::bcast_walk(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
                out[static_cast<size_t>(i)] = f(ad[static_cast<size_t>(oa)], bd[static_cast<size_t>(ob)]);
            });
        }
        bool need_a = node_needs_grad(ai), need_b = node_needs_grad(bi);
        Tensor<T> av = a, bv = b;
        Shape osc = os;
        return push(op, Tensor<T>::unchecked(std::move(os), std::move(out)), {ai, bi},
                    need_a || need_b,
                    [this, ai, bi, av, bv, fa, fb, same, sa, sb, osc, need_a,
                     need_b](std::span<const T> g) {
                        auto ad = av.data();
                        auto bd = bv.data();
                        if (same) {
                            if (need_a) {
                                auto& da = grad_buf(ai);
                                for (size_t i = 0; i < g.size(); ++i) da[i] += fa(ad[i], bd[i], g[i]);
                            }
                            if (need_b) {
                                auto& db = grad_buf(bi);
                                for (size_t i = 0; i < g.size(); ++i) db[i] += fb(ad[i], bd[i], g[i]);
                            }
                            return;
                        }
                        std::vector<T>* da = need_a ? &grad_buf(ai) : nullptr;
                        std::vector<T>* db = need_b ? &grad_buf(bi) : nullptr;
                        detail::bcast_walk(osc, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
                            T gv = g[static_cast<size_t>(i)];
                            if (da) (*da)[static_cast<size_t>(oa)] +=
                                fa(ad[static_cast<size_t>(oa)], bd[static_cast<size_t>(ob)], gv);
                            if (db) (*db)[static_cast<size_t>(ob)] +=
                                fb(ad[static_cast<size_t>(oa)], bd[static_cast<size_t>(ob)], gv);
                        });
                    });
    }

    static void im2col(const T* x, T* col, int64_t C_in, int64_t N, int64_t Tt, int64_t K,
                       int64_t dilation, int64_t T_out) {
        // col[(c*K + k), (n*T_out + t)] = x[c, n, t + (K-1-k)*dilation]
        for (int64_t c = 0; c < C_in; ++c) {
            for (int64_t k = 0; k < K; ++k) {
                int64_t shift = (K - 1 - k) * dilation;
                T* dst = col + (c * K + k) * N * T_out;
                const T* src = x + c * N * Tt;
                for (int64_t n = 0; n < N; ++n)
                    std::copy_n(src + n * Tt + shift, T_out, dst + n * T_out);
            }
        }
    }

    static void col2im_acc(const T* dcol, T* dx, int64_t C_in, int64_t N, int64_t Tt, int64_t K,
                           int64_t dilation, int64_t T_out) {
        for (int64_t c = 0; c < C_in; ++c) {
            for (int64_t k = 0; k < K; ++k) {
                int64_t shift = (K - 1 - k) * dilation;
                const T* src = dcol + (c * K + k) * N * T_out;
                T* dst = dx + c * N * Tt;
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t t = 0; t < T_out; ++t) dst[n * Tt + shift + t] += src[n * T_out + t];
            }
        }
    }

    static void permute_copy(const T* src, T* dst, const Shape& in_shape,
                             const std::vector<int64_t>& perm) {
        int64_t r = static_cast<int64_t>(in_shape.size());
        if (r == 0) {
            dst[0] = src[0];
            return;
        }
        Shape os(static_cast<size_t>(r));
        for (int64_t i = 0; i < r; ++i) os[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(perm[i])];
        auto out_strides = row_major_strides(os);
        // stride in the output for a unit step along input axis a
        std::vector<int64_t> walk(static_cast<size_t>(r));
        for (int64_t i = 0; i < r; ++i) walk[static_cast<size_t>(perm[i])] = out_strides[static_cast<size_t>(i)];
        std::vector<int64_t> c(static_cast<size_t>(r), 0);
        int64_t n = shape_numel(in_shape), off = 0;
        for (int64_t i = 0; i < n; ++i) {
            dst[off] = src[i];
            for (int64_t ax = r - 1; ax >= 0; --ax) {
                ++c[static_cast<size_t>(ax)];
                off += walk[static_cast<size_t>(ax)];
                if (c[static_cast<size_t>(ax)] < in_shape[static_cast<size_t>(ax)]) break;
                off -= walk[static_cast<size_t>(ax)] * in_shape[static_cast<size_t>(ax)];
                c[static_cast<size_t>(ax)] = 0;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    uint64_t generation_ = 1;
    bool sealed_ = false;
};

} // namespace stwave
