#include "survnet/ops.hpp"

#include <cstring>
#include <vector>

namespace survnet {

namespace {

struct ConvDims {
    int n, cin, d, h, w;
    int cout, k;
    int stride, padding;
    int od, oh, ow;
};

ConvDims check_conv(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias,
                    int stride, int padding) {
    if (x->shape.size() != 5) {
        throw ShapeError("conv3d input must be [N, C, D, H, W], got " + shape_str(x->shape));
    }
    if (weight->shape.size() != 5) {
        throw ShapeError("conv3d weight must be [Cout, Cin, k, k, k], got " +
                         shape_str(weight->shape));
    }
    if (bias->shape.size() != 1) {
        throw ShapeError("conv3d bias must be [Cout], got " + shape_str(bias->shape));
    }
    ConvDims dm;
    dm.n = x->shape[0];
    dm.cin = x->shape[1];
    dm.d = x->shape[2];
    dm.h = x->shape[3];
    dm.w = x->shape[4];
    dm.cout = weight->shape[0];
    dm.k = weight->shape[2];
    dm.stride = stride;
    dm.padding = padding;
    if (weight->shape[3] != dm.k || weight->shape[4] != dm.k) {
        throw ShapeError("conv3d kernel must be cubic, got " + shape_str(weight->shape));
    }
    if (dm.k % 2 == 0) {
        throw ConfigError("conv3d kernel size must be odd, got " + std::to_string(dm.k));
    }
    if (weight->shape[1] != dm.cin) {
        throw ShapeError("conv3d weight " + shape_str(weight->shape) +
                         " does not match input channels of " + shape_str(x->shape));
    }
    if (bias->shape[0] != dm.cout) {
        throw ShapeError("conv3d bias " + shape_str(bias->shape) + " does not match weight " +
                         shape_str(weight->shape));
    }
    if (stride < 1) throw ConfigError("conv3d stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ConfigError("conv3d padding must be >= 0, got " + std::to_string(padding));
    const int pd = dm.d + 2 * padding, ph = dm.h + 2 * padding, pw = dm.w + 2 * padding;
    if (pd < dm.k || ph < dm.k || pw < dm.k) {
        throw ShapeError("conv3d padded extents [" + std::to_string(pd) + ", " +
                         std::to_string(ph) + ", " + std::to_string(pw) +
                         "] are smaller than the kernel size " + std::to_string(dm.k));
    }
    dm.od = (pd - dm.k) / stride + 1;
    dm.oh = (ph - dm.k) / stride + 1;
    dm.ow = (pw - dm.k) / stride + 1;
    return dm;
}

inline std::size_t idx5(int a, int b, int c, int d, int e, int eb, int ec, int ed, int ee) {
    return ((((static_cast<std::size_t>(a) * eb + b) * ec + c) * ed + d) * ee) + e;
}

// ---- reference kernel: direct loops with bounds checks --------------------

void forward_naive(const ConvDims& dm, const double* x, const double* w, const double* b,
                   double* out) {
    for (int n = 0; n < dm.n; ++n) {
        for (int co = 0; co < dm.cout; ++co) {
            for (int od = 0; od < dm.od; ++od) {
                for (int oh = 0; oh < dm.oh; ++oh) {
                    for (int ow = 0; ow < dm.ow; ++ow) {
                        double acc = b[co];
                        for (int ci = 0; ci < dm.cin; ++ci) {
                            for (int kd = 0; kd < dm.k; ++kd) {
                                const int id = od * dm.stride - dm.padding + kd;
                                if (id < 0 || id >= dm.d) continue;
                                for (int kh = 0; kh < dm.k; ++kh) {
                                    const int ih = oh * dm.stride - dm.padding + kh;
                                    if (ih < 0 || ih >= dm.h) continue;
                                    for (int kw = 0; kw < dm.k; ++kw) {
                                        const int iw = ow * dm.stride - dm.padding + kw;
                                        if (iw < 0 || iw >= dm.w) continue;
                                        acc += x[idx5(n, ci, id, ih, iw, dm.cin, dm.d, dm.h, dm.w)] *
                                               w[idx5(co, ci, kd, kh, kw, dm.cin, dm.k, dm.k, dm.k)];
                                    }
                                }
                            }
                        }
                        out[idx5(n, co, od, oh, ow, dm.cout, dm.od, dm.oh, dm.ow)] = acc;
                    }
                }
            }
        }
    }
}

void backward_naive(const ConvDims& dm, const double* x, const double* w, const double* g,
                    double* gx, double* gw, double* gb) {
    for (int n = 0; n < dm.n; ++n) {
        for (int co = 0; co < dm.cout; ++co) {
            for (int od = 0; od < dm.od; ++od) {
                for (int oh = 0; oh < dm.oh; ++oh) {
                    for (int ow = 0; ow < dm.ow; ++ow) {
                        const double gv =
                            g[idx5(n, co, od, oh, ow, dm.cout, dm.od, dm.oh, dm.ow)];
                        if (gb) gb[co] += gv;
                        for (int ci = 0; ci < dm.cin; ++ci) {
                            for (int kd = 0; kd < dm.k; ++kd) {
                                const int id = od * dm.stride - dm.padding + kd;
                                if (id < 0 || id >= dm.d) continue;
                                for (int kh = 0; kh < dm.k; ++kh) {
                                    const int ih = oh * dm.stride - dm.padding + kh;
                                    if (ih < 0 || ih >= dm.h) continue;
                                    for (int kw = 0; kw < dm.k; ++kw) {
                                        const int iw = ow * dm.stride - dm.padding + kw;
                                        if (iw < 0 || iw >= dm.w) continue;
                                        const std::size_t xi =
                                            idx5(n, ci, id, ih, iw, dm.cin, dm.d, dm.h, dm.w);
                                        const std::size_t wi =
                                            idx5(co, ci, kd, kh, kw, dm.cin, dm.k, dm.k, dm.k);
                                        if (gw) gw[wi] += gv * x[xi];
                                        if (gx) gx[xi] += gv * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---- fast kernel: zero-padded copy, contiguous inner rows ------------------
//
// One padded [Cin, Dp, Hp, Wp] slab is built per sample; every (kd, kh, kw)
// tap then touches contiguous rows, which the compiler can vectorize. The
// accumulation order differs from the reference kernel, so results match it
// to rounding (well within 1e-12), not bit-for-bit.

struct PaddedSlab {
    std::vector<double> buf;
    int dp, hp, wp;

    void build(const ConvDims& dm, const double* x, int n) {
        dp = dm.d + 2 * dm.padding;
        hp = dm.h + 2 * dm.padding;
        wp = dm.w + 2 * dm.padding;
        buf.assign(static_cast<std::size_t>(dm.cin) * dp * hp * wp, 0.0);
        for (int ci = 0; ci < dm.cin; ++ci) {
            for (int d = 0; d < dm.d; ++d) {
                for (int h = 0; h < dm.h; ++h) {
                    const double* src = x + idx5(n, ci, d, h, 0, dm.cin, dm.d, dm.h, dm.w);
                    double* dst = &buf[((static_cast<std::size_t>(ci) * dp + d + dm.padding) * hp +
                                        h + dm.padding) * wp +
                                       dm.padding];
                    std::memcpy(dst, src, static_cast<std::size_t>(dm.w) * sizeof(double));
                }
            }
        }
    }

    const double* row(int ci, int pd, int ph) const {
        return &buf[((static_cast<std::size_t>(ci) * dp + pd) * hp + ph) * wp];
    }
    double* row(int ci, int pd, int ph) {
        return &buf[((static_cast<std::size_t>(ci) * dp + pd) * hp + ph) * wp];
    }
};

// Fused 3x3x3 stencil: one pass over the output row applies all 27 taps, so
// the accumulator is read and written once instead of 27 times. `rows` holds
// the nine padded input rows (kd-major), `wt` the 27 kernel taps in the same
// order. The summation tree is fixed, so results are run-to-run identical.
inline void stencil27_row(double* __restrict acc, const double* const* rows,
                          const double* __restrict wt, int n) {
    const double* __restrict r0 = rows[0];
    const double* __restrict r1 = rows[1];
    const double* __restrict r2 = rows[2];
    const double* __restrict r3 = rows[3];
    const double* __restrict r4 = rows[4];
    const double* __restrict r5 = rows[5];
    const double* __restrict r6 = rows[6];
    const double* __restrict r7 = rows[7];
    const double* __restrict r8 = rows[8];
    for (int i = 0; i < n; ++i) {
        const double s0 = wt[0] * r0[i] + wt[1] * r0[i + 1] + wt[2] * r0[i + 2];
        const double s1 = wt[3] * r1[i] + wt[4] * r1[i + 1] + wt[5] * r1[i + 2];
        const double s2 = wt[6] * r2[i] + wt[7] * r2[i + 1] + wt[8] * r2[i + 2];
        const double s3 = wt[9] * r3[i] + wt[10] * r3[i + 1] + wt[11] * r3[i + 2];
        const double s4 = wt[12] * r4[i] + wt[13] * r4[i + 1] + wt[14] * r4[i + 2];
        const double s5 = wt[15] * r5[i] + wt[16] * r5[i + 1] + wt[17] * r5[i + 2];
        const double s6 = wt[18] * r6[i] + wt[19] * r6[i + 1] + wt[20] * r6[i + 2];
        const double s7 = wt[21] * r7[i] + wt[22] * r7[i + 1] + wt[23] * r7[i + 2];
        const double s8 = wt[24] * r8[i] + wt[25] * r8[i + 1] + wt[26] * r8[i + 2];
        acc[i] += (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + s8;
    }
}

void forward_fast(const ConvDims& dm, const double* x, const double* w, const double* b,
                  double* out) {
    PaddedSlab slab;
    std::vector<double> accbuf(static_cast<std::size_t>(dm.ow));
    const bool k3s1 = dm.k == 3 && dm.stride == 1;
    for (int n = 0; n < dm.n; ++n) {
        slab.build(dm, x, n);
        for (int co = 0; co < dm.cout; ++co) {
            double* out_co = out + idx5(n, co, 0, 0, 0, dm.cout, dm.od, dm.oh, dm.ow);
            for (int od = 0; od < dm.od; ++od) {
                for (int oh = 0; oh < dm.oh; ++oh) {
                    // One output row accumulates in a scratch buffer so the
                    // plane is written exactly once per row.
                    double* __restrict acc = accbuf.data();
                    for (int ow = 0; ow < dm.ow; ++ow) acc[ow] = b[co];
                    if (k3s1) {
                        const double* rows[9];
                        for (int ci = 0; ci < dm.cin; ++ci) {
                            for (int kd = 0; kd < 3; ++kd) {
                                for (int kh = 0; kh < 3; ++kh) {
                                    rows[kd * 3 + kh] = slab.row(ci, od + kd, oh + kh);
                                }
                            }
                            stencil27_row(acc, rows, w + idx5(co, ci, 0, 0, 0, dm.cin, 3, 3, 3),
                                          dm.ow);
                        }
                    } else {
                        for (int ci = 0; ci < dm.cin; ++ci) {
                            for (int kd = 0; kd < dm.k; ++kd) {
                                for (int kh = 0; kh < dm.k; ++kh) {
                                    const double* __restrict src =
                                        slab.row(ci, od * dm.stride + kd, oh * dm.stride + kh);
                                    const double* __restrict wrow =
                                        w + idx5(co, ci, kd, kh, 0, dm.cin, dm.k, dm.k, dm.k);
                                    for (int kw = 0; kw < dm.k; ++kw) {
                                        const double wv = wrow[kw];
                                        if (dm.stride == 1) {
                                            const double* __restrict s = src + kw;
                                            for (int ow = 0; ow < dm.ow; ++ow) {
                                                acc[ow] += wv * s[ow];
                                            }
                                        } else {
                                            for (int ow = 0; ow < dm.ow; ++ow) {
                                                acc[ow] += wv * src[kw + static_cast<std::size_t>(
                                                                           ow) *
                                                                           dm.stride];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    std::memcpy(out_co + (static_cast<std::size_t>(od) * dm.oh + oh) * dm.ow, acc,
                                static_cast<std::size_t>(dm.ow) * sizeof(double));
                }
            }
        }
    }
}

// Row dot product with a fixed four-way accumulator split; the summation
// tree is the same on every run.
inline double row_dot(const double* __restrict a, const double* __restrict b, int n, int stride) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    int i = 0;
    if (stride == 1) {
        for (; i + 4 <= n; i += 4) {
            a0 += a[i] * b[i];
            a1 += a[i + 1] * b[i + 1];
            a2 += a[i + 2] * b[i + 2];
            a3 += a[i + 3] * b[i + 3];
        }
        for (; i < n; ++i) a0 += a[i] * b[i];
    } else {
        for (; i < n; ++i) a0 += a[i] * b[static_cast<std::size_t>(i) * stride];
    }
    return (a0 + a1) + (a2 + a3);
}

void backward_fast(const ConvDims& dm, const double* x, const double* w, const double* g,
                   double* gx, double* gw, double* gb) {
    PaddedSlab slab;
    PaddedSlab gslab;
    const std::size_t out_plane = static_cast<std::size_t>(dm.od) * dm.oh * dm.ow;
    // Flipped-kernel taps for the 3x3x3 stride-1 input-gradient stencil,
    // regrouped (ci, co)-major to match its loop nest.
    std::vector<double> wflip;
    if (gx && dm.k == 3 && dm.stride == 1 && dm.padding <= 2) {
        wflip.resize(static_cast<std::size_t>(dm.cin) * dm.cout * 27);
        for (int ci = 0; ci < dm.cin; ++ci) {
            for (int co = 0; co < dm.cout; ++co) {
                double* dst = wflip.data() + (static_cast<std::size_t>(ci) * dm.cout + co) * 27;
                for (int kd = 0; kd < 3; ++kd) {
                    for (int kh = 0; kh < 3; ++kh) {
                        for (int kw = 0; kw < 3; ++kw) {
                            dst[kd * 9 + kh * 3 + kw] =
                                w[idx5(co, ci, 2 - kd, 2 - kh, 2 - kw, dm.cin, 3, 3, 3)];
                        }
                    }
                }
            }
        }
    }
    for (int n = 0; n < dm.n; ++n) {
        if (gw) slab.build(dm, x, n);
        if (gb) {
            for (int co = 0; co < dm.cout; ++co) {
                const double* gout = g + idx5(n, co, 0, 0, 0, dm.cout, dm.od, dm.oh, dm.ow);
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                std::size_t i = 0;
                for (; i + 4 <= out_plane; i += 4) {
                    a0 += gout[i];
                    a1 += gout[i + 1];
                    a2 += gout[i + 2];
                    a3 += gout[i + 3];
                }
                for (; i < out_plane; ++i) a0 += gout[i];
                gb[co] += (a0 + a1) + (a2 + a3);
            }
        }
        if (gw) {
            const bool k3s1 = dm.k == 3 && dm.stride == 1;
            for (int co = 0; co < dm.cout; ++co) {
                const double* gout = g + idx5(n, co, 0, 0, 0, dm.cout, dm.od, dm.oh, dm.ow);
                for (int ci = 0; ci < dm.cin; ++ci) {
                    if (k3s1) {
                        // The three kw taps read the same rows at offsets
                        // 0/1/2, so one pass fills all three gradients.
                        for (int kd = 0; kd < 3; ++kd) {
                            for (int kh = 0; kh < 3; ++kh) {
                                double t0 = 0.0, t1 = 0.0, t2 = 0.0;
                                for (int od = 0; od < dm.od; ++od) {
                                    for (int oh = 0; oh < dm.oh; ++oh) {
                                        const double* __restrict grow =
                                            gout +
                                            (static_cast<std::size_t>(od) * dm.oh + oh) * dm.ow;
                                        const double* __restrict xrow =
                                            slab.row(ci, od + kd, oh + kh);
                                        for (int ow = 0; ow < dm.ow; ++ow) {
                                            const double gv = grow[ow];
                                            t0 += gv * xrow[ow];
                                            t1 += gv * xrow[ow + 1];
                                            t2 += gv * xrow[ow + 2];
                                        }
                                    }
                                }
                                double* wrow = gw + idx5(co, ci, kd, kh, 0, dm.cin, 3, 3, 3);
                                wrow[0] += t0;
                                wrow[1] += t1;
                                wrow[2] += t2;
                            }
                        }
                        continue;
                    }
                    for (int kd = 0; kd < dm.k; ++kd) {
                        for (int kh = 0; kh < dm.k; ++kh) {
                            for (int kw = 0; kw < dm.k; ++kw) {
                                double acc = 0.0;
                                for (int od = 0; od < dm.od; ++od) {
                                    for (int oh = 0; oh < dm.oh; ++oh) {
                                        const double* grow =
                                            gout + (static_cast<std::size_t>(od) * dm.oh + oh) * dm.ow;
                                        const double* xrow =
                                            slab.row(ci, od * dm.stride + kd, oh * dm.stride + kh) +
                                            kw;
                                        acc += row_dot(grow, xrow, dm.ow, dm.stride);
                                    }
                                }
                                gw[idx5(co, ci, kd, kh, kw, dm.cin, dm.k, dm.k, dm.k)] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (gx && dm.stride == 1 && dm.padding <= dm.k - 1) {
            // Stride-1 input gradient is a correlation of the zero-padded
            // output gradient with the spatially flipped kernel, so it runs
            // through the same row-accumulator pattern as the forward pass.
            const int pg = dm.k - 1 - dm.padding;
            gslab.dp = dm.od + 2 * pg;
            gslab.hp = dm.oh + 2 * pg;
            gslab.wp = dm.ow + 2 * pg;
            gslab.buf.assign(
                static_cast<std::size_t>(dm.cout) * gslab.dp * gslab.hp * gslab.wp, 0.0);
            for (int co = 0; co < dm.cout; ++co) {
                for (int od = 0; od < dm.od; ++od) {
                    for (int oh = 0; oh < dm.oh; ++oh) {
                        std::memcpy(gslab.row(co, od + pg, oh + pg) + pg,
                                    g + idx5(n, co, od, oh, 0, dm.cout, dm.od, dm.oh, dm.ow),
                                    static_cast<std::size_t>(dm.ow) * sizeof(double));
                    }
                }
            }
            std::vector<double> accbuf(static_cast<std::size_t>(dm.w));
            const bool k3 = dm.k == 3;
            for (int ci = 0; ci < dm.cin; ++ci) {
                for (int id = 0; id < dm.d; ++id) {
                    for (int ih = 0; ih < dm.h; ++ih) {
                        double* __restrict acc = accbuf.data();
                        std::memset(acc, 0, static_cast<std::size_t>(dm.w) * sizeof(double));
                        if (k3) {
                            const double* rows[9];
                            for (int co = 0; co < dm.cout; ++co) {
                                for (int kd = 0; kd < 3; ++kd) {
                                    for (int kh = 0; kh < 3; ++kh) {
                                        rows[kd * 3 + kh] = gslab.row(co, id + kd, ih + kh);
                                    }
                                }
                                stencil27_row(
                                    acc, rows,
                                    wflip.data() +
                                        (static_cast<std::size_t>(ci) * dm.cout + co) * 27,
                                    dm.w);
                            }
                        } else {
                            for (int co = 0; co < dm.cout; ++co) {
                                for (int kd = 0; kd < dm.k; ++kd) {
                                    for (int kh = 0; kh < dm.k; ++kh) {
                                        const double* __restrict src =
                                            gslab.row(co, id + kd, ih + kh);
                                        for (int kw = 0; kw < dm.k; ++kw) {
                                            const double wv =
                                                w[idx5(co, ci, dm.k - 1 - kd, dm.k - 1 - kh,
                                                       dm.k - 1 - kw, dm.cin, dm.k, dm.k, dm.k)];
                                            const double* __restrict s = src + kw;
                                            for (int iw = 0; iw < dm.w; ++iw) acc[iw] += wv * s[iw];
                                        }
                                    }
                                }
                            }
                        }
                        double* dst = gx + idx5(n, ci, id, ih, 0, dm.cin, dm.d, dm.h, dm.w);
                        for (int iw = 0; iw < dm.w; ++iw) dst[iw] += acc[iw];
                    }
                }
            }
        } else if (gx) {
            gslab.dp = dm.d + 2 * dm.padding;
            gslab.hp = dm.h + 2 * dm.padding;
            gslab.wp = dm.w + 2 * dm.padding;
            gslab.buf.assign(
                static_cast<std::size_t>(dm.cin) * gslab.dp * gslab.hp * gslab.wp, 0.0);
            for (int co = 0; co < dm.cout; ++co) {
                const double* gout = g + idx5(n, co, 0, 0, 0, dm.cout, dm.od, dm.oh, dm.ow);
                for (int ci = 0; ci < dm.cin; ++ci) {
                    for (int kd = 0; kd < dm.k; ++kd) {
                        for (int kh = 0; kh < dm.k; ++kh) {
                            for (int kw = 0; kw < dm.k; ++kw) {
                                const double wv =
                                    w[idx5(co, ci, kd, kh, kw, dm.cin, dm.k, dm.k, dm.k)];
                                for (int od = 0; od < dm.od; ++od) {
                                    for (int oh = 0; oh < dm.oh; ++oh) {
                                        const double* __restrict grow =
                                            gout + (static_cast<std::size_t>(od) * dm.oh + oh) * dm.ow;
                                        double* __restrict drow =
                                            gslab.row(ci, od * dm.stride + kd,
                                                      oh * dm.stride + kh) +
                                            kw;
                                        for (int ow = 0; ow < dm.ow; ++ow) {
                                            drow[static_cast<std::size_t>(ow) * dm.stride] +=
                                                wv * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            // crop the padded border back off
            for (int ci = 0; ci < dm.cin; ++ci) {
                for (int d = 0; d < dm.d; ++d) {
                    for (int h = 0; h < dm.h; ++h) {
                        const double* src =
                            gslab.row(ci, d + dm.padding, h + dm.padding) + dm.padding;
                        double* dst = gx + idx5(n, ci, d, h, 0, dm.cin, dm.d, dm.h, dm.w);
                        for (int iw = 0; iw < dm.w; ++iw) dst[iw] += src[iw];
                    }
                }
            }
        }
    }
}

} // namespace

Conv3dKernel& conv3d_kernel() {
    static Conv3dKernel kernel = Conv3dKernel::Fast;
    return kernel;
}

TensorPtr conv3d(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias, int stride,
                 int padding) {
    const ConvDims dm = check_conv(x, weight, bias, stride, padding);
    const Conv3dKernel kernel = conv3d_kernel();

    auto out = Tensor::zeros({dm.n, dm.cout, dm.od, dm.oh, dm.ow});
    out->requires_grad = x->requires_grad || weight->requires_grad || bias->requires_grad;
    if (kernel == Conv3dKernel::Fast) {
        forward_fast(dm, x->data.data(), weight->data.data(), bias->data.data(),
                     out->data.data());
    } else {
        forward_naive(dm, x->data.data(), weight->data.data(), bias->data.data(),
                      out->data.data());
    }

    if (out->requires_grad) {
        out->parents = {x, weight, bias};
        TensorPtr xp = x, wp = weight, bp = bias;
        out->backprop = [xp, wp, bp, dm, kernel](Tensor& self) {
            double* gx = nullptr;
            double* gw = nullptr;
            double* gb = nullptr;
            if (xp->requires_grad) {
                xp->ensure_grad();
                gx = xp->grad.data();
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                gw = wp->grad.data();
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                gb = bp->grad.data();
            }
            if (kernel == Conv3dKernel::Fast) {
                backward_fast(dm, xp->data.data(), wp->data.data(), self.grad.data(), gx, gw, gb);
            } else {
                backward_naive(dm, xp->data.data(), wp->data.data(), self.grad.data(), gx, gw, gb);
            }
        };
    }
    return out;
}

} // namespace survnet
