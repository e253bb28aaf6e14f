#include "survnet/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace survnet {

namespace {

bool any_requires_grad(const std::vector<TensorPtr>& ts) {
    for (const auto& t : ts) {
        if (t && t->requires_grad) return true;
    }
    return false;
}

TensorPtr op_output(const Shape& shape, std::vector<TensorPtr> parents) {
    auto out = Tensor::zeros(shape);
    out->requires_grad = any_requires_grad(parents);
    if (out->requires_grad) out->parents = std::move(parents);
    return out;
}

void require_dims(const TensorPtr& t, std::size_t dims, const char* role) {
    if (t->shape.size() != dims) {
        throw ShapeError(std::string(role) + " must have " + std::to_string(dims) +
                         " dimensions, got " + shape_str(t->shape));
    }
}

} // namespace

TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
    require_dims(x, 2, "linear input");
    require_dims(weight, 2, "linear weight");
    require_dims(bias, 1, "linear bias");
    const int n = x->shape[0], fin = x->shape[1];
    const int fout = weight->shape[0];
    if (weight->shape[1] != fin) {
        throw ShapeError("linear weight " + shape_str(weight->shape) +
                         " does not match input " + shape_str(x->shape));
    }
    if (bias->shape[0] != fout) {
        throw ShapeError("linear bias " + shape_str(bias->shape) + " does not match weight " +
                         shape_str(weight->shape));
    }

    auto out = op_output({n, fout}, {x, weight, bias});
    const double* xd = x->data.data();
    const double* wd = weight->data.data();
    const double* bd = bias->data.data();
    double* od = out->data.data();
    for (int i = 0; i < n; ++i) {
        for (int o = 0; o < fout; ++o) {
            double acc = bd[o];
            const double* xr = xd + static_cast<std::size_t>(i) * fin;
            const double* wr = wd + static_cast<std::size_t>(o) * fin;
            for (int j = 0; j < fin; ++j) acc += wr[j] * xr[j];
            od[static_cast<std::size_t>(i) * fout + o] = acc;
        }
    }

    if (out->requires_grad) {
        TensorPtr xp = x, wp = weight, bp = bias;
        out->backprop = [xp, wp, bp, n, fin, fout](Tensor& self) {
            const double* g = self.grad.data();
            if (xp->requires_grad) {
                xp->ensure_grad();
                double* gx = xp->grad.data();
                const double* wd = wp->data.data();
                for (int i = 0; i < n; ++i) {
                    for (int o = 0; o < fout; ++o) {
                        const double gv = g[static_cast<std::size_t>(i) * fout + o];
                        const double* wr = wd + static_cast<std::size_t>(o) * fin;
                        double* gxr = gx + static_cast<std::size_t>(i) * fin;
                        for (int j = 0; j < fin; ++j) gxr[j] += gv * wr[j];
                    }
                }
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                double* gw = wp->grad.data();
                const double* xd = xp->data.data();
                for (int i = 0; i < n; ++i) {
                    for (int o = 0; o < fout; ++o) {
                        const double gv = g[static_cast<std::size_t>(i) * fout + o];
                        const double* xr = xd + static_cast<std::size_t>(i) * fin;
                        double* gwr = gw + static_cast<std::size_t>(o) * fin;
                        for (int j = 0; j < fin; ++j) gwr[j] += gv * xr[j];
                    }
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                double* gb = bp->grad.data();
                for (int i = 0; i < n; ++i) {
                    for (int o = 0; o < fout; ++o) gb[o] += g[static_cast<std::size_t>(i) * fout + o];
                }
            }
        };
    }
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    auto out = op_output(x->shape, {x});
    const std::size_t n = x->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x->data[i];
        out->data[i] = v > 0.0 ? v : 0.0;
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, n](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                if (xp->data[i] > 0.0) xp->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

TensorPtr leaky_relu(const TensorPtr& x, double negative_slope) {
    auto out = op_output(x->shape, {x});
    const std::size_t n = x->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x->data[i];
        out->data[i] = v > 0.0 ? v : negative_slope * v;
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, n, negative_slope](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                xp->grad[i] += self.grad[i] * (xp->data[i] > 0.0 ? 1.0 : negative_slope);
            }
        };
    }
    return out;
}

TensorPtr maxpool3d(const TensorPtr& x, int window) {
    require_dims(x, 5, "maxpool3d input");
    if (window < 1) throw ConfigError("maxpool3d window must be >= 1, got " + std::to_string(window));
    const int n = x->shape[0], c = x->shape[1];
    const int d = x->shape[2], h = x->shape[3], w = x->shape[4];
    if (d % window || h % window || w % window) {
        throw ConfigError("maxpool3d extents " + shape_str(x->shape) +
                          " are not divisible by window " + std::to_string(window));
    }
    const int od = d / window, oh = h / window, ow = w / window;
    auto out = op_output({n, c, od, oh, ow}, {x});

    const double* xd = x->data.data();
    double* outd = out->data.data();
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->data.size());
    std::size_t oi = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) *
                                     static_cast<std::size_t>(d) * h * w;
            for (int zd = 0; zd < od; ++zd) {
                for (int zh = 0; zh < oh; ++zh) {
                    for (int zw = 0; zw < ow; ++zw, ++oi) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (int kd = 0; kd < window; ++kd) {
                            for (int kh = 0; kh < window; ++kh) {
                                for (int kw = 0; kw < window; ++kw) {
                                    const std::size_t idx =
                                        base +
                                        (static_cast<std::size_t>(zd * window + kd) * h +
                                         (zh * window + kh)) * w +
                                        (zw * window + kw);
                                    // Strict > keeps the first occurrence on ties.
                                    if (xd[idx] > best) {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        outd[oi] = best;
                        (*argmax)[oi] = best_idx;
                    }
                }
            }
        }
    }

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, argmax](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                xp->grad[(*argmax)[i]] += self.grad[i];
            }
        };
    }
    return out;
}

TensorPtr global_avg_pool(const TensorPtr& x) {
    require_dims(x, 5, "global_avg_pool input");
    const int n = x->shape[0], c = x->shape[1];
    const std::size_t v = static_cast<std::size_t>(x->shape[2]) * x->shape[3] * x->shape[4];
    auto out = op_output({n, c}, {x});
    const double* xd = x->data.data();
    for (int i = 0; i < n * c; ++i) {
        const double* p = xd + static_cast<std::size_t>(i) * v;
        double acc = 0.0;
        for (std::size_t j = 0; j < v; ++j) acc += p[j];
        out->data[static_cast<std::size_t>(i)] = acc / static_cast<double>(v);
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, n, c, v](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            const double inv = 1.0 / static_cast<double>(v);
            for (int i = 0; i < n * c; ++i) {
                const double gv = self.grad[static_cast<std::size_t>(i)] * inv;
                double* gx = xp->grad.data() + static_cast<std::size_t>(i) * v;
                for (std::size_t j = 0; j < v; ++j) gx[j] += gv;
            }
        };
    }
    return out;
}

TensorPtr flatten(const TensorPtr& x) {
    if (x->shape.empty()) throw ShapeError("flatten: rank-0 tensor");
    const int n = x->shape[0];
    const int rest = x->size() / n;
    auto out = op_output({n, rest}, {x});
    out->data = x->data;
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->accumulate_grad(self.grad.data(), self.grad.size());
        };
    }
    return out;
}

namespace {

// Decomposition of a shape around one axis: the tensor is a contiguous
// [outer, extent(axis), inner] block in row-major order.
struct AxisSpan {
    std::size_t outer = 1, inner = 1;
    int extent = 0;
};

AxisSpan axis_span(const Shape& shape, int axis) {
    AxisSpan s;
    s.extent = shape[static_cast<std::size_t>(axis)];
    for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
        s.inner *= static_cast<std::size_t>(shape[i]);
    }
    return s;
}

} // namespace

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, int axis) {
    if (a->shape.size() != b->shape.size()) {
        throw ShapeError("concat rank mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    if (axis < 0 || axis >= static_cast<int>(a->shape.size())) {
        throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a->shape));
    }
    for (std::size_t i = 0; i < a->shape.size(); ++i) {
        if (static_cast<int>(i) != axis && a->shape[i] != b->shape[i]) {
            throw ShapeError("concat extents differ outside axis " + std::to_string(axis) + ": " +
                             shape_str(a->shape) + " vs " + shape_str(b->shape));
        }
    }
    Shape out_shape = a->shape;
    out_shape[static_cast<std::size_t>(axis)] += b->shape[static_cast<std::size_t>(axis)];
    auto out = op_output(out_shape, {a, b});

    const AxisSpan sa = axis_span(a->shape, axis);
    const AxisSpan sb = axis_span(b->shape, axis);
    const std::size_t wa = static_cast<std::size_t>(sa.extent) * sa.inner;
    const std::size_t wb = static_cast<std::size_t>(sb.extent) * sb.inner;
    for (std::size_t o = 0; o < sa.outer; ++o) {
        std::memcpy(out->data.data() + o * (wa + wb), a->data.data() + o * wa, wa * sizeof(double));
        std::memcpy(out->data.data() + o * (wa + wb) + wa, b->data.data() + o * wb,
                    wb * sizeof(double));
    }

    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        out->backprop = [ap, bp, sa, wa, wb](Tensor& self) {
            const double* g = self.grad.data();
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t o = 0; o < sa.outer; ++o) {
                    const double* src = g + o * (wa + wb);
                    double* dst = ap->grad.data() + o * wa;
                    for (std::size_t i = 0; i < wa; ++i) dst[i] += src[i];
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t o = 0; o < sa.outer; ++o) {
                    const double* src = g + o * (wa + wb) + wa;
                    double* dst = bp->grad.data() + o * wb;
                    for (std::size_t i = 0; i < wb; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return out;
}

TensorPtr slice(const TensorPtr& x, int axis, int start, int length) {
    if (axis < 0 || axis >= static_cast<int>(x->shape.size())) {
        throw ShapeError("slice axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x->shape));
    }
    const int extent = x->shape[static_cast<std::size_t>(axis)];
    if (length < 1 || start < 0 || start + length > extent) {
        throw ShapeError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis extent " +
                         std::to_string(extent));
    }
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(axis)] = length;
    auto out = op_output(out_shape, {x});

    const AxisSpan sx = axis_span(x->shape, axis);
    const std::size_t wx = static_cast<std::size_t>(sx.extent) * sx.inner;
    const std::size_t wo = static_cast<std::size_t>(length) * sx.inner;
    const std::size_t off = static_cast<std::size_t>(start) * sx.inner;
    for (std::size_t o = 0; o < sx.outer; ++o) {
        std::memcpy(out->data.data() + o * wo, x->data.data() + o * wx + off,
                    wo * sizeof(double));
    }

    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, sx, wx, wo, off](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (std::size_t o = 0; o < sx.outer; ++o) {
                const double* src = self.grad.data() + o * wo;
                double* dst = xp->grad.data() + o * wx + off;
                for (std::size_t i = 0; i < wo; ++i) dst[i] += src[i];
            }
        };
    }
    return out;
}

std::pair<TensorPtr, TensorPtr> instance_stats(const TensorPtr& x) {
    require_dims(x, 5, "instance_stats input");
    const int n = x->shape[0], c = x->shape[1];
    const std::size_t v = static_cast<std::size_t>(x->shape[2]) * x->shape[3] * x->shape[4];
    auto mu = op_output({n, c}, {x});
    auto sigma = op_output({n, c}, {x});

    const double* xd = x->data.data();
    for (int i = 0; i < n * c; ++i) {
        const double* p = xd + static_cast<std::size_t>(i) * v;
        double mean = 0.0;
        for (std::size_t j = 0; j < v; ++j) mean += p[j];
        mean /= static_cast<double>(v);
        double var = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double d = p[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(v);
        mu->data[static_cast<std::size_t>(i)] = mean;
        sigma->data[static_cast<std::size_t>(i)] = std::sqrt(var + kInstanceNormEpsilon);
    }

    if (mu->requires_grad) {
        TensorPtr xp = x;
        mu->backprop = [xp, n, c, v](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            const double inv = 1.0 / static_cast<double>(v);
            for (int i = 0; i < n * c; ++i) {
                const double gv = self.grad[static_cast<std::size_t>(i)] * inv;
                double* gx = xp->grad.data() + static_cast<std::size_t>(i) * v;
                for (std::size_t j = 0; j < v; ++j) gx[j] += gv;
            }
        };
    }
    if (sigma->requires_grad) {
        TensorPtr xp = x;
        TensorPtr mup = mu; // forward value only; not a graph edge
        TensorPtr sigp = sigma;
        sigma->backprop = [xp, mup, n, c, v](Tensor& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            const double inv = 1.0 / static_cast<double>(v);
            for (int i = 0; i < n * c; ++i) {
                const double gv = self.grad[static_cast<std::size_t>(i)];
                const double mean = mup->data[static_cast<std::size_t>(i)];
                const double sd = self.data[static_cast<std::size_t>(i)];
                const double k = gv * inv / sd;
                const double* p = xp->data.data() + static_cast<std::size_t>(i) * v;
                double* gx = xp->grad.data() + static_cast<std::size_t>(i) * v;
                for (std::size_t j = 0; j < v; ++j) gx[j] += k * (p[j] - mean);
            }
        };
    }
    return {mu, sigma};
}

TensorPtr mae(const TensorPtr& pred, const TensorPtr& target) {
    if (pred->shape != target->shape) {
        throw ShapeError("mae shape mismatch: " + shape_str(pred->shape) + " vs " +
                         shape_str(target->shape));
    }
    const std::size_t n = pred->data.size();
    auto out = op_output({1}, {pred, target});
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred->data[i] - target->data[i]);
    out->data[0] = acc / static_cast<double>(n);

    if (out->requires_grad) {
        TensorPtr pp = pred, tp = target;
        out->backprop = [pp, tp, n](Tensor& self) {
            const double g = self.grad[0] / static_cast<double>(n);
            const bool wp = pp->requires_grad, wt = tp->requires_grad;
            if (wp) pp->ensure_grad();
            if (wt) tp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double d = pp->data[i] - tp->data[i];
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (wp) pp->grad[i] += g * s;
                if (wt) tp->grad[i] -= g * s;
            }
        };
    }
    return out;
}

} // namespace survnet
