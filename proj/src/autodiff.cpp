#include "clvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "clvae/kernels.hpp"

namespace clvae::ad {

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

namespace {

thread_local bool g_grad_enabled = true;

// Upper bound on scratch used by im2col/col2im chunking, in doubles (32 MB).
constexpr std::size_t kChunkBudget = std::size_t{1} << 22;

bool any_requires_grad(const std::vector<Var>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

// Builds an op node; drops graph edges when recording is off or no input
// needs gradients, so inference runs allocate nothing beyond the value.
Var make_op(NdArray value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled && any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_op = std::move(bw);
    }
    return n;
}

void check_same_shape(const NdArray& a, const NdArray& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void Node::accumulate(const NdArray& g) {
    if (grad.empty()) {
        grad = g;
        return;
    }
    check_same_shape(grad, g, "accumulate");
    double* dst = grad.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
}

Var constant(NdArray value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var make_parameter(NdArray value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.size() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got shape " +
                                    root->value.shape_string());
    }
    // Iterative post-order DFS; reverse of the order is a valid topological
    // sweep for gradient propagation.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad = NdArray(root->value.shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_op && !node->grad.empty()) node->backward_op(*node);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    NdArray out = a->value;
    double* o = out.data();
    const double* bb = b->value.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] += bb[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    NdArray out = a->value;
    double* o = out.data();
    const double* bb = b->value.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] -= bb[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            NdArray g(self.grad.shape());
            const double* d = self.grad.data();
            double* gg = g.data();
            for (std::size_t i = 0; i < g.size(); ++i) gg[i] = -d[i];
            self.parents[1]->accumulate(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    NdArray out = a->value;
    double* o = out.data();
    const double* bb = b->value.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] *= bb[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const double* d = self.grad.data();
        const std::size_t n = self.grad.size();
        if (self.parents[0]->requires_grad) {
            NdArray g(self.grad.shape());
            double* gg = g.data();
            const double* bv = self.parents[1]->value.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = d[i] * bv[i];
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            NdArray g(self.grad.shape());
            double* gg = g.data();
            const double* av = self.parents[0]->value.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = d[i] * av[i];
            self.parents[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    NdArray out = a->value;
    double* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] *= s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        NdArray g(self.grad.shape());
        const double* d = self.grad.data();
        double* gg = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i] = d[i] * s;
        self.parents[0]->accumulate(g);
    });
}

Var relu(const Var& a) {
    NdArray out = a->value;
    double* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = o[i] > 0.0 ? o[i] : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g(self.grad.shape());
        const double* d = self.grad.data();
        const double* x = self.parents[0]->value.data();
        double* gg = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i] = x[i] > 0.0 ? d[i] : 0.0;
        self.parents[0]->accumulate(g);
    });
}

Var sigmoid(const Var& a) {
    NdArray out = a->value;
    double* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-o[i]));
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g(self.grad.shape());
        const double* d = self.grad.data();
        const double* y = self.value.data();
        double* gg = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i] = d[i] * y[i] * (1.0 - y[i]);
        self.parents[0]->accumulate(g);
    });
}

Var tanh_op(const Var& a) {
    NdArray out = a->value;
    double* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = std::tanh(o[i]);
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g(self.grad.shape());
        const double* d = self.grad.data();
        const double* y = self.value.data();
        double* gg = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i] = d[i] * (1.0 - y[i] * y[i]);
        self.parents[0]->accumulate(g);
    });
}

Var exp_op(const Var& a) {
    NdArray out = a->value;
    double* o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = std::exp(o[i]);
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g(self.grad.shape());
        const double* d = self.grad.data();
        const double* y = self.value.data();
        double* gg = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i] = d[i] * y[i];
        self.parents[0]->accumulate(g);
    });
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    const double* pa = a->value.data();
    for (std::size_t i = 0; i < a->value.size(); ++i) acc += pa[i];
    NdArray out(std::vector<std::size_t>{}, acc);
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g(self.parents[0]->value.shape(), self.grad[0]);
        self.parents[0]->accumulate(g);
    });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
    NdArray out = a->value;
    out = std::move(out).reshaped(shape);
    return make_op(std::move(out), {a}, [](Node& self) {
        NdArray g = self.grad;
        g = std::move(g).reshaped(self.parents[0]->value.shape());
        self.parents[0]->accumulate(g);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const NdArray& av = a->value;
    const NdArray& bv = b->value;
    if (av.rank() != bv.rank() || av.rank() < 1) {
        throw std::invalid_argument("concat_channels: rank mismatch");
    }
    for (std::size_t i = 0; i + 1 < av.rank(); ++i) {
        if (av.dim(i) != bv.dim(i)) {
            throw std::invalid_argument("concat_channels: leading dims differ: " +
                                        av.shape_string() + " vs " + bv.shape_string());
        }
    }
    const std::size_t ca = av.dim(av.rank() - 1);
    const std::size_t cb = bv.dim(bv.rank() - 1);
    const std::size_t rows = av.size() / std::max<std::size_t>(ca, 1);
    std::vector<std::size_t> oshape = av.shape();
    oshape.back() = ca + cb;
    NdArray out(oshape);
    double* o = out.data();
    const double* pa = av.data();
    const double* pb = bv.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(o + r * (ca + cb), pa + r * ca, ca * sizeof(double));
        std::memcpy(o + r * (ca + cb) + ca, pb + r * cb, cb * sizeof(double));
    }
    return make_op(std::move(out), {a, b}, [ca, cb, rows](Node& self) {
        const double* d = self.grad.data();
        if (self.parents[0]->requires_grad) {
            NdArray g(self.parents[0]->value.shape());
            double* gg = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                std::memcpy(gg + r * ca, d + r * (ca + cb), ca * sizeof(double));
            }
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            NdArray g(self.parents[1]->value.shape());
            double* gg = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                std::memcpy(gg + r * cb, d + r * (ca + cb) + ca, cb * sizeof(double));
            }
            self.parents[1]->accumulate(g);
        }
    });
}

Var slice_channels(const Var& a, std::size_t c0, std::size_t c1) {
    const NdArray& av = a->value;
    if (av.rank() < 1) throw std::invalid_argument("slice_channels: rank 0 input");
    const std::size_t c = av.dim(av.rank() - 1);
    if (c0 >= c1 || c1 > c) throw std::invalid_argument("slice_channels: bad range");
    const std::size_t cw = c1 - c0;
    const std::size_t rows = av.size() / c;
    std::vector<std::size_t> oshape = av.shape();
    oshape.back() = cw;
    NdArray out(oshape);
    double* o = out.data();
    const double* pa = av.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(o + r * cw, pa + r * c + c0, cw * sizeof(double));
    }
    return make_op(std::move(out), {a}, [c0, cw, c, rows](Node& self) {
        NdArray g(self.parents[0]->value.shape(), 0.0);
        double* gg = g.data();
        const double* d = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::memcpy(gg + r * c + c0, d + r * cw, cw * sizeof(double));
        }
        self.parents[0]->accumulate(g);
    });
}

Var slice_timestep(const Var& x, std::size_t t) {
    const NdArray& xv = x->value;
    if (xv.rank() < 2) throw std::invalid_argument("slice_timestep: need [N,T,...] input");
    const std::size_t n = xv.dim(0), tt = xv.dim(1);
    if (t >= tt) throw std::invalid_argument("slice_timestep: index out of range");
    const std::size_t inner = xv.size() / (n * tt);
    std::vector<std::size_t> oshape = xv.shape();
    oshape[1] = 1;
    NdArray out(oshape);
    double* o = out.data();
    const double* px = xv.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(o + i * inner, px + (i * tt + t) * inner, inner * sizeof(double));
    }
    return make_op(std::move(out), {x}, [t, n, tt, inner](Node& self) {
        NdArray g(self.parents[0]->value.shape(), 0.0);
        double* gg = g.data();
        const double* d = self.grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            std::memcpy(gg + (i * tt + t) * inner, d + i * inner, inner * sizeof(double));
        }
        self.parents[0]->accumulate(g);
    });
}

Var concat_timesteps(const std::vector<Var>& slices) {
    if (slices.empty()) throw std::invalid_argument("concat_timesteps: empty input");
    const NdArray& first = slices[0]->value;
    if (first.rank() < 2 || first.dim(1) != 1) {
        throw std::invalid_argument("concat_timesteps: slices must be [N,1,...]");
    }
    for (const auto& s : slices) check_same_shape(s->value, first, "concat_timesteps");
    const std::size_t n = first.dim(0);
    const std::size_t tt = slices.size();
    const std::size_t inner = first.size() / n;
    std::vector<std::size_t> oshape = first.shape();
    oshape[1] = tt;
    NdArray out(oshape);
    double* o = out.data();
    for (std::size_t t = 0; t < tt; ++t) {
        const double* ps = slices[t]->value.data();
        for (std::size_t i = 0; i < n; ++i) {
            std::memcpy(o + (i * tt + t) * inner, ps + i * inner, inner * sizeof(double));
        }
    }
    std::vector<Var> parents(slices.begin(), slices.end());
    return make_op(std::move(out), std::move(parents), [n, tt, inner](Node& self) {
        const double* d = self.grad.data();
        for (std::size_t t = 0; t < tt; ++t) {
            if (!self.parents[t]->requires_grad) continue;
            NdArray g(self.parents[t]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < n; ++i) {
                std::memcpy(gg + i * inner, d + (i * tt + t) * inner, inner * sizeof(double));
            }
            self.parents[t]->accumulate(g);
        }
    });
}

Var dense(const Var& x, const Var& w, const Var& b) {
    const NdArray& xv = x->value;
    const NdArray& wv = w->value;
    const NdArray& bv = b->value;
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
        throw std::invalid_argument("dense: expected x [N,in], w [in,out], b [out]");
    }
    const std::size_t n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(1);
    if (wv.dim(0) != in || bv.dim(0) != out_dim) {
        throw std::invalid_argument("dense: dimension mismatch");
    }
    NdArray out({n, out_dim});
    gemm_nn(xv.data(), wv.data(), out.data(), n, in, out_dim);
    double* o = out.data();
    const double* pb = bv.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < out_dim; ++j) o[i * out_dim + j] += pb[j];
    }
    return make_op(std::move(out), {x, w, b}, [n, in, out_dim](Node& self) {
        const double* d = self.grad.data();
        if (self.parents[0]->requires_grad) {
            NdArray gx({n, in});
            gemm_nt(d, self.parents[1]->value.data(), gx.data(), n, out_dim, in);
            self.parents[0]->accumulate(gx);
        }
        if (self.parents[1]->requires_grad) {
            NdArray gw({in, out_dim});
            gemm_tn(self.parents[0]->value.data(), d, gw.data(), in, n, out_dim);
            self.parents[1]->accumulate(gw);
        }
        if (self.parents[2]->requires_grad) {
            NdArray gb({out_dim}, 0.0);
            double* gg = gb.data();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < out_dim; ++j) gg[j] += d[i * out_dim + j];
            }
            self.parents[2]->accumulate(gb);
        }
    });
}

namespace {

// Geometry of a strided "same"-padded convolution mapping [N,T,H,W,C] through
// a [kt,ky,kx] window to [N,oT,oH,oW,F]. Output dims are ceil(in/stride) and
// padding splits with the extra pixel at the trailing edge.
struct ConvGeom {
    std::size_t n, t, h, w, c;
    std::size_t kt, ky, kx, f;
    std::size_t st, sy, sx;
    std::size_t ot, oh, ow;
    std::ptrdiff_t pt, py, px;

    std::size_t patch() const { return kt * ky * kx * c; }
    std::size_t rows() const { return n * ot * oh * ow; }
};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::ptrdiff_t pad_begin(std::size_t in, std::size_t out, std::size_t stride, std::size_t k) {
    const std::ptrdiff_t total =
        std::max<std::ptrdiff_t>(0, std::ptrdiff_t((out - 1) * stride + k) - std::ptrdiff_t(in));
    return total / 2;
}

ConvGeom make_geom(const std::vector<std::size_t>& xshape, const std::vector<std::size_t>& wshape,
                   std::size_t st, std::size_t sy, std::size_t sx) {
    if (xshape.size() != 5 || wshape.size() != 5) {
        throw std::invalid_argument("conv3d: expected x [N,T,H,W,C] and 5-D weight");
    }
    if (st == 0 || sy == 0 || sx == 0) throw std::invalid_argument("conv3d: zero stride");
    ConvGeom g;
    g.n = xshape[0];
    g.t = xshape[1];
    g.h = xshape[2];
    g.w = xshape[3];
    g.c = xshape[4];
    g.kt = wshape[0];
    g.ky = wshape[1];
    g.kx = wshape[2];
    g.f = wshape[4];
    if (wshape[3] != g.c) {
        throw std::invalid_argument("conv3d: weight input channels do not match input");
    }
    g.st = st;
    g.sy = sy;
    g.sx = sx;
    g.ot = ceil_div(g.t, st);
    g.oh = ceil_div(g.h, sy);
    g.ow = ceil_div(g.w, sx);
    g.pt = pad_begin(g.t, g.ot, st, g.kt);
    g.py = pad_begin(g.h, g.oh, sy, g.ky);
    g.px = pad_begin(g.w, g.ow, sx, g.kx);
    return g;
}

// Writes rows [m0,m1) of the im2col matrix (row = output position, columns
// ordered (dt,dy,dx,c)); out-of-bounds taps are zeros.
void im2col_rows(const double* x, const ConvGeom& g, std::size_t m0, std::size_t m1,
                 double* col) {
    const std::size_t patch = g.patch();
    for (std::size_t m = m0; m < m1; ++m) {
        double* row = col + (m - m0) * patch;
        std::size_t rem = m;
        const std::size_t xo = rem % g.ow;
        rem /= g.ow;
        const std::size_t yo = rem % g.oh;
        rem /= g.oh;
        const std::size_t to = rem % g.ot;
        const std::size_t ni = rem / g.ot;
        std::size_t idx = 0;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const std::ptrdiff_t ti = std::ptrdiff_t(to * g.st + dt) - g.pt;
            for (std::size_t dy = 0; dy < g.ky; ++dy) {
                const std::ptrdiff_t yi = std::ptrdiff_t(yo * g.sy + dy) - g.py;
                for (std::size_t dx = 0; dx < g.kx; ++dx) {
                    const std::ptrdiff_t xi = std::ptrdiff_t(xo * g.sx + dx) - g.px;
                    if (ti >= 0 && ti < std::ptrdiff_t(g.t) && yi >= 0 &&
                        yi < std::ptrdiff_t(g.h) && xi >= 0 && xi < std::ptrdiff_t(g.w)) {
                        const double* src =
                            x + (((ni * g.t + std::size_t(ti)) * g.h + std::size_t(yi)) * g.w +
                                 std::size_t(xi)) *
                                    g.c;
                        std::memcpy(row + idx, src, g.c * sizeof(double));
                    } else {
                        std::memset(row + idx, 0, g.c * sizeof(double));
                    }
                    idx += g.c;
                }
            }
        }
    }
}

// Adds rows [m0,m1) of a col-format gradient back into the input gradient.
void col2im_add_rows(const double* col, const ConvGeom& g, std::size_t m0, std::size_t m1,
                     double* dx) {
    const std::size_t patch = g.patch();
    for (std::size_t m = m0; m < m1; ++m) {
        const double* row = col + (m - m0) * patch;
        std::size_t rem = m;
        const std::size_t xo = rem % g.ow;
        rem /= g.ow;
        const std::size_t yo = rem % g.oh;
        rem /= g.oh;
        const std::size_t to = rem % g.ot;
        const std::size_t ni = rem / g.ot;
        std::size_t idx = 0;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const std::ptrdiff_t ti = std::ptrdiff_t(to * g.st + dt) - g.pt;
            for (std::size_t dy = 0; dy < g.ky; ++dy) {
                const std::ptrdiff_t yi = std::ptrdiff_t(yo * g.sy + dy) - g.py;
                for (std::size_t dx_ = 0; dx_ < g.kx; ++dx_) {
                    const std::ptrdiff_t xi = std::ptrdiff_t(xo * g.sx + dx_) - g.px;
                    if (ti >= 0 && ti < std::ptrdiff_t(g.t) && yi >= 0 &&
                        yi < std::ptrdiff_t(g.h) && xi >= 0 && xi < std::ptrdiff_t(g.w)) {
                        double* dst =
                            dx + (((ni * g.t + std::size_t(ti)) * g.h + std::size_t(yi)) * g.w +
                                  std::size_t(xi)) *
                                     g.c;
                        for (std::size_t cc = 0; cc < g.c; ++cc) dst[cc] += row[idx + cc];
                    }
                    idx += g.c;
                }
            }
        }
    }
}

std::size_t chunk_rows(std::size_t patch) {
    const std::size_t rows = std::max<std::size_t>(1, kChunkBudget / std::max<std::size_t>(1, patch));
    return rows;
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, std::size_t st, std::size_t sy,
           std::size_t sx) {
    const ConvGeom g = make_geom(x->value.shape(), w->value.shape(), st, sy, sx);
    const NdArray& bv = b->value;
    if (bv.rank() != 1 || bv.dim(0) != g.f) throw std::invalid_argument("conv3d: bad bias shape");
    const std::size_t patch = g.patch();
    const std::size_t rows = g.rows();
    const std::size_t step = chunk_rows(patch);

    NdArray out({g.n, g.ot, g.oh, g.ow, g.f});
    std::vector<double> col(std::min(rows, step) * patch);
    for (std::size_t m0 = 0; m0 < rows; m0 += step) {
        const std::size_t m1 = std::min(rows, m0 + step);
        im2col_rows(x->value.data(), g, m0, m1, col.data());
        gemm_nn(col.data(), w->value.data(), out.data() + m0 * g.f, m1 - m0, patch, g.f);
    }
    double* o = out.data();
    const double* pb = bv.data();
    for (std::size_t m = 0; m < rows; ++m) {
        for (std::size_t ff = 0; ff < g.f; ++ff) o[m * g.f + ff] += pb[ff];
    }
    return make_op(std::move(out), {x, w, b}, [g, patch, rows, step](Node& self) {
        const double* d = self.grad.data();
        if (self.parents[0]->requires_grad) {
            NdArray gx(self.parents[0]->value.shape(), 0.0);
            std::vector<double> col(std::min(rows, step) * patch);
            for (std::size_t m0 = 0; m0 < rows; m0 += step) {
                const std::size_t m1 = std::min(rows, m0 + step);
                gemm_nt(d + m0 * g.f, self.parents[1]->value.data(), col.data(), m1 - m0, g.f,
                        patch);
                col2im_add_rows(col.data(), g, m0, m1, gx.data());
            }
            self.parents[0]->accumulate(gx);
        }
        if (self.parents[1]->requires_grad) {
            NdArray gw(self.parents[1]->value.shape(), 0.0);
            std::vector<double> col(std::min(rows, step) * patch);
            for (std::size_t m0 = 0; m0 < rows; m0 += step) {
                const std::size_t m1 = std::min(rows, m0 + step);
                im2col_rows(self.parents[0]->value.data(), g, m0, m1, col.data());
                gemm_tn(col.data(), d + m0 * g.f, gw.data(), patch, m1 - m0, g.f, true);
            }
            self.parents[1]->accumulate(gw);
        }
        if (self.parents[2]->requires_grad) {
            NdArray gb({g.f}, 0.0);
            double* gg = gb.data();
            for (std::size_t m = 0; m < rows; ++m) {
                for (std::size_t ff = 0; ff < g.f; ++ff) gg[ff] += d[m * g.f + ff];
            }
            self.parents[2]->accumulate(gb);
        }
    });
}

Var conv3d_transpose(const Var& x, const Var& w, const Var& b, std::size_t st, std::size_t sy,
                     std::size_t sx) {
    const NdArray& xv = x->value;
    const NdArray& wv = w->value;
    if (xv.rank() != 5 || wv.rank() != 5) {
        throw std::invalid_argument("conv3d_transpose: expected x [N,T,H,W,C] and 5-D weight");
    }
    if (wv.dim(4) != xv.dim(4)) {
        throw std::invalid_argument("conv3d_transpose: weight trailing dim must match input channels");
    }
    const std::size_t f = wv.dim(3);
    const NdArray& bv = b->value;
    if (bv.rank() != 1 || bv.dim(0) != f) {
        throw std::invalid_argument("conv3d_transpose: bad bias shape");
    }
    // The transpose op scatters through the geometry of the forward conv that
    // maps the (larger) output back onto the input.
    const std::vector<std::size_t> yshape = {xv.dim(0), xv.dim(1) * st, xv.dim(2) * sy,
                                             xv.dim(3) * sx, f};
    const ConvGeom g = make_geom(yshape, wv.shape(), st, sy, sx);
    if (g.ot != xv.dim(1) || g.oh != xv.dim(2) || g.ow != xv.dim(3)) {
        throw std::invalid_argument("conv3d_transpose: inconsistent geometry");
    }
    const std::size_t patch = g.patch();  // kt*ky*kx*f
    const std::size_t rows = g.rows();    // positions of the small tensor
    const std::size_t cin = xv.dim(4);
    const std::size_t step = chunk_rows(patch);

    NdArray out(yshape, 0.0);
    std::vector<double> col(std::min(rows, step) * patch);
    for (std::size_t m0 = 0; m0 < rows; m0 += step) {
        const std::size_t m1 = std::min(rows, m0 + step);
        gemm_nt(xv.data() + m0 * cin, wv.data(), col.data(), m1 - m0, cin, patch);
        col2im_add_rows(col.data(), g, m0, m1, out.data());
    }
    double* o = out.data();
    const double* pb = bv.data();
    const std::size_t opix = out.size() / f;
    for (std::size_t m = 0; m < opix; ++m) {
        for (std::size_t ff = 0; ff < f; ++ff) o[m * f + ff] += pb[ff];
    }
    return make_op(std::move(out), {x, w, b}, [g, patch, rows, cin, step](Node& self) {
        const double* d = self.grad.data();
        const std::size_t f = g.c;  // forward-conv input channels = tconv filters
        if (self.parents[0]->requires_grad) {
            NdArray gx(self.parents[0]->value.shape());
            std::vector<double> col(std::min(rows, step) * patch);
            for (std::size_t m0 = 0; m0 < rows; m0 += step) {
                const std::size_t m1 = std::min(rows, m0 + step);
                im2col_rows(d, g, m0, m1, col.data());
                gemm_nn(col.data(), self.parents[1]->value.data(), gx.data() + m0 * cin, m1 - m0,
                        patch, cin);
            }
            self.parents[0]->accumulate(gx);
        }
        if (self.parents[1]->requires_grad) {
            NdArray gw(self.parents[1]->value.shape(), 0.0);
            std::vector<double> col(std::min(rows, step) * patch);
            for (std::size_t m0 = 0; m0 < rows; m0 += step) {
                const std::size_t m1 = std::min(rows, m0 + step);
                im2col_rows(d, g, m0, m1, col.data());
                gemm_tn(col.data(), self.parents[0]->value.data() + m0 * cin, gw.data(), patch,
                        m1 - m0, cin, true);
            }
            self.parents[1]->accumulate(gw);
        }
        if (self.parents[2]->requires_grad) {
            NdArray gb({f}, 0.0);
            double* gg = gb.data();
            const std::size_t opix = self.grad.size() / f;
            for (std::size_t m = 0; m < opix; ++m) {
                for (std::size_t ff = 0; ff < f; ++ff) gg[ff] += d[m * f + ff];
            }
            self.parents[2]->accumulate(gb);
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const NdArray& running_mean,
               const NdArray& running_var, BnPending* pending, bool training, double eps) {
    const NdArray& xv = x->value;
    if (xv.rank() < 1) throw std::invalid_argument("batch_norm: rank 0 input");
    const std::size_t c = xv.dim(xv.rank() - 1);
    if (gamma->value.size() != c || beta->value.size() != c || running_mean.size() != c ||
        running_var.size() != c) {
        throw std::invalid_argument("batch_norm: parameter size must equal channel count");
    }
    const std::size_t rows = xv.size() / c;
    NdArray mean({c}, 0.0), var({c}, 0.0);
    if (training) {
        if (rows == 0) throw std::invalid_argument("batch_norm: empty batch");
        double* pm = mean.data();
        double* pv = var.data();
        const double* px = xv.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t cc = 0; cc < c; ++cc) pm[cc] += px[r * c + cc];
        }
        for (std::size_t cc = 0; cc < c; ++cc) pm[cc] /= double(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                const double dlt = px[r * c + cc] - pm[cc];
                pv[cc] += dlt * dlt;
            }
        }
        for (std::size_t cc = 0; cc < c; ++cc) pv[cc] /= double(rows);
        if (pending) {
            pending->mean = mean;
            pending->var = var;
            pending->valid = true;
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    NdArray out(xv.shape());
    std::vector<double> inv_std(c);
    for (std::size_t cc = 0; cc < c; ++cc) inv_std[cc] = 1.0 / std::sqrt(var[cc] + eps);
    {
        const double* px = xv.data();
        const double* pg = gamma->value.data();
        const double* pbta = beta->value.data();
        const double* pm = mean.data();
        double* o = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                o[r * c + cc] = pg[cc] * (px[r * c + cc] - pm[cc]) * inv_std[cc] + pbta[cc];
            }
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [c, rows, mean, inv_std, training](Node& self) {
                       const double* d = self.grad.data();
                       const double* px = self.parents[0]->value.data();
                       const double* pg = self.parents[1]->value.data();
                       const double* pm = mean.data();
                       // Per-channel reductions shared by all three gradients.
                       std::vector<double> sum_d(c, 0.0), sum_dxhat(c, 0.0);
                       for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t cc = 0; cc < c; ++cc) {
                               const double xhat = (px[r * c + cc] - pm[cc]) * inv_std[cc];
                               sum_d[cc] += d[r * c + cc];
                               sum_dxhat[cc] += d[r * c + cc] * xhat;
                           }
                       }
                       if (self.parents[0]->requires_grad) {
                           NdArray gx(self.parents[0]->value.shape());
                           double* gg = gx.data();
                           const double inv_rows = 1.0 / double(rows);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t cc = 0; cc < c; ++cc) {
                                   const double xhat = (px[r * c + cc] - pm[cc]) * inv_std[cc];
                                   double v;
                                   if (training) {
                                       v = pg[cc] * inv_std[cc] *
                                           (d[r * c + cc] - sum_d[cc] * inv_rows -
                                            xhat * sum_dxhat[cc] * inv_rows);
                                   } else {
                                       v = pg[cc] * inv_std[cc] * d[r * c + cc];
                                   }
                                   gg[r * c + cc] = v;
                               }
                           }
                           self.parents[0]->accumulate(gx);
                       }
                       if (self.parents[1]->requires_grad) {
                           NdArray gg({c});
                           for (std::size_t cc = 0; cc < c; ++cc) gg[cc] = sum_dxhat[cc];
                           self.parents[1]->accumulate(gg);
                       }
                       if (self.parents[2]->requires_grad) {
                           NdArray gb({c});
                           for (std::size_t cc = 0; cc < c; ++cc) gb[cc] = sum_d[cc];
                           self.parents[2]->accumulate(gb);
                       }
                   });
}

Var global_avg_pool(const Var& x) {
    const NdArray& xv = x->value;
    if (xv.rank() != 5) throw std::invalid_argument("global_avg_pool: expected [N,T,H,W,C]");
    const std::size_t n = xv.dim(0), c = xv.dim(4);
    const std::size_t spatial = xv.dim(1) * xv.dim(2) * xv.dim(3);
    NdArray out({n, c}, 0.0);
    const double* px = xv.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < spatial; ++s) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                o[i * c + cc] += px[(i * spatial + s) * c + cc];
            }
        }
        for (std::size_t cc = 0; cc < c; ++cc) o[i * c + cc] /= double(spatial);
    }
    return make_op(std::move(out), {x}, [n, c, spatial](Node& self) {
        NdArray g(self.parents[0]->value.shape());
        double* gg = g.data();
        const double* d = self.grad.data();
        const double inv = 1.0 / double(spatial);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t s = 0; s < spatial; ++s) {
                for (std::size_t cc = 0; cc < c; ++cc) {
                    gg[(i * spatial + s) * c + cc] = d[i * c + cc] * inv;
                }
            }
        }
        self.parents[0]->accumulate(g);
    });
}

Var mse_loss(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mse_loss");
    const std::size_t n = a->value.size();
    if (n == 0) throw std::invalid_argument("mse_loss: empty input");
    double acc = 0.0;
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double dlt = pa[i] - pb[i];
        acc += dlt * dlt;
    }
    NdArray out(std::vector<std::size_t>{}, acc / double(n));
    return make_op(std::move(out), {a, b}, [n](Node& self) {
        const double d = self.grad[0];
        const double* pa = self.parents[0]->value.data();
        const double* pb = self.parents[1]->value.data();
        const double k = 2.0 * d / double(n);
        if (self.parents[0]->requires_grad) {
            NdArray g(self.parents[0]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = k * (pa[i] - pb[i]);
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            NdArray g(self.parents[1]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = -k * (pa[i] - pb[i]);
            self.parents[1]->accumulate(g);
        }
    });
}

Var kl_loss(const Var& mu, const Var& logvar) {
    check_same_shape(mu->value, logvar->value, "kl_loss");
    if (mu->value.rank() != 2) throw std::invalid_argument("kl_loss: expected [N,D] inputs");
    const std::size_t n = mu->value.dim(0);
    const std::size_t total = mu->value.size();
    if (n == 0) throw std::invalid_argument("kl_loss: empty batch");
    double acc = 0.0;
    const double* pm = mu->value.data();
    const double* pl = logvar->value.data();
    for (std::size_t i = 0; i < total; ++i) {
        acc += -0.5 * (1.0 + pl[i] - pm[i] * pm[i] - std::exp(pl[i]));
    }
    NdArray out(std::vector<std::size_t>{}, acc / double(n));
    return make_op(std::move(out), {mu, logvar}, [n, total](Node& self) {
        const double d = self.grad[0];
        const double inv_n = 1.0 / double(n);
        const double* pm = self.parents[0]->value.data();
        const double* pl = self.parents[1]->value.data();
        if (self.parents[0]->requires_grad) {
            NdArray g(self.parents[0]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < total; ++i) gg[i] = d * inv_n * pm[i];
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            NdArray g(self.parents[1]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < total; ++i) {
                gg[i] = d * inv_n * (-0.5) * (1.0 - std::exp(pl[i]));
            }
            self.parents[1]->accumulate(g);
        }
    });
}

Var contrastive_loss(const Var& a, const Var& b, double margin) {
    check_same_shape(a->value, b->value, "contrastive_loss");
    const std::size_t n = a->value.size();
    if (n == 0) throw std::invalid_argument("contrastive_loss: empty input");
    double mse = 0.0;
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double dlt = pa[i] - pb[i];
        mse += dlt * dlt;
    }
    mse /= double(n);
    const double rmse = std::sqrt(mse);
    const double hinge = std::max(0.0, margin - rmse);
    NdArray out(std::vector<std::size_t>{}, hinge * hinge);
    return make_op(std::move(out), {a, b}, [n, margin, rmse](Node& self) {
        if (rmse >= margin || rmse < 1e-12) return;  // hinge inactive or flat at zero distance
        const double d = self.grad[0];
        // dL/d(a_i) = 2*(margin-rmse) * (-1/(2*rmse)) * 2*(a_i-b_i)/n
        const double k = -d * (margin - rmse) / rmse * 2.0 / double(n);
        const double* pa = self.parents[0]->value.data();
        const double* pb = self.parents[1]->value.data();
        if (self.parents[0]->requires_grad) {
            NdArray g(self.parents[0]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = k * (pa[i] - pb[i]);
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            NdArray g(self.parents[1]->value.shape());
            double* gg = g.data();
            for (std::size_t i = 0; i < n; ++i) gg[i] = -k * (pa[i] - pb[i]);
            self.parents[1]->accumulate(g);
        }
    });
}

Var contrastive_loss_rows(const Var& a, const Var& b, double margin) {
    check_same_shape(a->value, b->value, "contrastive_loss_rows");
    if (a->value.rank() < 1 || a->value.dim(0) == 0) {
        throw std::invalid_argument("contrastive_loss_rows: need a nonempty leading axis");
    }
    const std::size_t rows = a->value.dim(0);
    const std::size_t inner = a->value.size() / rows;
    if (inner == 0) throw std::invalid_argument("contrastive_loss_rows: empty rows");
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    std::vector<double> rmse(rows);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double mse = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
            const double dlt = pa[r * inner + i] - pb[r * inner + i];
            mse += dlt * dlt;
        }
        rmse[r] = std::sqrt(mse / double(inner));
        const double hinge = std::max(0.0, margin - rmse[r]);
        total += hinge * hinge;
    }
    NdArray out(std::vector<std::size_t>{}, total / double(rows));
    return make_op(std::move(out), {a, b}, [rows, inner, margin, rmse](Node& self) {
        const double d = self.grad[0];
        const double* pa = self.parents[0]->value.data();
        const double* pb = self.parents[1]->value.data();
        NdArray ga, gb;
        if (self.parents[0]->requires_grad) ga = NdArray(self.parents[0]->value.shape(), 0.0);
        if (self.parents[1]->requires_grad) gb = NdArray(self.parents[1]->value.shape(), 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            if (rmse[r] >= margin || rmse[r] < 1e-12) continue;
            const double k =
                -d * (margin - rmse[r]) / rmse[r] * 2.0 / double(inner) / double(rows);
            for (std::size_t i = 0; i < inner; ++i) {
                const double diff = pa[r * inner + i] - pb[r * inner + i];
                if (!ga.empty()) ga[r * inner + i] = k * diff;
                if (!gb.empty()) gb[r * inner + i] = -k * diff;
            }
        }
        if (!ga.empty()) self.parents[0]->accumulate(ga);
        if (!gb.empty()) self.parents[1]->accumulate(gb);
    });
}

}  // namespace clvae::ad
