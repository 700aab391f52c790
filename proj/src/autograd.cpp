#include "dimwm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dimwm::nn {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidArgument(what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank5(const Shape& s, const char* op) {
    if (s.size() != 5) throw InvalidArgument(std::string(op) + ": expected NCDHW tensor, got " + shape_string(s));
}

template <class T>
Node<T>& parent(Node<T>& n, std::size_t i) {
    return *n.parents[i];
}

}  // namespace

template <class T>
void backward(const Var<T>& root) {
    if (!root.requires_grad()) return;
    if (root.value().size() != 1) throw InvalidArgument("backward: root must be a single element");

    // Iterative post-order DFS for a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) {
            n->grad_buffer();
            n->backward(*n);
        }
    }
    // Release intermediate gradient buffers; leaves keep theirs.
    for (Node<T>* n : order) {
        if (!n->parents.empty()) n->grad = Tensor<T>();
    }
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto& par = parent(n, p);
            if (!par.requires_grad) continue;
            auto& g = par.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto& par = parent(n, p);
            if (!par.requires_grad) continue;
            const T sign = p == 0 ? T(1) : T(-1);
            auto& g = par.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * n.grad[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.storage()) v *= s;
    return Var<T>::from_op(std::move(out), {a}, [s](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

template <class T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
    require_same_shape(a.shape(), c.shape(), "add_const");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    return Var<T>::from_op(std::move(out), {a}, [](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
    require_same_shape(a.shape(), c.shape(), "mul_const");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
    return Var<T>::from_op(std::move(out), {a}, [c](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c[i];
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
    return Var<T>::from_op(std::move(out), {a}, [](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (n.value[i] > T(0)) g[i] += n.grad[i];
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
    return Var<T>::from_op(std::move(out), {a}, [](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = n.value[i];
            g[i] += n.grad[i] * y * (T(1) - y);
        }
    });
}

template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = a.value();
    for (auto& v : out.storage()) v = std::min(std::max(v, lo), hi);
    return Var<T>::from_op(std::move(out), {a}, [lo, hi](Node<T>& n) {
        auto& par = parent(n, 0);
        auto& g = par.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = par.value[i];
            if (x >= lo && x <= hi) g[i] += n.grad[i];
        }
    });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return Var<T>::from_op(std::move(out), {a}, [](Node<T>& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Dense layers

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require(x.value().rank() == 2 && weight.value().rank() == 2, "linear: expected (N, in) input and (out, in) weight");
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    require(weight.dim(1) == in && bias.value().size() == out_dim, "linear: weight/bias shape mismatch");

    Tensor<T> out({n, out_dim});
    Eigen::Map<const MatR<T>> X(x.value().data(), n, in);
    Eigen::Map<const MatR<T>> W(weight.value().data(), out_dim, in);
    Eigen::Map<MatR<T>> Y(out.data(), n, out_dim);
    Y.noalias() = X * W.transpose();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out_dim; ++c) Y(r, c) += bias.value()[c];

    return Var<T>::from_op(std::move(out), {x, weight, bias}, [n, in, out_dim](Node<T>& nd) {
        Eigen::Map<const MatR<T>> G(nd.grad.data(), n, out_dim);
        auto& px = parent(nd, 0);
        auto& pw = parent(nd, 1);
        auto& pb = parent(nd, 2);
        if (px.requires_grad) {
            Eigen::Map<const MatR<T>> W(pw.value.data(), out_dim, in);
            Eigen::Map<MatR<T>> GX(px.grad_buffer().data(), n, in);
            GX.noalias() += G * W;
        }
        if (pw.requires_grad) {
            Eigen::Map<const MatR<T>> X(px.value.data(), n, in);
            Eigen::Map<MatR<T>> GW(pw.grad_buffer().data(), out_dim, in);
            GW.noalias() += G.transpose() * X;
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < out_dim; ++c) gb[c] += G(r, c);
        }
    });
}

namespace {

struct ConvDims {
    std::size_t n, cin, d, h, w;
    std::size_t cout, kd, kh, kw;
    std::size_t od, oh, ow;
    Conv3dGeometry g;

    std::size_t k() const { return cin * kd * kh * kw; }
    std::size_t p() const { return od * oh * ow; }
    std::size_t in_frame() const { return cin * d * h * w; }
    bool pointwise() const {
        return kd == 1 && kh == 1 && kw == 1 && g.stride[0] == 1 && g.stride[1] == 1 && g.stride[2] == 1 &&
               g.padding[0] == 0 && g.padding[1] == 0 && g.padding[2] == 0;
    }
};

template <class T>
void im2col(const T* x, const ConvDims& c, T* col) {
    const std::size_t P = c.p();
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < c.cin; ++ci)
        for (std::size_t a = 0; a < c.kd; ++a)
            for (std::size_t b = 0; b < c.kh; ++b)
                for (std::size_t e = 0; e < c.kw; ++e, ++r) {
                    T* dst = col + r * P;
                    for (std::size_t z = 0; z < c.od; ++z) {
                        const long iz = static_cast<long>(z * c.g.stride[0] + a) - static_cast<long>(c.g.padding[0]);
                        for (std::size_t y = 0; y < c.oh; ++y) {
                            const long iy = static_cast<long>(y * c.g.stride[1] + b) - static_cast<long>(c.g.padding[1]);
                            T* row = dst + (z * c.oh + y) * c.ow;
                            if (iz < 0 || iz >= static_cast<long>(c.d) || iy < 0 || iy >= static_cast<long>(c.h)) {
                                std::fill(row, row + c.ow, T(0));
                                continue;
                            }
                            const T* src = x + ((ci * c.d + iz) * c.h + iy) * c.w;
                            for (std::size_t xo = 0; xo < c.ow; ++xo) {
                                const long ix = static_cast<long>(xo * c.g.stride[2] + e) - static_cast<long>(c.g.padding[2]);
                                row[xo] = (ix < 0 || ix >= static_cast<long>(c.w)) ? T(0) : src[ix];
                            }
                        }
                    }
                }
}

template <class T>
void col2im(const T* col, const ConvDims& c, T* dx) {
    const std::size_t P = c.p();
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < c.cin; ++ci)
        for (std::size_t a = 0; a < c.kd; ++a)
            for (std::size_t b = 0; b < c.kh; ++b)
                for (std::size_t e = 0; e < c.kw; ++e, ++r) {
                    const T* srcc = col + r * P;
                    for (std::size_t z = 0; z < c.od; ++z) {
                        const long iz = static_cast<long>(z * c.g.stride[0] + a) - static_cast<long>(c.g.padding[0]);
                        if (iz < 0 || iz >= static_cast<long>(c.d)) continue;
                        for (std::size_t y = 0; y < c.oh; ++y) {
                            const long iy = static_cast<long>(y * c.g.stride[1] + b) - static_cast<long>(c.g.padding[1]);
                            if (iy < 0 || iy >= static_cast<long>(c.h)) continue;
                            const T* row = srcc + (z * c.oh + y) * c.ow;
                            T* dst = dx + ((ci * c.d + iz) * c.h + iy) * c.w;
                            for (std::size_t xo = 0; xo < c.ow; ++xo) {
                                const long ix = static_cast<long>(xo * c.g.stride[2] + e) - static_cast<long>(c.g.padding[2]);
                                if (ix >= 0 && ix < static_cast<long>(c.w)) dst[ix] += row[xo];
                            }
                        }
                    }
                }
}

}  // namespace

template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv3dGeometry& geom) {
    require_rank5(x.shape(), "conv3d");
    require(weight.value().rank() == 5, "conv3d: weight must be (Cout, Cin, kd, kh, kw)");
    ConvDims c{};
    c.n = x.dim(0), c.cin = x.dim(1), c.d = x.dim(2), c.h = x.dim(3), c.w = x.dim(4);
    c.cout = weight.dim(0), c.kd = weight.dim(2), c.kh = weight.dim(3), c.kw = weight.dim(4);
    c.g = geom;
    require(weight.dim(1) == c.cin, "conv3d: input has " + std::to_string(c.cin) + " channels, weight expects " +
                                        std::to_string(weight.dim(1)));
    require(bias.value().size() == c.cout, "conv3d: bias size mismatch");
    const std::size_t in_dims[3] = {c.d, c.h, c.w};
    const std::size_t ks[3] = {c.kd, c.kh, c.kw};
    std::size_t od[3];
    for (int i = 0; i < 3; ++i) {
        require(in_dims[i] + 2 * geom.padding[i] >= ks[i], "conv3d: kernel larger than padded input");
        od[i] = (in_dims[i] + 2 * geom.padding[i] - ks[i]) / geom.stride[i] + 1;
    }
    c.od = od[0], c.oh = od[1], c.ow = od[2];

    const std::size_t K = c.k(), P = c.p();
    Tensor<T> out({c.n, c.cout, c.od, c.oh, c.ow});
    Eigen::Map<const MatR<T>> W(weight.value().data(), c.cout, K);
    typename Tensor<T>::Storage col(c.pointwise() ? 0 : K * P);
    for (std::size_t s = 0; s < c.n; ++s) {
        const T* xs = x.value().data() + s * c.in_frame();
        const T* cp = xs;
        if (!c.pointwise()) {
            im2col(xs, c, col.data());
            cp = col.data();
        }
        Eigen::Map<const MatR<T>> C(cp, K, P);
        Eigen::Map<MatR<T>> Y(out.data() + s * c.cout * P, c.cout, P);
        Y.noalias() = W * C;
        for (std::size_t o = 0; o < c.cout; ++o) Y.row(o).array() += bias.value()[o];
    }

    return Var<T>::from_op(std::move(out), {x, weight, bias}, [c](Node<T>& nd) {
        const std::size_t K = c.k(), P = c.p();
        auto& px = parent(nd, 0);
        auto& pw = parent(nd, 1);
        auto& pb = parent(nd, 2);
        Eigen::Map<const MatR<T>> W(pw.value.data(), c.cout, K);
        typename Tensor<T>::Storage col(c.pointwise() ? 0 : K * P);
        typename Tensor<T>::Storage dcol(c.pointwise() || !px.requires_grad ? 0 : K * P);
        for (std::size_t s = 0; s < c.n; ++s) {
            Eigen::Map<const MatR<T>> G(nd.grad.data() + s * c.cout * P, c.cout, P);
            if (pw.requires_grad) {
                const T* xs = px.value.data() + s * c.in_frame();
                const T* cp = xs;
                if (!c.pointwise()) {
                    im2col(xs, c, col.data());
                    cp = col.data();
                }
                Eigen::Map<const MatR<T>> C(cp, K, P);
                Eigen::Map<MatR<T>> GW(pw.grad_buffer().data(), c.cout, K);
                GW.noalias() += G * C.transpose();
            }
            if (pb.requires_grad) {
                auto& gb = pb.grad_buffer();
                for (std::size_t o = 0; o < c.cout; ++o) gb[o] += G.row(o).sum();
            }
            if (px.requires_grad) {
                T* gx = px.grad_buffer().data() + s * c.in_frame();
                if (c.pointwise()) {
                    Eigen::Map<MatR<T>> GX(gx, K, P);
                    GX.noalias() += W.transpose() * G;
                } else {
                    Eigen::Map<MatR<T>> DC(dcol.data(), K, P);
                    DC.noalias() = W.transpose() * G;
                    col2im(dcol.data(), c, gx);
                }
            }
        }
    });
}

template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups, T eps) {
    require(x.value().rank() >= 3, "group_norm: expected (N, C, ...) tensor");
    const std::size_t n = x.dim(0), ch = x.dim(1), P = x.value().size() / (n * ch);
    require(gamma.value().size() == ch && beta.value().size() == ch, "group_norm: affine size mismatch");
    require(groups > 0 && ch % groups == 0, "group_norm: channels not divisible by groups");
    const std::size_t cg = ch / groups, G = cg * P;

    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(n * groups);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t off = (s * ch + g * cg) * P;
            const T* src = x.value().data() + off;
            double mean = 0;
            for (std::size_t i = 0; i < G; ++i) mean += src[i];
            mean /= static_cast<double>(G);
            double var = 0;
            for (std::size_t i = 0; i < G; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(G);
            const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
            inv_std[s * groups + g] = is;
            for (std::size_t i = 0; i < G; ++i) {
                const std::size_t c = g * cg + i / P;
                const T xh = (src[i] - static_cast<T>(mean)) * is;
                xhat[off + i] = xh;
                out[off + i] = xh * gamma.value()[c] + beta.value()[c];
            }
        }

    return Var<T>::from_op(std::move(out), {x, gamma, beta},
                           [n, ch, P, groups, cg, G, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& nd) {
        auto& px = parent(nd, 0);
        auto& pg = parent(nd, 1);
        auto& pb = parent(nd, 2);
        std::vector<T> gh(G);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t g = 0; g < groups; ++g) {
                const std::size_t off = (s * ch + g * cg) * P;
                const T* gr = nd.grad.data() + off;
                const T* xh = xhat.data() + off;
                double sum_g = 0, sum_gx = 0;
                for (std::size_t i = 0; i < G; ++i) {
                    const std::size_t c = g * cg + i / P;
                    if (pg.requires_grad) pg.grad_buffer()[c] += gr[i] * xh[i];
                    if (pb.requires_grad) pb.grad_buffer()[c] += gr[i];
                    gh[i] = gr[i] * pg.value[c];
                    sum_g += gh[i];
                    sum_gx += static_cast<double>(gh[i]) * xh[i];
                }
                if (px.requires_grad) {
                    const T is = inv_std[s * groups + g];
                    const T mg = static_cast<T>(sum_g / static_cast<double>(G));
                    const T mgx = static_cast<T>(sum_gx / static_cast<double>(G));
                    T* dx = px.grad_buffer().data() + off;
                    for (std::size_t i = 0; i < G; ++i) dx[i] += is * (gh[i] - mg - xh[i] * mgx);
                }
            }
    });
}

template <class T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    require(x.value().rank() >= 3, "instance_norm: expected (N, C, ...) tensor");
    return group_norm(x, gamma, beta, x.dim(1), eps);
}

template <class T>
Var<T> max_pool3d(const Var<T>& x, std::size_t kd, std::size_t kh, std::size_t kw) {
    require_rank5(x.shape(), "max_pool3d");
    const std::size_t n = x.dim(0), ch = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
    const std::size_t od = d / kd, oh = h / kh, ow = w / kw;
    require(od > 0 && oh > 0 && ow > 0, "max_pool3d: window larger than input " + shape_string(x.shape()));
    Tensor<T> out({n, ch, od, oh, ow});
    std::vector<std::uint32_t> arg(out.size());
    const T* src = x.value().data();
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * ch; ++p)
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
                    std::size_t best = 0;
                    T bv = -std::numeric_limits<T>::infinity();
                    for (std::size_t a = 0; a < kd; ++a)
                        for (std::size_t b = 0; b < kh; ++b)
                            for (std::size_t e = 0; e < kw; ++e) {
                                const std::size_t idx = ((p * d + z * kd + a) * h + y * kh + b) * w + xo * kw + e;
                                if (src[idx] > bv) {
                                    bv = src[idx];
                                    best = idx;
                                }
                            }
                    out[o] = bv;
                    arg[o] = static_cast<std::uint32_t>(best);
                }
    return Var<T>::from_op(std::move(out), {x}, [arg = std::move(arg)](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += nd.grad[i];
    });
}

namespace {

struct AxisTaps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        t.i0.push_back(lo);
        t.i1.push_back(hi);
        t.frac.push_back(src - static_cast<double>(lo));
    }
    return t;
}

}  // namespace

template <class T>
Var<T> resize_trilinear(const Var<T>& x, std::size_t od, std::size_t oh, std::size_t ow) {
    require_rank5(x.shape(), "resize_trilinear");
    require(od > 0 && oh > 0 && ow > 0, "resize_trilinear: empty target size");
    const std::size_t n = x.dim(0), ch = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
    if (d == od && h == oh && w == ow) return reshape(x, x.shape());
    const AxisTaps td = axis_taps(d, od), th = axis_taps(h, oh), tw = axis_taps(w, ow);

    Resampling<T> plan;
    plan.out_shape = {n, ch, od, oh, ow};
    plan.row.reserve(numel(plan.out_shape) + 1);
    plan.col.reserve(8 * numel(plan.out_shape));
    plan.weight.reserve(8 * numel(plan.out_shape));
    for (std::size_t p = 0; p < n * ch; ++p)
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo) {
                    plan.begin_row();
                    for (int a = 0; a < 2; ++a) {
                        const double wz = a ? td.frac[z] : 1 - td.frac[z];
                        if (wz == 0) continue;
                        const std::size_t iz = a ? td.i1[z] : td.i0[z];
                        for (int b = 0; b < 2; ++b) {
                            const double wy = b ? th.frac[y] : 1 - th.frac[y];
                            if (wy == 0) continue;
                            const std::size_t iy = b ? th.i1[y] : th.i0[y];
                            for (int e = 0; e < 2; ++e) {
                                const double wx = e ? tw.frac[xo] : 1 - tw.frac[xo];
                                if (wx == 0) continue;
                                const std::size_t ix = e ? tw.i1[xo] : tw.i0[xo];
                                plan.tap(((p * d + iz) * h + iy) * w + ix, static_cast<T>(wz * wy * wx));
                            }
                        }
                    }
                }
    plan.finish();
    return resample(x, plan);
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    require(!xs.empty(), "concat_channels: no inputs");
    const Shape& s0 = xs[0].shape();
    require(s0.size() >= 2, "concat_channels: rank must be >= 2");
    const std::size_t n = s0[0];
    const std::size_t inner = xs[0].value().size() / (n * s0[1]);
    std::size_t total_c = 0;
    for (const auto& v : xs) {
        const Shape& s = v.shape();
        require(s.size() == s0.size() && s[0] == n && v.value().size() / (n * s[1]) == inner,
                "concat_channels: incompatible shapes " + shape_string(s0) + " and " + shape_string(s));
        total_c += s[1];
    }
    Shape os = s0;
    os[1] = total_c;
    Tensor<T> out(os);
    std::vector<std::size_t> chans;
    for (std::size_t s = 0; s < n; ++s) {
        T* dst = out.data() + s * total_c * inner;
        for (const auto& v : xs) {
            const std::size_t block = v.dim(1) * inner;
            std::copy_n(v.value().data() + s * block, block, dst);
            dst += block;
        }
    }
    for (const auto& v : xs) chans.push_back(v.dim(1));
    return Var<T>::from_op(std::move(out), xs, [n, inner, total_c, chans](Node<T>& nd) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
            auto& par = parent(nd, k);
            const std::size_t block = chans[k] * inner;
            if (par.requires_grad) {
                auto& g = par.grad_buffer();
                for (std::size_t s = 0; s < n; ++s) {
                    const T* src = nd.grad.data() + s * total_c * inner + c0 * inner;
                    T* dst = g.data() + s * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            c0 += chans[k];
        }
    });
}

template <class T>
Var<T> concat_frames(const std::vector<Var<T>>& xs) {
    require(!xs.empty(), "concat_frames: no inputs");
    const Shape& s0 = xs[0].shape();
    require_rank5(s0, "concat_frames");
    const std::size_t outer = s0[0] * s0[1], hw = s0[3] * s0[4];
    std::size_t total_t = 0;
    std::vector<std::size_t> ts;
    for (const auto& v : xs) {
        const Shape& s = v.shape();
        require(s.size() == 5 && s[0] == s0[0] && s[1] == s0[1] && s[3] == s0[3] && s[4] == s0[4],
                "concat_frames: incompatible shapes");
        ts.push_back(s[2]);
        total_t += s[2];
    }
    Tensor<T> out({s0[0], s0[1], total_t, s0[3], s0[4]});
    for (std::size_t p = 0; p < outer; ++p) {
        T* dst = out.data() + p * total_t * hw;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            std::copy_n(xs[k].value().data() + p * ts[k] * hw, ts[k] * hw, dst);
            dst += ts[k] * hw;
        }
    }
    return Var<T>::from_op(std::move(out), xs, [outer, hw, total_t, ts](Node<T>& nd) {
        std::size_t t0 = 0;
        for (std::size_t k = 0; k < ts.size(); ++k) {
            auto& par = parent(nd, k);
            if (par.requires_grad) {
                auto& g = par.grad_buffer();
                for (std::size_t p = 0; p < outer; ++p) {
                    const T* src = nd.grad.data() + (p * total_t + t0) * hw;
                    T* dst = g.data() + p * ts[k] * hw;
                    for (std::size_t i = 0; i < ts[k] * hw; ++i) dst[i] += src[i];
                }
            }
            t0 += ts[k];
        }
    });
}

template <class T>
Var<T> slice_frames(const Var<T>& x, std::size_t t0, std::size_t count) {
    require_rank5(x.shape(), "slice_frames");
    const std::size_t t = x.dim(2);
    require(count > 0 && t0 + count <= t, "slice_frames: range out of bounds");
    const std::size_t outer = x.dim(0) * x.dim(1), hw = x.dim(3) * x.dim(4);
    Tensor<T> out({x.dim(0), x.dim(1), count, x.dim(3), x.dim(4)});
    for (std::size_t p = 0; p < outer; ++p)
        std::copy_n(x.value().data() + (p * t + t0) * hw, count * hw, out.data() + p * count * hw);
    return Var<T>::from_op(std::move(out), {x}, [outer, hw, t, t0, count](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        for (std::size_t p = 0; p < outer; ++p) {
            const T* src = nd.grad.data() + p * count * hw;
            T* dst = g.data() + (p * t + t0) * hw;
            for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
        }
    });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    require(x.value().rank() >= 3, "global_avg_pool: expected (N, C, ...) tensor");
    const std::size_t n = x.dim(0), ch = x.dim(1), P = x.value().size() / (n * ch);
    Tensor<T> out({n, ch});
    for (std::size_t i = 0; i < n * ch; ++i) {
        double s = 0;
        const T* src = x.value().data() + i * P;
        for (std::size_t k = 0; k < P; ++k) s += src[k];
        out[i] = static_cast<T>(s / static_cast<double>(P));
    }
    return Var<T>::from_op(std::move(out), {x}, [n, ch, P](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        const T inv = T(1) / static_cast<T>(P);
        for (std::size_t i = 0; i < n * ch; ++i) {
            const T gi = nd.grad[i] * inv;
            T* dst = g.data() + i * P;
            for (std::size_t k = 0; k < P; ++k) dst[k] += gi;
        }
    });
}

namespace {

// (N, C, T, H, W) <-> (N*T, C, 1, H, W) index map.
template <class T>
void permute_frames(const T* src, T* dst, std::size_t n, std::size_t c, std::size_t t, std::size_t hw, bool forward,
                    bool accumulate) {
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t f = 0; f < t; ++f) {
                const std::size_t a = ((s * c + k) * t + f) * hw;  // NCTHW
                const std::size_t b = ((s * t + f) * c + k) * hw;  // (NT)C1HW
                const T* from = src + (forward ? a : b);
                T* to = dst + (forward ? b : a);
                if (accumulate)
                    for (std::size_t i = 0; i < hw; ++i) to[i] += from[i];
                else
                    std::copy_n(from, hw, to);
            }
}

}  // namespace

template <class T>
Var<T> frames_to_batch(const Var<T>& x) {
    require_rank5(x.shape(), "frames_to_batch");
    const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), hw = x.dim(3) * x.dim(4);
    Tensor<T> out({n * t, c, 1, x.dim(3), x.dim(4)});
    permute_frames(x.value().data(), out.data(), n, c, t, hw, true, false);
    return Var<T>::from_op(std::move(out), {x}, [n, c, t, hw](Node<T>& nd) {
        permute_frames(nd.grad.data(), parent(nd, 0).grad_buffer().data(), n, c, t, hw, false, true);
    });
}

template <class T>
Var<T> batch_to_frames(const Var<T>& x, std::size_t n) {
    require_rank5(x.shape(), "batch_to_frames");
    require(x.dim(2) == 1 && n > 0 && x.dim(0) % n == 0, "batch_to_frames: expected (N*T, C, 1, H, W)");
    const std::size_t t = x.dim(0) / n, c = x.dim(1), hw = x.dim(3) * x.dim(4);
    Tensor<T> out({n, c, t, x.dim(3), x.dim(4)});
    permute_frames(x.value().data(), out.data(), n, c, t, hw, false, false);
    return Var<T>::from_op(std::move(out), {x}, [n, c, t, hw](Node<T>& nd) {
        permute_frames(nd.grad.data(), parent(nd, 0).grad_buffer().data(), n, c, t, hw, true, true);
    });
}

template <class T>
Var<T> mse(const Var<T>& a, const Tensor<T>& target) {
    require_same_shape(a.shape(), target.shape(), "mse");
    double s = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = static_cast<double>(a.value()[i]) - target[i];
        s += d * d;
    }
    const std::size_t n = target.size();
    Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(s / static_cast<double>(n))});
    return Var<T>::from_op(std::move(out), {a}, [target, n](Node<T>& nd) {
        auto& par = parent(nd, 0);
        auto& g = par.grad_buffer();
        const T k = T(2) * nd.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) g[i] += k * (par.value[i] - target[i]);
    });
}

template <class T>
Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& weights) {
    require_same_shape(a.shape(), weights.shape(), "weighted_sum");
    double s = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(a.value()[i]) * weights[i];
    Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(s)});
    return Var<T>::from_op(std::move(out), {a}, [weights](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[0] * weights[i];
    });
}

template <class T>
Var<T> add_scaled(const Var<T>& a, T sa, const Var<T>& b, T sb) {
    require(a.value().size() == 1 && b.value().size() == 1, "add_scaled: scalar operands required");
    Tensor<T> out(Shape{}, std::vector<T>{sa * a.value()[0] + sb * b.value()[0]});
    return Var<T>::from_op(std::move(out), {a, b}, [sa, sb](Node<T>& nd) {
        if (parent(nd, 0).requires_grad) parent(nd, 0).grad_buffer()[0] += sa * nd.grad[0];
        if (parent(nd, 1).requires_grad) parent(nd, 1).grad_buffer()[0] += sb * nd.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Resampling and codec primitives

template <class T>
Tensor<T> resample(const Tensor<T>& x, const Resampling<T>& plan) {
    const std::size_t rows = plan.row.empty() ? 0 : plan.row.size() - 1;
    require(rows == numel(plan.out_shape), "resample: plan rows do not match output shape");
    require(plan.bias.empty() || plan.bias.size() == rows, "resample: bias size mismatch");
    Tensor<T> out(plan.out_shape);
    for (std::size_t i = 0; i < rows; ++i) {
        T acc = plan.bias.empty() ? T(0) : plan.bias[i];
        for (std::uint32_t k = plan.row[i]; k < plan.row[i + 1]; ++k) acc += plan.weight[k] * x[plan.col[k]];
        out[i] = acc;
    }
    return out;
}

template <class T>
Var<T> resample(const Var<T>& x, const Resampling<T>& plan) {
    for (auto c : plan.col)
        if (c >= x.value().size()) throw InvalidArgument("resample: plan index out of range");
    Tensor<T> out = resample(x.value(), plan);
    auto shared = std::make_shared<const Resampling<T>>(plan);
    return Var<T>::from_op(std::move(out), {x}, [shared](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        const auto& p = *shared;
        for (std::size_t i = 0; i + 1 < p.row.size(); ++i) {
            const T gi = nd.grad[i];
            for (std::uint32_t k = p.row[i]; k < p.row[i + 1]; ++k) g[p.col[k]] += p.weight[k] * gi;
        }
    });
}

template <class T>
Var<T> soft_quantize(const Var<T>& x, const Tensor<T>& steps) {
    require_same_shape(x.shape(), steps.shape(), "soft_quantize");
    Tensor<T> out(x.shape());
    Tensor<T> slope(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T s = steps[i];
        const T z = x.value()[i] / s;
        const T r = std::nearbyint(z);
        const T f = z - r;
        out[i] = s * (r + f * f * f);
        slope[i] = T(3) * f * f;
    }
    return Var<T>::from_op(std::move(out), {x}, [slope = std::move(slope)](Node<T>& nd) {
        auto& g = parent(nd, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i] * slope[i];
    });
}

namespace {

// Orthonormal DCT-II basis of size n: B[u][k].
std::vector<double> dct_basis(std::size_t n) {
    std::vector<double> b(n * n);
    const double pi = 3.14159265358979323846;
    for (std::size_t u = 0; u < n; ++u) {
        const double a = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (std::size_t k = 0; k < n; ++k) b[u * n + k] = a * std::cos(pi * (2.0 * k + 1.0) * u / (2.0 * n));
    }
    return b;
}

template <class T>
void block_dct_frame(const T* src, T* dst, std::size_t h, std::size_t w, bool inverse, bool accumulate) {
    constexpr std::size_t B = 8;
    static const std::vector<std::vector<double>> bases = [] {
        std::vector<std::vector<double>> v(B + 1);
        for (std::size_t n = 1; n <= B; ++n) v[n] = dct_basis(n);
        return v;
    }();
    double tmp[B][B];
    for (std::size_t by = 0; by < h; by += B)
        for (std::size_t bx = 0; bx < w; bx += B) {
            const std::size_t bh = std::min(B, h - by), bw = std::min(B, w - bx);
            const auto& Bh = bases[bh];
            const auto& Bw = bases[bw];
            // rows: tmp[u][x] = sum_y M[u][y] src[y][x]  (M = basis or its transpose)
            for (std::size_t u = 0; u < bh; ++u)
                for (std::size_t x = 0; x < bw; ++x) {
                    double acc = 0;
                    for (std::size_t y = 0; y < bh; ++y) {
                        const double m = inverse ? Bh[y * bh + u] : Bh[u * bh + y];
                        acc += m * src[(by + y) * w + bx + x];
                    }
                    tmp[u][x] = acc;
                }
            for (std::size_t u = 0; u < bh; ++u)
                for (std::size_t v = 0; v < bw; ++v) {
                    double acc = 0;
                    for (std::size_t x = 0; x < bw; ++x) {
                        const double m = inverse ? Bw[x * bw + v] : Bw[v * bw + x];
                        acc += m * tmp[u][x];
                    }
                    T& d = dst[(by + u) * w + bx + v];
                    d = accumulate ? d + static_cast<T>(acc) : static_cast<T>(acc);
                }
        }
}

}  // namespace

template <class T>
Tensor<T> block_dct(const Tensor<T>& x, bool inverse) {
    require_rank5(x.shape(), "block_dct");
    const std::size_t frames = x.dim(0) * x.dim(1) * x.dim(2), h = x.dim(3), w = x.dim(4);
    Tensor<T> out(x.shape());
    for (std::size_t f = 0; f < frames; ++f)
        block_dct_frame(x.data() + f * h * w, out.data() + f * h * w, h, w, inverse, false);
    return out;
}

template <class T>
Var<T> block_dct(const Var<T>& x, bool inverse) {
    Tensor<T> out = block_dct(x.value(), inverse);
    return Var<T>::from_op(std::move(out), {x}, [inverse](Node<T>& nd) {
        // Orthonormal: the adjoint of the transform is its inverse.
        const Shape& s = nd.grad.shape();
        const std::size_t frames = s[0] * s[1] * s[2], h = s[3], w = s[4];
        auto& g = parent(nd, 0).grad_buffer();
        for (std::size_t f = 0; f < frames; ++f)
            block_dct_frame(nd.grad.data() + f * h * w, g.data() + f * h * w, h, w, !inverse, true);
    });
}

// ---------------------------------------------------------------------------

#define DIMWM_INSTANTIATE(T)                                                                         \
    template void backward<T>(const Var<T>&);                                                        \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                            \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                            \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                            \
    template Var<T> scale<T>(const Var<T>&, T);                                                      \
    template Var<T> add_const<T>(const Var<T>&, const Tensor<T>&);                                   \
    template Var<T> mul_const<T>(const Var<T>&, const Tensor<T>&);                                   \
    template Var<T> relu<T>(const Var<T>&);                                                          \
    template Var<T> sigmoid<T>(const Var<T>&);                                                       \
    template Var<T> clamp<T>(const Var<T>&, T, T);                                                   \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                          \
    template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Conv3dGeometry&);   \
    template Var<T> instance_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
    template Var<T> group_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, T);     \
    template Var<T> max_pool3d<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);             \
    template Var<T> resize_trilinear<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);       \
    template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                                  \
    template Var<T> concat_frames<T>(const std::vector<Var<T>>&);                                    \
    template Var<T> slice_frames<T>(const Var<T>&, std::size_t, std::size_t);                        \
    template Var<T> global_avg_pool<T>(const Var<T>&);                                               \
    template Var<T> frames_to_batch<T>(const Var<T>&);                                               \
    template Var<T> batch_to_frames<T>(const Var<T>&, std::size_t);                                  \
    template Var<T> mse<T>(const Var<T>&, const Tensor<T>&);                                         \
    template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);                                \
    template Var<T> add_scaled<T>(const Var<T>&, T, const Var<T>&, T);                               \
    template Var<T> resample<T>(const Var<T>&, const Resampling<T>&);                                \
    template Tensor<T> resample<T>(const Tensor<T>&, const Resampling<T>&);                          \
    template Var<T> soft_quantize<T>(const Var<T>&, const Tensor<T>&);                               \
    template Var<T> block_dct<T>(const Var<T>&, bool);                                               \
    template Tensor<T> block_dct<T>(const Tensor<T>&, bool);

DIMWM_INSTANTIATE(float)
DIMWM_INSTANTIATE(double)

}  // namespace dimwm::nn
