#include "nflab/tape.hpp"

#include <cmath>
#include <cstring>

namespace nflab {

namespace {

// Dense kernels. `accum` adds into c instead of overwriting; the gradient
// paths always accumulate.

// c (+)= a·b with a [m,k], b [k,n].
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        if (!accum) {
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        }
        const double* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c (+)= a·b^T with a [m,k], b [n,k].
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accum ? ci[j] + acc : acc;
        }
    }
}

// c (+)= a^T·b with a [k,m], b [k,n] -> c [m,n].
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accum) {
    if (!accum) {
        std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    }
    for (int p = 0; p < k; ++p) {
        const double* ap = a + static_cast<size_t>(p) * m;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double api = ap[i];
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void require_2d(const char* op, const char* operand, const Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": operand '" + operand + "' must be 2-D, got " +
                         t.shape_str());
    }
}

}  // namespace

const Tensor& Var::value() const {
    if (!valid()) throw ValueError("Var::value: invalid handle");
    return tape_->val(idx_);
}

const Tensor& Var::grad() const {
    if (!valid()) throw ValueError("Var::grad: invalid handle");
    if (!tape_->grads_ready()) throw ValueError("Var::grad: backward has not run");
    return tape_->grd(idx_);
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor(), BackFn()});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::emplace(Tensor value, BackFn back) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(back)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var root) {
    if (!root.valid() || root.tape_ != this) {
        throw ValueError("backward: root is not a node of this tape");
    }
    if (val(root.idx_).numel() != 1) {
        throw ValueError("backward: root must be scalar, got shape " +
                         val(root.idx_).shape_str());
    }
    for (auto& n : nodes_) {
        n.grad = Tensor(n.value.shape());  // zero-filled
    }
    grads_ready_ = true;
    grd(root.idx_)[0] = 1.0;
    for (int i = root.idx_; i >= 0; --i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (n.back) n.back(*this, i);
    }
}

void Tape::clear() {
    nodes_.clear();
    grads_ready_ = false;
}

bool Tape::all_values_finite() const {
    for (const auto& n : nodes_) {
        if (!n.value.all_finite()) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_same_shape("add", "rhs", bv, av);
    Tensor out(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
    const int ia = a.index(), ib = b.index();
    return t.emplace(std::move(out), [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& ga = tp.grd(ia);
        Tensor& gb = tp.grd(ib);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_same_shape("mul", "rhs", bv, av);
    Tensor out(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
    const int ia = a.index(), ib = b.index();
    return t.emplace(std::move(out), [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& av2 = tp.val(ia);
        const Tensor& bv2 = tp.val(ib);
        Tensor& ga = tp.grd(ia);
        Tensor& gb = tp.grd(ib);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av2[i];
        }
    });
}

Var scale(Var x, double c) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * c;
    const int ix = x.index();
    return t.emplace(std::move(out), [ix, c](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& gx = tp.grd(ix);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c;
    });
}

Var add_rows(Var x, Var row) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& rv = row.value();
    const int d = xv.last_dim();
    if (rv.rank() != 1 || rv.numel() != d) {
        throw ShapeError("add_rows: operand 'row' has shape " + rv.shape_str() +
                         ", expected [" + std::to_string(d) + "]");
    }
    Tensor out(xv.shape());
    const int64_t slices = xv.n_slices();
    for (int64_t s = 0; s < slices; ++s) {
        for (int j = 0; j < d; ++j) out[s * d + j] = xv[s * d + j] + rv[j];
    }
    const int ix = x.index(), ir = row.index();
    return t.emplace(std::move(out), [ix, ir, d](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& gx = tp.grd(ix);
        Tensor& gr = tp.grd(ir);
        const int64_t slices = g.numel() / d;
        for (int64_t s = 0; s < slices; ++s) {
            for (int j = 0; j < d; ++j) {
                gx[s * d + j] += g[s * d + j];
                gr[j] += g[s * d + j];
            }
        }
    });
}

Var mul_rows(Var x, Var row) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& rv = row.value();
    const int d = xv.last_dim();
    if (rv.rank() != 1 || rv.numel() != d) {
        throw ShapeError("mul_rows: operand 'row' has shape " + rv.shape_str() +
                         ", expected [" + std::to_string(d) + "]");
    }
    Tensor out(xv.shape());
    const int64_t slices = xv.n_slices();
    for (int64_t s = 0; s < slices; ++s) {
        for (int j = 0; j < d; ++j) out[s * d + j] = xv[s * d + j] * rv[j];
    }
    const int ix = x.index(), ir = row.index();
    return t.emplace(std::move(out), [ix, ir, d](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& xv2 = tp.val(ix);
        const Tensor& rv2 = tp.val(ir);
        Tensor& gx = tp.grd(ix);
        Tensor& gr = tp.grd(ir);
        const int64_t slices = g.numel() / d;
        for (int64_t s = 0; s < slices; ++s) {
            for (int j = 0; j < d; ++j) {
                gx[s * d + j] += g[s * d + j] * rv2[j];
                gr[j] += g[s * d + j] * xv2[s * d + j];
            }
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_2d("matmul", "lhs", av);
    require_2d("matmul", "rhs", bv);
    if (av.cols() != bv.rows()) {
        throw ShapeError("matmul: operand 'rhs' has shape " + bv.shape_str() +
                         ", expected [" + std::to_string(av.cols()) + ",n]");
    }
    const int m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out({m, n});
    mm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    const int ia = a.index(), ib = b.index();
    return t.emplace(std::move(out), [ia, ib, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        // grad_a = g·b^T, grad_b = a^T·g
        mm_nt(g.data(), tp.val(ib).data(), tp.grd(ia).data(), m, n, k, true);
        mm_tn(tp.val(ia).data(), g.data(), tp.grd(ib).data(), k, m, n, true);
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_2d("matmul_nt", "lhs", av);
    require_2d("matmul_nt", "rhs", bv);
    if (av.cols() != bv.cols()) {
        throw ShapeError("matmul_nt: operand 'rhs' has shape " + bv.shape_str() +
                         ", expected [n," + std::to_string(av.cols()) + "]");
    }
    const int m = av.rows(), k = av.cols(), n = bv.rows();
    Tensor out({m, n});
    mm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
    const int ia = a.index(), ib = b.index();
    return t.emplace(std::move(out), [ia, ib, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        // out = a·b^T: grad_a = g·b, grad_b = g^T·a
        mm_nn(g.data(), tp.val(ib).data(), tp.grd(ia).data(), m, n, k, true);
        mm_tn(g.data(), tp.val(ia).data(), tp.grd(ib).data(), n, m, k, true);
    });
}

Var slice_cols(Var x, int c0, int c1) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    require_2d("slice_cols", "x", xv);
    if (c0 < 0 || c1 > xv.cols() || c0 >= c1) {
        throw ValueError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for shape " + xv.shape_str());
    }
    const int rows = xv.rows(), cols = xv.cols(), w = c1 - c0;
    Tensor out({rows, w});
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < w; ++j) out.at(r, j) = xv.at(r, c0 + j);
    }
    const int ix = x.index();
    return t.emplace(std::move(out), [ix, c0, w, cols](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& gx = tp.grd(ix);
        const int rows = g.rows();
        for (int r = 0; r < rows; ++r) {
            for (int j = 0; j < w; ++j) {
                gx[static_cast<int64_t>(r) * cols + c0 + j] += g.at(r, j);
            }
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValueError("concat_cols: no parts");
    Tape& t = *parts[0].tape();
    const int rows = parts[0].value().rows();
    int cols = 0;
    for (const Var& p : parts) {
        require_2d("concat_cols", "part", p.value());
        if (p.value().rows() != rows) {
            throw ShapeError("concat_cols: operand 'part' has shape " + p.value().shape_str() +
                             ", expected [" + std::to_string(rows) + ",*]");
        }
        cols += p.value().cols();
    }
    Tensor out({rows, cols});
    std::vector<int> idxs, offs, widths;
    int off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        const int w = pv.cols();
        for (int r = 0; r < rows; ++r) {
            for (int j = 0; j < w; ++j) out.at(r, off + j) = pv.at(r, j);
        }
        idxs.push_back(p.index());
        offs.push_back(off);
        widths.push_back(w);
        off += w;
    }
    return t.emplace(std::move(out), [idxs, offs, widths](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const int rows = g.rows();
        for (size_t p = 0; p < idxs.size(); ++p) {
            Tensor& gp = tp.grd(idxs[p]);
            const int w = widths[p], o = offs[p];
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < w; ++j) gp.at(r, j) += g.at(r, o + j);
            }
        }
    });
}

Var softmax(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const int d = xv.last_dim();
    if (d < 1) throw ShapeError("softmax: operand 'x' needs a trailing dimension >= 1");
    Tensor out(xv.shape());
    const int64_t slices = xv.n_slices();
    for (int64_t s = 0; s < slices; ++s) {
        const double* in = xv.data() + s * d;
        double* o = out.data() + s * d;
        double mx = in[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < d; ++j) o[j] *= inv;
    }
    const int ix = x.index();
    return t.emplace(std::move(out), [ix, d](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& s = tp.val(self);
        Tensor& gx = tp.grd(ix);
        const int64_t slices = g.numel() / d;
        for (int64_t sl = 0; sl < slices; ++sl) {
            const double* gs = g.data() + sl * d;
            const double* ss = s.data() + sl * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += gs[j] * ss[j];
            double* gxs = gx.data() + sl * d;
            for (int j = 0; j < d; ++j) gxs[j] += ss[j] * (gs[j] - dot);
        }
    });
}

Var causal_masked_softmax(Var scores) {
    Tape& t = *scores.tape();
    const Tensor& xv = scores.value();
    require_2d("causal_masked_softmax", "scores", xv);
    if (xv.rows() != xv.cols()) {
        throw ShapeError("causal_masked_softmax: operand 'scores' has shape " + xv.shape_str() +
                         ", expected square [t,t]");
    }
    const int n = xv.rows();
    Tensor out({n, n});
    // Row i: softmax over columns 0..i; future positions get probability 0,
    // matching masking those logits to -inf before the softmax.
    for (int i = 0; i < n; ++i) {
        const double* in = xv.data() + static_cast<size_t>(i) * n;
        double* o = out.data() + static_cast<size_t>(i) * n;
        double mx = in[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j <= i; ++j) o[j] *= inv;
        for (int j = i + 1; j < n; ++j) o[j] = 0.0;
    }
    const int ix = scores.index();
    return t.emplace(std::move(out), [ix, n](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& s = tp.val(self);
        Tensor& gx = tp.grd(ix);
        for (int i = 0; i < n; ++i) {
            const double* gs = g.data() + static_cast<size_t>(i) * n;
            const double* ss = s.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) dot += gs[j] * ss[j];
            double* gxs = gx.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j <= i; ++j) gxs[j] += ss[j] * (gs[j] - dot);
        }
    });
}

Var gelu(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * norm_cdf(xv[i]);
    const int ix = x.index();
    return t.emplace(std::move(out), [ix](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& xv2 = tp.val(ix);
        Tensor& gx = tp.grd(ix);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double v = xv2[i];
            gx[i] += g[i] * (norm_cdf(v) + v * norm_pdf(v));
        }
    });
}

Var relu_squared(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const double r = xv[i] > 0.0 ? xv[i] : 0.0;
        out[i] = r * r;
    }
    const int ix = x.index();
    return t.emplace(std::move(out), [ix](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& xv2 = tp.val(ix);
        Tensor& gx = tp.grd(ix);
        for (int64_t i = 0; i < g.numel(); ++i) {
            if (xv2[i] > 0.0) gx[i] += g[i] * 2.0 * xv2[i];
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps, bool center, bool affine_bias) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& gv = gamma.value();
    const int d = xv.last_dim();
    if (d < 1) throw ShapeError("layer_norm: operand 'x' needs a trailing dimension >= 1");
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be > 0");
    if (gv.rank() != 1 || gv.numel() != d) {
        throw ShapeError("layer_norm: operand 'gamma' has shape " + gv.shape_str() +
                         ", expected [" + std::to_string(d) + "]");
    }
    if (affine_bias) {
        if (!beta.valid()) throw ValueError("layer_norm: affine_bias=true requires beta");
        const Tensor& bv = beta.value();
        if (bv.rank() != 1 || bv.numel() != d) {
            throw ShapeError("layer_norm: operand 'beta' has shape " + bv.shape_str() +
                             ", expected [" + std::to_string(d) + "]");
        }
    }

    Tensor out(xv.shape());
    const int64_t slices = xv.n_slices();
    const double* beta_p = affine_bias ? beta.value().data() : nullptr;
    for (int64_t s = 0; s < slices; ++s) {
        const double* in = xv.data() + s * d;
        double* o = out.data() + s * d;
        double mean = 0.0;
        if (center) {
            for (int j = 0; j < d; ++j) mean += in[j];
            mean /= d;
        }
        double var = 0.0;  // population variance (divide by d); mean of squares when center=false
        for (int j = 0; j < d; ++j) {
            const double c = in[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            const double xhat = (in[j] - mean) * inv_sigma;
            o[j] = xhat * gv[j] + (beta_p ? beta_p[j] : 0.0);
        }
    }

    const int ix = x.index(), ig = gamma.index(), ib = affine_bias ? beta.index() : -1;
    return t.emplace(std::move(out), [ix, ig, ib, d, eps, center](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& xv2 = tp.val(ix);
        const Tensor& gv2 = tp.val(ig);
        Tensor& gx = tp.grd(ix);
        Tensor& gg = tp.grd(ig);
        const int64_t slices = g.numel() / d;
        for (int64_t s = 0; s < slices; ++s) {
            const double* in = xv2.data() + s * d;
            const double* gs = g.data() + s * d;
            double mean = 0.0;
            if (center) {
                for (int j = 0; j < d; ++j) mean += in[j];
                mean /= d;
            }
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = in[j] - mean;
                var += c * c;
            }
            var /= d;
            const double inv_sigma = 1.0 / std::sqrt(var + eps);

            // h = g ∘ gamma; dx = (h - mean(h)·center - xhat·mean(h∘xhat)) / sigma
            double h_mean = 0.0, hx_mean = 0.0;
            for (int j = 0; j < d; ++j) {
                const double xhat = (in[j] - mean) * inv_sigma;
                const double h = gs[j] * gv2[j];
                h_mean += h;
                hx_mean += h * xhat;
            }
            h_mean /= d;
            hx_mean /= d;
            double* gxs = gx.data() + s * d;
            for (int j = 0; j < d; ++j) {
                const double xhat = (in[j] - mean) * inv_sigma;
                const double h = gs[j] * gv2[j];
                gxs[j] += inv_sigma * (h - (center ? h_mean : 0.0) - xhat * hx_mean);
            }
            for (int j = 0; j < d; ++j) {
                const double xhat = (in[j] - mean) * inv_sigma;
                gg[j] += gs[j] * xhat;
            }
            if (ib >= 0) {
                Tensor& gb = tp.grd(ib);
                for (int j = 0; j < d; ++j) gb[j] += gs[j];
            }
        }
    });
}

Var scale_by_element(Var x, Var vec, int index) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& vv = vec.value();
    if (vv.rank() != 1 || index < 0 || index >= vv.numel()) {
        throw ValueError("scale_by_element: index " + std::to_string(index) +
                         " invalid for vec of shape " + vv.shape_str());
    }
    const double c = vv[index];
    Tensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * c;
    const int ix = x.index(), iv = vec.index();
    return t.emplace(std::move(out), [ix, iv, index](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        const Tensor& xv2 = tp.val(ix);
        const double c2 = tp.val(iv)[index];
        Tensor& gx = tp.grd(ix);
        Tensor& gv = tp.grd(iv);
        double acc = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) {
            gx[i] += g[i] * c2;
            acc += g[i] * xv2[i];
        }
        gv[index] += acc;
    });
}

Var embedding_rows(Var table, const std::vector<int>& ids) {
    Tape& t = *table.tape();
    const Tensor& tv = table.value();
    require_2d("embedding_rows", "table", tv);
    const int vocab = tv.rows(), d = tv.cols();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) {
            throw ValueError("embedding_rows: token id " + std::to_string(ids[i]) +
                             " at position " + std::to_string(i) + " out of range [0," +
                             std::to_string(vocab) + ")");
        }
    }
    const int n = static_cast<int>(ids.size());
    Tensor out({n, d});
    for (int r = 0; r < n; ++r) {
        const double* src = tv.data() + static_cast<size_t>(ids[r]) * d;
        double* dst = out.data() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    const int it = table.index();
    return t.emplace(std::move(out), [it, ids, d](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& gt = tp.grd(it);
        for (size_t r = 0; r < ids.size(); ++r) {
            const double* gs = g.data() + r * d;
            double* dst = gt.data() + static_cast<size_t>(ids[r]) * d;
            for (int j = 0; j < d; ++j) dst[j] += gs[j];
        }
    });
}

Var sum(Var x) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    double acc = 0.0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    const int ix = x.index();
    return t.emplace(Tensor({1}, {acc}), [ix](Tape& tp, int self) {
        const double g = tp.grd(self)[0];
        Tensor& gx = tp.grd(ix);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

Var dropout(Var x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ValueError("dropout: p must be in [0,1)");
    if (p == 0.0) return x;  // structurally absent; keeps bitwise identities intact
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<uint8_t> mask(static_cast<size_t>(xv.numel()));
    Tensor out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        mask[static_cast<size_t>(i)] = rng.uniform() >= p ? 1 : 0;
        out[i] = mask[static_cast<size_t>(i)] ? xv[i] * keep_scale : 0.0;
    }
    const int ix = x.index();
    return t.emplace(std::move(out), [ix, mask, keep_scale](Tape& tp, int self) {
        const Tensor& g = tp.grd(self);
        Tensor& gx = tp.grd(ix);
        for (int64_t i = 0; i < g.numel(); ++i) {
            if (mask[static_cast<size_t>(i)]) gx[i] += g[i] * keep_scale;
        }
    });
}

Var cross_entropy_sum_masked(Var logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask) {
    Tape& t = *logits.tape();
    const Tensor& lv = logits.value();
    require_2d("cross_entropy", "logits", lv);
    const int n = lv.rows(), vocab = lv.cols();
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n) {
        throw ShapeError("cross_entropy: targets/mask length " + std::to_string(targets.size()) +
                         "/" + std::to_string(mask.size()) + ", expected " + std::to_string(n));
    }
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const int tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= vocab) {
            throw ValueError("cross_entropy: target id " + std::to_string(tgt) +
                             " at row " + std::to_string(r) + " out of range [0," +
                             std::to_string(vocab) + ")");
        }
        const double* row = lv.data() + static_cast<size_t>(r) * vocab;
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double sum_exp = 0.0;
        for (int j = 0; j < vocab; ++j) sum_exp += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum_exp);
        loss += lse - row[tgt];
    }
    const int il = logits.index();
    return t.emplace(Tensor({1}, {loss}), [il, targets, mask, vocab](Tape& tp, int self) {
        const double g0 = tp.grd(self)[0];
        const Tensor& lv2 = tp.val(il);
        Tensor& gl = tp.grd(il);
        const int n2 = lv2.rows();
        for (int r = 0; r < n2; ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            const double* row = lv2.data() + static_cast<size_t>(r) * vocab;
            double* grow = gl.data() + static_cast<size_t>(r) * vocab;
            double mx = row[0];
            for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
            double sum_exp = 0.0;
            for (int j = 0; j < vocab; ++j) sum_exp += std::exp(row[j] - mx);
            const double inv = 1.0 / sum_exp;
            for (int j = 0; j < vocab; ++j) {
                grow[j] += g0 * std::exp(row[j] - mx) * inv;
            }
            grow[targets[static_cast<size_t>(r)]] -= g0;
        }
    });
}

}  // namespace nflab
