#include "fgraph/numcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace fgraph::nc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
    if (!cond) throw DimensionError(what);
}

Tensor make2(std::size_t r, std::size_t c) { return Tensor::zeros({r, c}); }

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values, bool trainable)
    : shape(std::move(s)), data(std::move(values)), requires_grad(trainable) {
    if (numel(shape) != data.size())
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
}

Tensor Tensor::zeros(Shape s, bool trainable) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0), trainable);
}

Tensor Tensor::filled(Shape s, double value) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (shape.size() == 1) return 1;
    if (shape.size() == 2) return shape[0];
    throw DimensionError("rows() on tensor of rank " + std::to_string(shape.size()));
}

std::size_t Tensor::cols() const {
    if (shape.size() == 1) return shape[0];
    if (shape.size() == 2) return shape[1];
    throw DimensionError("cols() on tensor of rank " + std::to_string(shape.size()));
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    else grad.emplace(data.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Graph plumbing

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = std::any_of(n.inputs.begin(), n.inputs.end(),
                                  [&](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
    return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const std::vector<double>& Graph::grad(Var v) const { return node(v).grad; }

std::vector<double>& Graph::grad_buf(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Var Graph::constant(Tensor value) {
    value.requires_grad = false;
    return push(std::move(value), {}, {});
}

Var Graph::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::param(Tensor& p) {
    if (auto it = param_leaf_.find(&p); it != param_leaf_.end()) return Var{it->second};
    Node n;
    n.value = Tensor(p.shape, p.data);
    n.requires_grad = p.requires_grad;
    n.param = &p;
    nodes_.push_back(std::move(n));
    param_leaf_[&p] = nodes_.size() - 1;
    return Var{nodes_.size() - 1};
}

void Graph::backward(Var out) {
    const auto& v = value(out);
    if (v.size() != 1) throw DimensionError("backward() without seed needs a scalar output");
    backward(out, Tensor::filled(v.shape, 1.0));
}

void Graph::backward(Var out, const Tensor& seed) {
    const auto& ov = value(out);
    if (seed.shape != ov.shape)
        throw DimensionError("seed shape " + shape_str(seed.shape) + " != output shape " +
                             shape_str(ov.shape));
    for (auto& n : nodes_) n.grad.clear();
    auto& g = grad_buf(out.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed.data[i];

    for (std::size_t k = out.id + 1; k-- > 0;) {
        auto& n = nodes_[k];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, k);
    }
    for (auto& n : nodes_) {
        if (!n.param || !n.param->requires_grad) continue;
        if (!n.param->grad) n.param->grad.emplace(n.param->data.size(), 0.0);
        if (n.grad.empty()) continue;
        auto& pg = *n.param->grad;
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.rank() == 2 && B.rank() == 2, "matmul expects matrices");
    const auto m = A.rows(), k = A.cols(), n = B.cols();
    require(B.rows() == k, "matmul inner dimensions " + shape_str(A.shape) + " x " +
                               shape_str(B.shape));
    Tensor C = make2(m, n);
    MapMat(C.data.data(), m, n).noalias() =
        CMapMat(A.data.data(), m, k) * CMapMat(B.data.data(), k, n);
    return push(std::move(C), {a.id, b.id}, [m, k, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        const auto ia = node.inputs[0], ib = node.inputs[1];
        CMapMat dC(node.grad.data(), m, n);
        if (g.needs(ia)) {
            auto& ga = g.grad_buf(ia);
            MapMat(ga.data(), m, k).noalias() +=
                dC * CMapMat(g.nodes_[ib].value.data.data(), k, n).transpose();
        }
        if (g.needs(ib)) {
            auto& gb = g.grad_buf(ib);
            MapMat(gb.data(), k, n).noalias() +=
                CMapMat(g.nodes_[ia].value.data.data(), m, k).transpose() * dC;
        }
    });
}

Var Graph::transpose(Var a) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    Tensor T = make2(n, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) T.data[j * m + i] = A.data[i * n + j];
    return push(std::move(T), {a.id}, [m, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += node.grad[j * m + i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Var Graph::add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.shape == B.shape, "add shapes " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C(A.shape, A.data);
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    return push(std::move(C), {a.id, b.id}, [](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        for (auto in : node.inputs) {
            if (!g.needs(in)) continue;
            auto& gi = g.grad_buf(in);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += node.grad[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.shape == B.shape, "sub shapes " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C(A.shape, A.data);
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] -= B.data[i];
    return push(std::move(C), {a.id, b.id}, [](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        if (g.needs(node.inputs[0])) {
            auto& ga = g.grad_buf(node.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
        }
        if (g.needs(node.inputs[1])) {
            auto& gb = g.grad_buf(node.inputs[1]);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= node.grad[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.shape == B.shape, "mul shapes " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C(A.shape, A.data);
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
    return push(std::move(C), {a.id, b.id}, [](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        const auto ia = node.inputs[0], ib = node.inputs[1];
        if (g.needs(ia)) {
            auto& ga = g.grad_buf(ia);
            const auto& bv = g.nodes_[ib].value.data;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i] * bv[i];
        }
        if (g.needs(ib)) {
            auto& gb = g.grad_buf(ib);
            const auto& av = g.nodes_[ia].value.data;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += node.grad[i] * av[i];
        }
    });
}

Var Graph::scale(Var a, double s) {
    Tensor C(value(a).shape, value(a).data);
    for (auto& x : C.data) x *= s;
    return push(std::move(C), {a.id}, [s](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * node.grad[i];
    });
}

Var Graph::add_bias(Var a, Var bias) {
    const auto& A = value(a);
    const auto& b = value(bias);
    require(A.rank() == 2, "add_bias expects a matrix");
    const auto m = A.rows(), n = A.cols();
    require(b.size() == n, "add_bias: bias " + shape_str(b.shape) + " vs " + shape_str(A.shape));
    Tensor C(A.shape, A.data);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C.data[i * n + j] += b.data[j];
    return push(std::move(C), {a.id, bias.id}, [m, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        if (g.needs(node.inputs[0])) {
            auto& ga = g.grad_buf(node.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
        }
        if (g.needs(node.inputs[1])) {
            auto& gb = g.grad_buf(node.inputs[1]);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += node.grad[i * n + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops

Var Graph::concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols of nothing");
    const auto m = value(parts[0]).rows();
    std::vector<std::size_t> widths, ids;
    std::size_t total = 0;
    for (auto p : parts) {
        const auto& t = value(p);
        require(t.rows() == m, "concat_cols row mismatch");
        widths.push_back(t.cols());
        ids.push_back(p.id);
        total += t.cols();
    }
    Tensor C = make2(m, total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& t = value(parts[k]);
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(t.data.begin() + i * widths[k], widths[k], C.data.begin() + i * total + off);
        off += widths[k];
    }
    return push(std::move(C), ids, [m, total, widths](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        std::size_t off = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (g.needs(node.inputs[k])) {
                auto& gk = g.grad_buf(node.inputs[k]);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                        gk[i * widths[k] + j] += node.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Var Graph::concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows of nothing");
    const auto n = value(parts[0]).cols();
    std::vector<std::size_t> ids, sizes;
    std::size_t rows = 0;
    for (auto p : parts) {
        const auto& t = value(p);
        require(t.cols() == n, "concat_rows column mismatch");
        ids.push_back(p.id);
        sizes.push_back(t.size());
        rows += t.rows();
    }
    Tensor C = make2(rows, n);
    std::size_t off = 0;
    for (auto p : parts) {
        const auto& t = value(p);
        std::copy(t.data.begin(), t.data.end(), C.data.begin() + off);
        off += t.size();
    }
    return push(std::move(C), ids, [sizes](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        std::size_t off = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (g.needs(node.inputs[k])) {
                auto& gk = g.grad_buf(node.inputs[k]);
                for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += node.grad[off + i];
            }
            off += sizes[k];
        }
    });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t end) {
    const auto& A = value(a);
    require(begin <= end && end <= A.rows(), "slice_rows out of range");
    const auto n = A.cols();
    Tensor C = make2(end - begin, n);
    std::copy(A.data.begin() + begin * n, A.data.begin() + end * n, C.data.begin());
    return push(std::move(C), {a.id}, [begin, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < node.grad.size(); ++i) ga[begin * n + i] += node.grad[i];
    });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
    const auto& A = value(a);
    require(begin <= end && end <= A.cols(), "slice_cols out of range");
    const auto m = A.rows(), n = A.cols(), w = end - begin;
    Tensor C = make2(m, w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(A.data.begin() + i * n + begin, w, C.data.begin() + i * w);
    return push(std::move(C), {a.id}, [m, n, w, begin](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += node.grad[i * w + j];
    });
}

Var Graph::gather_rows(Var a, std::vector<std::size_t> index) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    Tensor C = make2(index.size(), n);
    for (std::size_t r = 0; r < index.size(); ++r) {
        require(index[r] < m, "gather_rows index out of range");
        std::copy_n(A.data.begin() + index[r] * n, n, C.data.begin() + r * n);
    }
    return push(std::move(C), {a.id}, [n, index = std::move(index)](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t j = 0; j < n; ++j) ga[index[r] * n + j] += node.grad[r * n + j];
    });
}

// ---------------------------------------------------------------------------
// Pointwise

namespace {

// Backward for y = f(x) where dy/dx is a function of (x, y).
template <typename Deriv>
void pointwise_backward(Graph& g, std::size_t self, std::vector<double>& gin,
                        const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& gy, Deriv d) {
    (void)g;
    (void)self;
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gy[i] * d(x[i], y[i]);
}

}  // namespace

#define FGRAPH_POINTWISE(NAME, FWD, DERIV)                                                    \
    Var Graph::NAME(Var a) {                                                                  \
        Tensor C(value(a).shape, value(a).data);                                              \
        for (auto& x : C.data) x = (FWD);                                                     \
        return push(std::move(C), {a.id}, [](Graph& g, std::size_t self) {                   \
            const auto& node = g.nodes_[self];                                                \
            auto& gin = g.grad_buf(node.inputs[0]);                                           \
            pointwise_backward(g, self, gin, g.nodes_[node.inputs[0]].value.data,             \
                               node.value.data, node.grad,                                    \
                               [](double x, double y) { (void)x; (void)y; return (DERIV); }); \
        });                                                                                   \
    }

FGRAPH_POINTWISE(tanh, std::tanh(x), 1.0 - y * y)
FGRAPH_POINTWISE(relu, x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0)
FGRAPH_POINTWISE(sigmoid, 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y))
FGRAPH_POINTWISE(exp, std::exp(x), y)
FGRAPH_POINTWISE(log, std::log(x), 1.0 / x)
FGRAPH_POINTWISE(abs, std::fabs(x), x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0))

#undef FGRAPH_POINTWISE

Var Graph::sign_st(Var a) {
    Tensor C(value(a).shape, value(a).data);
    for (auto& x : C.data) x = x >= 0.0 ? 1.0 : -1.0;
    return push(std::move(C), {a.id}, [](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& gin = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += node.grad[i];
    });
}

Var Graph::softmax_rows(Var a, const std::optional<RowMask>& mask) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    if (mask) require(mask->size() == A.size(), "softmax mask shape mismatch");
    Tensor C(A.shape, std::vector<double>(A.size(), 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (mask && !(*mask)[i * n + j]) continue;
            any = true;
            mx = std::max(mx, A.data[i * n + j]);
        }
        if (!any) throw DegenerateMaskError("softmax row " + std::to_string(i) + " fully masked");
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (mask && !(*mask)[i * n + j]) continue;
            const double e = std::exp(A.data[i * n + j] - mx);
            C.data[i * n + j] = e;
            s += e;
        }
        for (std::size_t j = 0; j < n; ++j) C.data[i * n + j] /= s;
    }
    return push(std::move(C), {a.id}, [m, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        const auto& y = node.value.data;
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += node.grad[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ga[i * n + j] += y[i * n + j] * (node.grad[i * n + j] - dot);
        }
    });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const auto& X = value(x);
    const auto m = X.rows(), d = X.cols();
    require(d >= 2, "layer_norm needs d >= 2");
    require(value(gain).size() == d && value(bias).size() == d, "layer_norm affine shape");
    const auto& G = value(gain).data;
    const auto& B = value(bias).data;
    Tensor Y(X.shape, std::vector<double>(X.size()));
    std::vector<double> xhat(X.size()), inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = X.data.data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (row[j] - mu) * inv_std[i];
            Y.data[i * d + j] = G[j] * xhat[i * d + j] + B[j];
        }
    }
    return push(std::move(Y), {x.id, gain.id, bias.id},
                [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                            std::size_t self) {
                    const auto& node = g.nodes_[self];
                    const auto ix = node.inputs[0], ig = node.inputs[1], ib = node.inputs[2];
                    const auto& G = g.nodes_[ig].value.data;
                    if (g.needs(ig)) {
                        auto& gg = g.grad_buf(ig);
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < d; ++j)
                                gg[j] += node.grad[i * d + j] * xhat[i * d + j];
                    }
                    if (g.needs(ib)) {
                        auto& gb = g.grad_buf(ib);
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < d; ++j) gb[j] += node.grad[i * d + j];
                    }
                    if (g.needs(ix)) {
                        auto& gx = g.grad_buf(ix);
                        const double dd = static_cast<double>(d);
                        for (std::size_t i = 0; i < m; ++i) {
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gh = node.grad[i * d + j] * G[j];
                                s1 += gh;
                                s2 += gh * xhat[i * d + j];
                            }
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gh = node.grad[i * d + j] * G[j];
                                gx[i * d + j] +=
                                    inv_std[i] * (gh - s1 / dd - xhat[i * d + j] * s2 / dd);
                            }
                        }
                    }
                });
}

// ---------------------------------------------------------------------------
// Reductions

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return push(Tensor({1, 1}, {s}), {a.id}, [](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (auto& x : ga) x += node.grad[0];
    });
}

Var Graph::mean(Var a) {
    const auto n = value(a).size();
    require(n > 0, "mean of empty tensor");
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return push(Tensor({1, 1}, {s / static_cast<double>(n)}), {a.id},
                [n](Graph& g, std::size_t self) {
                    const auto& node = g.nodes_[self];
                    auto& ga = g.grad_buf(node.inputs[0]);
                    const double w = node.grad[0] / static_cast<double>(n);
                    for (auto& x : ga) x += w;
                });
}

Var Graph::row_sum(Var a) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    Tensor C = make2(m, 1);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C.data[i] += A.data[i * n + j];
    return push(std::move(C), {a.id}, [m, n](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += node.grad[i];
    });
}

Var Graph::mean_row_groups(Var a, std::size_t group) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    require(group > 0 && m % group == 0, "mean_row_groups: rows not divisible by group");
    const auto k = m / group;
    Tensor C = make2(k, n);
    const double w = 1.0 / static_cast<double>(group);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) C.data[(r / group) * n + j] += A.data[r * n + j];
    for (auto& x : C.data) x *= w;
    return push(std::move(C), {a.id}, [m, n, group, w](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += w * node.grad[(r / group) * n + j];
    });
}

Var Graph::l2_normalize_rows(Var a, double eps) {
    const auto& A = value(a);
    const auto m = A.rows(), n = A.cols();
    Tensor C(A.shape, A.data);
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += A.data[i * n + j] * A.data[i * n + j];
        norms[i] = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < n; ++j) C.data[i * n + j] /= norms[i];
    }
    return push(std::move(C), {a.id}, [m, n, norms = std::move(norms)](Graph& g, std::size_t self) {
        const auto& node = g.nodes_[self];
        const auto& y = node.value.data;
        auto& ga = g.grad_buf(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += node.grad[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ga[i * n + j] += (node.grad[i * n + j] - y[i * n + j] * dot) / norms[i];
        }
    });
}

Var Graph::im2col(Var a, std::size_t batch, std::size_t height, std::size_t width,
                  std::size_t channels, std::size_t kernel, std::size_t stride, std::size_t pad) {
    const auto& A = value(a);
    require(A.rank() == 2 && A.rows() == batch * height * width && A.cols() == channels,
            "im2col input " + shape_str(A.shape) + " does not match NHWC layout");
    require(stride > 0 && kernel > 0 && height + 2 * pad >= kernel && width + 2 * pad >= kernel,
            "im2col geometry");
    const auto oh = (height + 2 * pad - kernel) / stride + 1;
    const auto ow = (width + 2 * pad - kernel) / stride + 1;
    const auto cols = kernel * kernel * channels;
    // For each output cell, the source row of each kernel tap (or npos for padding).
    constexpr auto npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> src(oh * ow * kernel * kernel);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t ky = 0; ky < kernel; ++ky)
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                    const auto iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    const auto ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(height) &&
                                        ix < static_cast<long>(width);
                    src[((oy * ow + ox) * kernel + ky) * kernel + kx] =
                        inside ? static_cast<std::size_t>(iy) * width + static_cast<std::size_t>(ix)
                               : npos;
                }
    const auto taps = kernel * kernel;
    const auto plane = height * width;
    Tensor C = make2(batch * oh * ow, cols);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < oh * ow; ++o) {
            double* out = C.data.data() + (b * oh * ow + o) * cols;
            for (std::size_t t = 0; t < taps; ++t) {
                const auto s = src[o * taps + t];
                if (s == npos) continue;
                std::copy_n(A.data.data() + (b * plane + s) * channels, channels, out + t * channels);
            }
        }
    return push(std::move(C), {a.id},
                [batch, oh, ow, taps, plane, channels, cols, src = std::move(src)](
                    Graph& g, std::size_t self) {
                    const auto& node = g.nodes_[self];
                    auto& ga = g.grad_buf(node.inputs[0]);
                    for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t o = 0; o < oh * ow; ++o) {
                            const double* gout = node.grad.data() + (b * oh * ow + o) * cols;
                            for (std::size_t t = 0; t < taps; ++t) {
                                const auto s = src[o * taps + t];
                                if (s == static_cast<std::size_t>(-1)) continue;
                                double* gi = ga.data() + (b * plane + s) * channels;
                                for (std::size_t c = 0; c < channels; ++c)
                                    gi[c] += gout[t * channels + c];
                            }
                        }
                });
}

// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-4)) throw std::invalid_argument("grad_check eps outside [1e-7, 1e-4]");
    std::vector<double> analytic;
    {
        Graph g;
        auto x = g.input(Tensor(point.shape, point.data));
        auto y = f(g, x);
        if (g.value(y).size() != 1) throw DimensionError("grad_check needs a scalar function");
        g.backward(y);
        analytic = g.grad(x);
        if (analytic.empty()) analytic.assign(point.size(), 0.0);
    }
    auto eval = [&](const std::vector<double>& at) {
        Graph g;
        auto x = g.constant(Tensor(point.shape, at));
        const double v = g.value(f(g, x)).data[0];
        if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite function value");
        return v;
    };
    double worst = 0.0;
    std::vector<double> probe = point.data;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + eps;
        const double fp = eval(probe);
        probe[i] = x0 - eps;
        const double fm = eval(probe);
        probe[i] = x0;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints: "FGPT", u16 version, then records of
// (u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload), little endian.

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little endian");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write("FGPT", 4);
    put<std::uint16_t>(os, kCheckpointVersion);
    for (const auto& nt : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.tensor.rank()));
        for (auto d : nt.tensor.shape) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(nt.tensor.data.data()),
                 static_cast<std::streamsize>(nt.tensor.data.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw CheckpointError("truncated checkpoint header: " + path);
    if (std::memcmp(magic, "FGPT", 4) != 0) throw CheckpointError("bad magic, expected \"FGPT\": " + path);
    std::uint16_t version = 0;
    if (!get(is, version)) throw CheckpointError("truncated checkpoint header: " + path);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    std::vector<NamedTensor> out;
    for (;;) {
        std::uint32_t len = 0;
        if (!get(is, len)) break;
        NamedTensor nt;
        nt.name.resize(len);
        std::uint32_t rank = 0;
        if (!is.read(nt.name.data(), len) || !get(is, rank) || rank > 8)
            throw CheckpointError("truncated checkpoint record");
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint64_t v = 0;
            if (!get(is, v)) throw CheckpointError("truncated checkpoint record: " + nt.name);
            d = v;
        }
        std::vector<double> data(numel(shape));
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(data.size() * sizeof(double))))
            throw CheckpointError("truncated checkpoint payload: " + nt.name);
        nt.tensor = Tensor(std::move(shape), std::move(data));
        out.push_back(std::move(nt));
    }
    return out;
}

}  // namespace fgraph::nc
