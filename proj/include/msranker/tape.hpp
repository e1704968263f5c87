#pragma once

// Reverse-mode autodiff over Tensor. A Tape owns an append-only list of nodes;
// Var is an index into it. backward(loss) walks the list in reverse and
// accumulates exact gradients (+=) for every node on the path to the loss.

#include <cassert>
#include <cstdint>
#include <limits>
#include <vector>

#include "msranker/rng.hpp"
#include "msranker/tensor.hpp"

namespace msranker {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

enum class Op {
    Leaf,
    EmbedRows,
    Add,
    Mul,
    Affine,
    Matmul,
    Matvec,
    Dot,
    ScaleVS,
    ConcatVec,
    ConcatCols,
    StackRows,
    RowBroadcastAdd,
    ColBroadcastAdd,
    RowBroadcastMul,
    ScalarBroadcastAdd,
    Tanh,
    Sigmoid,
    Exp,
    SoftmaxVec,
    SoftmaxCols,
    LogSoftmaxVec,
    MaxpoolCols,
    Sum,
    SliceVec,
    RowView,
    Dropout,
};

namespace detail {

// out += op(A) * op(B); op(X) = X^T when the flag is set.
inline void mm_acc(Tensor& out, const Tensor& A, bool ta, const Tensor& B, bool tb) {
    const int m = ta ? A.shape[1] : A.shape[0];
    const int k = ta ? A.shape[0] : A.shape[1];
    const int kb = tb ? B.shape[1] : B.shape[0];
    const int n = tb ? B.shape[0] : B.shape[1];
    if (k != kb)
        throw ValidationError("matmul: shape mismatch " + shape_str(A.shape) +
                              (ta ? "^T" : "") + " vs " + shape_str(B.shape) + (tb ? "^T" : ""));
    if (out.shape[0] != m || out.shape[1] != n)
        throw ValidationError("matmul: bad output shape " + shape_str(out.shape));
    const double* a = A.data.data();
    const double* b = B.data.data();
    double* o = out.data.data();
    if (!ta && !tb) {
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                if (av == 0.0) continue;
                const double* br = b + p * n;
                double* orow = o + i * n;
                for (int j = 0; j < n; ++j) orow[j] += av * br[j];
            }
    } else if (!ta && tb) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double* ar = a + i * k;
                const double* br = b + j * k;
                double s = 0.0;
                for (int p = 0; p < k; ++p) s += ar[p] * br[p];
                o[i * n + j] += s;
            }
    } else if (ta && !tb) {
        for (int p = 0; p < k; ++p)
            for (int i = 0; i < m; ++i) {
                const double av = a[p * m + i];
                if (av == 0.0) continue;
                const double* br = b + p * n;
                double* orow = o + i * n;
                for (int j = 0; j < n; ++j) orow[j] += av * br[j];
            }
    } else {
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p) {
                const double bv = b[j * k + p];
                if (bv == 0.0) continue;
                for (int i = 0; i < m; ++i) o[i * n + j] += a[p * m + i] * bv;
            }
    }
}

// out += op(A) * x
inline void mv_acc(Tensor& out, const Tensor& A, bool ta, const Tensor& x) {
    const int r = A.shape[0], c = A.shape[1];
    const int m = ta ? c : r;
    const int k = ta ? r : c;
    if (x.shape[0] != k)
        throw ValidationError("matvec: shape mismatch " + shape_str(A.shape) +
                              (ta ? "^T" : "") + " vs " + shape_str(x.shape));
    const double* a = A.data.data();
    const double* xv = x.data.data();
    double* o = out.data.data();
    if (!ta) {
        for (int i = 0; i < m; ++i) {
            const double* ar = a + i * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ar[p] * xv[p];
            o[i] += s;
        }
    } else {
        for (int p = 0; p < k; ++p) {
            const double xp = xv[p];
            if (xp == 0.0) continue;
            const double* ar = a + p * m;
            for (int i = 0; i < m; ++i) o[i] += ar[i] * xp;
        }
    }
}

inline void outer_acc(Tensor& out, const Tensor& u, const Tensor& v) {
    const int m = u.shape[0], n = v.shape[0];
    for (int i = 0; i < m; ++i) {
        const double ui = u.data[static_cast<size_t>(i)];
        if (ui == 0.0) continue;
        double* orow = out.data.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += ui * v.data[static_cast<size_t>(j)];
    }
}

}  // namespace detail

class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        Tensor val;
        Tensor grad;                // empty until touched by backward
        std::vector<int> in;        // input node indices
        int i0 = 0, i1 = 0;         // op payload (flags, offsets, valid counts)
        double d0 = 0.0, d1 = 0.0;  // op payload (affine coefficients)
        std::vector<int> aux;       // argmax routes, embedding ids, concat offsets
        std::vector<double> auxd;   // dropout mask
        bool want_grad = false;
    };

    // ---- construction ----

    Var leaf(Tensor t, bool requires_grad) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(t);
        n.want_grad = requires_grad;
        return push(std::move(n));
    }

    // Gathers rows of an embedding table. The table itself stays outside the
    // tape; gradients collect at this node and are scattered back by name.
    Var embed_rows(const Tensor& table, const std::vector<int>& ids) {
        if (table.rank() != 2) throw ValidationError("embed_rows: table must be rank 2");
        const int d = table.cols();
        Node n;
        n.op = Op::EmbedRows;
        n.val = Tensor::zeros({static_cast<int>(ids.size()), d});
        for (size_t r = 0; r < ids.size(); ++r) {
            if (ids[r] < 0 || ids[r] >= table.rows())
                throw ValidationError("embed_rows: token index out of range");
            for (int j = 0; j < d; ++j) n.val.at(static_cast<int>(r), j) = table.at(ids[r], j);
        }
        n.aux = ids;
        n.want_grad = true;
        return push(std::move(n));
    }

    Var add(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        require_same_shape(x, y, "add");
        Node n = binary(Op::Add, a, b, Tensor(x.shape, x.data));
        for (long long i = 0; i < n.val.size(); ++i) n.val.data[i] += y.data[i];
        return push(std::move(n));
    }

    Var mul(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        require_same_shape(x, y, "mul");
        Node n = binary(Op::Mul, a, b, Tensor(x.shape, x.data));
        for (long long i = 0; i < n.val.size(); ++i) n.val.data[i] *= y.data[i];
        return push(std::move(n));
    }

    // k*x + c elementwise.
    Var affine(Var a, double k, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v = k * v + c;
        Node n = unary(Op::Affine, a, std::move(out));
        n.d0 = k;
        n.d1 = c;
        return push(std::move(n));
    }

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != 2 || B.rank() != 2)
            throw ValidationError("matmul: expects rank-2 operands, got " + shape_str(A.shape) +
                                  " and " + shape_str(B.shape));
        const int m = ta ? A.shape[1] : A.shape[0];
        const int nn = tb ? B.shape[0] : B.shape[1];
        Node n = binary(Op::Matmul, a, b, Tensor::zeros({m, nn}));
        n.i0 = ta;
        n.i1 = tb;
        detail::mm_acc(n.val, A, ta, B, tb);
        return push(std::move(n));
    }

    Var matvec(Var a, Var x, bool ta = false) {
        const Tensor& A = val(a);
        const Tensor& X = val(x);
        if (A.rank() != 2 || X.rank() != 1)
            throw ValidationError("matvec: expects matrix and vector, got " +
                                  shape_str(A.shape) + " and " + shape_str(X.shape));
        const int m = ta ? A.shape[1] : A.shape[0];
        Node n = binary(Op::Matvec, a, x, Tensor::zeros({m}));
        n.i0 = ta;
        detail::mv_acc(n.val, A, ta, X);
        return push(std::move(n));
    }

    Var dot(Var a, Var b) {
        const Tensor& x = val(a);
        const Tensor& y = val(b);
        require_same_shape(x, y, "dot");
        double s = 0.0;
        for (long long i = 0; i < x.size(); ++i) s += x.data[i] * y.data[i];
        Node n = binary(Op::Dot, a, b, Tensor::vec({s}));
        return push(std::move(n));
    }

    // x * s where s is a scalar ([1]) variable.
    Var scale_vs(Var a, Var s) {
        const Tensor& S = val(s);
        if (S.size() != 1) throw ValidationError("scale_vs: scale must be a scalar");
        Tensor out = val(a);
        for (double& v : out.data) v *= S.data[0];
        Node n = binary(Op::ScaleVS, a, s, std::move(out));
        return push(std::move(n));
    }

    Var concat_vec(const std::vector<Var>& parts) {
        if (parts.empty()) throw ValidationError("concat_vec: empty input");
        int total = 0;
        std::vector<int> offs;
        for (Var p : parts) {
            if (val(p).rank() != 1) throw ValidationError("concat_vec: expects vectors");
            offs.push_back(total);
            total += val(p).shape[0];
        }
        Node n = nary(Op::ConcatVec, parts, Tensor::zeros({total}));
        n.aux = offs;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const Tensor& t = val(parts[pi]);
            for (int j = 0; j < t.shape[0]; ++j) n.val.at(offs[pi] + j) = t.at(j);
        }
        return push(std::move(n));
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw ValidationError("concat_cols: empty input");
        const int r = val(parts[0]).shape[0];
        int total = 0;
        std::vector<int> offs;
        for (Var p : parts) {
            const Tensor& t = val(p);
            if (t.rank() != 2 || t.shape[0] != r)
                throw ValidationError("concat_cols: row mismatch " + shape_str(t.shape));
            offs.push_back(total);
            total += t.shape[1];
        }
        Node n = nary(Op::ConcatCols, parts, Tensor::zeros({r, total}));
        n.aux = offs;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const Tensor& t = val(parts[pi]);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < t.shape[1]; ++j) n.val.at(i, offs[pi] + j) = t.at(i, j);
        }
        return push(std::move(n));
    }

    Var stack_rows(const std::vector<Var>& rows) {
        if (rows.empty()) throw ValidationError("stack_rows: empty input");
        const int c = val(rows[0]).shape[0];
        Node n = nary(Op::StackRows, rows, Tensor::zeros({static_cast<int>(rows.size()), c}));
        for (size_t r = 0; r < rows.size(); ++r) {
            const Tensor& t = val(rows[r]);
            if (t.rank() != 1 || t.shape[0] != c)
                throw ValidationError("stack_rows: shape mismatch " + shape_str(t.shape));
            for (int j = 0; j < c; ++j) n.val.at(static_cast<int>(r), j) = t.at(j);
        }
        return push(std::move(n));
    }

    // M + v broadcast: v has one entry per column.
    Var row_broadcast_add(Var m, Var v) { return broadcast(Op::RowBroadcastAdd, m, v); }
    // M + v broadcast: v has one entry per row.
    Var col_broadcast_add(Var m, Var v) { return broadcast(Op::ColBroadcastAdd, m, v); }
    // Each row of M multiplied elementwise by v.
    Var row_broadcast_mul(Var m, Var v) { return broadcast(Op::RowBroadcastMul, m, v); }

    Var scalar_broadcast_add(Var a, Var s) {
        const Tensor& S = val(s);
        if (S.size() != 1) throw ValidationError("scalar_broadcast_add: scalar expected");
        Tensor out = val(a);
        for (double& v : out.data) v += S.data[0];
        Node n = binary(Op::ScalarBroadcastAdd, a, s, std::move(out));
        return push(std::move(n));
    }

    Var tanh_(Var a) {
        Tensor out = val(a);
        for (double& v : out.data) v = std::tanh(v);
        return push(unary(Op::Tanh, a, std::move(out)));
    }

    Var sigmoid(Var a) {
        Tensor out = val(a);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return push(unary(Op::Sigmoid, a, std::move(out)));
    }

    Var exp_(Var a) {
        Tensor out = val(a);
        for (double& v : out.data) v = std::exp(v);
        return push(unary(Op::Exp, a, std::move(out)));
    }

    // Shift-invariant softmax over the first `valid` entries; the rest get 0.
    // valid < 0 means the whole vector.
    Var softmax_vec(Var a, int valid = -1) {
        const Tensor& x = val(a);
        if (x.rank() != 1) throw ValidationError("softmax_vec: vector expected");
        const int n = x.shape[0];
        const int v = valid < 0 ? n : valid;
        if (v < 1 || v > n) throw ValidationError("softmax_vec: bad valid count");
        Tensor out = Tensor::zeros({n});
        softmax_fill(x.data.data(), out.data.data(), v, 1);
        Node nd = unary(Op::SoftmaxVec, a, std::move(out));
        nd.i0 = v;
        return push(std::move(nd));
    }

    // Column-wise softmax over the first `valid_rows` rows; masked rows get 0.
    Var softmax_cols(Var a, int valid_rows = -1) {
        const Tensor& x = val(a);
        if (x.rank() != 2) throw ValidationError("softmax_cols: matrix expected");
        const int r = x.shape[0], c = x.shape[1];
        const int v = valid_rows < 0 ? r : valid_rows;
        if (v < 1 || v > r) throw ValidationError("softmax_cols: bad valid row count");
        Tensor out = Tensor::zeros({r, c});
        for (int j = 0; j < c; ++j) softmax_fill(x.data.data() + j, out.data.data() + j, v, c);
        Node nd = unary(Op::SoftmaxCols, a, std::move(out));
        nd.i0 = v;
        return push(std::move(nd));
    }

    Var log_softmax_vec(Var a) {
        const Tensor& x = val(a);
        if (x.rank() != 1) throw ValidationError("log_softmax_vec: vector expected");
        const int n = x.shape[0];
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : x.data) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : x.data) z += std::exp(v - mx);
        const double lz = mx + std::log(z);
        Tensor out = Tensor::zeros({n});
        for (int i = 0; i < n; ++i) out.at(i) = x.at(i) - lz;
        return push(unary(Op::LogSoftmaxVec, a, std::move(out)));
    }

    // Per-column max over the first `valid_rows` rows, with argmax routing.
    Var maxpool_cols(Var a, int valid_rows = -1) {
        const Tensor& x = val(a);
        if (x.rank() != 2) throw ValidationError("maxpool_cols: matrix expected");
        const int r = x.shape[0], c = x.shape[1];
        const int v = valid_rows < 0 ? r : valid_rows;
        if (v < 1 || v > r) throw ValidationError("maxpool_cols: bad valid row count");
        Node nd = unary(Op::MaxpoolCols, a, Tensor::zeros({c}));
        nd.i0 = v;
        nd.aux.assign(static_cast<size_t>(c), 0);
        for (int j = 0; j < c; ++j) {
            int arg = 0;
            double best = x.at(0, j);
            for (int i = 1; i < v; ++i)
                if (x.at(i, j) > best) {
                    best = x.at(i, j);
                    arg = i;
                }
            nd.val.at(j) = best;
            nd.aux[static_cast<size_t>(j)] = arg;
        }
        return push(std::move(nd));
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double v : val(a).data) s += v;
        return push(unary(Op::Sum, a, Tensor::vec({s})));
    }

    Var slice_vec(Var a, int off, int len) {
        const Tensor& x = val(a);
        if (x.rank() != 1 || off < 0 || len < 1 || off + len > x.shape[0])
            throw ValidationError("slice_vec: bad range");
        Tensor out = Tensor::zeros({len});
        for (int i = 0; i < len; ++i) out.at(i) = x.at(off + i);
        Node n = unary(Op::SliceVec, a, std::move(out));
        n.i0 = off;
        n.i1 = len;
        return push(std::move(n));
    }

    Var row_view(Var a, int r) {
        const Tensor& x = val(a);
        if (x.rank() != 2 || r < 0 || r >= x.shape[0]) throw ValidationError("row_view: bad row");
        const int c = x.shape[1];
        Tensor out = Tensor::zeros({c});
        for (int j = 0; j < c; ++j) out.at(j) = x.at(r, j);
        Node n = unary(Op::RowView, a, std::move(out));
        n.i0 = r;
        return push(std::move(n));
    }

    // Inverted dropout. Identity (same Var, no node) when train is off or rate 0.
    Var dropout(Var a, double rate, Rng& rng, bool train) {
        if (!train || rate == 0.0) return a;
        if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0,1)");
        const double scale = 1.0 / (1.0 - rate);
        Tensor out = val(a);
        Node n;
        n.auxd.resize(out.data.size());
        for (size_t i = 0; i < out.data.size(); ++i) {
            const double keep = rng_uniform(rng) < rate ? 0.0 : scale;
            n.auxd[i] = keep;
            out.data[i] *= keep;
        }
        n.op = Op::Dropout;
        n.in = {a.i};
        n.val = std::move(out);
        n.want_grad = node(a).want_grad;
        return push(std::move(n));
    }

    // ---- access ----

    const Tensor& val(Var v) const { return node(v).val; }
    double scalar(Var v) const {
        const Tensor& t = val(v);
        if (t.size() != 1) throw ValidationError("scalar: node is not a scalar");
        return t.data[0];
    }
    // nullptr when backward never reached the node.
    const Tensor* grad(Var v) const {
        const Tensor& g = node(v).grad;
        return g.defined() ? &g : nullptr;
    }
    const std::vector<int>& embed_ids(Var v) const { return node(v).aux; }

    size_t size() const { return nodes_.size(); }

    // ---- reverse sweep ----

    void backward(Var loss) {
        Node& ln = node(loss);
        if (ln.val.size() != 1)
            throw ValidationError("backward: loss must be a scalar, got shape " +
                                  shape_str(ln.val.shape));
        touch(ln).data[0] += 1.0;
        for (int i = loss.i; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.grad.defined()) continue;
            step_back(n);
        }
    }

private:
    std::vector<Node> nodes_;

    Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.i)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<size_t>(v.i)); }

    Node unary(Op op, Var a, Tensor out) {
        Node n;
        n.op = op;
        n.in = {a.i};
        n.want_grad = node(a).want_grad;
        n.val = std::move(out);
        return n;
    }
    Node binary(Op op, Var a, Var b, Tensor out) {
        Node n;
        n.op = op;
        n.in = {a.i, b.i};
        n.want_grad = node(a).want_grad || node(b).want_grad;
        n.val = std::move(out);
        return n;
    }
    Node nary(Op op, const std::vector<Var>& parts, Tensor out) {
        Node n;
        n.op = op;
        for (Var p : parts) {
            n.in.push_back(p.i);
            n.want_grad = n.want_grad || node(p).want_grad;
        }
        n.val = std::move(out);
        return n;
    }

    Var push(Node n) {
#ifndef NDEBUG
        if (!n.val.all_finite())
            throw std::runtime_error("non-finite value produced by forward op");
#endif
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var broadcast(Op op, Var m, Var v) {
        const Tensor& M = val(m);
        const Tensor& V = val(v);
        if (M.rank() != 2 || V.rank() != 1)
            throw ValidationError("broadcast: expects matrix and vector, got " +
                                  shape_str(M.shape) + " and " + shape_str(V.shape));
        const int r = M.shape[0], c = M.shape[1];
        const bool per_row = (op == Op::ColBroadcastAdd);
        if ((per_row && V.shape[0] != r) || (!per_row && V.shape[0] != c))
            throw ValidationError("broadcast: shape mismatch " + shape_str(M.shape) + " vs " +
                                  shape_str(V.shape));
        Tensor out = M;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
                const double b = per_row ? V.at(i) : V.at(j);
                double& o = out.at(i, j);
                o = (op == Op::RowBroadcastMul) ? o * b : o + b;
            }
        Node n = binary(op, m, v, std::move(out));
        return push(std::move(n));
    }

    static void softmax_fill(const double* x, double* out, int valid, int stride) {
        double mx = x[0];
        for (int i = 1; i < valid; ++i) mx = std::max(mx, x[i * stride]);
        double z = 0.0;
        for (int i = 0; i < valid; ++i) z += std::exp(x[i * stride] - mx);
        for (int i = 0; i < valid; ++i) out[i * stride] = std::exp(x[i * stride] - mx) / z;
    }

    Tensor& touch(Node& n) {
        if (!n.grad.defined()) n.grad = Tensor::zeros(n.val.shape);
        return n.grad;
    }
    // Gradient buffer of input slot k of node n, or nullptr when that input
    // does not require gradients.
    Tensor* gin(Node& n, size_t k) {
        Node& src = nodes_[static_cast<size_t>(n.in[k])];
        if (!src.want_grad) return nullptr;
        return &touch(src);
    }

    void step_back(Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
            case Op::EmbedRows:
                break;  // gradients stay at the node; harvested externally
            case Op::Add: {
                for (size_t k = 0; k < 2; ++k)
                    if (Tensor* gi = gin(n, k))
                        for (long long i = 0; i < g.size(); ++i) gi->data[i] += g.data[i];
                break;
            }
            case Op::Mul: {
                const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
                const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].val;
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * b.data[i];
                if (Tensor* gb = gin(n, 1))
                    for (long long i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * a.data[i];
                break;
            }
            case Op::Affine: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += n.d0 * g.data[i];
                break;
            }
            case Op::Matmul: {
                const bool ta = n.i0, tb = n.i1;
                const Tensor& A = nodes_[static_cast<size_t>(n.in[0])].val;
                const Tensor& B = nodes_[static_cast<size_t>(n.in[1])].val;
                if (Tensor* ga = gin(n, 0)) {
                    if (!ta)
                        detail::mm_acc(*ga, g, false, B, !tb);
                    else
                        detail::mm_acc(*ga, B, tb, g, true);
                }
                if (Tensor* gb = gin(n, 1)) {
                    if (!tb)
                        detail::mm_acc(*gb, A, !ta, g, false);
                    else
                        detail::mm_acc(*gb, g, true, A, ta);
                }
                break;
            }
            case Op::Matvec: {
                const bool ta = n.i0;
                const Tensor& A = nodes_[static_cast<size_t>(n.in[0])].val;
                const Tensor& x = nodes_[static_cast<size_t>(n.in[1])].val;
                if (Tensor* ga = gin(n, 0)) {
                    if (!ta)
                        detail::outer_acc(*ga, g, x);
                    else
                        detail::outer_acc(*ga, x, g);
                }
                if (Tensor* gx = gin(n, 1)) detail::mv_acc(*gx, A, !ta, g);
                break;
            }
            case Op::Dot: {
                const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
                const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].val;
                const double gs = g.data[0];
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < a.size(); ++i) ga->data[i] += gs * b.data[i];
                if (Tensor* gb = gin(n, 1))
                    for (long long i = 0; i < b.size(); ++i) gb->data[i] += gs * a.data[i];
                break;
            }
            case Op::ScaleVS: {
                const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].val;
                const double s = nodes_[static_cast<size_t>(n.in[1])].val.data[0];
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * s;
                if (Tensor* gs = gin(n, 1)) {
                    double acc = 0.0;
                    for (long long i = 0; i < g.size(); ++i) acc += g.data[i] * a.data[i];
                    gs->data[0] += acc;
                }
                break;
            }
            case Op::ConcatVec: {
                for (size_t k = 0; k < n.in.size(); ++k) {
                    Tensor* gi = gin(n, k);
                    if (!gi) continue;
                    const int off = n.aux[k];
                    for (int j = 0; j < gi->shape[0]; ++j) gi->at(j) += g.at(off + j);
                }
                break;
            }
            case Op::ConcatCols: {
                const int r = n.val.shape[0];
                for (size_t k = 0; k < n.in.size(); ++k) {
                    Tensor* gi = gin(n, k);
                    if (!gi) continue;
                    const int off = n.aux[k];
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < gi->shape[1]; ++j) gi->at(i, j) += g.at(i, off + j);
                }
                break;
            }
            case Op::StackRows: {
                for (size_t k = 0; k < n.in.size(); ++k) {
                    Tensor* gi = gin(n, k);
                    if (!gi) continue;
                    for (int j = 0; j < gi->shape[0]; ++j) gi->at(j) += g.at(static_cast<int>(k), j);
                }
                break;
            }
            case Op::RowBroadcastAdd:
            case Op::ColBroadcastAdd: {
                const int r = n.val.shape[0], c = n.val.shape[1];
                if (Tensor* gm = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) gm->data[i] += g.data[i];
                if (Tensor* gv = gin(n, 1)) {
                    const bool per_row = (n.op == Op::ColBroadcastAdd);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) gv->at(per_row ? i : j) += g.at(i, j);
                }
                break;
            }
            case Op::RowBroadcastMul: {
                const int r = n.val.shape[0], c = n.val.shape[1];
                const Tensor& M = nodes_[static_cast<size_t>(n.in[0])].val;
                const Tensor& v = nodes_[static_cast<size_t>(n.in[1])].val;
                if (Tensor* gm = gin(n, 0))
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) gm->at(i, j) += g.at(i, j) * v.at(j);
                if (Tensor* gv = gin(n, 1))
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) gv->at(j) += g.at(i, j) * M.at(i, j);
                break;
            }
            case Op::ScalarBroadcastAdd: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (Tensor* gs = gin(n, 1)) {
                    double acc = 0.0;
                    for (long long i = 0; i < g.size(); ++i) acc += g.data[i];
                    gs->data[0] += acc;
                }
                break;
            }
            case Op::Tanh: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) {
                        const double y = n.val.data[i];
                        ga->data[i] += g.data[i] * (1.0 - y * y);
                    }
                break;
            }
            case Op::Sigmoid: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) {
                        const double y = n.val.data[i];
                        ga->data[i] += g.data[i] * y * (1.0 - y);
                    }
                break;
            }
            case Op::Exp: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * n.val.data[i];
                break;
            }
            case Op::SoftmaxVec: {
                if (Tensor* ga = gin(n, 0)) {
                    const int v = n.i0;
                    double dot = 0.0;
                    for (int i = 0; i < v; ++i) dot += g.at(i) * n.val.at(i);
                    for (int i = 0; i < v; ++i) ga->at(i) += n.val.at(i) * (g.at(i) - dot);
                }
                break;
            }
            case Op::SoftmaxCols: {
                if (Tensor* ga = gin(n, 0)) {
                    const int v = n.i0, c = n.val.shape[1];
                    for (int j = 0; j < c; ++j) {
                        double dot = 0.0;
                        for (int i = 0; i < v; ++i) dot += g.at(i, j) * n.val.at(i, j);
                        for (int i = 0; i < v; ++i)
                            ga->at(i, j) += n.val.at(i, j) * (g.at(i, j) - dot);
                    }
                }
                break;
            }
            case Op::LogSoftmaxVec: {
                if (Tensor* ga = gin(n, 0)) {
                    double gsum = 0.0;
                    for (long long i = 0; i < g.size(); ++i) gsum += g.data[i];
                    for (long long i = 0; i < g.size(); ++i)
                        ga->data[i] += g.data[i] - std::exp(n.val.data[i]) * gsum;
                }
                break;
            }
            case Op::MaxpoolCols: {
                if (Tensor* ga = gin(n, 0)) {
                    const int c = n.val.shape[0];
                    for (int j = 0; j < c; ++j) ga->at(n.aux[static_cast<size_t>(j)], j) += g.at(j);
                }
                break;
            }
            case Op::Sum: {
                if (Tensor* ga = gin(n, 0)) {
                    const double gs = g.data[0];
                    for (long long i = 0; i < ga->size(); ++i) ga->data[i] += gs;
                }
                break;
            }
            case Op::SliceVec: {
                if (Tensor* ga = gin(n, 0))
                    for (int i = 0; i < n.i1; ++i) ga->at(n.i0 + i) += g.at(i);
                break;
            }
            case Op::RowView: {
                if (Tensor* ga = gin(n, 0))
                    for (int j = 0; j < n.val.shape[0]; ++j) ga->at(n.i0, j) += g.at(j);
                break;
            }
            case Op::Dropout: {
                if (Tensor* ga = gin(n, 0))
                    for (long long i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * n.auxd[i];
                break;
            }
        }
    }
};

}  // namespace msranker
