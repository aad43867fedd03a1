#pragma once

// Reverse-mode tape over row-major matrices, templated on the scalar type so
// the same model code runs in float for training and double for
// finite-difference gradient checks. Eigen supplies the GEMM kernels; each
// tape is single-threaded, parallelism happens across samples.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "unidiff/core.hpp"

namespace unidiff::nn {

using Var = int32_t;

template <typename T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

template <typename T>
class Tape {
public:
    struct Node {
        int r = 0, c = 0;
        const T* ext = nullptr;   // external storage (params, inputs)
        T* ext_grad = nullptr;    // external grad accumulator (params)
        AVec<T> val;             // owned value when ext == nullptr
        AVec<T> grad;            // owned grad (lazily allocated)
        bool needs_grad = false;
        std::function<void(Tape&)> back;
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    void reset() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    int rows(Var x) const { return nodes_[static_cast<size_t>(x)].r; }
    int cols(Var x) const { return nodes_[static_cast<size_t>(x)].c; }

    const T* data(Var x) const {
        const Node& n = nodes_[static_cast<size_t>(x)];
        return n.ext ? n.ext : n.val.data();
    }
    ConstMatMap<T> map(Var x) const {
        const Node& n = nodes_[static_cast<size_t>(x)];
        return ConstMatMap<T>(n.ext ? n.ext : n.val.data(), n.r, n.c);
    }
    bool needs_grad(Var x) const { return nodes_[static_cast<size_t>(x)].needs_grad; }

    // grad buffer of x, allocating (zeroed) on first touch
    T* grad(Var x) {
        Node& n = nodes_[static_cast<size_t>(x)];
        if (n.ext_grad) return n.ext_grad;
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.r) * n.c, T(0));
        return n.grad.data();
    }
    MatMap<T> grad_map(Var x) {
        Node& n = nodes_[static_cast<size_t>(x)];
        return MatMap<T>(grad(x), n.r, n.c);
    }
    bool grad_touched(Var x) const {
        const Node& n = nodes_[static_cast<size_t>(x)];
        return n.ext_grad != nullptr || !n.grad.empty();
    }

    // ---- leaves ----

    Var input(const T* p, int r, int c) {  // constant external data
        Node n;
        n.r = r;
        n.c = c;
        n.ext = p;
        nodes_.push_back(std::move(n));
        return last();
    }
    Var param(const T* p, T* g, int r, int c) {  // trainable external data
        Node n;
        n.r = r;
        n.c = c;
        n.ext = p;
        n.ext_grad = grad_enabled_ ? g : nullptr;
        n.needs_grad = grad_enabled_;
        nodes_.push_back(std::move(n));
        return last();
    }
    Var constant(const std::vector<T>& v, int r, int c) {  // owned constant
        Node n;
        n.r = r;
        n.c = c;
        n.val.assign(v.begin(), v.end());
        nodes_.push_back(std::move(n));
        return last();
    }

    // ---- ops ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Var y = alloc(rows(a), cols(a), {a, b});
        map_of(y) = map(a) + map(b);
        if (node(y).needs_grad)
            node(y).back = [a, b, y](Tape& tp) {
                if (tp.needs_grad(a)) tp.grad_map(a) += tp.grad_map(y);
                if (tp.needs_grad(b)) tp.grad_map(b) += tp.grad_map(y);
            };
        return y;
    }

    // broadcast a 1 x c row over all rows of x
    Var add_rowvec(Var x, Var v) {
        if (cols(x) != cols(v) || rows(v) != 1) throw ConfigError("add_rowvec: shape mismatch");
        Var y = alloc(rows(x), cols(x), {x, v});
        map_of(y) = map(x).rowwise() + map(v).row(0);
        if (node(y).needs_grad)
            node(y).back = [x, v, y](Tape& tp) {
                if (tp.needs_grad(x)) tp.grad_map(x) += tp.grad_map(y);
                if (tp.needs_grad(v)) tp.grad_map(v).row(0) += tp.grad_map(y).colwise().sum();
            };
        return y;
    }

    Var scale(Var x, T s) {
        Var y = alloc(rows(x), cols(x), {x});
        map_of(y) = map(x) * s;
        if (node(y).needs_grad)
            node(y).back = [x, y, s](Tape& tp) {
                if (tp.needs_grad(x)) tp.grad_map(x) += tp.grad_map(y) * s;
            };
        return y;
    }

    // y = x * W (+ b); W is in x out, b is 1 x out or -1 for none
    Var linear(Var x, Var w, Var b = -1) {
        if (cols(x) != rows(w)) throw ConfigError("linear: inner dims differ");
        Var y = alloc(rows(x), cols(w), b >= 0 ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w});
        map_of(y).noalias() = map(x) * map(w);
        if (b >= 0) map_of(y).rowwise() += map(b).row(0);
        if (node(y).needs_grad)
            node(y).back = [x, w, b, y](Tape& tp) {
                auto dy = tp.grad_map(y);
                if (tp.needs_grad(x)) tp.grad_map(x).noalias() += dy * tp.map(w).transpose();
                if (tp.needs_grad(w)) tp.grad_map(w).noalias() += tp.map(x).transpose() * dy;
                if (b >= 0 && tp.needs_grad(b)) tp.grad_map(b).row(0) += dy.colwise().sum();
            };
        return y;
    }

    // per-row layer norm, no affine
    Var layernorm(Var x, T eps) {
        const int r = rows(x), c = cols(x);
        Var y = alloc(r, c, {x});
        std::vector<T> rstd(static_cast<size_t>(r));
        auto xm = map(x);
        auto ym = map_of(y);
        for (int i = 0; i < r; ++i) {
            const T mu = xm.row(i).mean();
            const T var = (xm.row(i).array() - mu).square().mean();
            const T rs = T(1) / std::sqrt(var + eps);
            rstd[static_cast<size_t>(i)] = rs;
            ym.row(i) = (xm.row(i).array() - mu) * rs;
        }
        if (node(y).needs_grad)
            node(y).back = [x, y, rstd = std::move(rstd)](Tape& tp) {
                if (!tp.needs_grad(x)) return;
                auto dy = tp.grad_map(y);
                auto yv = tp.map(y);
                auto dx = tp.grad_map(x);
                for (int i = 0; i < tp.rows(x); ++i) {
                    const T m1 = dy.row(i).mean();
                    const T m2 = (dy.row(i).array() * yv.row(i).array()).mean();
                    dx.row(i).array() +=
                        rstd[static_cast<size_t>(i)] * (dy.row(i).array() - m1 - yv.row(i).array() * m2);
                }
            };
        return y;
    }

    // y = x .* (1 + scale) + shift, scale/shift are 1 x c rows
    Var modulate(Var x, Var scale_v, Var shift_v) {
        if (cols(x) != cols(scale_v) || cols(x) != cols(shift_v)) throw ConfigError("modulate: shape mismatch");
        Var y = alloc(rows(x), cols(x), {x, scale_v, shift_v});
        map_of(y) = map(x).array().rowwise() * (map(scale_v).row(0).array() + T(1));
        map_of(y).rowwise() += map(shift_v).row(0);
        if (node(y).needs_grad)
            node(y).back = [x, scale_v, shift_v, y](Tape& tp) {
                auto dy = tp.grad_map(y);
                if (tp.needs_grad(x))
                    tp.grad_map(x).array() += dy.array().rowwise() * (tp.map(scale_v).row(0).array() + T(1));
                if (tp.needs_grad(scale_v))
                    tp.grad_map(scale_v).row(0).array() += (dy.array() * tp.map(x).array()).colwise().sum();
                if (tp.needs_grad(shift_v)) tp.grad_map(shift_v).row(0) += dy.colwise().sum();
            };
        return y;
    }

    // y = x + g .* r, g is 1 x c (gated residual)
    Var gate_residual(Var x, Var r_, Var g) {
        check_same(x, r_, "gate_residual");
        if (cols(g) != cols(x) || rows(g) != 1) throw ConfigError("gate_residual: gate must be 1 x c");
        Var y = alloc(rows(x), cols(x), {x, r_, g});
        map_of(y) = map(x).array() + map(r_).array().rowwise() * map(g).row(0).array();
        if (node(y).needs_grad)
            node(y).back = [x, r_, g, y](Tape& tp) {
                auto dy = tp.grad_map(y);
                if (tp.needs_grad(x)) tp.grad_map(x) += dy;
                if (tp.needs_grad(r_))
                    tp.grad_map(r_).array() += dy.array().rowwise() * tp.map(g).row(0).array();
                if (tp.needs_grad(g))
                    tp.grad_map(g).row(0).array() += (dy.array() * tp.map(r_).array()).colwise().sum();
            };
        return y;
    }

    Var gelu(Var x) {
        constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        Var y = alloc(rows(x), cols(x), {x});
        map_of(y) = map(x).array().unaryExpr([](T v) {
            const T u = T(kC) * (v + T(0.044715) * v * v * v);
            return T(0.5) * v * (T(1) + std::tanh(u));
        });
        if (node(y).needs_grad)
            node(y).back = [x, y](Tape& tp) {
                if (!tp.needs_grad(x)) return;
                auto xv = tp.map(x);
                tp.grad_map(x).array() +=
                    tp.grad_map(y).array() * xv.array().unaryExpr([](T v) {
                        const T u = T(kC) * (v + T(0.044715) * v * v * v);
                        const T t = std::tanh(u);
                        const T du = T(kC) * (T(1) + T(3) * T(0.044715) * v * v);
                        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
                    });
            };
        return y;
    }

    Var silu(Var x) {
        Var y = alloc(rows(x), cols(x), {x});
        map_of(y) = map(x).array().unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
        if (node(y).needs_grad)
            node(y).back = [x, y](Tape& tp) {
                if (!tp.needs_grad(x)) return;
                tp.grad_map(x).array() += tp.grad_map(y).array() * tp.map(x).array().unaryExpr([](T v) {
                    const T s = T(1) / (T(1) + std::exp(-v));
                    return s * (T(1) + v * (T(1) - s));
                });
            };
        return y;
    }

    // joint multi-head attention; key_mask[j] = 1 removes key j for every query
    Var attention(Var q, Var k, Var v, int n_heads, const std::vector<uint8_t>& key_mask) {
        check_same(q, k, "attention");
        check_same(q, v, "attention");
        const int n = rows(q), d = cols(q);
        if (d % n_heads != 0) throw ConfigError("attention: dims not divisible by heads");
        if (static_cast<int>(key_mask.size()) != n) throw ConfigError("attention: mask length mismatch");
        const int dh = d / n_heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

        Var y = alloc(n, d, {q, k, v});
        auto probs = std::make_shared<std::vector<EigenMat<T>>>();
        probs->reserve(static_cast<size_t>(n_heads));
        EigenMat<T> scores(n, n);
        for (int h = 0; h < n_heads; ++h) {
            auto qh = map(q).middleCols(h * dh, dh);
            auto kh = map(k).middleCols(h * dh, dh);
            auto vh = map(v).middleCols(h * dh, dh);
            scores.noalias() = qh * kh.transpose();
            scores *= inv_sqrt;
            for (int j = 0; j < n; ++j)
                if (key_mask[static_cast<size_t>(j)]) scores.col(j).setConstant(T(-1e30));
            // rowwise softmax; masked keys are forced to exactly zero weight
            // (vectorized exp clamps its argument and would leave a subnormal)
            for (int i = 0; i < n; ++i) {
                const T mx = scores.row(i).maxCoeff();
                scores.row(i) = (scores.row(i).array() - mx).exp();
            }
            for (int j = 0; j < n; ++j)
                if (key_mask[static_cast<size_t>(j)]) scores.col(j).setZero();
            for (int i = 0; i < n; ++i) scores.row(i) /= scores.row(i).sum();
            map_of(y).middleCols(h * dh, dh).noalias() = scores * vh;
            if (node(y).needs_grad) probs->push_back(scores);
        }
        if (node(y).needs_grad)
            node(y).back = [q, k, v, y, n_heads, dh, inv_sqrt, probs](Tape& tp) {
                const int n2 = tp.rows(q);
                EigenMat<T> dP(n2, n2), dS(n2, n2);
                for (int h = 0; h < n_heads; ++h) {
                    const auto& P = (*probs)[static_cast<size_t>(h)];
                    auto dyh = tp.grad_map(y).middleCols(h * dh, dh);
                    auto qh = tp.map(q).middleCols(h * dh, dh);
                    auto kh = tp.map(k).middleCols(h * dh, dh);
                    auto vh = tp.map(v).middleCols(h * dh, dh);
                    dP.noalias() = dyh * vh.transpose();
                    if (tp.needs_grad(v)) tp.grad_map(v).middleCols(h * dh, dh).noalias() += P.transpose() * dyh;
                    // softmax backward
                    const Eigen::Array<T, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
                    dS = (P.array() * (dP.array().colwise() - rowdot)).matrix();
                    dS *= inv_sqrt;
                    if (tp.needs_grad(q)) tp.grad_map(q).middleCols(h * dh, dh).noalias() += dS * kh;
                    if (tp.needs_grad(k)) tp.grad_map(k).middleCols(h * dh, dh).noalias() += dS.transpose() * qh;
                }
            };
        return y;
    }

    Var concat_rows(Var a, Var b) {
        if (cols(a) != cols(b)) throw ConfigError("concat_rows: column mismatch");
        const int ra = rows(a), rb = rows(b);
        Var y = alloc(ra + rb, cols(a), {a, b});
        map_of(y).topRows(ra) = map(a);
        map_of(y).bottomRows(rb) = map(b);
        if (node(y).needs_grad)
            node(y).back = [a, b, y, ra, rb](Tape& tp) {
                if (tp.needs_grad(a)) tp.grad_map(a) += tp.grad_map(y).topRows(ra);
                if (tp.needs_grad(b)) tp.grad_map(b) += tp.grad_map(y).bottomRows(rb);
            };
        return y;
    }

    Var slice_rows(Var x, int row0, int nrows) {
        if (row0 < 0 || row0 + nrows > rows(x)) throw ConfigError("slice_rows: out of range");
        Var y = alloc(nrows, cols(x), {x});
        map_of(y) = map(x).middleRows(row0, nrows);
        if (node(y).needs_grad)
            node(y).back = [x, y, row0, nrows](Tape& tp) {
                if (tp.needs_grad(x)) tp.grad_map(x).middleRows(row0, nrows) += tp.grad_map(y);
            };
        return y;
    }

    Var slice_cols(Var x, int col0, int ncols) {
        if (col0 < 0 || col0 + ncols > cols(x)) throw ConfigError("slice_cols: out of range");
        Var y = alloc(rows(x), ncols, {x});
        map_of(y) = map(x).middleCols(col0, ncols);
        if (node(y).needs_grad)
            node(y).back = [x, y, col0, ncols](Tape& tp) {
                if (tp.needs_grad(x)) tp.grad_map(x).middleCols(col0, ncols) += tp.grad_map(y);
            };
        return y;
    }

    // embedding lookup: stack table rows by id
    Var gather_rows(Var table, const std::vector<int>& ids) {
        const int n = static_cast<int>(ids.size());
        Var y = alloc(n, cols(table), {table});
        for (int i = 0; i < n; ++i) {
            if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= rows(table))
                throw ConfigError("gather_rows: id out of range");
            map_of(y).row(i) = map(table).row(ids[static_cast<size_t>(i)]);
        }
        if (node(y).needs_grad)
            node(y).back = [table, y, ids](Tape& tp) {
                if (!tp.needs_grad(table)) return;
                auto dt = tp.grad_map(table);
                auto dy = tp.grad_map(y);
                for (int i = 0; i < static_cast<int>(ids.size()); ++i)
                    dt.row(ids[static_cast<size_t>(i)]) += dy.row(i);
            };
        return y;
    }

    // one row broadcast to n rows
    Var broadcast_row(Var v, int n) {
        if (rows(v) != 1) throw ConfigError("broadcast_row: input must be 1 x c");
        Var y = alloc(n, cols(v), {v});
        map_of(y) = map(v).row(0).replicate(n, 1);
        if (node(y).needs_grad)
            node(y).back = [v, y](Tape& tp) {
                if (tp.needs_grad(v)) tp.grad_map(v).row(0) += tp.grad_map(y).colwise().sum();
            };
        return y;
    }

    // rows of x at the given positions replaced, in order, by the rows of feats
    Var replace_rows(Var x, Var feats, const std::vector<int>& positions) {
        if (static_cast<int>(positions.size()) != rows(feats))
            throw ConfigError("replace_rows: position/feature count mismatch");
        if (cols(x) != cols(feats)) throw ConfigError("replace_rows: column mismatch");
        Var y = alloc(rows(x), cols(x), {x, feats});
        map_of(y) = map(x);
        for (int i = 0; i < rows(feats); ++i) map_of(y).row(positions[static_cast<size_t>(i)]) = map(feats).row(i);
        if (node(y).needs_grad)
            node(y).back = [x, feats, y, positions](Tape& tp) {
                auto dy = tp.grad_map(y);
                if (tp.needs_grad(feats)) {
                    auto df = tp.grad_map(feats);
                    for (int i = 0; i < tp.rows(feats); ++i) df.row(i) += dy.row(positions[static_cast<size_t>(i)]);
                }
                if (tp.needs_grad(x)) {
                    EigenMat<T> masked = dy;
                    for (int p : positions) masked.row(p).setZero();
                    tp.grad_map(x) += masked;
                }
            };
        return y;
    }

    // reshaping gather over the flattened input: out[i] = x_flat[idx[i]]
    Var gather_index(Var x, const std::shared_ptr<const std::vector<int>>& idx, int out_r, int out_c) {
        if (static_cast<size_t>(out_r) * out_c != idx->size()) throw ConfigError("gather_index: size mismatch");
        Var y = alloc(out_r, out_c, {x});
        const T* src = data(x);
        T* dst = map_of(y).data();
        for (size_t i = 0; i < idx->size(); ++i) dst[i] = src[(*idx)[i]];
        if (node(y).needs_grad)
            node(y).back = [x, y, idx](Tape& tp) {
                if (!tp.needs_grad(x)) return;
                T* dx = tp.grad(x);
                const T* dy = tp.grad(y);
                for (size_t i = 0; i < idx->size(); ++i) dx[(*idx)[i]] += dy[i];
            };
        return y;
    }

    // mean squared error against constant target data (same element count)
    Var mse_loss(Var pred, const T* target) {
        const size_t n = static_cast<size_t>(rows(pred)) * cols(pred);
        Var y = alloc(1, 1, {pred});
        const T* p = data(pred);
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) {
            const T d = p[i] - target[i];
            acc += d * d;
        }
        map_of(y)(0, 0) = acc / static_cast<T>(n);
        if (node(y).needs_grad)
            node(y).back = [pred, y, target, n](Tape& tp) {
                if (!tp.needs_grad(pred)) return;
                const T g = tp.grad(y)[0] * T(2) / static_cast<T>(n);
                T* dp = tp.grad(pred);
                const T* pv = tp.data(pred);
                for (size_t i = 0; i < n; ++i) dp[i] += g * (pv[i] - target[i]);
            };
        return y;
    }

    // seeds d(root)=1 and runs the tape backwards
    void backward(Var root) {
        if (!grad_enabled_) throw ConfigError("backward called on an inference tape");
        grad(root)[0] = T(1);
        for (Var i = last(); i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.back && n.needs_grad && grad_touched(i)) n.back(*this);
        }
    }

private:
    Var last() const { return static_cast<Var>(nodes_.size()) - 1; }
    Node& node(Var x) { return nodes_[static_cast<size_t>(x)]; }
    MatMap<T> map_of(Var x) {
        Node& n = nodes_[static_cast<size_t>(x)];
        return MatMap<T>(n.val.data(), n.r, n.c);
    }
    Var alloc(int r, int c, const std::vector<Var>& parents) {
        Node n;
        n.r = r;
        n.c = c;
        n.val.resize(static_cast<size_t>(r) * c);
        if (grad_enabled_)
            for (Var p : parents)
                if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
        nodes_.push_back(std::move(n));
        return last();
    }
    void check_same(Var a, Var b, const char* who) const {
        if (rows(a) != rows(b) || cols(a) != cols(b))
            throw ConfigError(std::string(who) + ": shape mismatch");
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

}  // namespace unidiff::nn
