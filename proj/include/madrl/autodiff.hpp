#pragma once

// Reverse-mode differentiation over a tape of dense matrices.
//
// Every node holds a matrix value; column j of a "batch" matrix is sample j.
// Operations append nodes and a closure that pushes the output adjoint back
// to the parents. backward() walks the tape once in reverse creation order,
// which is a valid topological order because parents always precede children.

#include "madrl/param_vector.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace madrl::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Mat& out_grad)>;

    Var constant(Mat value) { return push(std::move(value), nullptr, false); }
    Var variable(Mat value) { return push(std::move(value), nullptr, true); }

    const Mat& value(Var v) const { return nodes_.at(v.id).value; }

    /// Adjoint of v after backward(); zeros when nothing flowed into v.
    Mat grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    Var push(Mat value, Backward backward, bool needs_grad) {
        nodes_.push_back({std::move(value), Mat(), std::move(backward), needs_grad});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[v.id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    /// Seeds d out / d out = 1 for a 1x1 output and propagates to all leaves.
    void backward(Var out) {
        if (value(out).size() != 1) throw std::invalid_argument("Tape::backward: output must be 1x1");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        nodes_[out.id].grad = Mat::Ones(1, 1);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.size() == 0) continue;
            // The closure may grow parents' grads but never this node's.
            const Mat g = n.grad;
            n.backward(*this, g);
        }
    }

    void flag_singular() { ++singular_hits_; }
    bool singular() const { return singular_hits_ > 0; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        Backward backward;
        bool needs_grad;
    };
    std::vector<Node> nodes_;
    std::size_t singular_hits_ = 0;
};

namespace detail {

inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("ad: variables from different tapes");
}

inline bool any_grad(std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.tape->needs_grad(v)) return true;
    return false;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    if (av.cols() != bv.rows()) throw std::invalid_argument("ad::matmul: inner dimension mismatch");
    return t.push(av * bv,
                  [a, b](Tape& tp, const Mat& g) {
                      if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
                      if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
                  },
                  detail::any_grad({a, b}));
}

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    return t.push(t.value(a) + t.value(b),
                  [a, b](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g);
                      tp.accumulate(b, g);
                  },
                  detail::any_grad({a, b}));
}

inline Var sub(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    return t.push(t.value(a) - t.value(b),
                  [a, b](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g);
                      tp.accumulate(b, -g);
                  },
                  detail::any_grad({a, b}));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

/// a + col broadcast over columns; col is r x 1.
inline Var add_col(Var a, Var col) {
    detail::require_same_tape(a, col);
    Tape& t = *a.tape;
    const Mat& cv = t.value(col);
    if (cv.cols() != 1 || cv.rows() != t.value(a).rows())
        throw std::invalid_argument("ad::add_col: column shape mismatch");
    return t.push(t.value(a).colwise() + cv.col(0),
                  [a, col](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g);
                      if (tp.needs_grad(col)) tp.accumulate(col, g.rowwise().sum());
                  },
                  detail::any_grad({a, col}));
}

inline Var sub_col(Var a, Var col) {
    detail::require_same_tape(a, col);
    Tape& t = *a.tape;
    const Mat& cv = t.value(col);
    if (cv.cols() != 1 || cv.rows() != t.value(a).rows())
        throw std::invalid_argument("ad::sub_col: column shape mismatch");
    return t.push(t.value(a).colwise() - cv.col(0),
                  [a, col](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g);
                      if (tp.needs_grad(col)) tp.accumulate(col, -g.rowwise().sum());
                  },
                  detail::any_grad({a, col}));
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw std::invalid_argument("ad::mul: shape mismatch");
    return t.push(av.cwiseProduct(bv),
                  [a, b](Tape& tp, const Mat& g) {
                      if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                      if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                  },
                  detail::any_grad({a, b}));
}

/// Row i of a scaled elementwise by col(i); col is r x 1.
inline Var mul_col(Var a, Var col) {
    detail::require_same_tape(a, col);
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    const Mat& cv = t.value(col);
    if (cv.cols() != 1 || cv.rows() != av.rows()) throw std::invalid_argument("ad::mul_col: shape mismatch");
    return t.push(cv.col(0).asDiagonal() * av,
                  [a, col](Tape& tp, const Mat& g) {
                      const Mat& c = tp.value(col);
                      if (tp.needs_grad(a)) tp.accumulate(a, c.col(0).asDiagonal() * g);
                      if (tp.needs_grad(col)) tp.accumulate(col, g.cwiseProduct(tp.value(a)).rowwise().sum());
                  },
                  detail::any_grad({a, col}));
}

/// Column j of a scaled by row(j); row is 1 x B.
inline Var mul_row(Var a, Var row) {
    detail::require_same_tape(a, row);
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    const Mat& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) throw std::invalid_argument("ad::mul_row: shape mismatch");
    return t.push(av * rv.row(0).asDiagonal(),
                  [a, row](Tape& tp, const Mat& g) {
                      const Mat& r = tp.value(row);
                      if (tp.needs_grad(a)) tp.accumulate(a, g * r.row(0).asDiagonal());
                      if (tp.needs_grad(row)) tp.accumulate(row, g.cwiseProduct(tp.value(a)).colwise().sum());
                  },
                  detail::any_grad({a, row}));
}

inline Var scale(Var a, double c) {
    Tape& t = *a.tape;
    return t.push(c * t.value(a), [a, c](Tape& tp, const Mat& g) { tp.accumulate(a, c * g); },
                  detail::any_grad({a}));
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var tanh(Var a) {
    Tape& t = *a.tape;
    // d tanh = 1 - y^2 with y read back from this node.
    const Var self{&t, static_cast<int>(t.size())};
    return t.push(t.value(a).array().tanh().matrix(),
                  [a, self](Tape& tp, const Mat& g) {
                      const Mat& y = tp.value(self);
                      tp.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
                  },
                  detail::any_grad({a}));
}

inline Var exp(Var a) {
    Tape& t = *a.tape;
    Mat y = t.value(a).array().exp().matrix();
    return t.push(std::move(y),
                  [a](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g.cwiseProduct(tp.value(a).array().exp().matrix()));
                  },
                  detail::any_grad({a}));
}

inline Var sin(Var a) {
    Tape& t = *a.tape;
    return t.push(t.value(a).array().sin().matrix(),
                  [a](Tape& tp, const Mat& g) {
                      tp.accumulate(a, g.cwiseProduct(tp.value(a).array().cos().matrix()));
                  },
                  detail::any_grad({a}));
}

inline Var cos(Var a) {
    Tape& t = *a.tape;
    return t.push(t.value(a).array().cos().matrix(),
                  [a](Tape& tp, const Mat& g) {
                      tp.accumulate(a, -g.cwiseProduct(tp.value(a).array().sin().matrix()));
                  },
                  detail::any_grad({a}));
}

inline Var square(Var a) {
    Tape& t = *a.tape;
    return t.push(t.value(a).array().square().matrix(),
                  [a](Tape& tp, const Mat& g) { tp.accumulate(a, 2.0 * g.cwiseProduct(tp.value(a))); },
                  detail::any_grad({a}));
}

/// Euclidean norm of every column, 1 x B. At a zero column the subgradient 0
/// is used and the tape is flagged.
inline Var col_norm(Var a) {
    Tape& t = *a.tape;
    Mat n = t.value(a).colwise().norm();
    return t.push(std::move(n),
                  [a](Tape& tp, const Mat& g) {
                      const Mat& av = tp.value(a);
                      Mat ga = Mat::Zero(av.rows(), av.cols());
                      for (Eigen::Index j = 0; j < av.cols(); ++j) {
                          const double nj = av.col(j).norm();
                          if (nj == 0.0) {
                              tp.flag_singular();
                              continue;
                          }
                          ga.col(j) = (g(0, j) / nj) * av.col(j);
                      }
                      tp.accumulate(a, ga);
                  },
                  detail::any_grad({a}));
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    Mat s(1, 1);
    s(0, 0) = t.value(a).sum();
    return t.push(std::move(s),
                  [a](Tape& tp, const Mat& g) {
                      const Mat& av = tp.value(a);
                      tp.accumulate(a, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
                  },
                  detail::any_grad({a}));
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.tape->value(a).size());
    return scale(sum(a), 1.0 / n);
}

/// Vertical concatenation; all parts share the column count.
inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("ad::concat_rows: no parts");
    Tape& t = *parts[0].tape;
    const Eigen::Index cols = t.value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool needs = false;
    for (Var p : parts) {
        if (p.tape != &t) throw std::invalid_argument("ad::concat_rows: mixed tapes");
        if (t.value(p).cols() != cols) throw std::invalid_argument("ad::concat_rows: column mismatch");
        rows += t.value(p).rows();
        needs = needs || t.needs_grad(p);
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        out.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return t.push(std::move(out),
                  [saved](Tape& tp, const Mat& g) {
                      Eigen::Index row = 0;
                      for (Var p : saved) {
                          const Eigen::Index n = tp.value(p).rows();
                          if (tp.needs_grad(p)) tp.accumulate(p, g.middleRows(row, n));
                          row += n;
                      }
                  },
                  needs);
}

inline Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var rows(Var a, Eigen::Index start, Eigen::Index count) {
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    if (start < 0 || count < 0 || start + count > av.rows()) throw std::out_of_range("ad::rows: range");
    return t.push(Mat(av.middleRows(start, count)),
                  [a, start, count](Tape& tp, const Mat& g) {
                      const Mat& v = tp.value(a);
                      Mat ga = Mat::Zero(v.rows(), v.cols());
                      ga.middleRows(start, count) = g;
                      tp.accumulate(a, ga);
                  },
                  detail::any_grad({a}));
}

// ---------------------------------------------------------------------------
// Parameter binding and the gradient / finite-difference API.

/// Leaf variables, one per block of a ParamVector, in block order.
inline std::vector<Var> bind(Tape& tape, const ParamVector& params) {
    std::vector<Var> vars;
    vars.reserve(params.blocks().size());
    for (std::size_t i = 0; i < params.blocks().size(); ++i) vars.push_back(tape.variable(Mat(params.block(i))));
    return vars;
}

/// Leaves holding constant copies of a ParamVector (no gradient flow).
inline std::vector<Var> bind_constant(Tape& tape, const ParamVector& params) {
    std::vector<Var> vars;
    vars.reserve(params.blocks().size());
    for (std::size_t i = 0; i < params.blocks().size(); ++i) vars.push_back(tape.constant(Mat(params.block(i))));
    return vars;
}

inline Vec gather_grad(const Tape& tape, std::span<const Var> vars, const ParamVector& layout) {
    Vec g = Vec::Zero(layout.size());
    for (std::size_t i = 0; i < vars.size(); ++i) {
        const auto& b = layout.blocks()[i];
        const Mat gi = tape.grad(vars[i]);
        g.segment(b.offset, b.size()) = Eigen::Map<const Vec>(gi.data(), gi.size());
    }
    return g;
}

/// A scalar function expressed on the tape in terms of bound parameters.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradResult {
    double value = 0.0;
    Vec grad;
    bool singular = false;
};

inline GradResult value_and_grad(const TapeFn& fn, const ParamVector& at) {
    Tape tape;
    const auto vars = bind(tape, at);
    const Var out = fn(tape, vars);
    if (tape.value(out).size() != 1) throw std::invalid_argument("grad: function must return a scalar");
    tape.backward(out);
    return {tape.value(out)(0, 0), gather_grad(tape, vars, at), tape.singular()};
}

/// Exact reverse-mode gradient of fn at the given parameters, same layout.
inline ParamVector grad(const TapeFn& fn, const ParamVector& at) {
    ParamVector g = at;
    g.flat() = value_and_grad(fn, at).grad;
    return g;
}

inline double evaluate(const TapeFn& fn, const ParamVector& at) {
    Tape tape;
    const auto vars = bind_constant(tape, at);
    return tape.value(fn(tape, vars))(0, 0);
}

struct FdReport {
    double max_rel_error = 0.0;
    std::vector<Eigen::Index> failing;
    Eigen::Index checked = 0;
    bool singular = false;  // norm-at-zero was hit; mismatches are excluded
    bool passed = true;
};

/// Relative error used by fd_check. Gradients smaller than abs_floor are
/// compared on an absolute scale.
inline double fd_relative_error(double analytic, double numeric, double abs_floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    return std::abs(analytic - numeric) / denom;
}

/// Per-coordinate comparison of the reverse-mode gradient with central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h.
inline FdReport fd_check(const TapeFn& fn, const ParamVector& at, double h, double tol,
                         double abs_floor = 1e-6) {
    const GradResult base = value_and_grad(fn, at);
    FdReport rep;
    rep.singular = base.singular;
    ParamVector probe = at;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        const double x = at.flat()[i];
        probe.flat()[i] = x + h;
        const double fp = evaluate(fn, probe);
        probe.flat()[i] = x - h;
        const double fm = evaluate(fn, probe);
        probe.flat()[i] = x;
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = fd_relative_error(base.grad[i], numeric, abs_floor);
        ++rep.checked;
        if (err > tol) {
            if (rep.singular) continue;
            rep.failing.push_back(i);
        }
        rep.max_rel_error = std::max(rep.max_rel_error, rep.singular && err > tol ? rep.max_rel_error : err);
    }
    rep.passed = rep.failing.empty();
    return rep;
}

}  // namespace madrl::ad
