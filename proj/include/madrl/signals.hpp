#pragma once

// Finite-horizon vector signals with lp norms.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace madrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInfNorm = std::numeric_limits<double>::infinity();

/// A truncated sequence x_{T:0} of equal-dimension real vectors. Column t
/// holds the sample at time t, so a signal of horizon T has T + 1 columns.
class Signal {
public:
    Signal(Eigen::Index dim, Eigen::Index horizon) {
        if (dim <= 0) throw std::invalid_argument("Signal: dimension must be positive");
        if (horizon < 0) throw std::invalid_argument("Signal: horizon must be >= 0");
        data_ = Mat::Zero(dim, horizon + 1);
    }

    explicit Signal(Mat columns) : data_(std::move(columns)) {
        if (data_.rows() <= 0 || data_.cols() <= 0)
            throw std::invalid_argument("Signal: empty signals are not allowed");
    }

    static Signal zeros(Eigen::Index dim, Eigen::Index horizon) { return Signal(dim, horizon); }

    static Signal impulse(const Vec& v0, Eigen::Index horizon) {
        Signal s(v0.size(), horizon);
        s.data_.col(0) = v0;
        return s;
    }

    Eigen::Index dim() const { return data_.rows(); }
    Eigen::Index horizon() const { return data_.cols() - 1; }
    Eigen::Index length() const { return data_.cols(); }

    auto at(Eigen::Index t) const { return data_.col(t); }
    auto at(Eigen::Index t) { return data_.col(t); }

    const Mat& matrix() const { return data_; }
    Mat& matrix() { return data_; }

    /// Samples first..last inclusive, i.e. x_{last:first}.
    Signal slice(Eigen::Index first, Eigen::Index last) const {
        if (first < 0 || last < first || last > horizon())
            throw std::out_of_range("Signal::slice: range [" + std::to_string(first) + ", " +
                                    std::to_string(last) + "] outside horizon " +
                                    std::to_string(horizon()));
        return Signal(Mat(data_.middleCols(first, last - first + 1)));
    }

    Signal& operator*=(double c) {
        data_ *= c;
        return *this;
    }

    friend Signal operator*(double c, Signal s) { return s *= c; }

    friend Signal operator+(const Signal& a, const Signal& b) {
        if (a.dim() != b.dim() || a.length() != b.length())
            throw std::invalid_argument("Signal: shape mismatch in addition");
        return Signal(Mat(a.data_ + b.data_));
    }

    friend Signal operator-(const Signal& a, const Signal& b) {
        if (a.dim() != b.dim() || a.length() != b.length())
            throw std::invalid_argument("Signal: shape mismatch in subtraction");
        return Signal(Mat(a.data_ - b.data_));
    }

    bool all_finite() const { return data_.allFinite(); }

private:
    Mat data_;
};

inline Signal concat(const Signal& head, const Signal& tail) {
    if (head.dim() != tail.dim()) throw std::invalid_argument("concat: dimension mismatch");
    Mat out(head.dim(), head.length() + tail.length());
    out << head.matrix(), tail.matrix();
    return Signal(std::move(out));
}

/// Stacks two signals of equal length into one of dimension a.dim() + b.dim().
inline Signal stack(const Signal& a, const Signal& b) {
    if (a.length() != b.length()) throw std::invalid_argument("stack: length mismatch");
    Mat out(a.dim() + b.dim(), a.length());
    out << a.matrix(), b.matrix();
    return Signal(std::move(out));
}

/// (sum_t |s_t|^p)^(1/p) with the Euclidean vector norm; p = kInfNorm gives sup_t |s_t|.
inline double lp_norm(const Signal& s, double p) {
    if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1 or infinity");
    const Eigen::RowVectorXd mags = s.matrix().colwise().norm();
    if (std::isinf(p)) return mags.maxCoeff();
    if (p == 2.0) return std::sqrt(mags.squaredNorm());
    if (p == 1.0) return mags.sum();
    // Scale by the peak so large p does not overflow.
    const double peak = mags.maxCoeff();
    if (peak == 0.0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index t = 0; t < mags.size(); ++t) acc += std::pow(mags[t] / peak, p);
    return peak * std::pow(acc, 1.0 / p);
}

/// Norm of the samples at t >= split relative to the norm of the whole signal.
/// A finite-horizon proxy for lp membership: it shrinks toward zero as the
/// horizon grows only when the signal decays.
inline double tail_ratio(const Signal& s, double p, Eigen::Index split) {
    if (split <= 0 || split > s.horizon())
        throw std::out_of_range("tail_ratio: split must satisfy 0 < split <= horizon");
    const double full = lp_norm(s, p);
    if (full == 0.0) return 0.0;
    return lp_norm(s.slice(split, s.horizon()), p) / full;
}

/// One row per time step: t, s_0, ..., s_{n-1}, 17 significant digits.
inline void write_csv(std::ostream& os, const Signal& s, const std::string& prefix = "s") {
    os << "t";
    for (Eigen::Index i = 0; i < s.dim(); ++i) os << ',' << prefix << '_' << i;
    os << '\n';
    char buf[40];
    for (Eigen::Index t = 0; t < s.length(); ++t) {
        os << t;
        for (Eigen::Index i = 0; i < s.dim(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", s.matrix()(i, t));
            os << ',' << buf;
        }
        os << '\n';
    }
}

}  // namespace madrl
