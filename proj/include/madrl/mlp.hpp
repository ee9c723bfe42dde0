#pragma once

// Dense tanh multilayer perceptron with a linear output layer.

#include "madrl/autodiff.hpp"
#include "madrl/param_vector.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace madrl {

struct MlpShape {
    Eigen::Index in = 0;
    std::vector<Eigen::Index> hidden;
    Eigen::Index out = 0;
};

/// Blocks W0, b0, W1, b1, ... one (weight, bias) pair per layer.
class Mlp {
public:
    Mlp() = default;

    explicit Mlp(MlpShape shape) : shape_(std::move(shape)) {
        if (shape_.in <= 0 || shape_.out <= 0) throw std::invalid_argument("Mlp: in/out sizes must be positive");
        Eigen::Index prev = shape_.in;
        std::size_t layer = 0;
        auto add_layer = [&](Eigen::Index width) {
            params_.add("W" + std::to_string(layer), width, prev);
            params_.add("b" + std::to_string(layer), width, 1);
            prev = width;
            ++layer;
        };
        for (Eigen::Index h : shape_.hidden) {
            if (h <= 0) throw std::invalid_argument("Mlp: hidden widths must be positive");
            add_layer(h);
        }
        add_layer(shape_.out);
    }

    /// Glorot-uniform weights scaled by gain; zero biases.
    template <class Rng>
    void init(Rng& rng, double gain = 1.0) {
        for (std::size_t l = 0; l < layers(); ++l) {
            auto w = params_.block(2 * l);
            const double lim = gain * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
            params_.block(2 * l + 1).setZero();
        }
    }

    std::size_t layers() const { return params_.blocks().size() / 2; }
    const MlpShape& shape() const { return shape_; }
    ParamVector& params() { return params_; }
    const ParamVector& params() const { return params_; }

    /// Columns of x are samples.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
        if (x.rows() != shape_.in) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
        Eigen::MatrixXd h = x;
        for (std::size_t l = 0; l < layers(); ++l) {
            Eigen::MatrixXd z = params_.block(2 * l) * h;
            z.colwise() += params_.block(2 * l + 1).col(0);
            h = (l + 1 < layers()) ? Eigen::MatrixXd(z.array().tanh().matrix()) : z;
        }
        return h;
    }

    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return forward(x).col(0); }

    /// Tape version; vars come from ad::bind(tape, params()).
    ad::Var forward(ad::Var x, std::span<const ad::Var> vars) const {
        ad::Var h = x;
        for (std::size_t l = 0; l < layers(); ++l) {
            ad::Var z = ad::add_col(ad::matmul(vars[2 * l], h), vars[2 * l + 1]);
            h = (l + 1 < layers()) ? ad::tanh(z) : z;
        }
        return h;
    }

private:
    MlpShape shape_;
    ParamVector params_;
};

}  // namespace madrl
