#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "flowstage/common.hpp"
#include "flowstage/flow.hpp"

namespace flowstage {

inline Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = uniform_real(rng, -limit, limit);
    return w;
}

// Row-wise stable softmax.
inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

inline Vector softmax_vec(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    return e / e.sum();
}

// Adam with bias correction; one state per parameter matrix.
struct AdamState {
    Matrix m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    explicit AdamState(Eigen::Index rows = 0, Eigen::Index cols = 1)
        : m(Matrix::Zero(rows, cols)), v(Matrix::Zero(rows, cols)) {}

    void update(Eigen::Ref<Matrix> param, const Matrix& grad, double step_size) {
        ++step;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v.array().matrix() + (1.0 - beta2) * grad.array().square().matrix();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        param.array() -=
            step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

inline double frobenius_sq(const Matrix& m) { return m.array().square().sum(); }

}  // namespace flowstage
