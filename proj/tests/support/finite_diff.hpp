#pragma once

#include <Eigen/Core>

namespace testsupport {

/// Central-difference Jacobian of f: R^n -> R^m around x0.
template <typename F>
Eigen::MatrixXd central_diff(F&& f, const Eigen::VectorXd& x0, double h) {
    const Eigen::VectorXd f0 = f(x0);
    Eigen::MatrixXd J(f0.size(), x0.size());
    for (Eigen::Index j = 0; j < x0.size(); ++j) {
        Eigen::VectorXd xp = x0, xm = x0;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

/// Frobenius-norm relative error, guarded against vanishing references.
inline double rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& ref) {
    const double denom = ref.norm();
    return (got - ref).norm() / (denom > 1e-12 ? denom : 1.0);
}

}  // namespace testsupport
