#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "npmc/numerics.hpp"
#include "npmc/rng.hpp"
#include "npmc/ssm.hpp"

namespace npmc {

/*!
 * Linear-Gaussian state-space model
 *
 *   x_0 ~ N(m0, P0)
 *   x_n = A x_{n-1} + B theta + u_n,   u_n ~ N(0, Q)
 *   y_n = H x_n + v_n,                 v_n ~ N(0, W)
 *
 * The parameter vector only enters through the drift B theta, which keeps
 * the exact likelihood available from the Kalman recursion. With an empty
 * B the model ignores theta altogether.
 */
class LinearGaussianModel
{
  public:
    struct Params
    {
        Vector drift;
    };

    /// Columns are particles.
    using Particles = Matrix;

    LinearGaussianModel(Matrix A, Matrix Q, Matrix H, Matrix W, Vector m0, Matrix P0,
                        Matrix drift_loading = Matrix())
        : A_(std::move(A)),
          Q_(std::move(Q)),
          H_(std::move(H)),
          W_(std::move(W)),
          m0_(std::move(m0)),
          P0_(std::move(P0)),
          B_(std::move(drift_loading))
    {
        const auto dx = A_.rows();
        const auto dy = H_.rows();
        if (A_.cols() != dx || Q_.rows() != dx || Q_.cols() != dx || H_.cols() != dx
            || W_.rows() != dy || W_.cols() != dy || m0_.size() != dx || P0_.rows() != dx
            || P0_.cols() != dx)
            throw UsageError("LinearGaussianModel: inconsistent dimensions");
        if (B_.size() == 0)
            B_ = Matrix::Zero(dx, 0);
        if (B_.rows() != dx)
            throw UsageError("LinearGaussianModel: drift loading has wrong row count");
        q_sqrt_ = psd_sqrt(Q_);
        p0_sqrt_ = psd_sqrt(P0_);
        Eigen::LLT<Matrix> w_llt(W_);
        if (w_llt.info() != Eigen::Success)
            throw UsageError("LinearGaussianModel: observation covariance not positive definite");
        w_lower_ = w_llt.matrixL();
        w_log_det_ = 2.0 * w_lower_.diagonal().array().log().sum();
    }

    /// Scalar model; drift_loading = 1 makes theta the transition offset.
    static LinearGaussianModel scalar(double a, double q, double h, double w, double m0, double p0,
                                      bool theta_drift = false)
    {
        Matrix B = theta_drift ? Matrix::Ones(1, 1) : Matrix();
        return LinearGaussianModel(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, q),
                                   Matrix::Constant(1, 1, h), Matrix::Constant(1, 1, w),
                                   Vector::Constant(1, m0), Matrix::Constant(1, 1, p0), B);
    }

    const Matrix& A() const { return A_; }
    const Matrix& Q() const { return Q_; }
    const Matrix& H() const { return H_; }
    const Matrix& W() const { return W_; }
    const Vector& m0() const { return m0_; }
    const Matrix& P0() const { return P0_; }
    const Matrix& drift_loading() const { return B_; }

    std::size_t state_dimension() const { return static_cast<std::size_t>(A_.rows()); }
    std::size_t observation_dimension() const { return static_cast<std::size_t>(H_.rows()); }
    std::size_t parameter_dimension() const { return static_cast<std::size_t>(B_.cols()); }

    Params bind(const ParameterVector& theta) const
    {
        if (theta.size() != B_.cols())
            throw UsageError("LinearGaussianModel: parameter dimension mismatch");
        return Params{B_.cols() == 0 ? Vector(Vector::Zero(A_.rows())) : Vector(B_ * theta)};
    }

    void sample_prior(Particles& x, std::size_t count, RngStream& rng) const
    {
        x.resize(A_.rows(), static_cast<Eigen::Index>(count));
        fill_normal(x, rng);
        x = (p0_sqrt_ * x).colwise() + m0_;
    }

    void propagate(Particles& x, const Params& p, std::size_t, RngStream& rng) const
    {
        Matrix noise(x.rows(), x.cols());
        fill_normal(noise, rng);
        x = ((A_ * x + q_sqrt_ * noise).colwise() + p.drift).eval();
    }

    void log_likelihood(const Particles& x, const ObservationRow& y, const Params&,
                        std::span<double> out) const
    {
        const Matrix residual = (-(H_ * x)).colwise() + y.transpose();
        const Matrix z = w_lower_.triangularView<Eigen::Lower>().solve(residual);
        const double c = static_cast<double>(H_.rows()) * std::log(2.0 * std::numbers::pi) + w_log_det_;
        for (Eigen::Index i = 0; i < x.cols(); ++i)
            out[static_cast<std::size_t>(i)] = -0.5 * (c + z.col(i).squaredNorm());
    }

    void resample(Particles& x, std::span<const std::size_t> indices) const
    {
        Particles next(x.rows(), static_cast<Eigen::Index>(indices.size()));
        for (std::size_t i = 0; i < indices.size(); ++i)
            next.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(indices[i]));
        x = std::move(next);
    }

    Vector particle_mean(const Particles& x) const { return x.rowwise().mean(); }

    /// Draws a latent path x_0..x_T and observations y_1..y_T.
    std::pair<Observations, Matrix> simulate(const ParameterVector& theta, std::size_t horizon,
                                             RngStream& rng) const
    {
        const Params p = bind(theta);
        Particles x;
        sample_prior(x, 1, rng);
        Matrix path(A_.rows(), static_cast<Eigen::Index>(horizon + 1));
        path.col(0) = x.col(0);
        Observations y(static_cast<Eigen::Index>(horizon), H_.rows());
        for (std::size_t n = 1; n <= horizon; ++n)
        {
            propagate(x, p, n, rng);
            path.col(static_cast<Eigen::Index>(n)) = x.col(0);
            Vector v(H_.rows());
            for (Eigen::Index k = 0; k < v.size(); ++k)
                v[k] = rng.normal();
            y.row(static_cast<Eigen::Index>(n - 1)) = (H_ * x.col(0) + w_lower_ * v).transpose();
        }
        return {std::move(y), std::move(path)};
    }

  private:
    static void fill_normal(Matrix& m, RngStream& rng)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                m(i, j) = rng.normal();
    }

    // Symmetric square root that tolerates singular (e.g. zero) covariances.
    static Matrix psd_sqrt(const Matrix& c)
    {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (c + c.transpose()));
        if (eig.info() != Eigen::Success)
            throw NumericalError("LinearGaussianModel: eigendecomposition failed");
        const Vector ev = eig.eigenvalues();
        if (ev.minCoeff() < -1e-12 * (1.0 + ev.cwiseAbs().maxCoeff()))
            throw UsageError("LinearGaussianModel: covariance not positive semidefinite");
        return eig.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal()
               * eig.eigenvectors().transpose();
    }

    Matrix A_, Q_, H_, W_;
    Vector m0_;
    Matrix P0_, B_;
    Matrix q_sqrt_, p0_sqrt_, w_lower_;
    double w_log_det_ = 0.0;
};

static_assert(StateSpaceModel<LinearGaussianModel>);

/// Exact log l(y_{1:T} | theta) by the Kalman predict/update recursion.
inline double kalman_log_likelihood(const LinearGaussianModel& model, const ParameterVector& theta,
                                    const Observations& y)
{
    if (y.rows() > 0 && static_cast<std::size_t>(y.cols()) != model.observation_dimension())
        throw UsageError("kalman_log_likelihood: observation dimension mismatch");
    const auto params = model.bind(theta);
    const Matrix& A = model.A();
    const Matrix& H = model.H();
    Vector m = model.m0();
    Matrix P = model.P0();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double total = 0.0;
    for (Eigen::Index n = 0; n < y.rows(); ++n)
    {
        m = A * m + params.drift;
        P = A * P * A.transpose() + model.Q();
        const Matrix S = H * P * H.transpose() + model.W();
        Eigen::LLT<Matrix> llt(S);
        if (llt.info() != Eigen::Success)
            throw NumericalError("kalman_log_likelihood: innovation covariance not positive definite");
        const Vector innovation = y.row(n).transpose() - H * m;
        const Matrix L = llt.matrixL();
        const Vector z = L.triangularView<Eigen::Lower>().solve(innovation);
        total += -0.5 * (static_cast<double>(S.rows()) * log2pi
                         + 2.0 * L.diagonal().array().log().sum() + z.squaredNorm());
        const Matrix gain = llt.solve(H * P).transpose();
        m += gain * innovation;
        P = (P - gain * H * P).eval();
        P = 0.5 * (P + P.transpose());
    }
    return total;
}

} // namespace npmc
