// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_CASCADE_HPP
#define DVDP_CASCADE_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tensor.hpp"

namespace dvdp {

enum class Backend
{
    implicit_pooling,
    explicit_dense
};

inline const char* to_string(Backend b) { return b == Backend::implicit_pooling ? "implicit" : "explicit"; }

//
// Two-valued diagonal operator in the U_k basis of level k:
//   U_k diag(a I_{d_k}, b I_{dbar_{k+1}}) U_k^T
// `a` acts on the block discarded by the next downsampling, `b` on the block
// that survives it. At the deepest level only `a` is meaningful.
//
struct DiagPair
{
    double a = 1.0;
    double b = 1.0;

    friend constexpr bool operator==(const DiagPair&, const DiagPair&) = default;
};

//
// The ladder of nested subspaces S_0 > S_1 > ... > S_K together with the
// down/upsampling operators between consecutive levels.
//
// implicit_pooling: D_k is the 2x2 average pool times 2 on every channel and
//                   is never materialised.
// explicit_dense  : D_k is stored as a row-orthonormal dense matrix, and each
//                   level also stores an orthonormal basis U_k = [N_k, D_{k+1}^T]
//                   whose first block spans the kernel of D_{k+1}.
//
class SubspaceCascade
{
public:
    // largest base dimension accepted by the explicit backend
    static constexpr std::size_t max_explicit_dim = 1024;

    static SubspaceCascade build(TensorShape base, int levels, Backend backend)
    {
        if (levels < 0)
            throw std::invalid_argument("cascade: negative level count");
        const std::size_t step = std::size_t(1) << levels;
        if (step > base.height || step > base.width)
            throw shape_error("cascade: K=" + std::to_string(levels) + " too large for shape " + to_string(base));
        if (base.height % step != 0 || base.width % step != 0)
            throw shape_error("cascade: shape " + to_string(base) + " not divisible by 2^" + std::to_string(levels));

        SubspaceCascade c;
        c.backend_ = backend;
        c.flat_    = false;
        c.shapes_.push_back(base);
        for (int k = 1; k <= levels; ++k) {
            const TensorShape& prev = c.shapes_.back();
            c.shapes_.push_back({prev.channels, prev.height / 2, prev.width / 2});
            c.factors_.push_back(4);
        }
        if (backend == Backend::explicit_dense)
            c.materialise();
        return c;
    }

    //
    // flat vectors, explicit backend only: D_k sums consecutive groups of
    // `factor` entries and scales by 1/sqrt(factor)
    //
    static SubspaceCascade build_flat(std::size_t length, int levels, std::size_t factor)
    {
        if (levels < 0)
            throw std::invalid_argument("cascade: negative level count");
        if (levels > 0 && factor < 2)
            throw std::invalid_argument("cascade: flat factor must be at least 2");
        SubspaceCascade c;
        c.backend_ = Backend::explicit_dense;
        c.flat_    = true;
        c.shapes_.push_back(TensorShape::flat(length));
        for (int k = 1; k <= levels; ++k) {
            const std::size_t n = c.shapes_.back().size();
            if (n < factor)
                throw shape_error("cascade: K=" + std::to_string(levels) + " too large for length " +
                                  std::to_string(length));
            if (n % factor != 0)
                throw shape_error("cascade: length " + std::to_string(n) + " not divisible by factor " +
                                  std::to_string(factor));
            c.shapes_.push_back(TensorShape::flat(n / factor));
            c.factors_.push_back(factor);
        }
        c.materialise();
        return c;
    }

    int                levels() const noexcept { return int(shapes_.size()) - 1; }
    Backend            backend() const noexcept { return backend_; }
    bool               is_flat() const noexcept { return flat_; }
    const TensorShape& shape(int k) const { return shapes_.at(check_level(k)); }
    std::size_t        dim(int k) const { return shape(k).size(); }

    // f_k = dbar_{k-1} / dbar_k, k in [1, K]
    std::size_t factor(int k) const
    {
        if (k < 1 || k > levels())
            throw std::out_of_range("cascade: factor index out of range");
        return factors_[std::size_t(k - 1)];
    }

    std::vector<std::size_t> factors() const { return factors_; }

    // D_k x, x at level k-1
    Tensor downsample(int k, const Tensor& x) const
    {
        check_transfer(k);
        check_shape(x, k - 1, "downsample");
        if (backend_ == Backend::explicit_dense)
            return dense_apply(down_[std::size_t(k - 1)], x, shapes_[std::size_t(k)]);

        const TensorShape& out_shape = shapes_[std::size_t(k)];
        Tensor             y(out_shape);
        for (std::size_t ch = 0; ch < out_shape.channels; ++ch)
            for (std::size_t i = 0; i < out_shape.height; ++i)
                for (std::size_t j = 0; j < out_shape.width; ++j)
                    y.at(ch, i, j) = 0.5 * (x.at(ch, 2 * i, 2 * j) + x.at(ch, 2 * i, 2 * j + 1) +
                                            x.at(ch, 2 * i + 1, 2 * j) + x.at(ch, 2 * i + 1, 2 * j + 1));
        return y;
    }

    // D_k^T y, y at level k
    Tensor upsample(int k, const Tensor& y) const
    {
        check_transfer(k);
        check_shape(y, k, "upsample");
        if (backend_ == Backend::explicit_dense)
            return dense_apply_transposed(down_[std::size_t(k - 1)], y, shapes_[std::size_t(k - 1)]);

        Tensor x(shapes_[std::size_t(k - 1)]);
        for (std::size_t ch = 0; ch < y.shape.channels; ++ch)
            for (std::size_t i = 0; i < y.shape.height; ++i)
                for (std::size_t j = 0; j < y.shape.width; ++j) {
                    const double v             = 0.5 * y.at(ch, i, j);
                    x.at(ch, 2 * i, 2 * j)         = v;
                    x.at(ch, 2 * i, 2 * j + 1)     = v;
                    x.at(ch, 2 * i + 1, 2 * j)     = v;
                    x.at(ch, 2 * i + 1, 2 * j + 1) = v;
                }
        return x;
    }

    // Dbar_k x0 = D_k ... D_1 x0
    Tensor project_to_level(const Tensor& x0, int k) const
    {
        check_level(k);
        check_shape(x0, 0, "project_to_level");
        Tensor x = x0;
        for (int i = 1; i <= k; ++i)
            x = downsample(i, x);
        return x;
    }

    // D_{k+1}^T D_{k+1} x: orthogonal projection onto the retained subspace
    Tensor project_retained(int k, const Tensor& x) const { return upsample(k + 1, downsample(k + 1, x)); }

    //
    // U_k diag(a I, b I) U_k^T x = a x + (b - a) D_{k+1}^T D_{k+1} x
    //
    // At k = K the operator is a I and b is ignored.
    //
    Tensor apply_diag_pair(int k, double a, double b, const Tensor& x) const
    {
        check_level(k);
        check_shape(x, k, "apply_diag_pair");
        if (!std::isfinite(a) || !std::isfinite(b))
            throw std::invalid_argument("apply_diag_pair: non-finite coefficient");
        if (k == levels() || a == b)
            return scaled(x, a);
        if (backend_ == Backend::explicit_dense) {
            const auto& u    = bases_[std::size_t(k)];
            const auto  n    = std::ptrdiff_t(dim(k) - dim(k + 1));
            Eigen::VectorXd coeff = u.transpose() * as_vector(x);
            coeff.head(n) *= a;
            coeff.tail(coeff.size() - n) *= b;
            return from_vector(u * coeff, x.shape);
        }
        Tensor r = scaled(x, a);
        axpy(b - a, project_retained(k, x), r);
        return r;
    }

    Tensor apply_diag_pair(int k, DiagPair p, const Tensor& x) const { return apply_diag_pair(k, p.a, p.b, x); }

    //
    // dense views (explicit backend only)
    //

    // D_k as a dbar_k x dbar_{k-1} matrix
    const Eigen::MatrixXd& down_matrix(int k) const
    {
        require_explicit();
        check_transfer(k);
        return down_[std::size_t(k - 1)];
    }

    // U_k = [N_k, D_{k+1}^T]; U_K is the identity
    const Eigen::MatrixXd& basis(int k) const
    {
        require_explicit();
        return bases_.at(check_level(k));
    }

    // N_k: orthonormal basis of the kernel of D_{k+1}
    Eigen::MatrixXd complement_basis(int k) const
    {
        const auto& u = basis(k);
        return u.leftCols(std::ptrdiff_t(dim(k) - (k < levels() ? dim(k + 1) : 0)));
    }

    Eigen::MatrixXd dense_diag_pair(int k, DiagPair p) const
    {
        const auto&     u = basis(k);
        const auto      n = std::ptrdiff_t(dim(k) - (k < levels() ? dim(k + 1) : 0));
        Eigen::VectorXd g(u.cols());
        g.head(n).setConstant(p.a);
        g.tail(g.size() - n).setConstant(p.b);
        return u * g.asDiagonal() * u.transpose();
    }

    // dense matrix of Dbar_k
    Eigen::MatrixXd dense_projection(int k) const
    {
        require_explicit();
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(std::ptrdiff_t(dim(0)), std::ptrdiff_t(dim(0)));
        for (int i = 1; i <= k; ++i)
            m = down_[std::size_t(i - 1)] * m;
        return m;
    }

    static Eigen::VectorXd as_vector(const Tensor& x)
    {
        return Eigen::Map<const Eigen::VectorXd>(x.data.data(), std::ptrdiff_t(x.size()));
    }

    static Tensor from_vector(const Eigen::VectorXd& v, TensorShape shape)
    {
        return Tensor(shape, std::vector<double>(v.data(), v.data() + v.size()));
    }

private:
    SubspaceCascade() = default;

    std::size_t check_level(int k) const
    {
        if (k < 0 || k > levels())
            throw std::out_of_range("cascade: level " + std::to_string(k) + " outside [0, " +
                                    std::to_string(levels()) + "]");
        return std::size_t(k);
    }

    void check_transfer(int k) const
    {
        if (k < 1 || k > levels())
            throw std::out_of_range("cascade: no operator D_" + std::to_string(k) + " for K=" +
                                    std::to_string(levels()));
    }

    void check_shape(const Tensor& x, int k, const char* what) const
    {
        if (x.shape != shapes_[std::size_t(k)])
            throw shape_error(std::string(what) + ": expected shape " + to_string(shapes_[std::size_t(k)]) +
                              " at level " + std::to_string(k) + ", got " + to_string(x.shape));
    }

    void require_explicit() const
    {
        if (backend_ != Backend::explicit_dense)
            throw std::logic_error("cascade: dense matrices exist only for the explicit backend");
    }

    static Tensor dense_apply(const Eigen::MatrixXd& m, const Tensor& x, TensorShape out)
    {
        return from_vector(m * as_vector(x), out);
    }

    static Tensor dense_apply_transposed(const Eigen::MatrixXd& m, const Tensor& y, TensorShape out)
    {
        return from_vector(m.transpose() * as_vector(y), out);
    }

    Eigen::MatrixXd pooling_matrix(int k) const
    {
        const TensorShape& in  = shapes_[std::size_t(k - 1)];
        const TensorShape& out = shapes_[std::size_t(k)];
        Eigen::MatrixXd    d   = Eigen::MatrixXd::Zero(std::ptrdiff_t(out.size()), std::ptrdiff_t(in.size()));
        if (flat_) {
            const std::size_t f     = factors_[std::size_t(k - 1)];
            const double      scale = 1.0 / std::sqrt(double(f));
            for (std::size_t i = 0; i < out.size(); ++i)
                for (std::size_t j = 0; j < f; ++j)
                    d(std::ptrdiff_t(i), std::ptrdiff_t(i * f + j)) = scale;
            return d;
        }
        for (std::size_t ch = 0; ch < out.channels; ++ch)
            for (std::size_t i = 0; i < out.height; ++i)
                for (std::size_t j = 0; j < out.width; ++j) {
                    const auto row = std::ptrdiff_t((ch * out.height + i) * out.width + j);
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj)
                            d(row, std::ptrdiff_t((ch * in.height + 2 * i + di) * in.width + 2 * j + dj)) = 0.5;
                }
        return d;
    }

    //
    // Orthonormal completion of the rows of `d`: modified Gram-Schmidt over the
    // standard basis vectors e_0, e_1, ... in order, keeping those with a
    // non-negligible residual, until the kernel is spanned.
    //
    static Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& d)
    {
        const auto      n    = d.cols();
        const auto      want = n - d.rows();
        Eigen::MatrixXd basis(n, want);
        std::ptrdiff_t  found = 0;
        for (std::ptrdiff_t j = 0; j < n && found < want; ++j) {
            Eigen::VectorXd v = Eigen::VectorXd::Unit(n, j);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::ptrdiff_t r = 0; r < d.rows(); ++r)
                    v -= d.row(r).dot(v) * d.row(r).transpose();
                for (std::ptrdiff_t c = 0; c < found; ++c)
                    v -= basis.col(c).dot(v) * basis.col(c);
            }
            const double norm = v.norm();
            if (norm > 1e-8)
                basis.col(found++) = v / norm;
        }
        if (found != want)
            throw numeric_error("cascade: kernel completion found " + std::to_string(found) + " of " +
                                std::to_string(want) + " vectors");
        return basis;
    }

    void materialise()
    {
        if (dim(0) > max_explicit_dim)
            throw shape_error("cascade: explicit backend limited to " + std::to_string(max_explicit_dim) +
                              " base dimensions, got " + std::to_string(dim(0)));
        for (int k = 1; k <= levels(); ++k)
            down_.push_back(pooling_matrix(k));
        for (int k = 0; k <= levels(); ++k) {
            const auto n = std::ptrdiff_t(dim(k));
            if (k == levels()) {
                bases_.push_back(Eigen::MatrixXd::Identity(n, n));
                continue;
            }
            const Eigen::MatrixXd& d = down_[std::size_t(k)];
            Eigen::MatrixXd        u(n, n);
            u << kernel_basis(d), d.transpose();
            bases_.push_back(std::move(u));
        }
    }

    Backend                      backend_ = Backend::implicit_pooling;
    bool                         flat_    = false;
    std::vector<TensorShape>     shapes_;
    std::vector<std::size_t>     factors_;
    std::vector<Eigen::MatrixXd> down_;  // D_1 .. D_K
    std::vector<Eigen::MatrixXd> bases_; // U_0 .. U_K
};

} // namespace dvdp

#endif // DVDP_CASCADE_HPP
