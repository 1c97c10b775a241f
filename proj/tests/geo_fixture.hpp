#pragma once

// Two calibrated-style views of a random point cloud, for epipolar tests.

#include "fgraph/geoverify.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <random>
#include <vector>

namespace fixture {

struct TwoView {
    Eigen::Matrix3d F_true;  // q^T F p = 0
    std::vector<fgraph::gv::Correspondence> corrs;
    std::vector<bool> inlier;
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& t) {
    Eigen::Matrix3d S;
    S << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
    return S;
}

// n points, a fraction of them replaced by uniform random partners; sigma px
// of Gaussian noise on every coordinate of the inliers.
inline TwoView two_view(std::size_t n, double outlier_fraction, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::Matrix3d K;
    K << 500, 0, 320, 0, 500, 240, 0, 0, 1;
    const Eigen::Matrix3d R =
        (Eigen::AngleAxisd(0.15 * u(rng), Eigen::Vector3d::UnitX()) * Eigen::AngleAxisd(0.3 + 0.1 * u(rng), Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(0.1 * u(rng), Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    const Eigen::Vector3d t(-1.0 + 0.2 * u(rng), 0.2 * u(rng), 0.1 * u(rng));
    TwoView tv;
    tv.F_true = K.inverse().transpose() * skew(t) * R * K.inverse();
    tv.F_true /= tv.F_true.norm();
    const auto n_out = static_cast<std::size_t>(outlier_fraction * static_cast<double>(n) + 0.5);
    std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d X(2.0 * u(rng), 1.5 * u(rng), 6.0 + 2.0 * u(rng));
        const Eigen::Vector3d a = K * X, b = K * (R * X + t);
        Eigen::Vector2d p = a.hnormalized(), q = b.hnormalized();
        const bool in = i >= n_out;
        if (in) {
            p += sigma * Eigen::Vector2d(noise(rng), noise(rng));
            q += sigma * Eigen::Vector2d(noise(rng), noise(rng));
        } else {
            q = Eigen::Vector2d(ux(rng), uy(rng));
        }
        tv.corrs.push_back(fgraph::gv::make_corr(p.x(), p.y(), q.x(), q.y()));
        tv.inlier.push_back(in);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    TwoView out{tv.F_true, {}, {}};
    for (auto i : perm) {
        out.corrs.push_back(tv.corrs[i]);
        out.inlier.push_back(tv.inlier[i]);
    }
    return out;
}

}  // namespace fixture
