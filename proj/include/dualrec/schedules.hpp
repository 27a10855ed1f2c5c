#pragma once

// Noise schedules shared by the losses and the samplers.
//
// Continuous branch: rectified-linear path z_t = (1-t) z0 + t eps, so
// alpha(t) = 1-t, sigma(t) = t and the per-sample velocity is constant
// (eps - z0). Discrete branch: per-position masking probability equal to t.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dualrec/latent.hpp"

namespace dualrec {

struct ContinuousSchedule {
    enum class Kind { RectifiedLinear };
    Kind kind = Kind::RectifiedLinear;
    double t_min = 1e-3;  // clamp floor for the 1/t loss weighting

    ContinuousSchedule() = default;
    explicit ContinuousSchedule(double t_min_) : t_min(t_min_) {
        if (t_min <= 0.0) throw std::invalid_argument("ContinuousSchedule: t_min must be > 0");
    }

    std::pair<double, double> alpha_sigma(double t) const {
        if (t < 0.0 || t > 1.0) throw std::domain_error("alpha_sigma: t outside [0,1]");
        return {1.0 - t, t};
    }
};

struct DiscreteSchedule {
    double mask_prob(double t) const {
        if (t < 0.0 || t > 1.0) throw std::domain_error("mask_prob: t outside [0,1]");
        return t;
    }
};

template <class Real>
Latent<Real> add_noise(const Latent<Real>& z0, const Latent<Real>& eps, double t) {
    check_same_shape(z0, eps, "add_noise");
    if (t < 0.0 || t > 1.0) throw std::domain_error("add_noise: t outside [0,1]");
    Latent<Real> out(z0.c, z0.h, z0.w);
    Real a = Real(1.0 - t), s = Real(t);
    for (size_t i = 0; i < z0.size(); ++i) out.data[i] = a * z0.data[i] + s * eps.data[i];
    return out;
}

template <class Real>
Latent<Real> velocity_target(const Latent<Real>& z0, const Latent<Real>& eps) {
    check_same_shape(z0, eps, "velocity_target");
    Latent<Real> out(z0.c, z0.h, z0.w);
    for (size_t i = 0; i < z0.size(); ++i) out.data[i] = eps.data[i] - z0.data[i];
    return out;
}

// Stratified times for the K-term text-loss estimator: one shared uniform
// offset u, t_i = max(t_min, (i - u)/K) for i = 1..K.
inline std::vector<double> stratified_times(int k, double u, double t_min = 1e-3) {
    if (k < 1) throw std::domain_error("stratified_times: K must be >= 1");
    if (u < 0.0 || u >= 1.0) throw std::domain_error("stratified_times: u outside [0,1)");
    std::vector<double> ts(static_cast<size_t>(k), 0.0);
    for (int i = 1; i <= k; ++i) ts[size_t(i - 1)] = std::max(t_min, (double(i) - u) / double(k));
    return ts;
}

}  // namespace dualrec
