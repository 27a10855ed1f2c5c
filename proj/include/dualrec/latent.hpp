#pragma once

#include <stdexcept>
#include <vector>

namespace dualrec {

// Image-branch state z with shape C x H x W, stored row-major
// (c * H * W + h * W + w).
template <class Real>
struct Latent {
    int c = 0, h = 0, w = 0;
    std::vector<Real> data;

    Latent() = default;
    Latent(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(size_t(c_) * h_ * w_, Real(0)) {}

    size_t size() const { return data.size(); }
    bool same_shape(const Latent& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <class Real>
void check_same_shape(const Latent<Real>& a, const Latent<Real>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": latent shape mismatch");
}

template <class Real>
Real l2_norm(const Latent<Real>& a) {
    Real s = 0;
    for (Real x : a.data) s += x * x;
    return std::sqrt(s);
}

using Latentf = Latent<float>;
using Latentd = Latent<double>;

}  // namespace dualrec
