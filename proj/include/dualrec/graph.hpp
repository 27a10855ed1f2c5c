#pragma once

// Reverse-mode automatic differentiation over 2-D tensors.
//
// A Graph is a tape of nodes created by one forward build; backward() walks
// the tape in reverse. Nodes are tensor-valued (a whole matmul or attention
// is one node), so tapes stay short and the inner loops stay vectorizable.
// Templated on the scalar type: float for training, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "dualrec/rng.hpp"

namespace dualrec {

using NodeId = int;

namespace kernels {

// C(NxM) += A(NxK) * B(KxM)
template <class Real>
void mm_nn(const Real* a, const Real* b, Real* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        Real* ci = c + size_t(i) * m;
        const Real* ai = a + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            Real av = ai[p];
            const Real* bp = b + size_t(p) * m;
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(NxM) += A(NxK) * B(MxK)^T
template <class Real>
void mm_nt(const Real* a, const Real* b, Real* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const Real* ai = a + size_t(i) * k;
        Real* ci = c + size_t(i) * m;
        for (int j = 0; j < m; ++j) {
            const Real* bj = b + size_t(j) * k;
            Real s = 0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C(KxM) += A(NxK)^T * B(NxM)
template <class Real>
void mm_tn(const Real* a, const Real* b, Real* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const Real* ai = a + size_t(i) * k;
        const Real* bi = b + size_t(i) * m;
        for (int p = 0; p < k; ++p) {
            Real av = ai[p];
            Real* cp = c + size_t(p) * m;
            for (int j = 0; j < m; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace kernels

template <class Real>
class Graph {
public:
    struct Node {
        int rows = 0, cols = 0;
        std::vector<Real> val;
        std::vector<Real> grad;
        std::function<void()> back;  // empty for leaves and constants
    };

    std::vector<Node> nodes;

    size_t size() const { return nodes.size(); }
    Node& at(NodeId id) { return nodes[size_t(id)]; }
    const Node& at(NodeId id) const { return nodes[size_t(id)]; }
    std::vector<Real>& val(NodeId id) { return nodes[size_t(id)].val; }
    std::vector<Real>& grad(NodeId id) { return nodes[size_t(id)].grad; }

    NodeId alloc(int rows, int cols) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.val.assign(size_t(rows) * cols, Real(0));
        n.grad.assign(size_t(rows) * cols, Real(0));
        nodes.push_back(std::move(n));
        return NodeId(nodes.size() - 1);
    }

    NodeId leaf(int rows, int cols, std::span<const Real> data) {
        NodeId id = alloc(rows, cols);
        if (data.size() != size_t(rows) * cols)
            throw std::invalid_argument("leaf: data size mismatch");
        std::copy(data.begin(), data.end(), val(id).begin());
        return id;
    }

    NodeId constant(int rows, int cols, std::span<const Real> data) { return leaf(rows, cols, data); }

    NodeId zeros(int rows, int cols) { return alloc(rows, cols); }

    // ---- elementwise ----

    NodeId add(NodeId a, NodeId b) {
        check_same(a, b, "add");
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        const auto& vb = val(b);
        for (size_t i = 0; i < v.size(); ++i) v[i] = va[i] + vb[i];
        at(id).back = [this, id, a, b] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            auto& gb = grad(b);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        };
        return id;
    }

    NodeId sub(NodeId a, NodeId b) {
        check_same(a, b, "sub");
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        const auto& vb = val(b);
        for (size_t i = 0; i < v.size(); ++i) v[i] = va[i] - vb[i];
        at(id).back = [this, id, a, b] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            auto& gb = grad(b);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        };
        return id;
    }

    NodeId scale(NodeId a, Real s) {
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        for (size_t i = 0; i < v.size(); ++i) v[i] = s * va[i];
        at(id).back = [this, id, a, s] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        };
        return id;
    }

    // (1-lam)*a + lam*b, lam constant
    NodeId mix(NodeId a, NodeId b, Real lam) {
        check_same(a, b, "mix");
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        const auto& vb = val(b);
        for (size_t i = 0; i < v.size(); ++i) v[i] = (Real(1) - lam) * va[i] + lam * vb[i];
        at(id).back = [this, id, a, b, lam] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            auto& gb = grad(b);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += (Real(1) - lam) * g[i];
                gb[i] += lam * g[i];
            }
        };
        return id;
    }

    NodeId leaky_relu(NodeId a, Real slope) {
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        for (size_t i = 0; i < v.size(); ++i) v[i] = va[i] > 0 ? va[i] : slope * va[i];
        at(id).back = [this, id, a, slope] {
            const auto& g = grad(id);
            const auto& va = val(a);
            auto& ga = grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += (va[i] > 0 ? Real(1) : slope) * g[i];
        };
        return id;
    }

    NodeId gelu(NodeId a) {
        // tanh approximation
        const Real c0 = Real(0.7978845608028654);   // sqrt(2/pi)
        const Real c1 = Real(0.044715);
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto& v = val(id);
        const auto& va = val(a);
        for (size_t i = 0; i < v.size(); ++i) {
            Real x = va[i];
            Real u = c0 * (x + c1 * x * x * x);
            v[i] = Real(0.5) * x * (Real(1) + std::tanh(u));
        }
        at(id).back = [this, id, a, c0, c1] {
            const auto& g = grad(id);
            const auto& va = val(a);
            auto& ga = grad(a);
            for (size_t i = 0; i < g.size(); ++i) {
                Real x = va[i];
                Real u = c0 * (x + c1 * x * x * x);
                Real th = std::tanh(u);
                Real du = c0 * (Real(1) + Real(3) * c1 * x * x);
                Real d = Real(0.5) * (Real(1) + th) + Real(0.5) * x * (Real(1) - th * th) * du;
                ga[i] += d * g[i];
            }
        };
        return id;
    }

    NodeId dropout(NodeId a, Real rate, Rng& rng, bool training) {
        if (!training || rate <= Real(0)) return a;
        NodeId id = alloc(at(a).rows, at(a).cols);
        auto mask = std::make_shared<std::vector<Real>>(val(a).size());
        Real keep = Real(1) - rate;
        auto& v = val(id);
        const auto& va = val(a);
        for (size_t i = 0; i < v.size(); ++i) {
            (*mask)[i] = rng.bernoulli(double(rate)) ? Real(0) : Real(1) / keep;
            v[i] = va[i] * (*mask)[i];
        }
        at(id).back = [this, id, a, mask] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += (*mask)[i] * g[i];
        };
        return id;
    }

    // ---- broadcast / reshuffle ----

    // a: (N x D), v: (1 x D); adds v to every row.
    NodeId add_rowvec(NodeId a, NodeId v) {
        if (at(v).rows != 1 || at(v).cols != at(a).cols)
            throw std::invalid_argument("add_rowvec: shape mismatch");
        NodeId id = alloc(at(a).rows, at(a).cols);
        int n = at(a).rows, d = at(a).cols;
        auto& out = val(id);
        const auto& va = val(a);
        const auto& vv = val(v);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out[size_t(i) * d + j] = va[size_t(i) * d + j] + vv[j];
        at(id).back = [this, id, a, v, n, d] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            auto& gv = grad(v);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) {
                    ga[size_t(i) * d + j] += g[size_t(i) * d + j];
                    gv[j] += g[size_t(i) * d + j];
                }
        };
        return id;
    }

    // a: (1 x C*HW), e: (1 x C); out[c*hw + k] = a[c*hw + k] + e[c].
    NodeId add_channel(NodeId a, NodeId e, int channels, int hw) {
        if (at(a).rows != 1 || at(a).cols != channels * hw || at(e).cols != channels)
            throw std::invalid_argument("add_channel: shape mismatch");
        NodeId id = alloc(1, channels * hw);
        auto& out = val(id);
        const auto& va = val(a);
        const auto& ve = val(e);
        for (int c = 0; c < channels; ++c)
            for (int k = 0; k < hw; ++k) out[size_t(c) * hw + k] = va[size_t(c) * hw + k] + ve[c];
        at(id).back = [this, id, a, e, channels, hw] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            auto& ge = grad(e);
            for (int c = 0; c < channels; ++c)
                for (int k = 0; k < hw; ++k) {
                    ga[size_t(c) * hw + k] += g[size_t(c) * hw + k];
                    ge[c] += g[size_t(c) * hw + k];
                }
        };
        return id;
    }

    // Row gather: out row i = a row idx[i]. Used for embeddings and
    // positional lookups; backward scatter-adds.
    NodeId rows_gather(NodeId a, std::vector<int> idx) {
        int d = at(a).cols;
        int n = int(idx.size());
        for (int i : idx)
            if (i < 0 || i >= at(a).rows) throw std::invalid_argument("rows_gather: index out of range");
        NodeId id = alloc(n, d);
        auto& out = val(id);
        const auto& va = val(a);
        for (int i = 0; i < n; ++i)
            std::copy(va.begin() + size_t(idx[size_t(i)]) * d, va.begin() + size_t(idx[size_t(i)] + 1) * d,
                      out.begin() + size_t(i) * d);
        at(id).back = [this, id, a, idx = std::move(idx), n, d] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            for (int i = 0; i < n; ++i) {
                const Real* gi = g.data() + size_t(i) * d;
                Real* gr = ga.data() + size_t(idx[size_t(i)]) * d;
                for (int j = 0; j < d; ++j) gr[j] += gi[j];
            }
        };
        return id;
    }

    NodeId rows_slice(NodeId a, int start, int len) {
        std::vector<int> idx(size_t(len), 0);
        for (int i = 0; i < len; ++i) idx[size_t(i)] = start + i;
        return rows_gather(a, std::move(idx));
    }

    // Arbitrary element permutation / selection into a new shape:
    // out.flat[i] = a.flat[src[i]]. Used for patchify / unpatchify.
    NodeId reindex(NodeId a, std::vector<int> src, int rows, int cols) {
        if (src.size() != size_t(rows) * cols) throw std::invalid_argument("reindex: size mismatch");
        NodeId id = alloc(rows, cols);
        auto& out = val(id);
        const auto& va = val(a);
        for (size_t i = 0; i < src.size(); ++i) out[i] = va[size_t(src[i])];
        at(id).back = [this, id, a, src = std::move(src)] {
            const auto& g = grad(id);
            auto& ga = grad(a);
            for (size_t i = 0; i < src.size(); ++i) ga[size_t(src[i])] += g[i];
        };
        return id;
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        int d = at(parts[0]).cols;
        int n = 0;
        for (NodeId p : parts) {
            if (at(p).cols != d) throw std::invalid_argument("concat_rows: col mismatch");
            n += at(p).rows;
        }
        NodeId id = alloc(n, d);
        auto& out = val(id);
        size_t off = 0;
        for (NodeId p : parts) {
            std::copy(val(p).begin(), val(p).end(), out.begin() + off);
            off += val(p).size();
        }
        at(id).back = [this, id, parts, d] {
            const auto& g = grad(id);
            size_t off = 0;
            for (NodeId p : parts) {
                auto& gp = grad(p);
                for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                off += gp.size();
            }
        };
        return id;
    }

    // ---- linear algebra ----

    NodeId matmul(NodeId a, NodeId b) {
        if (at(a).cols != at(b).rows) throw std::invalid_argument("matmul: inner dim mismatch");
        int n = at(a).rows, k = at(a).cols, m = at(b).cols;
        NodeId id = alloc(n, m);
        kernels::mm_nn(val(a).data(), val(b).data(), val(id).data(), n, k, m);
        at(id).back = [this, id, a, b, n, k, m] {
            // dA += dC * B^T ; dB += A^T * dC
            kernels::mm_nt(grad(id).data(), val(b).data(), grad(a).data(), n, m, k);
            kernels::mm_tn(val(a).data(), grad(id).data(), grad(b).data(), n, k, m);
        };
        return id;
    }

    NodeId linear(NodeId x, NodeId w, NodeId b) { return add_rowvec(matmul(x, w), b); }

    NodeId layernorm(NodeId x, NodeId gain, NodeId bias, Real eps = Real(1e-5)) {
        int n = at(x).rows, d = at(x).cols;
        if (at(gain).cols != d || at(bias).cols != d)
            throw std::invalid_argument("layernorm: param shape mismatch");
        NodeId id = alloc(n, d);
        auto xhat = std::make_shared<std::vector<Real>>(size_t(n) * d);
        auto rstd = std::make_shared<std::vector<Real>>(size_t(n));
        const auto& vx = val(x);
        const auto& vg = val(gain);
        const auto& vb = val(bias);
        auto& out = val(id);
        for (int i = 0; i < n; ++i) {
            const Real* xi = vx.data() + size_t(i) * d;
            Real mean = 0;
            for (int j = 0; j < d; ++j) mean += xi[j];
            mean /= Real(d);
            Real var = 0;
            for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
            var /= Real(d);
            Real rs = Real(1) / std::sqrt(var + eps);
            (*rstd)[size_t(i)] = rs;
            for (int j = 0; j < d; ++j) {
                Real xh = (xi[j] - mean) * rs;
                (*xhat)[size_t(i) * d + j] = xh;
                out[size_t(i) * d + j] = vg[j] * xh + vb[j];
            }
        }
        at(id).back = [this, id, x, gain, bias, n, d, xhat, rstd] {
            const auto& g = grad(id);
            const auto& vg = val(gain);
            auto& gx = grad(x);
            auto& gg = grad(gain);
            auto& gb = grad(bias);
            for (int i = 0; i < n; ++i) {
                const Real* gi = g.data() + size_t(i) * d;
                const Real* xh = xhat->data() + size_t(i) * d;
                Real rs = (*rstd)[size_t(i)];
                Real sum_gy = 0, sum_gyxh = 0;
                for (int j = 0; j < d; ++j) {
                    Real gy = gi[j] * vg[j];
                    sum_gy += gy;
                    sum_gyxh += gy * xh[j];
                    gg[j] += gi[j] * xh[j];
                    gb[j] += gi[j];
                }
                for (int j = 0; j < d; ++j) {
                    Real gy = gi[j] * vg[j];
                    gx[size_t(i) * d + j] +=
                        rs * (gy - (sum_gy + xh[j] * sum_gyxh) / Real(d));
                }
            }
        };
        return id;
    }

    // Multi-head scaled dot-product attention core. q: (Nq x D),
    // k,v: (Nk x D), D divisible by heads. Projections live outside.
    NodeId attention(NodeId q, NodeId k, NodeId v, int heads) {
        int nq = at(q).rows, d = at(q).cols, nk = at(k).rows;
        if (at(k).cols != d || at(v).cols != d || at(v).rows != nk)
            throw std::invalid_argument("attention: shape mismatch");
        if (d % heads != 0) throw std::invalid_argument("attention: heads must divide dim");
        int dh = d / heads;
        Real scl = Real(1) / std::sqrt(Real(dh));
        NodeId id = alloc(nq, d);
        // probs[h] is (Nq x Nk)
        auto probs = std::make_shared<std::vector<std::vector<Real>>>(
            size_t(heads), std::vector<Real>(size_t(nq) * nk));
        const auto& vq = val(q);
        const auto& vk = val(k);
        const auto& vv = val(v);
        auto& out = val(id);
        for (int hI = 0; hI < heads; ++hI) {
            auto& P = (*probs)[size_t(hI)];
            int off = hI * dh;
            for (int i = 0; i < nq; ++i) {
                const Real* qi = vq.data() + size_t(i) * d + off;
                Real* Pi = P.data() + size_t(i) * nk;
                Real mx = -std::numeric_limits<Real>::infinity();
                for (int j = 0; j < nk; ++j) {
                    const Real* kj = vk.data() + size_t(j) * d + off;
                    Real s = 0;
                    for (int p = 0; p < dh; ++p) s += qi[p] * kj[p];
                    Pi[j] = s * scl;
                    if (Pi[j] > mx) mx = Pi[j];
                }
                Real z = 0;
                for (int j = 0; j < nk; ++j) {
                    Pi[j] = std::exp(Pi[j] - mx);
                    z += Pi[j];
                }
                Real* oi = out.data() + size_t(i) * d + off;
                for (int j = 0; j < nk; ++j) Pi[j] /= z;
                for (int p = 0; p < dh; ++p) oi[p] = 0;
                for (int j = 0; j < nk; ++j) {
                    const Real* vj = vv.data() + size_t(j) * d + off;
                    Real pij = Pi[j];
                    for (int p = 0; p < dh; ++p) oi[p] += pij * vj[p];
                }
            }
        }
        at(id).back = [this, id, q, k, v, heads, nq, nk, d, dh, scl, probs] {
            const auto& g = grad(id);
            const auto& vq = val(q);
            const auto& vk = val(k);
            const auto& vv = val(v);
            auto& gq = grad(q);
            auto& gk = grad(k);
            auto& gv = grad(v);
            std::vector<Real> dP(size_t(nq) * nk), dS(size_t(nq) * nk);
            for (int hI = 0; hI < heads; ++hI) {
                const auto& P = (*probs)[size_t(hI)];
                int off = hI * dh;
                // dP = dO * V^T ; dV += P^T * dO
                for (int i = 0; i < nq; ++i) {
                    const Real* gi = g.data() + size_t(i) * d + off;
                    Real* dPi = dP.data() + size_t(i) * nk;
                    for (int j = 0; j < nk; ++j) {
                        const Real* vj = vv.data() + size_t(j) * d + off;
                        Real s = 0;
                        for (int p = 0; p < dh; ++p) s += gi[p] * vj[p];
                        dPi[j] = s;
                    }
                }
                for (int j = 0; j < nk; ++j) {
                    Real* gvj = gv.data() + size_t(j) * d + off;
                    for (int i = 0; i < nq; ++i) {
                        Real pij = P[size_t(i) * nk + j];
                        const Real* gi = g.data() + size_t(i) * d + off;
                        for (int p = 0; p < dh; ++p) gvj[p] += pij * gi[p];
                    }
                }
                // softmax backward: dS = P .* (dP - rowsum(dP .* P))
                for (int i = 0; i < nq; ++i) {
                    const Real* Pi = P.data() + size_t(i) * nk;
                    const Real* dPi = dP.data() + size_t(i) * nk;
                    Real* dSi = dS.data() + size_t(i) * nk;
                    Real dot = 0;
                    for (int j = 0; j < nk; ++j) dot += dPi[j] * Pi[j];
                    for (int j = 0; j < nk; ++j) dSi[j] = Pi[j] * (dPi[j] - dot);
                }
                // dQ += scl * dS * K ; dK += scl * dS^T * Q
                for (int i = 0; i < nq; ++i) {
                    Real* gqi = gq.data() + size_t(i) * d + off;
                    const Real* dSi = dS.data() + size_t(i) * nk;
                    for (int j = 0; j < nk; ++j) {
                        const Real* kj = vk.data() + size_t(j) * d + off;
                        Real w0 = scl * dSi[j];
                        for (int p = 0; p < dh; ++p) gqi[p] += w0 * kj[p];
                    }
                }
                for (int j = 0; j < nk; ++j) {
                    Real* gkj = gk.data() + size_t(j) * d + off;
                    for (int i = 0; i < nq; ++i) {
                        Real w0 = scl * dS[size_t(i) * nk + j];
                        const Real* qi = vq.data() + size_t(i) * d + off;
                        for (int p = 0; p < dh; ++p) gkj[p] += w0 * qi[p];
                    }
                }
            }
        };
        return id;
    }

    // ---- losses ----

    // Mean over all elements of (pred - target)^2, target constant.
    NodeId mse_mean(NodeId pred, std::span<const Real> target) {
        if (val(pred).size() != target.size()) throw std::invalid_argument("mse_mean: size mismatch");
        NodeId id = alloc(1, 1);
        const auto& vp = val(pred);
        size_t n = vp.size();
        Real s = 0;
        for (size_t i = 0; i < n; ++i) {
            Real d = vp[i] - target[i];
            s += d * d;
        }
        val(id)[0] = s / Real(n);
        auto tgt = std::make_shared<std::vector<Real>>(target.begin(), target.end());
        at(id).back = [this, id, pred, tgt, n] {
            Real g = grad(id)[0];
            const auto& vp = val(pred);
            auto& gp = grad(pred);
            Real c = Real(2) / Real(n) * g;
            for (size_t i = 0; i < n; ++i) gp[i] += c * (vp[i] - (*tgt)[i]);
        };
        return id;
    }

    // Weighted negative log-likelihood over rows of a logit matrix:
    // sum_i w[i] * (-log softmax(logits[i])[target[i]]), w[i] may be 0.
    NodeId weighted_nll(NodeId logits, std::vector<int> targets, std::vector<Real> weights) {
        int n = at(logits).rows, vsz = at(logits).cols;
        if (int(targets.size()) != n || int(weights.size()) != n)
            throw std::invalid_argument("weighted_nll: row count mismatch");
        NodeId id = alloc(1, 1);
        auto soft = std::make_shared<std::vector<Real>>(size_t(n) * vsz);
        const auto& vl = val(logits);
        Real loss = 0;
        for (int i = 0; i < n; ++i) {
            const Real* li = vl.data() + size_t(i) * vsz;
            Real* si = soft->data() + size_t(i) * vsz;
            if (weights[size_t(i)] == Real(0)) continue;
            Real mx = li[0];
            for (int j = 1; j < vsz; ++j) mx = std::max(mx, li[j]);
            Real z = 0;
            for (int j = 0; j < vsz; ++j) {
                si[j] = std::exp(li[j] - mx);
                z += si[j];
            }
            for (int j = 0; j < vsz; ++j) si[j] /= z;
            loss += weights[size_t(i)] * (-std::log(si[targets[size_t(i)]]));
        }
        val(id)[0] = loss;
        at(id).back = [this, id, logits, targets = std::move(targets), weights = std::move(weights),
                       soft, n, vsz] {
            Real g = grad(id)[0];
            auto& gl = grad(logits);
            for (int i = 0; i < n; ++i) {
                Real w0 = weights[size_t(i)];
                if (w0 == Real(0)) continue;
                const Real* si = soft->data() + size_t(i) * vsz;
                Real* gi = gl.data() + size_t(i) * vsz;
                for (int j = 0; j < vsz; ++j) gi[j] += g * w0 * si[j];
                gi[targets[size_t(i)]] -= g * w0;
            }
        };
        return id;
    }

    NodeId add_scalars(const std::vector<NodeId>& terms) {
        NodeId id = alloc(1, 1);
        Real s = 0;
        for (NodeId t : terms) {
            if (val(t).size() != 1) throw std::invalid_argument("add_scalars: non-scalar term");
            s += val(t)[0];
        }
        val(id)[0] = s;
        at(id).back = [this, id, terms] {
            Real g = grad(id)[0];
            for (NodeId t : terms) grad(t)[0] += g;
        };
        return id;
    }

    void backward(NodeId loss) {
        if (val(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        grad(loss)[0] = Real(1);
        for (size_t i = nodes.size(); i-- > 0;) {
            if (nodes[i].back) nodes[i].back();
        }
    }

private:
    void check_same(NodeId a, NodeId b, const char* where) {
        if (at(a).rows != at(b).rows || at(a).cols != at(b).cols)
            throw std::invalid_argument(std::string(where) + ": shape mismatch");
    }
};

}  // namespace dualrec
