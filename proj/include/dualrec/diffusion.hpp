#pragma once

// Training losses (image flow matching, masked-text diffusion, joint),
// the lambda_m condition mixing, the three-scale CFG velocity
// composition, and the two samplers (Euler PF-ODE for latents, greedy
// confidence unmasking for captions).

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "dualrec/captions.hpp"
#include "dualrec/graph.hpp"
#include "dualrec/latent.hpp"
#include "dualrec/model.hpp"
#include "dualrec/preference.hpp"
#include "dualrec/schedules.hpp"

namespace dualrec {

struct GuidanceScales {
    double s_d = 8.0, s_m = 7.0, s_p = 8.0;

    void validate() const {
        for (double s : {s_d, s_m, s_p})
            if (!(s >= 0.0) || !std::isfinite(s))
                throw std::invalid_argument("guidance scales must be finite and >= 0");
    }
};

struct LossWeights {
    double lambda_text = 0.2;
    double lambda_m = 0.1;
    int K = 4;  // stratified time count for the text loss
    double drop_m = 0.5;
    double drop_p = 0.1;
    double drop_d = 0.1;

    void validate() const {
        if (lambda_text < 0.0) throw std::invalid_argument("lambda_text must be >= 0");
        if (lambda_m < 0.0 || lambda_m > 1.0)
            throw std::invalid_argument("lambda_m must be in [0,1]");
        if (K < 1) throw std::invalid_argument("K must be >= 1");
        for (double p : {drop_m, drop_p, drop_d})
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("drop rates must be in [0,1]");
    }
};

// Caption template with every value position masked (the sampler's start
// state and the image branch's caption slot when the caption is unknown).
inline TokenSequence masked_template(const Vocab& vocab) {
    TokenSequence seq;
    seq.tokens.assign(kCaptionLen, Vocab::kPad);
    seq.mask.assign(kCaptionLen, 0);
    int pos = 0;
    for (int k = 0; k < kNumAttributes; ++k) {
        seq.tokens[size_t(pos++)] = vocab.key_token(k);
        seq.tokens[size_t(pos++)] = Vocab::kColon;
        seq.mask[size_t(pos)] = 1;
        seq.tokens[size_t(pos++)] = Vocab::kMaskTok;
        if (k + 1 < kNumAttributes) seq.tokens[size_t(pos++)] = Vocab::kSemi;
    }
    return seq;
}

// ---- image flow-matching loss (Eq. 16/17 mixing + regression) ----
//
// z_t = (1-t) z0 + t eps; if m is present the model input is
// (1-lambda_m) z_t + lambda_m m; target is the constant velocity
// eps - z0; mean over latent elements. The caption slot of the text
// branch is y_slot (clean caption in stage 1, fully-masked template
// when the caption is the generation target).
template <class Real>
NodeId image_loss_node(Graph<Real>& g, const Model<Real>& model,
                       const typename Model<Real>::Bound& b, const Latent<Real>& z0,
                       const TokenSequence& y_slot, const std::vector<int>* p,
                       const std::vector<int>* d, std::optional<NodeId> m_node, double t,
                       const Latent<Real>& eps, double lambda_m) {
    Latent<Real> zt = add_noise(z0, eps, t);
    NodeId zt_node = g.constant(1, model.cfg.latent_dim(), std::span<const Real>(zt.data));
    NodeId z_in = m_node ? g.mix(zt_node, *m_node, Real(lambda_m)) : zt_node;
    TextInput txt = build_text_input(model.cfg, y_slot.tokens, p, d);
    auto fr = model.forward(g, b, z_in, txt, t);
    Latent<Real> target = velocity_target(z0, eps);
    return g.mse_mean(fr.velocity, std::span<const Real>(target.data));
}

// ---- masked-text diffusion loss ----
//
// One term per (time, pre-masked sequence) pair:
//   -(1/K) sum_i [ sum_{j masked} log p(true token) ] / (t_i * n_masked_i)
// Zero-masked draws contribute 0 (and skip the forward). image_ctx is
// the image branch's latent input: the clean z0 in stage 1, the matching
// condition m (or zeros) in stages 2/3.
template <class Real>
NodeId text_loss_frozen(Graph<Real>& g, const Model<Real>& model,
                        const typename Model<Real>::Bound& b, const TokenSequence& y0,
                        const std::vector<int>* p, const std::vector<int>* d, NodeId image_ctx,
                        const std::vector<double>& times,
                        const std::vector<TokenSequence>& masked) {
    if (times.size() != masked.size())
        throw std::invalid_argument("text_loss: times/masked size mismatch");
    const size_t kk = times.size();
    std::vector<NodeId> terms;
    for (size_t i = 0; i < kk; ++i) {
        const TokenSequence& yt = masked[i];
        int n_masked = 0;
        for (size_t j = 0; j < yt.tokens.size(); ++j)
            if (y0.mask[j] && yt.tokens[j] == Vocab::kMaskTok) ++n_masked;
        if (n_masked == 0) continue;
        TextInput txt = build_text_input(model.cfg, yt.tokens, p, d);
        auto fr = model.forward(g, b, image_ctx, txt, times[i]);
        std::vector<int> targets(size_t(fr.text_len), 0);
        std::vector<Real> weights(size_t(fr.text_len), Real(0));
        Real w0 = Real(1.0 / (double(kk) * times[i] * double(n_masked)));
        for (size_t j = 0; j < yt.tokens.size(); ++j)
            if (y0.mask[j] && yt.tokens[j] == Vocab::kMaskTok) {
                targets[j] = y0.tokens[j];
                weights[j] = w0;
            }
        terms.push_back(g.weighted_nll(fr.logits, std::move(targets), std::move(weights)));
    }
    if (terms.empty()) return g.zeros(1, 1);
    return g.add_scalars(terms);
}

template <class Real>
NodeId text_loss_node(Graph<Real>& g, const Model<Real>& model,
                      const typename Model<Real>::Bound& b, const TokenSequence& y0,
                      const std::vector<int>* p, const std::vector<int>* d, NodeId image_ctx,
                      int K, Rng& rng, double t_min = 1e-3) {
    double u = rng.uniform();
    std::vector<double> times = stratified_times(K, u, t_min);
    std::vector<TokenSequence> masked;
    masked.reserve(times.size());
    for (double t : times) masked.push_back(mask_values(y0, t, rng));
    return text_loss_frozen(g, model, b, y0, p, d, image_ctx, times, masked);
}

// ---- joint loss ----

template <class Real>
struct TrainSample {
    Latent<Real> z0;
    TokenSequence y0;
    std::optional<std::vector<int>> p;
    std::optional<std::vector<int>> d;
    std::vector<Latent<Real>> context;  // incomplete-outfit latents; empty = no m
    bool stage1 = false;  // text branch sees clean z0; image branch sees clean y0
};

template <class Real>
struct JointLossNodes {
    NodeId total = 0, image = 0, text = 0;
    bool used_m = false, used_p = false, used_d = false;
    double t_image = 0.0;
};

// Deterministic rng draw order (fixed so drop_m=1 matches an m-always-
// absent trace): 3 condition-drop uniforms, then t, then eps, then the
// projection dropout (only when m is kept), then the text-loss draws.
template <class Real>
JointLossNodes<Real> joint_loss(Graph<Real>& g, const Model<Real>& model,
                                const typename Model<Real>::Bound& b,
                                const TrainSample<Real>& sample, const LossWeights& lw, Rng& rng,
                                bool training = true, double t_min = 1e-3) {
    lw.validate();
    JointLossNodes<Real> out;
    bool keep_m = !rng.bernoulli(lw.drop_m);
    bool keep_p = !rng.bernoulli(lw.drop_p);
    bool keep_d = !rng.bernoulli(lw.drop_d);
    out.used_m = keep_m && !sample.context.empty();
    out.used_p = keep_p && sample.p.has_value() && !sample.p->empty();
    out.used_d = keep_d && sample.d.has_value();
    const std::vector<int>* p = out.used_p ? &*sample.p : nullptr;
    const std::vector<int>* d = out.used_d ? &*sample.d : nullptr;

    double t = t_min + (1.0 - t_min) * rng.uniform();
    out.t_image = t;
    Latent<Real> eps(sample.z0.c, sample.z0.h, sample.z0.w);
    for (auto& x : eps.data) x = Real(rng.normal());

    std::optional<NodeId> m_node;
    if (out.used_m) {
        NodeId zc = model.embed_context(g, b, sample.context);
        m_node = model.project_context(g, b, zc, training, &rng);
    }

    const Vocab* vocab = nullptr;  // template built by caller when needed
    TokenSequence y_slot;
    if (sample.stage1) {
        y_slot = sample.y0;
    } else {
        // caption is the generation target: fully-masked template derived
        // from y0's key layout
        y_slot = sample.y0;
        for (size_t j = 0; j < y_slot.tokens.size(); ++j)
            if (y_slot.mask[j]) y_slot.tokens[j] = Vocab::kMaskTok;
    }
    (void)vocab;
    out.image = image_loss_node(g, model, b, sample.z0, y_slot, p, d, m_node, t, eps, lw.lambda_m);

    NodeId image_ctx;
    if (sample.stage1) {
        image_ctx = g.constant(1, model.cfg.latent_dim(), std::span<const Real>(sample.z0.data));
    } else if (m_node) {
        image_ctx = *m_node;
    } else {
        image_ctx = g.zeros(1, model.cfg.latent_dim());
    }
    out.text = text_loss_node(g, model, b, sample.y0, p, d, image_ctx, lw.K, rng, t_min);

    out.total = g.add_scalars({out.image, g.scale(out.text, Real(lw.lambda_text))});
    return out;
}

// ---- CFG velocity composition (nested three-scale form) ----
//
//   v̂ = v(∅,∅,∅) + s_d [v(d,∅,∅) − v(∅,∅,∅)]
//              + s_m [v(d,m,∅) − v(d,∅,∅)]
//              + s_p [v(d,m,p) − v(d,m,∅)]
// Absent conditions drop out of every branch and their bracket's scale
// is treated as 0. The matching condition enters the m-branches by
// mixing into the latent input with weight lambda_m. At most 4 forward
// evaluations; shared brackets are memoized.
template <class Real>
class CfgSampler {
public:
    CfgSampler(const Model<Real>& model, const Vocab& vocab, double lambda_m)
        : model_(model), lambda_m_(lambda_m), y_masked_(masked_template(vocab)) {}

    // Single conditioned velocity evaluation (eval mode, deterministic).
    Latent<Real> velocity(const Latent<Real>& z, double t, const std::vector<int>* p,
                          const std::vector<int>* d, const Latent<Real>* m) const {
        Graph<Real> g;
        auto b = model_.bind(g);
        NodeId z_node;
        if (m) {
            Latent<Real> zm(z.c, z.h, z.w);
            for (size_t i = 0; i < z.size(); ++i)
                zm.data[i] = Real(1.0 - lambda_m_) * z.data[i] + Real(lambda_m_) * m->data[i];
            z_node = g.constant(1, model_.cfg.latent_dim(), std::span<const Real>(zm.data));
        } else {
            z_node = g.constant(1, model_.cfg.latent_dim(), std::span<const Real>(z.data));
        }
        TextInput txt = build_text_input(model_.cfg, y_masked_.tokens, p, d);
        auto fr = model_.forward(g, b, z_node, txt, t);
        Latent<Real> v(z.c, z.h, z.w);
        v.data = g.val(fr.velocity);
        return v;
    }

    Latent<Real> cfg_velocity(const Latent<Real>& z, double t, const std::vector<int>* d,
                              const Latent<Real>* m, const std::vector<int>* p,
                              const GuidanceScales& scales) const {
        scales.validate();
        bool has_d = d != nullptr, has_m = m != nullptr, has_p = p != nullptr && !p->empty();
        double sd = has_d ? scales.s_d : 0.0;
        double sm = has_m ? scales.s_m : 0.0;
        double sp = has_p ? scales.s_p : 0.0;

        // branch key: which of (d, m, p) the evaluation sees
        std::map<int, Latent<Real>> memo;
        auto eval = [&](bool wd, bool wm, bool wp) -> const Latent<Real>& {
            int key = (wd ? 1 : 0) | (wm ? 2 : 0) | (wp ? 4 : 0);
            auto it = memo.find(key);
            if (it == memo.end())
                it = memo.emplace(key, velocity(z, t, wp ? p : nullptr, wd ? d : nullptr,
                                                wm ? m : nullptr))
                         .first;
            return it->second;
        };

        Latent<Real> v = eval(false, false, false);
        auto add_bracket = [&](double s, const Latent<Real>& hi, const Latent<Real>& lo) {
            if (s == 0.0) return;
            for (size_t i = 0; i < v.size(); ++i)
                v.data[i] += Real(s) * (hi.data[i] - lo.data[i]);
        };
        if (sd != 0.0) add_bracket(sd, eval(has_d, false, false), eval(false, false, false));
        if (sm != 0.0) add_bracket(sm, eval(has_d, has_m, false), eval(has_d, false, false));
        if (sp != 0.0) add_bracket(sp, eval(has_d, has_m, has_p), eval(has_d, has_m, false));
        return v;
    }

    const TokenSequence& caption_template() const { return y_masked_; }
    const Model<Real>& model() const { return model_; }
    double lambda_m() const { return lambda_m_; }

private:
    const Model<Real>& model_;
    double lambda_m_;
    TokenSequence y_masked_;
};

// ---- Euler PF-ODE integration, t = 1 -> 0 ----

template <class Real, class VelFn>
Latent<Real> integrate_pf_ode(Latent<Real> z, int steps, VelFn&& vel) {
    if (steps < 1) throw std::invalid_argument("integrate_pf_ode: steps must be >= 1");
    double dt = 1.0 / double(steps);
    for (int i = 0; i < steps; ++i) {
        double t = 1.0 - double(i) * dt;
        Latent<Real> v = vel(z, t);
        check_same_shape(z, v, "integrate_pf_ode");
        for (size_t j = 0; j < z.size(); ++j) z.data[j] -= Real(dt) * v.data[j];
    }
    return z;
}

// z ~ N(0, I); if m is present it is mixed in once at initialization;
// rng is consumed only for the initial Gaussian.
template <class Real>
Latent<Real> sample_image(const CfgSampler<Real>& sampler, const std::vector<int>* p,
                          const std::vector<int>* d, const Latent<Real>* m,
                          const GuidanceScales& scales, int steps, Rng& rng) {
    const ModelConfig& cfg = sampler.model().cfg;
    Latent<Real> z(cfg.c, cfg.h, cfg.w);
    for (auto& x : z.data) x = Real(rng.normal());
    if (m) {
        double lam = sampler.lambda_m();
        for (size_t i = 0; i < z.size(); ++i)
            z.data[i] = Real(1.0 - lam) * z.data[i] + Real(lam) * m->data[i];
    }
    return integrate_pf_ode(std::move(z), steps, [&](const Latent<Real>& zz, double t) {
        return sampler.cfg_velocity(zz, t, d, m, p, scales);
    });
}

// ---- greedy confidence-unmasking text sampler ----
//
// Starts from the all-masked template; each round commits the
// ceil(remaining / rounds-left) masked positions with the highest
// predicted-token confidence. Committed tokens outside the slot's value
// vocabulary are repaired to the slot's highest-probability legal token.
// Fully deterministic: no rng is consumed.
template <class Real>
StructuredCaption sample_text(const Model<Real>& model, const Vocab& vocab,
                              const std::vector<int>* p, const std::vector<int>* d,
                              const Latent<Real>* image_ctx, int steps,
                              TokenSequence* out_tokens = nullptr) {
    if (steps < 1) throw std::invalid_argument("sample_text: steps must be >= 1");
    TokenSequence y = masked_template(vocab);
    // value position -> attribute index (template layout order)
    std::vector<int> slot_attr(y.tokens.size(), -1);
    {
        int k = 0;
        for (size_t j = 0; j < y.tokens.size(); ++j)
            if (y.mask[j]) slot_attr[j] = k++;
    }
    const int n_values = kNumAttributes;
    Latent<Real> zeros_ctx(model.cfg.c, model.cfg.h, model.cfg.w);
    const Latent<Real>& ctx = image_ctx ? *image_ctx : zeros_ctx;

    int remaining = n_values;
    for (int round = 0; round < steps && remaining > 0; ++round) {
        int rounds_left = steps - round;
        int commit = (remaining + rounds_left - 1) / rounds_left;
        double t = double(remaining) / double(n_values);

        Graph<Real> g;
        auto b = model.bind(g);
        TextInput txt = build_text_input(model.cfg, y.tokens, p, d);
        auto fr = model.forward(g, b, std::span<const Real>(ctx.data), txt, t);
        const auto& logits = g.val(fr.logits);
        const int vsz = model.cfg.vocab;

        struct Cand {
            size_t pos;
            double conf;
            int token;
        };
        std::vector<Cand> cands;
        for (size_t j = 0; j < y.tokens.size(); ++j) {
            if (!(y.mask[j] && y.tokens[j] == Vocab::kMaskTok)) continue;
            const Real* lj = logits.data() + j * size_t(vsz);
            Real mx = lj[0];
            int arg = 0;
            for (int v = 1; v < vsz; ++v)
                if (lj[v] > mx) {
                    mx = lj[v];
                    arg = v;
                }
            double z = 0.0;
            for (int v = 0; v < vsz; ++v) z += std::exp(double(lj[v] - mx));
            double conf = 1.0 / z;  // softmax prob of the argmax token
            int token = arg;
            int attr = slot_attr[j];
            if (vocab.value_index_of_token(attr, token) < 0) {
                // slot repair: best legal token for this attribute
                const auto& vv = vocab.schema().value_vocab[size_t(attr)];
                Real best = -std::numeric_limits<Real>::infinity();
                for (const auto& w0 : vv) {
                    int tok = vocab.value_token(attr, w0);
                    if (lj[tok] > best) {
                        best = lj[tok];
                        token = tok;
                    }
                }
            }
            cands.push_back({j, conf, token});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& c) {
            return a.conf != c.conf ? a.conf > c.conf : a.pos < c.pos;
        });
        for (int i = 0; i < commit && i < int(cands.size()); ++i) {
            y.tokens[cands[size_t(i)].pos] = cands[size_t(i)].token;
            --remaining;
        }
    }
    if (out_tokens) *out_tokens = y;
    return parse_caption(detokenize(y, vocab), vocab.schema());
}

}  // namespace dualrec
