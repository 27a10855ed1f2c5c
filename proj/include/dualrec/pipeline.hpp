#pragma once

// Training stages (1: caption/latent warm-up, 2: matching-conditioned,
// 3: text-only fine-tune on augmented captions) and the PFITB / GOR
// inference loops. Everything is driven by explicit rng streams derived
// from the run seed, so runs are bitwise reproducible.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dualrec/diffusion.hpp"
#include "dualrec/model.hpp"
#include "dualrec/preference.hpp"
#include "dualrec/synthworld.hpp"

namespace dualrec {

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int stage = 1;
    int steps = 20000;  // stage defaults: 20000 / 10000 / 2000
    int batch = 2;
    double lr = 3e-5;
    double weight_decay = 1e-2;
    LossWeights loss;
    uint64_t seed = 0;
    int checkpoint_every = 1000;
    int log_every = 100;
    bool adam = false;  // adaptive-moments extension; default plain SGD
    double pref_temperature = 1.0;
    int pref_draws = 10;
    int augment_k = 5;  // augmented captions per outfit (stage 3)

    void validate() const {
        if (stage < 1 || stage > 3) throw PipelineError("train config: stage must be 1..3");
        if (steps < 0) throw PipelineError("train config: steps must be >= 0");
        if (batch < 1) throw PipelineError("train config: batch must be >= 1");
        if (lr <= 0.0) throw PipelineError("train config: learning rate must be > 0");
        if (weight_decay < 0.0) throw PipelineError("train config: weight decay must be >= 0");
        if (checkpoint_every < 1 || log_every < 1)
            throw PipelineError("train config: intervals must be >= 1");
        if (pref_draws < 1) throw PipelineError("train config: pref_draws must be >= 1");
        loss.validate();
    }
};

// Plain SGD with decoupled weight decay; optional Adam moments.
// Parameters whose gradient is exactly all-zero are skipped entirely
// (no decay either), so loss-untouched parameters stay bitwise frozen.
template <class Real>
class Optimizer {
public:
    explicit Optimizer(bool adam) : adam_(adam) {}

    void step(Model<Real>& model, const std::map<std::string, Tensor<Real>>& grads, Real lr,
              Real wd) {
        ++t_;
        for (auto& [name, p] : model.params) {
            const auto& g = grads.at(name).data;
            bool all_zero = true;
            for (Real x : g)
                if (x != Real(0)) {
                    all_zero = false;
                    break;
                }
            if (all_zero) continue;
            if (adam_) {
                auto& m = moments1_[name];
                auto& v = moments2_[name];
                if (m.empty()) {
                    m.assign(g.size(), Real(0));
                    v.assign(g.size(), Real(0));
                }
                const Real b1 = Real(0.9), b2 = Real(0.999), eps = Real(1e-8);
                Real c1 = Real(1) - Real(std::pow(double(b1), double(t_)));
                Real c2 = Real(1) - Real(std::pow(double(b2), double(t_)));
                for (size_t i = 0; i < g.size(); ++i) {
                    m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
                    v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
                    Real mh = m[i] / c1, vh = v[i] / c2;
                    p.data[i] -= lr * (mh / (Real(std::sqrt(double(vh))) + eps) + wd * p.data[i]);
                }
            } else {
                for (size_t i = 0; i < g.size(); ++i)
                    p.data[i] -= lr * (g[i] + wd * p.data[i]);
            }
        }
    }

private:
    bool adam_;
    long t_ = 0;
    std::map<std::string, std::vector<Real>> moments1_, moments2_;
};

namespace detail {

template <class Real>
Latent<Real> to_real(const Latentf& z) {
    Latent<Real> out(z.c, z.h, z.w);
    for (size_t i = 0; i < z.size(); ++i) out.data[i] = Real(z.data[i]);
    return out;
}

}  // namespace detail

template <class Real>
class Trainer {
public:
    Trainer(Model<Real>& model, const Dataset& ds, const Vocab& vocab, const TrainConfig& cfg)
        : model_(model), ds_(ds), vocab_(vocab), cfg_(cfg), rng_(cfg.seed, 10), opt_(cfg.adam) {
        cfg_.validate();
        for (const auto& of : ds_.outfits)
            if (of.split == "train") train_outfits_.push_back(of.id);
        if (train_outfits_.empty())  // tiny worlds: fall back to everything
            for (const auto& of : ds_.outfits) train_outfits_.push_back(of.id);
        if (cfg_.stage == 3) {
            Rng aug_rng(cfg_.seed, 20);
            for (int oid : train_outfits_) {
                const Outfit& of = ds_.outfit(oid);
                std::vector<StructuredCaption> caps;
                for (int iid : of.item_ids) caps.push_back(ds_.item(iid).caption);
                augmented_.push_back(augment_captions(
                    caps, ds_.item(of.item_ids[size_t(of.held_out)]).category, cfg_.augment_k,
                    aug_rng, ds_.schema));
            }
        }
    }

    // checkpoint_cb(step, model) fires every checkpoint_every steps and
    // after the final step; metrics (if given) receives CSV rows.
    void run(std::ostream* metrics = nullptr,
             const std::function<void(int, const Model<Real>&)>& checkpoint_cb = {}) {
        if (metrics) *metrics << "step,stage,image_loss,text_loss,joint_loss,mean_gap_norm\n";
        for (int step = 1; step <= cfg_.steps; ++step) {
            double image_sum = 0, text_sum = 0, joint_sum = 0;
            std::map<std::string, Tensor<Real>> grads;
            std::vector<Latent<Real>> batch_z0, batch_ctx_means;
            for (int bi = 0; bi < cfg_.batch; ++bi) {
                Graph<Real> g;
                auto b = model_.bind(g);
                NodeId loss;
                if (cfg_.stage == 3) {
                    loss = build_stage3_sample(g, b, &text_sum);
                    joint_sum = text_sum;
                } else {
                    TrainSample<Real> s = (cfg_.stage == 1) ? make_stage1_sample()
                                                            : make_stage2_sample();
                    auto jl = joint_loss(g, model_, b, s, cfg_.loss, rng_, true);
                    image_sum += double(g.val(jl.image)[0]);
                    text_sum += double(g.val(jl.text)[0]);
                    joint_sum += double(g.val(jl.total)[0]);
                    loss = jl.total;
                    batch_z0.push_back(s.z0);
                    if (!s.context.empty()) batch_ctx_means.push_back(mean_latent(s.context));
                }
                double lv = double(g.val(loss)[0]);
                if (!std::isfinite(lv))
                    throw PipelineError("training aborted: non-finite loss at step " +
                                        std::to_string(step));
                NodeId scaled = g.scale(loss, Real(1.0 / cfg_.batch));
                g.backward(scaled);
                model_.accumulate_grads(g, b, grads);
            }
            opt_.step(model_, grads, Real(cfg_.lr), Real(cfg_.weight_decay));
            check_finite(step);
            if (metrics && (step % cfg_.log_every == 0 || step == cfg_.steps)) {
                double gap = mean_gap_norm(batch_z0, batch_ctx_means);
                *metrics << step << "," << cfg_.stage << "," << image_sum / cfg_.batch << ","
                         << text_sum / cfg_.batch << "," << joint_sum / cfg_.batch << "," << gap
                         << "\n";
            }
            if (checkpoint_cb && (step % cfg_.checkpoint_every == 0 || step == cfg_.steps))
                checkpoint_cb(step, model_);
        }
    }

    // Diagnostic identity: mean(z0 + e0) - mean(mean-context + ec),
    // l2 norm over latent elements; 0 when no sample carried context.
    double mean_gap_norm(const std::vector<Latent<Real>>& z0s,
                         const std::vector<Latent<Real>>& ctx_means) const {
        if (z0s.empty() || ctx_means.empty()) return 0.0;
        Latent<Real> m0 = mean_latent(z0s);
        Latent<Real> mc = mean_latent(ctx_means);
        Latent<Real> a = add_role(m0, model_.role_e0());
        Latent<Real> c = add_role(mc, model_.role_ec());
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            double diff = double(a.data[i]) - double(c.data[i]);
            s += diff * diff;
        }
        return std::sqrt(s);
    }

private:
    TrainSample<Real> make_stage1_sample() {
        const Item& it = ds_.items[size_t(rng_.uniform_int(int(ds_.items.size())))];
        TrainSample<Real> s;
        s.z0 = detail::to_real<Real>(it.latent);
        s.y0 = tokenize(render(it.caption), vocab_);
        s.stage1 = true;
        return s;
    }

    TrainSample<Real> make_stage2_sample() {
        int oid = train_outfits_[size_t(rng_.uniform_int(int(train_outfits_.size())))];
        const Outfit& of = ds_.outfit(oid);
        const Item& held = ds_.item(of.item_ids[size_t(of.held_out)]);
        TrainSample<Real> s;
        s.z0 = detail::to_real<Real>(held.latent);
        s.y0 = tokenize(render(held.caption), vocab_);
        auto hist = ds_.history_captions(of.owner);
        if (!hist.empty()) {
            auto prof = sample_preference(frequency_scores(hist), cfg_.pref_temperature,
                                          cfg_.pref_draws, rng_);
            if (!prof.all_empty()) s.p = preference_tokens(prof, vocab_);
        }
        s.d = task_definition_tokens(held.category, vocab_);
        for (size_t j = 0; j < of.item_ids.size(); ++j)
            if (int(j) != of.held_out)
                s.context.push_back(detail::to_real<Real>(ds_.item(of.item_ids[j]).latent));
        return s;
    }

    // Text loss only; drop-draw order mirrors joint_loss (m, p, d) so the
    // conditioning distribution matches stage 2.
    NodeId build_stage3_sample(Graph<Real>& g, const typename Model<Real>::Bound& b,
                               double* text_sum) {
        size_t pick = size_t(rng_.uniform_int(int(train_outfits_.size())));
        int oid = train_outfits_[pick];
        const Outfit& of = ds_.outfit(oid);
        const auto& augs = augmented_[pick];
        const StructuredCaption& cap = augs[size_t(rng_.uniform_int(int(augs.size())))];
        const Item& held = ds_.item(of.item_ids[size_t(of.held_out)]);

        bool keep_m = !rng_.bernoulli(cfg_.loss.drop_m);
        bool keep_p = !rng_.bernoulli(cfg_.loss.drop_p);
        bool keep_d = !rng_.bernoulli(cfg_.loss.drop_d);

        std::optional<std::vector<int>> p;
        auto hist = ds_.history_captions(of.owner);
        if (!hist.empty()) {
            auto prof = sample_preference(frequency_scores(hist), cfg_.pref_temperature,
                                          cfg_.pref_draws, rng_);
            if (!prof.all_empty()) p = preference_tokens(prof, vocab_);
        }
        std::vector<int> d = task_definition_tokens(held.category, vocab_);
        std::vector<Latent<Real>> context;
        for (size_t j = 0; j < of.item_ids.size(); ++j)
            if (int(j) != of.held_out)
                context.push_back(detail::to_real<Real>(ds_.item(of.item_ids[j]).latent));

        NodeId image_ctx;
        if (keep_m && !context.empty()) {
            NodeId zc = model_.embed_context(g, b, context);
            image_ctx = model_.project_context(g, b, zc, true, &rng_);
        } else {
            image_ctx = g.zeros(1, model_.cfg.latent_dim());
        }
        TokenSequence y0 = tokenize(render(cap), vocab_);
        const std::vector<int>* pp = (keep_p && p) ? &*p : nullptr;
        const std::vector<int>* dd = keep_d ? &d : nullptr;
        NodeId loss = text_loss_node(g, model_, b, y0, pp, dd, image_ctx, cfg_.loss.K, rng_);
        *text_sum += double(g.val(loss)[0]);
        return loss;
    }

    void check_finite(int step) const {
        for (const auto& [name, t] : model_.params)
            for (Real x : t.data)
                if (!std::isfinite(double(x)))
                    throw PipelineError("training aborted: non-finite parameter " + name +
                                        " at step " + std::to_string(step));
    }

    Model<Real>& model_;
    const Dataset& ds_;
    const Vocab& vocab_;
    TrainConfig cfg_;
    Rng rng_;
    Optimizer<Real> opt_;
    std::vector<int> train_outfits_;
    std::vector<std::vector<StructuredCaption>> augmented_;
};

// ---- inference ----

struct InferParams {
    GuidanceScales scales;
    int image_steps = 50;
    int text_steps = 8;
    double lambda_m = 0.1;
    double pref_temperature = 1.0;
    int pref_draws = 10;
};

template <class Real>
struct GeneratedItem {
    Latent<Real> latent;
    StructuredCaption caption;
    TokenSequence tokens;
    int round = 0;
};

// Shared condition assembly: p from the user's history (rng stream 1 of
// the request seed), absent for empty histories.
template <class Real>
std::optional<std::vector<int>> build_preference(const Dataset& ds, const Vocab& vocab,
                                                 int user_id, const InferParams& ip,
                                                 uint64_t seed) {
    auto hist = ds.history_captions(user_id);
    if (hist.empty()) return std::nullopt;
    Rng rng(seed, 1);
    auto prof = sample_preference(frequency_scores(hist), ip.pref_temperature, ip.pref_draws, rng);
    if (prof.all_empty()) return std::nullopt;
    return preference_tokens(prof, vocab);
}

// One generation round: latent via the CFG Euler sampler (rng stream
// 100 + round), caption via the deterministic greedy text sampler whose
// image branch sees m (or zeros).
template <class Real>
GeneratedItem<Real> generate_item(const Model<Real>& model, const Vocab& vocab,
                                  const std::optional<std::vector<int>>& p,
                                  const std::vector<int>& d, const Latent<Real>* m,
                                  const InferParams& ip, uint64_t seed, int round) {
    CfgSampler<Real> sampler(model, vocab, ip.lambda_m);
    const std::vector<int>* pp = p ? &*p : nullptr;
    Rng img_rng(seed, 100 + uint64_t(round));
    GeneratedItem<Real> out;
    out.round = round;
    out.latent = sample_image(sampler, pp, &d, m, ip.scales, ip.image_steps, img_rng);
    out.caption = sample_text(model, vocab, pp, &d, m, ip.text_steps, &out.tokens);
    return out;
}

template <class Real>
GeneratedItem<Real> infer_pfitb(const Model<Real>& model, const Dataset& ds, const Vocab& vocab,
                                int user_id, int outfit_id, const InferParams& ip, uint64_t seed,
                                bool use_m = true) {
    const Outfit& of = ds.outfit(outfit_id);
    ds.user(user_id);  // id validation
    const Item& held = ds.item(of.item_ids[size_t(of.held_out)]);
    auto p = build_preference<Real>(ds, vocab, user_id, ip, seed);
    std::vector<int> d = task_definition_tokens(held.category, vocab);
    std::optional<Latent<Real>> m;
    if (use_m) {
        std::vector<Latent<Real>> context;
        for (size_t j = 0; j < of.item_ids.size(); ++j)
            if (int(j) != of.held_out)
                context.push_back(detail::to_real<Real>(ds.item(of.item_ids[j]).latent));
        if (!context.empty()) m = model.matching_condition(context);
    }
    return generate_item(model, vocab, p, d, m ? &*m : nullptr, ip, seed, 0);
}

// n sequential rounds; round 0 has no matching condition, round i >= 1
// builds m from the i previously generated latents.
template <class Real>
std::vector<GeneratedItem<Real>> infer_gor(const Model<Real>& model, const Dataset& ds,
                                           const Vocab& vocab, int user_id,
                                           const std::vector<std::string>& categories,
                                           const InferParams& ip, uint64_t seed,
                                           std::vector<int>* context_sizes = nullptr) {
    if (categories.empty()) throw PipelineError("gor: category list must be non-empty");
    ds.user(user_id);
    auto p = build_preference<Real>(ds, vocab, user_id, ip, seed);
    std::vector<GeneratedItem<Real>> out;
    std::vector<Latent<Real>> generated;
    for (size_t i = 0; i < categories.size(); ++i) {
        std::vector<int> d = task_definition_tokens(categories[i], vocab);
        std::optional<Latent<Real>> m;
        if (!generated.empty()) m = model.matching_condition(generated);
        if (context_sizes) context_sizes->push_back(int(generated.size()));
        out.push_back(
            generate_item(model, vocab, p, d, m ? &*m : nullptr, ip, seed, int(i)));
        generated.push_back(out.back().latent);
    }
    return out;
}

}  // namespace dualrec
