#pragma once

// Dual-branch diffusion transformer: named parameter store, condition
// assembly (role embeddings, context projection, text-input layout),
// and the forward pass producing a velocity prediction (image branch)
// and per-position token logits (text branch) in one graph build.
//
// The text input is the concatenation [y_t ; p ; d]. The p segment is
// variable-length up to cap_pref; an absent segment is a single <null>
// token. Positions are segment-based so each segment keeps stable
// positional embeddings regardless of the others' lengths.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualrec/captions.hpp"
#include "dualrec/graph.hpp"
#include "dualrec/latent.hpp"
#include "dualrec/rng.hpp"

namespace dualrec {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int depth = 2;
    int width = 64;
    int heads = 4;
    int c = 4, h = 8, w = 8;  // latent shape
    int patch = 2;
    int vocab = 0;  // set from Vocab::size()
    int len_caption = kCaptionLen;
    int cap_pref = 64;  // capacity of the preference segment
    int len_taskdef = kTaskDefLen;
    double dropout = 0.1;  // context-projection dropout
    uint64_t seed = 0;

    static constexpr int kTimeFeatures = 16;

    int latent_dim() const { return c * h * w; }
    int patch_dim() const { return c * patch * patch; }
    int n_img_tokens() const { return (h / patch) * (w / patch); }
    int text_capacity() const { return len_caption + cap_pref + len_taskdef; }

    void validate() const {
        if (depth < 1 || width < 1 || heads < 1 || vocab < 1)
            throw ModelError("model config: depth/width/heads/vocab must be >= 1");
        if (width % heads != 0) throw ModelError("model config: heads must divide width");
        if (c < 1 || h < 1 || w < 1 || patch < 1)
            throw ModelError("model config: bad latent/patch shape");
        if (h % patch != 0 || w % patch != 0)
            throw ModelError("model config: patch must divide latent height and width");
        if (len_caption < 1 || cap_pref < 1 || len_taskdef < 1)
            throw ModelError("model config: bad text segment lengths");
        if (dropout < 0.0 || dropout >= 1.0) throw ModelError("model config: bad dropout rate");
    }
};

template <class Real>
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<Real> data;
};

// Enumerates every named parameter with its shape, in declaration order.
// The store itself is a std::map, so serialization order is lexicographic.
template <class F>
void for_each_param(const ModelConfig& cfg, F&& f) {
    const int d = cfg.width, v = cfg.vocab, dz = cfg.latent_dim();
    f("embed.token.w", v, d);
    f("embed.pos_img.w", cfg.n_img_tokens(), d);
    f("embed.pos_text.w", cfg.text_capacity(), d);
    f("embed.time.w", ModelConfig::kTimeFeatures, d);
    f("embed.time.b", 1, d);
    f("patch.in.w", cfg.patch_dim(), d);
    f("patch.in.b", 1, d);
    for (int i = 0; i < cfg.depth; ++i) {
        for (const char* br : {"img", "text"}) {
            std::string base = "block" + std::to_string(i) + "." + br + ".";
            for (const char* ln : {"ln1", "ln2", "ln3"}) {
                f(base + ln + ".g", 1, d);
                f(base + ln + ".b", 1, d);
            }
            for (const char* at : {"attn", "xattn"}) {
                for (const char* proj : {"q", "k", "v", "o"}) {
                    f(base + at + "." + proj + ".w", d, d);
                    f(base + at + "." + proj + ".b", 1, d);
                }
            }
            f(base + "ff.w1", d, 4 * d);
            f(base + "ff.b1", 1, 4 * d);
            f(base + "ff.w2", 4 * d, d);
            f(base + "ff.b2", 1, d);
        }
    }
    f("head.img_ln.g", 1, d);
    f("head.img_ln.b", 1, d);
    f("head.vel.w", d, cfg.patch_dim());
    f("head.vel.b", 1, cfg.patch_dim());
    f("head.text_ln.g", 1, d);
    f("head.text_ln.b", 1, d);
    f("head.logit.w", d, v);
    f("head.logit.b", 1, v);
    f("role.e0", 1, cfg.c);
    f("role.ec", 1, cfg.c);
    f("ctx.w1", dz, dz);
    f("ctx.b1", 1, dz);
    f("ctx.w2", dz, dz);
    f("ctx.b2", 1, dz);
}

inline long param_count(const ModelConfig& cfg) {
    long n = 0;
    for_each_param(cfg, [&](const std::string&, int r, int c) { n += long(r) * c; });
    return n;
}

// Text-branch input: tokens plus segment-based positional indices.
struct TextInput {
    std::vector<int> tokens;
    std::vector<int> pos;
    bool has_p = false;
    bool has_d = false;
};

inline TextInput build_text_input(const ModelConfig& cfg, const std::vector<int>& y_tokens,
                                  const std::vector<int>* p_tokens,
                                  const std::vector<int>* d_tokens) {
    if (int(y_tokens.size()) != cfg.len_caption)
        throw ModelError("text input: caption segment must have length len_caption");
    TextInput in;
    for (int j = 0; j < cfg.len_caption; ++j) {
        in.tokens.push_back(y_tokens[size_t(j)]);
        in.pos.push_back(j);
    }
    const int p_base = cfg.len_caption;
    if (p_tokens && !p_tokens->empty()) {
        if (int(p_tokens->size()) > cfg.cap_pref)
            throw ModelError("text input: preference segment exceeds capacity");
        in.has_p = true;
        for (size_t j = 0; j < p_tokens->size(); ++j) {
            in.tokens.push_back((*p_tokens)[j]);
            in.pos.push_back(p_base + int(j));
        }
    } else {
        in.tokens.push_back(Vocab::kNullTok);
        in.pos.push_back(p_base);
    }
    const int d_base = cfg.len_caption + cfg.cap_pref;
    if (d_tokens && !d_tokens->empty()) {
        if (int(d_tokens->size()) != cfg.len_taskdef)
            throw ModelError("text input: task segment must have length len_taskdef");
        in.has_d = true;
        for (size_t j = 0; j < d_tokens->size(); ++j) {
            in.tokens.push_back((*d_tokens)[j]);
            in.pos.push_back(d_base + int(j));
        }
    } else {
        in.tokens.push_back(Vocab::kNullTok);
        in.pos.push_back(d_base);
    }
    return in;
}

// z̃0 = z0 + e0 (per-channel broadcast). Numeric form, outside any graph.
template <class Real>
Latent<Real> add_role(const Latent<Real>& z, std::span<const Real> e) {
    if (int(e.size()) != z.c) throw ModelError("add_role: embedding size != channels");
    Latent<Real> out = z;
    int hw = z.h * z.w;
    for (int ch = 0; ch < z.c; ++ch)
        for (int k = 0; k < hw; ++k) out.data[size_t(ch) * hw + k] += e[size_t(ch)];
    return out;
}

template <class Real>
Latent<Real> mean_latent(const std::vector<Latent<Real>>& latents) {
    if (latents.empty()) throw ModelError("mean_latent: empty context");
    Latent<Real> out(latents[0].c, latents[0].h, latents[0].w);
    for (const auto& z : latents) {
        check_same_shape(out, z, "mean_latent");
        for (size_t i = 0; i < out.size(); ++i) out.data[i] += z.data[i];
    }
    for (auto& x : out.data) x /= Real(latents.size());
    return out;
}

template <class Real>
class Model {
public:
    ModelConfig cfg;
    std::map<std::string, Tensor<Real>> params;

    explicit Model(const ModelConfig& config) : cfg(config) {
        cfg.validate();
        for_each_param(cfg, [&](const std::string& name, int r, int c) {
            Tensor<Real> t;
            t.rows = r;
            t.cols = c;
            t.data.assign(size_t(r) * c, Real(0));
            params.emplace(name, std::move(t));
        });
        // Each tensor gets its own stream keyed by map (lexicographic)
        // order, so e0 and ec are initialized from distinct streams.
        uint64_t stream = 1000;
        for (auto& [name, t] : params) {
            Rng rng(cfg.seed, stream++);
            if (ends_with(name, ".g")) {
                for (auto& x : t.data) x = Real(1);
            } else if (ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2")) {
                // zeros
            } else {
                for (auto& x : t.data) x = Real(0.02) * Real(rng.normal());
            }
        }
        build_patch_maps();
    }

    const Tensor<Real>& param(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ModelError("unknown parameter: " + name);
        return it->second;
    }
    Tensor<Real>& param(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw ModelError("unknown parameter: " + name);
        return it->second;
    }

    // ---- graph binding ----

    struct Bound {
        std::map<std::string, NodeId> ids;
        NodeId at(const std::string& name) const {
            auto it = ids.find(name);
            if (it == ids.end()) throw ModelError("unbound parameter: " + name);
            return it->second;
        }
    };

    Bound bind(Graph<Real>& g) const {
        Bound b;
        for (const auto& [name, t] : params)
            b.ids[name] = g.leaf(t.rows, t.cols, std::span<const Real>(t.data));
        return b;
    }

    // Adds the graph-accumulated gradients into `grads` (same shapes as
    // params; missing entries are created zeroed).
    void accumulate_grads(const Graph<Real>& g, const Bound& b,
                          std::map<std::string, Tensor<Real>>& grads) const {
        for (const auto& [name, t] : params) {
            auto& gt = grads[name];
            if (gt.data.empty()) {
                gt.rows = t.rows;
                gt.cols = t.cols;
                gt.data.assign(t.data.size(), Real(0));
            }
            const auto& ng = g.at(b.at(name)).grad;
            for (size_t i = 0; i < gt.data.size(); ++i) gt.data[i] += ng[i];
        }
    }

    // ---- condition assembly ----

    // z̃c node for a context set: constant mean latent plus the learnable
    // per-channel role embedding e_c.
    NodeId embed_context(Graph<Real>& g, const Bound& b,
                         const std::vector<Latent<Real>>& context) const {
        Latent<Real> mean = mean_latent(context);
        if (mean.c != cfg.c || mean.h != cfg.h || mean.w != cfg.w)
            throw ModelError("embed_context: context latent shape mismatch");
        NodeId zc = g.constant(1, cfg.latent_dim(), std::span<const Real>(mean.data));
        return g.add_channel(zc, b.at("role.ec"), cfg.c, cfg.h * cfg.w);
    }

    // Two-layer MLP with leaky rectifier and (training-only) dropout.
    NodeId project_context(Graph<Real>& g, const Bound& b, NodeId zc, bool training,
                           Rng* drop_rng) const {
        NodeId h1 = g.linear(zc, b.at("ctx.w1"), b.at("ctx.b1"));
        NodeId a = g.leaky_relu(h1, Real(0.01));
        if (training && cfg.dropout > 0.0) {
            if (!drop_rng) throw ModelError("project_context: training mode needs an rng");
            a = g.dropout(a, Real(cfg.dropout), *drop_rng, true);
        }
        return g.linear(a, b.at("ctx.w2"), b.at("ctx.b2"));
    }

    // Numeric eval-mode m = project(mean(context) + e_c); deterministic.
    Latent<Real> matching_condition(const std::vector<Latent<Real>>& context) const {
        Graph<Real> g;
        Bound b;
        // bind only what this path touches
        for (const char* name : {"role.ec", "ctx.w1", "ctx.b1", "ctx.w2", "ctx.b2"}) {
            const auto& t = param(name);
            b.ids[name] = g.leaf(t.rows, t.cols, std::span<const Real>(t.data));
        }
        NodeId m = project_context(g, b, embed_context(g, b, context), false, nullptr);
        Latent<Real> out(cfg.c, cfg.h, cfg.w);
        out.data = g.val(m);
        return out;
    }

    std::span<const Real> role_e0() const { return std::span<const Real>(param("role.e0").data); }
    std::span<const Real> role_ec() const { return std::span<const Real>(param("role.ec").data); }

    // ---- forward ----

    struct ForwardResult {
        NodeId velocity;  // 1 x (C*H*W)
        NodeId logits;    // text_len x V
        int text_len = 0;
    };

    ForwardResult forward(Graph<Real>& g, const Bound& b, std::span<const Real> z_flat,
                          const TextInput& txt, double t) const {
        if (int(z_flat.size()) != cfg.latent_dim())
            throw ModelError("forward: latent size mismatch");
        return forward(g, b, g.constant(1, cfg.latent_dim(), z_flat), txt, t);
    }

    // Core forward; z_node may be any 1 x (C*H*W) node (e.g. a noised
    // latent mixed with the matching condition) so gradients flow through.
    ForwardResult forward(Graph<Real>& g, const Bound& b, NodeId z_node, const TextInput& txt,
                          double t) const {
        if (t < 0.0 || t > 1.0) throw ModelError("forward: t outside [0,1]");
        if (g.at(z_node).rows != 1 || g.at(z_node).cols != cfg.latent_dim())
            throw ModelError("forward: latent node shape mismatch");
        if (txt.tokens.size() != txt.pos.size() || txt.tokens.empty() ||
            int(txt.tokens.size()) > cfg.text_capacity())
            throw ModelError("forward: bad text input");
        for (int tok : txt.tokens)
            if (tok < 0 || tok >= cfg.vocab) throw ModelError("forward: token out of vocab");

        const int d = cfg.width;
        // time conditioning: sinusoidal features through an affine map,
        // added to every token of both branches
        std::vector<Real> tf(size_t(ModelConfig::kTimeFeatures));
        for (int j = 0; j < ModelConfig::kTimeFeatures / 2; ++j) {
            double freq = std::exp(std::log(10000.0) * double(j) /
                                   double(ModelConfig::kTimeFeatures / 2 - 1));
            tf[size_t(2 * j)] = Real(std::sin(t * freq));
            tf[size_t(2 * j + 1)] = Real(std::cos(t * freq));
        }
        NodeId tfeat = g.constant(1, ModelConfig::kTimeFeatures, std::span<const Real>(tf));
        NodeId temb = g.linear(tfeat, b.at("embed.time.w"), b.at("embed.time.b"));

        // image branch: patchify -> embed -> +pos +time
        NodeId ptoks = g.reindex(z_node, patch_src_, cfg.n_img_tokens(), cfg.patch_dim());
        NodeId x_img = g.linear(ptoks, b.at("patch.in.w"), b.at("patch.in.b"));
        x_img = g.add(x_img, b.at("embed.pos_img.w"));
        x_img = g.add_rowvec(x_img, temb);

        // text branch: token + positional embeddings + time
        NodeId x_txt = g.rows_gather(b.at("embed.token.w"), txt.tokens);
        x_txt = g.add(x_txt, g.rows_gather(b.at("embed.pos_text.w"), txt.pos));
        x_txt = g.add_rowvec(x_txt, temb);

        for (int i = 0; i < cfg.depth; ++i) {
            const std::string bi = "block" + std::to_string(i) + ".img.";
            const std::string bt = "block" + std::to_string(i) + ".text.";
            x_img = self_block(g, b, bi, x_img);
            x_txt = self_block(g, b, bt, x_txt);
            // bidirectional cross-branch attention
            NodeId a_img = g.layernorm(x_img, b.at(bi + "ln2.g"), b.at(bi + "ln2.b"));
            NodeId a_txt = g.layernorm(x_txt, b.at(bt + "ln2.g"), b.at(bt + "ln2.b"));
            x_img = g.add(x_img, attn_proj(g, b, bi + "xattn.", a_img, a_txt));
            x_txt = g.add(x_txt, attn_proj(g, b, bt + "xattn.", a_txt, a_img));
            x_img = ff_block(g, b, bi, x_img);
            x_txt = ff_block(g, b, bt, x_txt);
        }

        ForwardResult out;
        NodeId vi = g.layernorm(x_img, b.at("head.img_ln.g"), b.at("head.img_ln.b"));
        NodeId vtok = g.linear(vi, b.at("head.vel.w"), b.at("head.vel.b"));
        out.velocity = g.reindex(vtok, unpatch_src_, 1, cfg.latent_dim());
        NodeId ti = g.layernorm(x_txt, b.at("head.text_ln.g"), b.at("head.text_ln.b"));
        out.logits = g.linear(ti, b.at("head.logit.w"), b.at("head.logit.b"));
        out.text_len = int(txt.tokens.size());
        (void)d;
        return out;
    }

private:
    static bool ends_with(const std::string& s, const std::string& suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    }

    NodeId self_block(Graph<Real>& g, const Bound& b, const std::string& base, NodeId x) const {
        NodeId a = g.layernorm(x, b.at(base + "ln1.g"), b.at(base + "ln1.b"));
        return g.add(x, attn_proj(g, b, base + "attn.", a, a));
    }

    NodeId attn_proj(Graph<Real>& g, const Bound& b, const std::string& base, NodeId q_in,
                     NodeId kv_in) const {
        NodeId q = g.linear(q_in, b.at(base + "q.w"), b.at(base + "q.b"));
        NodeId k = g.linear(kv_in, b.at(base + "k.w"), b.at(base + "k.b"));
        NodeId v = g.linear(kv_in, b.at(base + "v.w"), b.at(base + "v.b"));
        NodeId att = g.attention(q, k, v, cfg.heads);
        return g.linear(att, b.at(base + "o.w"), b.at(base + "o.b"));
    }

    NodeId ff_block(Graph<Real>& g, const Bound& b, const std::string& base, NodeId x) const {
        NodeId a = g.layernorm(x, b.at(base + "ln3.g"), b.at(base + "ln3.b"));
        NodeId h1 = g.gelu(g.linear(a, b.at(base + "ff.w1"), b.at(base + "ff.b1")));
        return g.add(x, g.linear(h1, b.at(base + "ff.w2"), b.at(base + "ff.b2")));
    }

    void build_patch_maps() {
        const int p = cfg.patch, gw = cfg.w / p;
        patch_src_.resize(size_t(cfg.latent_dim()));
        unpatch_src_.resize(size_t(cfg.latent_dim()));
        for (int tok = 0; tok < cfg.n_img_tokens(); ++tok) {
            int ph = tok / gw, pw = tok % gw;
            for (int ch = 0; ch < cfg.c; ++ch)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx) {
                        int tok_elem = tok * cfg.patch_dim() + (ch * p + dy) * p + dx;
                        int flat = ch * cfg.h * cfg.w + (ph * p + dy) * cfg.w + (pw * p + dx);
                        patch_src_[size_t(tok_elem)] = flat;
                        unpatch_src_[size_t(flat)] = tok_elem;
                    }
        }
    }

    std::vector<int> patch_src_;    // token-major element -> flat latent index
    std::vector<int> unpatch_src_;  // inverse
};

// ---- checkpoint file: magic "DDFR", version, config, named f32 tensors
// in lexicographic name order; bit-exact round trip ----

namespace detail {

inline void put_u32(std::ostream& os, uint32_t x) {
    char b[4] = {char(x & 0xff), char((x >> 8) & 0xff), char((x >> 16) & 0xff),
                 char((x >> 24) & 0xff)};
    os.write(b, 4);
}
inline void put_u64(std::ostream& os, uint64_t x) {
    put_u32(os, uint32_t(x & 0xffffffffULL));
    put_u32(os, uint32_t(x >> 32));
}
inline void put_i32(std::ostream& os, int32_t x) { put_u32(os, uint32_t(x)); }
inline void put_f32(std::ostream& os, float x) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    put_u32(os, u);
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ModelError("checkpoint: truncated file");
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t lo = get_u32(is);
    uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}
inline int32_t get_i32(std::istream& is) { return int32_t(get_u32(is)); }
inline float get_f32(std::istream& is) {
    uint32_t u = get_u32(is);
    float x;
    std::memcpy(&x, &u, 4);
    return x;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(const Model<Real>& model, std::ostream& os) {
    os.write("DDFR", 4);
    detail::put_u32(os, kCheckpointVersion);
    const ModelConfig& c = model.cfg;
    for (int x : {c.depth, c.width, c.heads, c.c, c.h, c.w, c.patch, c.vocab, c.len_caption,
                  c.cap_pref, c.len_taskdef})
        detail::put_i32(os, x);
    detail::put_f32(os, float(c.dropout));
    detail::put_u64(os, c.seed);
    detail::put_u32(os, uint32_t(model.params.size()));
    for (const auto& [name, t] : model.params) {  // std::map: lexicographic
        detail::put_u32(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        detail::put_i32(os, t.rows);
        detail::put_i32(os, t.cols);
        for (Real x : t.data) detail::put_f32(os, float(x));
    }
    if (!os) throw ModelError("checkpoint: write failed");
}

template <class Real>
void save_checkpoint(const Model<Real>& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ModelError("checkpoint: cannot open for writing: " + path);
    save_checkpoint(model, f);
}

template <class Real = float>
Model<Real> load_checkpoint(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DDFR") throw ModelError("checkpoint: bad magic");
    uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion) throw ModelError("checkpoint: unsupported version");
    ModelConfig c;
    c.depth = detail::get_i32(is);
    c.width = detail::get_i32(is);
    c.heads = detail::get_i32(is);
    c.c = detail::get_i32(is);
    c.h = detail::get_i32(is);
    c.w = detail::get_i32(is);
    c.patch = detail::get_i32(is);
    c.vocab = detail::get_i32(is);
    c.len_caption = detail::get_i32(is);
    c.cap_pref = detail::get_i32(is);
    c.len_taskdef = detail::get_i32(is);
    c.dropout = double(detail::get_f32(is));
    c.seed = detail::get_u64(is);
    Model<Real> model(c);
    uint32_t n = detail::get_u32(is);
    if (n != model.params.size()) throw ModelError("checkpoint: tensor count mismatch");
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t len = detail::get_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), std::streamsize(len));
        if (!is) throw ModelError("checkpoint: truncated name");
        auto& t = model.param(name);
        if (t.rows != detail::get_i32(is) || t.cols != detail::get_i32(is))
            throw ModelError("checkpoint: shape mismatch for " + name);
        for (auto& x : t.data) x = Real(detail::get_f32(is));
    }
    return model;
}

template <class Real = float>
Model<Real> load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ModelError("checkpoint: cannot open: " + path);
    return load_checkpoint<Real>(f);
}

}  // namespace dualrec
