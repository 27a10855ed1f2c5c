#pragma once

// Synthetic fashion world: items, outfits, users and interaction histories
// generated from a seed, together with the fixed linear attribute->latent
// map W that powers the exact oracles (decode, compatibility). W is
// block-diagonal per attribute over the flattened latent, so decoding is
// an independent nearest-column search per attribute.

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualrec/base64.hpp"
#include "dualrec/captions.hpp"
#include "dualrec/latent.hpp"
#include "dualrec/preference.hpp"
#include "dualrec/rng.hpp"

namespace dualrec {

struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AugmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct WorldSpec {
    std::array<int, kNumAttributes> vocab_sizes = {8, 6, 8, 5};
    int c = 4, h = 8, w = 8;
    int n_items = 1000;
    int n_users = 200;
    int n_outfits = 500;
    int outfit_size = 4;
    double eta = 0.05;  // latent noise level
    uint64_t seed = 0;
    double eval_fraction = 0.2;  // outfits held out from training

    void validate() const {
        if (n_items < 1 || n_users < 1 || n_outfits < 1 || outfit_size < 1)
            throw SpecError("world spec: all counts must be >= 1");
        if (c < 1 || h < 1 || w < 1) throw SpecError("world spec: bad latent shape");
        if (c * h * w < kNumAttributes) throw SpecError("world spec: latent too small");
        if (eta < 0.0) throw SpecError("world spec: eta must be >= 0");
        for (int k = 0; k < kNumAttributes; ++k)
            if (vocab_sizes[size_t(k)] < 1) throw SpecError("world spec: empty vocab");
        if (eval_fraction < 0.0 || eval_fraction >= 1.0)
            throw SpecError("world spec: eval_fraction outside [0,1)");
    }
};

struct Item {
    int id = 0;
    StructuredCaption caption;
    Latentf latent;
    std::string category;
};

struct Outfit {
    int id = 0;
    std::vector<int> item_ids;
    std::string style;
    int owner = 0;      // user whose preferences shaped the members
    int held_out = 0;   // designated fill-in-the-blank slot
    std::string split;  // "train" | "eval"
};

struct User {
    int id = 0;
    std::array<std::vector<double>, kNumAttributes> pref;  // distribution over schema vocab
    std::vector<int> history;                              // item ids
};

inline const std::vector<std::string>& default_categories() {
    static const std::vector<std::string> c = {"top", "bottom", "shoes", "bag", "hat"};
    return c;
}

class Dataset {
public:
    WorldSpec spec;
    AttributeSchema schema;
    std::vector<std::string> categories;
    std::vector<float> map_w;  // concatenated per-attribute blocks
    double eta_max = 0.0;
    std::vector<Item> items;
    std::vector<Outfit> outfits;
    std::vector<User> users;

    int latent_dim() const { return spec.c * spec.h * spec.w; }
    int block_len() const { return latent_dim() / kNumAttributes; }
    int block_offset(int k) const { return k * block_len(); }

    const float* column(int k, int value_index) const {
        // column for value v of attribute k, length block_len()
        int off = 0;
        for (int j = 0; j < k; ++j) off += block_len() * spec.vocab_sizes[size_t(j)];
        return map_w.data() + off + size_t(value_index) * block_len();
    }

    Latentf encode_exact(const StructuredCaption& caption) const {
        caption.validate(schema);
        Latentf z(spec.c, spec.h, spec.w);
        for (int k = 0; k < kNumAttributes; ++k) {
            int vi = schema.value_index(k, caption.values[size_t(k)]);
            const float* col = column(k, vi);
            float* dst = z.data.data() + block_offset(k);
            for (int i = 0; i < block_len(); ++i) dst[i] = col[i];
        }
        return z;
    }

    Latentf encode_item(const StructuredCaption& caption, Rng& rng) const {
        return encode_item(caption, rng, spec.eta);
    }

    Latentf encode_item(const StructuredCaption& caption, Rng& rng, double eta) const {
        Latentf z = encode_exact(caption);
        if (eta > 0.0)
            for (auto& x : z.data) x += float(eta * rng.normal());
        return z;
    }

    // Exact nearest-column decode per attribute; ties keep the earliest
    // value in vocab order.
    StructuredCaption oracle_decode(const Latentf& latent) const {
        StructuredCaption c;
        for (int k = 0; k < kNumAttributes; ++k) {
            const float* slice = latent.data.data() + block_offset(k);
            double best = 0.0;
            int best_v = -1;
            for (int v = 0; v < spec.vocab_sizes[size_t(k)]; ++v) {
                const float* col = column(k, v);
                double d = 0.0;
                for (int i = 0; i < block_len(); ++i) {
                    double diff = double(slice[i]) - double(col[i]);
                    d += diff * diff;
                }
                if (best_v < 0 || d < best) {
                    best = d;
                    best_v = v;
                }
            }
            c.values[size_t(k)] = schema.value_vocab[size_t(k)][size_t(best_v)];
        }
        return c;
    }

    const Item& item(int id) const {
        if (id < 0 || id >= int(items.size())) throw SpecError("unknown item id");
        return items[size_t(id)];
    }
    const Outfit& outfit(int id) const {
        if (id < 0 || id >= int(outfits.size())) throw SpecError("unknown outfit id");
        return outfits[size_t(id)];
    }
    const User& user(int id) const {
        if (id < 0 || id >= int(users.size())) throw SpecError("unknown user id");
        return users[size_t(id)];
    }

    std::vector<StructuredCaption> history_captions(int user_id) const {
        std::vector<StructuredCaption> out;
        for (int iid : user(user_id).history) out.push_back(item(iid).caption);
        return out;
    }
};

// 1 if all captions share the Clothing Fashion Style value, otherwise the
// fraction agreeing with the modal style.
inline double oracle_compatibility(const std::vector<StructuredCaption>& captions) {
    if (captions.empty()) throw std::invalid_argument("oracle_compatibility: empty list");
    constexpr int kStyle = 3;
    std::vector<std::pair<std::string, int>> counts;
    for (const auto& c : captions) {
        bool found = false;
        for (auto& [s, n] : counts)
            if (s == c.values[kStyle]) {
                ++n;
                found = true;
                break;
            }
        if (!found) counts.emplace_back(c.values[kStyle], 1);
    }
    int modal = 0;
    for (const auto& [_, n] : counts) modal = std::max(modal, n);
    return double(modal) / double(captions.size());
}

// k distinct captions sharing the outfit's modal style, other attributes
// uniform over the vocab. Rule-based substitute for an LLM augmenter.
inline std::vector<StructuredCaption> augment_captions(
    const std::vector<StructuredCaption>& outfit_prime, const std::string& /*category*/, int k,
    Rng& rng, const AttributeSchema& schema) {
    if (k < 1) throw AugmentError("augment_captions: k must be >= 1");
    if (outfit_prime.empty()) throw AugmentError("augment_captions: empty outfit");
    constexpr int kStyle = 3;
    // modal style (first-seen tie-break)
    std::vector<std::pair<std::string, int>> counts;
    for (const auto& c : outfit_prime) {
        bool found = false;
        for (auto& [s, n] : counts)
            if (s == c.values[kStyle]) {
                ++n;
                found = true;
                break;
            }
        if (!found) counts.emplace_back(c.values[kStyle], 1);
    }
    std::string style = counts[0].first;
    int best = counts[0].second;
    for (const auto& [s, n] : counts)
        if (n > best) {
            best = n;
            style = s;
        }
    long combos = 1;
    for (int a = 0; a < kNumAttributes; ++a)
        if (a != kStyle) combos *= long(schema.value_vocab[size_t(a)].size());
    if (long(k) > combos)
        throw AugmentError("augment_captions: vocab too small for " + std::to_string(k) +
                           " distinct captions");
    std::vector<StructuredCaption> out;
    while (int(out.size()) < k) {
        StructuredCaption c;
        c.values[kStyle] = style;
        for (int a = 0; a < kNumAttributes; ++a) {
            if (a == kStyle) continue;
            const auto& vv = schema.value_vocab[size_t(a)];
            c.values[size_t(a)] = vv[size_t(rng.uniform_int(int(vv.size())))];
        }
        bool dup = false;
        for (const auto& prev : out)
            if (prev == c) {
                dup = true;
                break;
            }
        if (!dup) out.push_back(c);
    }
    return out;
}

namespace detail {

inline AttributeSchema truncated_schema(const WorldSpec& spec) {
    AttributeSchema full = AttributeSchema::defaults();
    AttributeSchema s;
    for (int k = 0; k < kNumAttributes; ++k) {
        int n = spec.vocab_sizes[size_t(k)];
        if (n > int(full.value_vocab[size_t(k)].size()))
            throw SpecError("world spec: vocab size exceeds built-in word list for " +
                            AttributeSchema::keys()[size_t(k)]);
        s.value_vocab[size_t(k)].assign(full.value_vocab[size_t(k)].begin(),
                                        full.value_vocab[size_t(k)].begin() + n);
    }
    return s;
}

inline int sample_from_dist(const std::vector<double>& p, Rng& rng) {
    return rng.categorical(std::span<const double>(p.data(), p.size()));
}

}  // namespace detail

inline Dataset gen_world(const WorldSpec& spec) {
    spec.validate();
    if (spec.outfit_size > int(default_categories().size()))
        throw SpecError("world spec: outfit_size exceeds number of distinct categories");

    Dataset ds;
    ds.spec = spec;
    ds.schema = detail::truncated_schema(spec);
    ds.categories = default_categories();

    const int bl = ds.block_len();
    // attribute -> latent map, block per attribute
    {
        Rng rng(spec.seed, 1);
        size_t total = 0;
        for (int k = 0; k < kNumAttributes; ++k) total += size_t(bl) * spec.vocab_sizes[size_t(k)];
        ds.map_w.resize(total);
        for (auto& x : ds.map_w) x = float(rng.normal());
    }

    // items: uniform captions and categories
    {
        Rng rng(spec.seed, 2);
        ds.items.reserve(size_t(spec.n_items));
        for (int i = 0; i < spec.n_items; ++i) {
            Item it;
            it.id = i;
            for (int k = 0; k < kNumAttributes; ++k) {
                const auto& vv = ds.schema.value_vocab[size_t(k)];
                it.caption.values[size_t(k)] = vv[size_t(rng.uniform_int(int(vv.size())))];
            }
            it.category = ds.categories[size_t(rng.uniform_int(int(ds.categories.size())))];
            it.latent = ds.encode_item(it.caption, rng);
            ds.items.push_back(std::move(it));
        }
    }

    auto best_match = [&](const StructuredCaption& target, const std::vector<int>& pool,
                          const std::vector<int>& exclude) -> int {
        int best_id = -1, best_score = -1;
        for (int id : pool) {
            bool skip = false;
            for (int e : exclude)
                if (e == id) {
                    skip = true;
                    break;
                }
            if (skip) continue;
            int score = 0;
            for (int k = 0; k < kNumAttributes; ++k)
                if (ds.items[size_t(id)].caption.values[size_t(k)] == target.values[size_t(k)])
                    ++score;
            if (score > best_score) {
                best_score = score;
                best_id = id;
            }
        }
        return best_id;
    };

    // users: peaked preference distributions, histories drawn from them
    {
        Rng rng(spec.seed, 3);
        std::vector<int> all_ids(size_t(spec.n_items));
        for (int i = 0; i < spec.n_items; ++i) all_ids[size_t(i)] = i;
        ds.users.reserve(size_t(spec.n_users));
        for (int u = 0; u < spec.n_users; ++u) {
            User user;
            user.id = u;
            for (int k = 0; k < kNumAttributes; ++k) {
                auto& p = user.pref[size_t(k)];
                p.resize(size_t(spec.vocab_sizes[size_t(k)]));
                double z = 0.0;
                for (auto& x : p) {
                    x = std::exp(2.5 * rng.normal());
                    z += x;
                }
                for (auto& x : p) x /= z;
            }
            int hist_len = 5 + rng.uniform_int(11);
            for (int i = 0; i < hist_len; ++i) {
                StructuredCaption target;
                for (int k = 0; k < kNumAttributes; ++k)
                    target.values[size_t(k)] = ds.schema.value_vocab[size_t(k)]
                        [size_t(detail::sample_from_dist(user.pref[size_t(k)], rng))];
                user.history.push_back(best_match(target, all_ids, {}));
            }
            ds.users.push_back(std::move(user));
        }
    }

    // outfits: owner-conditioned members sharing one style
    {
        Rng rng(spec.seed, 4);
        constexpr int kStyle = 3;
        // style -> item ids
        std::vector<std::vector<int>> by_style(ds.schema.value_vocab[kStyle].size());
        for (const auto& it : ds.items)
            by_style[size_t(ds.schema.value_index(kStyle, it.caption.values[kStyle]))].push_back(
                it.id);
        ds.outfits.reserve(size_t(spec.n_outfits));
        for (int o = 0; o < spec.n_outfits; ++o) {
            Outfit of;
            of.id = o;
            of.owner = rng.uniform_int(spec.n_users);
            const User& owner = ds.users[size_t(of.owner)];
            int si = detail::sample_from_dist(owner.pref[kStyle], rng);
            if (by_style[size_t(si)].size() < size_t(spec.outfit_size)) {
                // fall back to the largest style bucket; tiny worlds may
                // still have to reuse items within an outfit
                size_t best_sz = 0;
                for (size_t s = 0; s < by_style.size(); ++s)
                    if (by_style[s].size() > best_sz) {
                        best_sz = by_style[s].size();
                        si = int(s);
                    }
            }
            of.style = ds.schema.value_vocab[kStyle][size_t(si)];
            // slot categories: a random subset of distinct categories
            std::vector<int> cat_order(ds.categories.size());
            for (size_t i = 0; i < cat_order.size(); ++i) cat_order[i] = int(i);
            for (size_t i = cat_order.size(); i-- > 1;)
                std::swap(cat_order[i], cat_order[size_t(rng.uniform_int(int(i) + 1))]);
            for (int s = 0; s < spec.outfit_size; ++s) {
                const std::string& cat = ds.categories[size_t(cat_order[size_t(s)])];
                StructuredCaption target;
                target.values[kStyle] = of.style;
                for (int k = 0; k < kNumAttributes; ++k)
                    if (k != kStyle)
                        target.values[size_t(k)] = ds.schema.value_vocab[size_t(k)]
                            [size_t(detail::sample_from_dist(owner.pref[size_t(k)], rng))];
                // prefer matching category within the style bucket
                std::vector<int> pool;
                for (int id : by_style[size_t(si)])
                    if (ds.items[size_t(id)].category == cat) pool.push_back(id);
                int pick = best_match(target, pool, of.item_ids);
                if (pick < 0) pick = best_match(target, by_style[size_t(si)], of.item_ids);
                if (pick < 0) pick = by_style[size_t(si)][0];  // tiny worlds
                of.item_ids.push_back(pick);
            }
            of.held_out = rng.uniform_int(spec.outfit_size);
            of.split = rng.bernoulli(spec.eval_fraction) ? "eval" : "train";
            ds.outfits.push_back(std::move(of));
        }
    }

    // empirical noise ceiling: largest candidate eta with decode accuracy
    // >= 0.99 over 200 trials
    {
        Rng rng(spec.seed, 5);
        const double candidates[] = {2.0, 1.6, 1.2, 0.8, 0.4, 0.2, 0.1, 0.05};
        ds.eta_max = 0.0;
        for (double eta : candidates) {
            int ok = 0;
            const int trials = 200;
            for (int t = 0; t < trials; ++t) {
                StructuredCaption c;
                for (int k = 0; k < kNumAttributes; ++k) {
                    const auto& vv = ds.schema.value_vocab[size_t(k)];
                    c.values[size_t(k)] = vv[size_t(rng.uniform_int(int(vv.size())))];
                }
                if (ds.oracle_decode(ds.encode_item(c, rng, eta)) == c) ++ok;
            }
            if (ok >= 198) {
                ds.eta_max = eta;
                break;
            }
        }
    }

    return ds;
}

// ---- dataset file format: JSONL, header line first, bit-exact ----

inline void save_dataset(const Dataset& ds, std::ostream& os) {
    using json = nlohmann::ordered_json;
    json header;
    header["kind"] = "world";
    header["format_version"] = 1;
    header["seed"] = ds.spec.seed;
    json spec;
    spec["vocab_sizes"] = ds.spec.vocab_sizes;
    spec["c"] = ds.spec.c;
    spec["h"] = ds.spec.h;
    spec["w"] = ds.spec.w;
    spec["n_items"] = ds.spec.n_items;
    spec["n_users"] = ds.spec.n_users;
    spec["n_outfits"] = ds.spec.n_outfits;
    spec["outfit_size"] = ds.spec.outfit_size;
    spec["eta"] = ds.spec.eta;
    spec["eval_fraction"] = ds.spec.eval_fraction;
    header["spec"] = spec;
    json schema = json::array();
    for (int k = 0; k < kNumAttributes; ++k) schema.push_back(ds.schema.value_vocab[size_t(k)]);
    header["schema"] = schema;
    header["categories"] = ds.categories;
    header["eta_max"] = ds.eta_max;
    header["W"] = floats_to_base64(ds.map_w);
    os << header.dump() << "\n";
    for (const auto& it : ds.items) {
        json j;
        j["kind"] = "item";
        j["id"] = it.id;
        j["caption"] = render(it.caption);
        j["category"] = it.category;
        j["latent"] = floats_to_base64(it.latent.data);
        os << j.dump() << "\n";
    }
    for (const auto& of : ds.outfits) {
        json j;
        j["kind"] = "outfit";
        j["id"] = of.id;
        j["items"] = of.item_ids;
        j["style"] = of.style;
        j["owner"] = of.owner;
        j["held_out"] = of.held_out;
        j["split"] = of.split;
        os << j.dump() << "\n";
    }
    for (const auto& u : ds.users) {
        json j;
        j["kind"] = "user";
        j["id"] = u.id;
        json pref = json::array();
        for (int k = 0; k < kNumAttributes; ++k) pref.push_back(u.pref[size_t(k)]);
        j["pref"] = pref;
        j["history"] = u.history;
        os << j.dump() << "\n";
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    save_dataset(ds, f);
}

inline Dataset load_dataset(std::istream& is) {
    using json = nlohmann::ordered_json;
    Dataset ds;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
    json header = json::parse(line);
    if (header.at("kind") != "world") throw std::runtime_error("dataset: missing world header");
    const auto& spec = header.at("spec");
    ds.spec.vocab_sizes = spec.at("vocab_sizes");
    ds.spec.c = spec.at("c");
    ds.spec.h = spec.at("h");
    ds.spec.w = spec.at("w");
    ds.spec.n_items = spec.at("n_items");
    ds.spec.n_users = spec.at("n_users");
    ds.spec.n_outfits = spec.at("n_outfits");
    ds.spec.outfit_size = spec.at("outfit_size");
    ds.spec.eta = spec.at("eta");
    ds.spec.eval_fraction = spec.at("eval_fraction");
    ds.spec.seed = header.at("seed");
    const auto& schema = header.at("schema");
    for (int k = 0; k < kNumAttributes; ++k)
        ds.schema.value_vocab[size_t(k)] = schema.at(size_t(k)).get<std::vector<std::string>>();
    ds.categories = header.at("categories").get<std::vector<std::string>>();
    ds.eta_max = header.at("eta_max");
    ds.map_w = base64_to_floats(header.at("W"));
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const std::string kind = j.at("kind");
        if (kind == "item") {
            Item it;
            it.id = j.at("id");
            it.caption = parse_caption(j.at("caption"), ds.schema);
            it.category = j.at("category");
            it.latent = Latentf(ds.spec.c, ds.spec.h, ds.spec.w);
            it.latent.data = base64_to_floats(j.at("latent"));
            if (int(it.latent.data.size()) != ds.latent_dim())
                throw std::runtime_error("dataset: item latent size mismatch");
            ds.items.push_back(std::move(it));
        } else if (kind == "outfit") {
            Outfit of;
            of.id = j.at("id");
            of.item_ids = j.at("items").get<std::vector<int>>();
            of.style = j.at("style");
            of.owner = j.at("owner");
            of.held_out = j.at("held_out");
            of.split = j.at("split");
            ds.outfits.push_back(std::move(of));
        } else if (kind == "user") {
            User u;
            u.id = j.at("id");
            const auto& pref = j.at("pref");
            for (int k = 0; k < kNumAttributes; ++k)
                u.pref[size_t(k)] = pref.at(size_t(k)).get<std::vector<double>>();
            u.history = j.at("history").get<std::vector<int>>();
            ds.users.push_back(std::move(u));
        } else {
            throw std::runtime_error("dataset: unknown record kind '" + kind + "'");
        }
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset: " + path);
    return load_dataset(f);
}

}  // namespace dualrec
