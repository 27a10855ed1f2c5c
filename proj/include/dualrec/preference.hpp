#pragma once

// User preference condition p: attribute-level frequency tables over the
// interaction history, temperature-softmax sampling with N draws and
// first-occurrence dedup, and rendering to the canonical key-value text.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrec/captions.hpp"
#include "dualrec/rng.hpp"

namespace dualrec {

struct FrequencyTable {
    // Per attribute, insertion-ordered (value, score) pairs. Only values
    // observed in the history appear; unobserved values get no mass.
    std::array<std::vector<std::pair<std::string, double>>, kNumAttributes> scores;

    bool empty(int k) const { return scores[size_t(k)].empty(); }
    bool all_empty() const {
        for (int k = 0; k < kNumAttributes; ++k)
            if (!empty(k)) return false;
        return true;
    }
};

struct PreferenceProfile {
    std::array<std::vector<std::string>, kNumAttributes> values;

    bool all_empty() const {
        for (const auto& v : values)
            if (!v.empty()) return false;
        return true;
    }
};

inline FrequencyTable frequency_scores(const std::vector<StructuredCaption>& history) {
    FrequencyTable table;
    for (const auto& item : history) {
        for (int k = 0; k < kNumAttributes; ++k) {
            auto& col = table.scores[size_t(k)];
            const std::string& v = item.values[size_t(k)];
            bool found = false;
            for (auto& [name, f] : col)
                if (name == v) {
                    f += 1.0;
                    found = true;
                    break;
                }
            if (!found) col.emplace_back(v, 1.0);
        }
    }
    return table;
}

// P(v) = exp(f(v)/T) / sum_v' exp(f(v')/T), over recorded values only.
// Computed with a max shift; exactly shift-invariant.
inline std::vector<std::pair<std::string, double>> softmax_probs(const FrequencyTable& table,
                                                                int attribute, double temperature) {
    if (temperature <= 0.0) throw std::domain_error("softmax_probs: T must be > 0");
    const auto& col = table.scores[size_t(attribute)];
    std::vector<std::pair<std::string, double>> out;
    if (col.empty()) return out;  // empty-preference signal
    double mx = col[0].second;
    for (const auto& [_, f] : col) mx = std::max(mx, f);
    double z = 0.0;
    out.reserve(col.size());
    for (const auto& [v, f] : col) {
        double e = std::exp((f - mx) / temperature);
        out.emplace_back(v, e);
        z += e;
    }
    for (auto& [_, p] : out) p /= z;
    return out;
}

// N i.i.d. draws per attribute, deduplicated preserving first-draw order.
inline PreferenceProfile sample_preference(const FrequencyTable& table, double temperature, int n,
                                           Rng& rng) {
    if (n < 1) throw std::domain_error("sample_preference: N must be >= 1");
    PreferenceProfile profile;
    for (int k = 0; k < kNumAttributes; ++k) {
        auto probs = softmax_probs(table, k, temperature);
        if (probs.empty()) continue;
        std::vector<double> p(probs.size());
        for (size_t i = 0; i < probs.size(); ++i) p[i] = probs[i].second;
        auto& out = profile.values[size_t(k)];
        for (int i = 0; i < n; ++i) {
            const std::string& v = probs[size_t(rng.categorical(p))].first;
            bool seen = false;
            for (const auto& u : out)
                if (u == v) {
                    seen = true;
                    break;
                }
            if (!seen) out.push_back(v);
        }
    }
    return profile;
}

// Canonical text form, values joined by ", " within a key; attributes with
// empty preference sets are omitted.
inline std::string render_preference(const PreferenceProfile& profile) {
    std::string out;
    bool first = true;
    for (int k = 0; k < kNumAttributes; ++k) {
        const auto& vals = profile.values[size_t(k)];
        if (vals.empty()) continue;
        if (!first) out += "; ";
        first = false;
        out += AttributeSchema::keys()[size_t(k)] + ": ";
        for (size_t i = 0; i < vals.size(); ++i) {
            if (i) out += ", ";
            out += vals[i];
        }
    }
    return out;
}

// Token segment for the text branch (same layout as the rendered string).
inline std::vector<int> preference_tokens(const PreferenceProfile& profile, const Vocab& vocab) {
    std::vector<int> out;
    bool first = true;
    for (int k = 0; k < kNumAttributes; ++k) {
        const auto& vals = profile.values[size_t(k)];
        if (vals.empty()) continue;
        if (!first) out.push_back(Vocab::kSemi);
        first = false;
        out.push_back(vocab.key_token(k));
        out.push_back(Vocab::kColon);
        for (size_t i = 0; i < vals.size(); ++i) {
            if (i) out.push_back(Vocab::kComma);
            out.push_back(vocab.value_token(k, vals[i]));
        }
    }
    return out;
}

}  // namespace dualrec
