#pragma once

// Synthetic scenes and a planted-parameter decoder that reproduces two
// failure modes with known ground truth:
//   * attention sinks: a fixed, content-independent score bonus on a few image slots
//   * modality decay:  image-column scores drop by `decay` per generated token,
//     handing the output head over to a misleading co-occurrence prior
//
// Output grammar: object SEP object SEP ... EOS.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "caac/decoder.hpp"
#include "caac/errors.hpp"
#include "caac/random.hpp"
#include "caac/tokens.hpp"
#include "caac/vtc.hpp"

namespace caac {

/// Planted-decoder knobs. Score terms are in pre-softmax units.
struct PlantedParams {
    double image_score = 3.0;       // base score of any image key
    double salience = 0.2;          // extra score for image slots that hold an object
    double query_score = 5.2;       // score of prompt-text keys
    double generated_score = -4.0;  // score of generated-text keys
    double score_noise = 0.05;      // variance of the seeded random projection weights
    double position_scale = 1.0;    // magnitude of positional embeddings (0 = position-blind)
    double residual_scale = 0.1;    // magnitude of the residual write-back
    double object_bias = -2.0;      // logit of an object with no evidence and no prior
    double visual_gain = 225.0;     // logit per unit of attention on an object's slots
    double prior_gain = 15.0;       // logit per unit of prior * (1 - image mass)
    double eos_base = -6.0;
    double eos_growth = 0.45;       // EOS logit increase per generated token
    double sep_logit = 8.0;
    double mask_logit = -30.0;
};

struct WorldConfig {
    std::size_t num_objects = 64;
    std::size_t objects_per_scene = 5;
    std::size_t image_slots = 32;
    std::size_t max_slots_per_object = 3;
    double sink_strength = 4.0;
    double sink_fraction = 0.05;  // |S| = ceil(sink_fraction * N_i)
    double decay = 0.1;
    double prior_weight = 1.0;
    double prior_peak = 0.5;  // prior mass on each object's strongest neighbour
    PlantedParams planted;

    std::size_t sink_count() const {
        if (sink_strength == 0.0) return 0;
        return static_cast<std::size_t>(std::ceil(sink_fraction * static_cast<double>(image_slots) - 1e-9));
    }

    void validate() const {
        if (num_objects < 2) throw DomainError("WorldConfig: need at least two objects");
        if (image_slots == 0) throw DomainError("WorldConfig: image_slots must be positive");
        if (objects_per_scene < 1 || objects_per_scene > std::min(num_objects, image_slots))
            throw DomainError("WorldConfig: objects_per_scene must lie in [1, min(K, N_i)]");
        if (max_slots_per_object < 1) throw DomainError("WorldConfig: max_slots_per_object must be >= 1");
        if (sink_strength < 0.0) throw DomainError("WorldConfig: sink_strength must be >= 0");
        if (!(sink_fraction >= 0.0 && sink_fraction <= 1.0)) throw DomainError("WorldConfig: sink_fraction must lie in [0, 1]");
        if (decay < 0.0) throw DomainError("WorldConfig: decay must be >= 0");
        if (!(prior_weight >= 0.0 && prior_weight <= 1.0)) throw DomainError("WorldConfig: prior_weight must lie in [0, 1]");
        if (!(prior_peak >= 0.0 && prior_peak <= 1.0)) throw DomainError("WorldConfig: prior_peak must lie in [0, 1]");
    }
};

enum class TokenLabel { Truthful, Hallucinatory, Function };

inline const char* to_string(TokenLabel l) {
    switch (l) {
        case TokenLabel::Truthful: return "truthful";
        case TokenLabel::Hallucinatory: return "hallucinatory";
        case TokenLabel::Function: return "function";
    }
    return "?";
}

/// Token id layout: objects, image fillers (null, gray, noise), specials, query words.
struct ObjectVocabulary {
    static constexpr std::size_t kNoiseTokens = 8;
    static constexpr std::size_t kQueryTokens = 8;

    std::size_t num_objects = 0;
    std::vector<double> prior;             // K x K, row-stochastic, zero diagonal
    std::vector<TokenId> strongest_prior;  // argmax of each prior row

    TokenId null_token() const { return static_cast<TokenId>(num_objects); }
    TokenId gray_token() const { return null_token() + 1; }
    TokenId noise_token(std::size_t i) const { return gray_token() + 1 + static_cast<TokenId>(i); }
    TokenId bos() const { return noise_token(kNoiseTokens); }
    TokenId eos() const { return bos() + 1; }
    TokenId sep() const { return bos() + 2; }
    TokenId query_token(std::size_t i) const { return bos() + 3 + static_cast<TokenId>(i); }
    std::size_t vocab_size() const { return num_objects + 2 + kNoiseTokens + 3 + kQueryTokens; }

    bool is_object(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < num_objects; }
    double prior_at(TokenId from, TokenId to) const {
        return prior[static_cast<std::size_t>(from) * num_objects + static_cast<std::size_t>(to)];
    }

    /// Generic query used to build calibration references ("what is this").
    std::vector<TokenId> reference_query() const {
        return {query_token(0), query_token(1), query_token(2), query_token(3)};
    }
    /// Captioning query used for scene prompts ("describe the image").
    std::vector<TokenId> describe_query() const {
        return {query_token(4), query_token(5), query_token(6), query_token(7)};
    }
    ReferencePalette palette() const {
        ReferencePalette p{null_token(), gray_token(), {}};
        for (std::size_t i = 0; i < kNoiseTokens; ++i) p.noise.push_back(noise_token(i));
        return p;
    }

    static ObjectVocabulary build(std::size_t num_objects, double prior_peak, std::uint64_t seed) {
        ObjectVocabulary v;
        v.num_objects = num_objects;
        v.prior.assign(num_objects * num_objects, 0.0);
        Rng rng(mix_seed(seed, 0x7072696f72));
        for (std::size_t i = 0; i < num_objects; ++i) {
            std::size_t nb = uniform_index(rng, num_objects - 1);
            if (nb >= i) ++nb;
            std::vector<double> w(num_objects, 0.0);
            double total = 0.0;
            for (std::size_t j = 0; j < num_objects; ++j) {
                if (j == i || j == nb) continue;
                w[j] = uniform01(rng);
                total += w[j];
            }
            for (std::size_t j = 0; j < num_objects; ++j) {
                if (j == nb) v.prior[i * num_objects + j] = prior_peak;
                else if (total > 0.0) v.prior[i * num_objects + j] = (1.0 - prior_peak) * w[j] / total;
            }
            if (total == 0.0) v.prior[i * num_objects + nb] = 1.0;
            v.strongest_prior.push_back(static_cast<TokenId>(nb));
        }
        return v;
    }
};

struct Scene {
    std::uint64_t seed = 0;
    std::vector<TokenId> present;  // sorted
    std::vector<TokenId> layout;   // N_i slots: object ids or the null token

    bool contains(TokenId obj) const { return std::binary_search(present.begin(), present.end(), obj); }
    bool operator==(const Scene&) const = default;
};

/// k distinct objects and a slot layout, deterministic in `seed`. Each chosen
/// object's strongest prior neighbour is banned from the scene with probability 0.5.
inline Scene sample_scene(const ObjectVocabulary& vocab, std::size_t k, std::size_t image_slots,
                          std::size_t max_slots_per_object, std::uint64_t seed) {
    if (k < 1 || k > std::min(vocab.num_objects, image_slots))
        throw DomainError("sample_scene: k = " + std::to_string(k) + " outside [1, min(K, N_i)]");
    Rng rng(mix_seed(seed, 0x7363656e65));
    const std::size_t kObjects = vocab.num_objects;
    std::vector<bool> chosen(kObjects, false), banned(kObjects, false);
    std::vector<TokenId> order;
    while (order.size() < k) {
        std::vector<TokenId> pool;
        for (std::size_t o = 0; o < kObjects; ++o)
            if (!chosen[o] && !banned[o]) pool.push_back(static_cast<TokenId>(o));
        if (pool.empty())
            for (std::size_t o = 0; o < kObjects; ++o)
                if (!chosen[o]) pool.push_back(static_cast<TokenId>(o));
        const TokenId pick = pool[uniform_index(rng, pool.size())];
        chosen[static_cast<std::size_t>(pick)] = true;
        order.push_back(pick);
        if (uniform01(rng) < 0.5) {
            const auto nb = static_cast<std::size_t>(vocab.strongest_prior[static_cast<std::size_t>(pick)]);
            if (!chosen[nb]) banned[nb] = true;
        }
    }

    std::vector<std::size_t> counts(k, 1);
    std::size_t used = k;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t extra = uniform_index(rng, max_slots_per_object);
        const std::size_t room = image_slots - used;
        const std::size_t add = std::min(extra, room);
        counts[i] += add;
        used += add;
    }
    std::vector<std::size_t> slots(image_slots);
    std::iota(slots.begin(), slots.end(), 0);
    for (std::size_t i = image_slots; i > 1; --i) std::swap(slots[i - 1], slots[uniform_index(rng, i)]);

    Scene s;
    s.seed = seed;
    s.layout.assign(image_slots, vocab.null_token());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < counts[i]; ++c) s.layout[slots[cursor++]] = order[i];
    s.present = order;
    std::sort(s.present.begin(), s.present.end());
    return s;
}

inline std::vector<TokenLabel> label_tokens(std::span<const TokenId> tokens, const Scene& scene,
                                            const ObjectVocabulary& vocab) {
    std::vector<TokenLabel> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (vocab.is_object(t)) out.push_back(scene.contains(t) ? TokenLabel::Truthful : TokenLabel::Hallucinatory);
        else if (t == vocab.sep() || t == vocab.eos() || t == vocab.bos()) out.push_back(TokenLabel::Function);
        else throw DomainError("label_tokens: token " + std::to_string(t) + " is not an object or function token");
    }
    return out;
}

/// Output head of the planted decoder. After an object it emits SEP. Otherwise
/// already-mentioned objects are masked and
///   logit(obj) = object_bias
///              + visual_gain * (last-row attention on obj's slots, mean over heads
///                               of the first ceil(L/2) layers)
///              + prior_gain * prior_weight * (1 - m_img) * prior(last object -> obj)
///   logit(EOS) = eos_base + eos_growth * generated_count
/// where m_img is the final layer's head-mean last-row image mass.
class PlantedReadout final : public Readout {
public:
    PlantedReadout(ObjectVocabulary vocab, PlantedParams params, double prior_weight)
        : vocab_(std::move(vocab)), p_(params), prior_weight_(prior_weight) {}

    static std::size_t evidence_layers(std::size_t num_layers) { return (num_layers + 1) / 2; }

    std::vector<double> logits(const ReadoutContext& ctx) const override {
        const TokenSequence& seq = ctx.seq;
        const AttentionTensor& attn = ctx.attn;
        const std::size_t ni = seq.image_count();
        const std::size_t q = seq.size() - 1;
        std::vector<double> out(vocab_.vocab_size(), p_.mask_logit);

        const auto generated = seq.generated();
        out[static_cast<std::size_t>(vocab_.eos())] =
            p_.eos_base + p_.eos_growth * static_cast<double>(generated.size());
        if (!generated.empty() && vocab_.is_object(generated.back())) {
            out[static_cast<std::size_t>(vocab_.sep())] = p_.sep_logit;
            return out;
        }

        const std::size_t layers = evidence_layers(attn.layers());
        std::vector<double> evidence(vocab_.num_objects, 0.0);
        for (std::size_t l = 0; l < layers; ++l)
            for (std::size_t h = 0; h < attn.heads(); ++h) {
                auto row = attn.row(l, h, q);
                for (std::size_t j = 0; j < ni; ++j)
                    if (vocab_.is_object(seq[j])) evidence[static_cast<std::size_t>(seq[j])] += row[j];
            }
        const double norm = 1.0 / static_cast<double>(layers * attn.heads());
        const double m_img = last_row_image_mass(attn, attn.layers() - 1, ni);

        TokenId last_object = -1;
        std::vector<bool> mentioned(vocab_.num_objects, false);
        for (TokenId t : generated)
            if (vocab_.is_object(t)) {
                mentioned[static_cast<std::size_t>(t)] = true;
                last_object = t;
            }
        const double prior_scale = p_.prior_gain * prior_weight_ * (1.0 - m_img);
        for (std::size_t o = 0; o < vocab_.num_objects; ++o) {
            if (mentioned[o]) continue;
            double v = p_.object_bias + p_.visual_gain * evidence[o] * norm;
            if (last_object >= 0) v += prior_scale * vocab_.prior_at(last_object, static_cast<TokenId>(o));
            out[o] = v;
        }
        return out;
    }

private:
    ObjectVocabulary vocab_;
    PlantedParams p_;
    double prior_weight_;
};

/// Feature channels of the structured embedding block.
namespace channel {
inline constexpr std::size_t kBias = 0;
inline constexpr std::size_t kSalient = 1;
inline constexpr std::size_t kImage = 2;
inline constexpr std::size_t kQuery = 3;
inline constexpr std::size_t kGenerated = 4;
inline constexpr std::size_t kStructured = 5;
}  // namespace channel

/// Sink positions: a seeded subset of image slots, fixed for the model.
inline std::vector<std::size_t> sink_positions(const WorldConfig& w, std::uint64_t seed) {
    std::vector<std::size_t> slots(w.image_slots);
    std::iota(slots.begin(), slots.end(), 0);
    Rng rng(mix_seed(seed, 0x73696e6b));
    for (std::size_t i = w.image_slots; i > 1; --i) std::swap(slots[i - 1], slots[uniform_index(rng, i)]);
    slots.resize(std::min(w.sink_count(), w.image_slots));
    std::sort(slots.begin(), slots.end());
    return slots;
}

inline ScoreBias planted_bias(const WorldConfig& w, std::uint64_t seed) {
    ScoreBias b;
    b.image_column_bias.assign(w.image_slots, 0.0);
    for (std::size_t s : sink_positions(w, seed)) b.image_column_bias[s] = w.sink_strength;
    b.decay = w.decay;
    return b;
}

/// Key score of a token is image_score * [image] + salience * [object] + query_score * [query]
/// + generated_score * [generated], plus a small seeded random term. Sink and decay
/// terms enter through ScoreBias, upstream of every hook.
inline Decoder build_planted_decoder(const ModelConfig& cfg, const WorldConfig& w, const ObjectVocabulary& vocab) {
    cfg.validate();
    w.validate();
    if (cfg.image_slots != w.image_slots) throw DomainError("build_planted_decoder: image_slots mismatch");
    if (cfg.vocab_size != vocab.vocab_size()) throw DomainError("build_planted_decoder: vocab_size mismatch");
    const std::size_t d = cfg.model_dim, dh = cfg.head_dim();
    if (d < channel::kStructured + 3) throw DomainError("build_planted_decoder: model_dim must be at least 8");
    if (dh < 2) throw DomainError("build_planted_decoder: head_dim must be at least 2");
    const PlantedParams& p = w.planted;
    const std::size_t free_dims = d - channel::kStructured;
    const double code_scale = 1.0 / std::sqrt(static_cast<double>(free_dims));

    Rng rng(mix_seed(cfg.seed, 0x706c616e74));
    auto normal = [&rng] { return standard_normal(rng); };

    std::vector<double> tok(cfg.vocab_size * d, 0.0);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
        if (vocab.is_object(static_cast<TokenId>(t))) tok[t * d + channel::kSalient] = 1.0;
        for (std::size_t i = channel::kStructured; i < d; ++i) tok[t * d + i] = code_scale * normal();
    }
    std::vector<double> mod(3 * d, 0.0);
    for (std::size_t m = 0; m < 3; ++m) mod[m * d + channel::kBias] = 1.0;
    mod[0 * d + channel::kImage] = 1.0;
    mod[1 * d + channel::kQuery] = 1.0;
    mod[2 * d + channel::kGenerated] = 1.0;
    std::vector<double> pos(cfg.max_seq_len * d, 0.0);
    for (std::size_t r = 0; r < cfg.max_seq_len; ++r)
        for (std::size_t i = channel::kStructured; i < d; ++i) pos[r * d + i] = p.position_scale * code_scale * normal();

    const double sqrt_dh = std::sqrt(static_cast<double>(dh));
    const double sigma = std::sqrt(p.score_noise);
    std::vector<LayerWeights> layers(cfg.num_layers);
    for (auto& lw : layers) {
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            std::vector<double> wq(d * dh, 0.0), wk(d * dh, 0.0), wv(d * dh, 0.0);
            wq[channel::kBias * dh + 0] = sqrt_dh;
            wk[channel::kImage * dh + 0] = p.image_score;
            wk[channel::kSalient * dh + 0] = p.salience;
            wk[channel::kQuery * dh + 0] = p.query_score;
            wk[channel::kGenerated * dh + 0] = p.generated_score;
            for (std::size_t i = channel::kStructured; i < d; ++i)
                for (std::size_t j = 1; j < dh; ++j) {
                    wq[i * dh + j] = sigma * normal();
                    wk[i * dh + j] = sigma * normal();
                }
            for (double& v : wv) v = normal() / std::sqrt(static_cast<double>(d));
            lw.wq.push_back(std::move(wq));
            lw.wk.push_back(std::move(wk));
            lw.wv.push_back(std::move(wv));
        }
        lw.wo.assign(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = channel::kStructured; j < d; ++j)
                lw.wo[i * d + j] = p.residual_scale * normal() / std::sqrt(static_cast<double>(d));
    }
    auto readout = std::make_shared<PlantedReadout>(vocab, p, w.prior_weight);
    return Decoder(cfg, std::move(tok), std::move(mod), std::move(pos), std::move(layers), planted_bias(w, cfg.seed),
                   std::move(readout));
}

/// Vocabulary, planted decoder and scene sampler for one world.
struct World {
    WorldConfig config;
    ModelConfig model_config;
    ObjectVocabulary vocab;
    std::shared_ptr<const Decoder> decoder;

    static ModelConfig default_model_config(const WorldConfig& w, std::uint64_t seed = 0) {
        ModelConfig m;
        m.num_layers = 2;
        m.num_heads = 4;
        m.model_dim = 64;
        m.image_slots = w.image_slots;
        m.max_seq_len = 256;
        m.seed = seed;
        m.vocab_size = w.num_objects + 2 + ObjectVocabulary::kNoiseTokens + 3 + ObjectVocabulary::kQueryTokens;
        return m;
    }

    /// `model.image_slots` and `model.vocab_size` are overwritten from the world.
    static World build(const WorldConfig& w, ModelConfig model) {
        w.validate();
        World world;
        world.config = w;
        world.vocab = ObjectVocabulary::build(w.num_objects, w.prior_peak, model.seed);
        model.image_slots = w.image_slots;
        model.vocab_size = world.vocab.vocab_size();
        world.model_config = model;
        world.decoder = std::make_shared<const Decoder>(build_planted_decoder(model, w, world.vocab));
        return world;
    }

    Scene scene(std::uint64_t seed) const {
        return sample_scene(vocab, config.objects_per_scene, config.image_slots, config.max_slots_per_object, seed);
    }

    TokenSequence prompt(const Scene& s) const { return TokenSequence::prompt(s.layout, vocab.describe_query()); }

    ReferenceSpec reference(ImageKind kind = ImageKind::Black, std::uint64_t noise_seed = 0,
                            std::size_t window = 1) const {
        ReferenceSpec r;
        r.image_kind = kind;
        r.noise_seed = noise_seed;
        r.query_ids = vocab.reference_query();
        r.window = window;
        r.palette = vocab.palette();
        return r;
    }
};

}  // namespace caac
