#pragma once

// Minimal causal multi-head attention decoder. No training, no KV cache:
// every call recomputes the whole sequence. Interventions enter through the
// HookSet, which only ever touches the last query row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caac/attention.hpp"
#include "caac/errors.hpp"
#include "caac/hooks.hpp"
#include "caac/random.hpp"
#include "caac/tokens.hpp"

namespace caac {

struct ModelConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t model_dim = 64;
    std::size_t image_slots = 32;
    std::size_t vocab_size = 64;
    std::size_t max_seq_len = 256;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return model_dim / num_heads; }

    void validate() const {
        if (num_layers == 0) throw DomainError("ModelConfig: num_layers must be positive");
        if (num_heads == 0) throw DomainError("ModelConfig: num_heads must be positive");
        if (model_dim == 0) throw DomainError("ModelConfig: model_dim must be positive");
        if (model_dim % num_heads != 0) throw DomainError("ModelConfig: model_dim must be divisible by num_heads");
        if (image_slots == 0) throw DomainError("ModelConfig: image_slots must be positive");
        if (vocab_size == 0) throw DomainError("ModelConfig: vocab_size must be positive");
        if (image_slots >= max_seq_len) throw DomainError("ModelConfig: image_slots must be below max_seq_len");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Additive pre-softmax terms on image columns, applied before any hook.
/// Row q gets image_column_bias[k] - decay * generation_index(q) at column k < N_i.
struct ScoreBias {
    std::vector<double> image_column_bias;
    double decay = 0.0;

    double at(std::size_t column, std::size_t generation_index) const {
        const double b = column < image_column_bias.size() ? image_column_bias[column] : 0.0;
        return b - decay * static_cast<double>(generation_index);
    }
    bool is_zero() const {
        for (double b : image_column_bias)
            if (b != 0.0) return false;
        return decay == 0.0;
    }
};

/// Everything the output head may look at.
struct ReadoutContext {
    const TokenSequence& seq;
    const AttentionTensor& attn;
    std::span<const double> last_hidden;
};

class Readout {
public:
    virtual ~Readout() = default;
    virtual std::vector<double> logits(const ReadoutContext& ctx) const = 0;
};

/// logits = hidden * U, U is model_dim x vocab.
class LinearReadout final : public Readout {
public:
    LinearReadout(std::size_t model_dim, std::size_t vocab, std::vector<double> weights)
        : dim_(model_dim), vocab_(vocab), w_(std::move(weights)) {}

    std::vector<double> logits(const ReadoutContext& ctx) const override {
        std::vector<double> out(vocab_, 0.0);
        for (std::size_t i = 0; i < dim_; ++i) {
            const double x = ctx.last_hidden[i];
            for (std::size_t v = 0; v < vocab_; ++v) out[v] += x * w_[i * vocab_ + v];
        }
        return out;
    }

private:
    std::size_t dim_;
    std::size_t vocab_;
    std::vector<double> w_;
};

/// Single post-softmax attention entry nudged by `delta` (finite-difference probes).
struct AttentionProbe {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query = 0;
    std::size_t key = 0;
    double delta = 0.0;
};

struct ForwardOptions {
    const HookSet* hooks = nullptr;
    std::optional<AttentionProbe> probe;
    bool keep_scores = false;
};

struct ForwardResult {
    std::vector<double> logits;
    AttentionTensor attn;
    /// Pre-softmax scores after planted bias and pre-softmax hooks; masked entries are 0.
    std::optional<AttentionTensor> scores;
};

/// Dense weights, row-major. Projection matrices are model_dim x head_dim.
struct LayerWeights {
    std::vector<std::vector<double>> wq, wk, wv;  // [head][d * dh]
    std::vector<double> wo;                        // d * d
};

class Decoder {
public:
    Decoder(ModelConfig cfg, std::vector<double> token_embedding, std::vector<double> modality_embedding,
            std::vector<double> position_embedding, std::vector<LayerWeights> layers, ScoreBias bias,
            std::shared_ptr<const Readout> readout)
        : cfg_(cfg),
          token_embedding_(std::move(token_embedding)),
          modality_embedding_(std::move(modality_embedding)),
          position_embedding_(std::move(position_embedding)),
          layers_(std::move(layers)),
          bias_(std::move(bias)),
          readout_(std::move(readout)) {
        cfg_.validate();
        const std::size_t d = cfg_.model_dim, dh = cfg_.head_dim();
        if (token_embedding_.size() != cfg_.vocab_size * d) throw DomainError("Decoder: token embedding shape");
        if (modality_embedding_.size() != 3 * d) throw DomainError("Decoder: modality embedding shape");
        if (position_embedding_.size() != cfg_.max_seq_len * d) throw DomainError("Decoder: position embedding shape");
        if (layers_.size() != cfg_.num_layers) throw DomainError("Decoder: layer count");
        for (const auto& lw : layers_) {
            if (lw.wq.size() != cfg_.num_heads || lw.wk.size() != cfg_.num_heads || lw.wv.size() != cfg_.num_heads)
                throw DomainError("Decoder: head count");
            for (std::size_t h = 0; h < cfg_.num_heads; ++h)
                if (lw.wq[h].size() != d * dh || lw.wk[h].size() != d * dh || lw.wv[h].size() != d * dh)
                    throw DomainError("Decoder: projection shape");
            if (lw.wo.size() != d * d) throw DomainError("Decoder: output projection shape");
        }
        if (!bias_.image_column_bias.empty() && bias_.image_column_bias.size() != cfg_.image_slots)
            throw DomainError("Decoder: image column bias must have image_slots entries");
        if (!readout_) throw DomainError("Decoder: readout is required");
    }

    /// Gaussian weights drawn from cfg.seed and a linear readout.
    static Decoder random(const ModelConfig& cfg, ScoreBias bias = {}) {
        cfg.validate();
        const std::size_t d = cfg.model_dim, dh = cfg.head_dim();
        Rng rng(mix_seed(cfg.seed, 1));
        auto draw = [&rng](std::size_t n, double scale) {
            std::vector<double> v(n);
            for (double& x : v) x = scale * standard_normal(rng);
            return v;
        };
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        auto tok = draw(cfg.vocab_size * d, 1.0);
        auto mod = draw(3 * d, 0.5);
        auto pos = draw(cfg.max_seq_len * d, 0.1);
        std::vector<LayerWeights> layers(cfg.num_layers);
        for (auto& lw : layers) {
            for (std::size_t h = 0; h < cfg.num_heads; ++h) {
                lw.wq.push_back(draw(d * dh, s));
                lw.wk.push_back(draw(d * dh, s));
                lw.wv.push_back(draw(d * dh, s));
            }
            lw.wo = draw(d * d, 0.5 * s);
        }
        auto readout = std::make_shared<LinearReadout>(d, cfg.vocab_size, draw(d * cfg.vocab_size, s));
        return Decoder(cfg, std::move(tok), std::move(mod), std::move(pos), std::move(layers), std::move(bias),
                       std::move(readout));
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    const ScoreBias& bias() const noexcept { return bias_; }

    /// Copy of this decoder with different planted terms.
    Decoder with_bias(ScoreBias bias) const {
        Decoder copy = *this;
        if (!bias.image_column_bias.empty() && bias.image_column_bias.size() != cfg_.image_slots)
            throw DomainError("Decoder: image column bias must have image_slots entries");
        copy.bias_ = std::move(bias);
        return copy;
    }

    ForwardResult forward(const TokenSequence& seq, const ForwardOptions& opts = {}) const;

private:
    ModelConfig cfg_;
    std::vector<double> token_embedding_;
    std::vector<double> modality_embedding_;
    std::vector<double> position_embedding_;
    std::vector<LayerWeights> layers_;
    ScoreBias bias_;
    std::shared_ptr<const Readout> readout_;
};

inline ForwardResult Decoder::forward(const TokenSequence& seq, const ForwardOptions& opts) const {
    const std::size_t n = seq.size();
    const std::size_t d = cfg_.model_dim, dh = cfg_.head_dim(), ni = cfg_.image_slots;
    if (n > cfg_.max_seq_len)
        throw LengthError("forward: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
    if (seq.image_count() != ni)
        throw DomainError("forward: sequence has " + std::to_string(seq.image_count()) + " image tokens, model expects " +
                          std::to_string(ni));
    for (TokenId id : seq.ids())
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
            throw DomainError("forward: token id " + std::to_string(id) + " outside vocabulary");

    static const HookSet kNoHooks{};
    const HookSet& hooks = opts.hooks ? *opts.hooks : kNoHooks;

    std::vector<double> x(n * d);
    for (std::size_t p = 0; p < n; ++p) {
        const double* te = &token_embedding_[static_cast<std::size_t>(seq[p]) * d];
        const double* me = &modality_embedding_[static_cast<std::size_t>(seq.modality()[p]) * d];
        const double* pe = &position_embedding_[p * d];
        for (std::size_t i = 0; i < d; ++i) x[p * d + i] = te[i] + me[i] + pe[i];
    }

    ForwardResult res;
    res.attn = AttentionTensor(cfg_.num_layers, cfg_.num_heads, n);
    if (opts.keep_scores) res.scores.emplace(cfg_.num_layers, cfg_.num_heads, n);

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> qm(n * dh), km(n * dh), vm(n * dh), ctx(n * d), scores(n), before(ni);

    auto project = [&](const std::vector<double>& w, std::vector<double>& out) {
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t j = 0; j < dh; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < d; ++i) acc += x[p * d + i] * w[i * dh + j];
                out[p * dh + j] = acc;
            }
    };

    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        const LayerWeights& lw = layers_[l];
        std::fill(ctx.begin(), ctx.end(), 0.0);
        for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
            project(lw.wq[h], qm);
            project(lw.wk[h], km);
            project(lw.wv[h], vm);
            for (std::size_t q = 0; q < n; ++q) {
                const std::size_t width = q + 1;
                const std::size_t gen = seq.generation_index(q);
                for (std::size_t k = 0; k < width; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < dh; ++j) acc += qm[q * dh + j] * km[k * dh + j];
                    double s = acc * inv_sqrt;
                    if (k < ni) s += bias_.at(k, gen);
                    if (!std::isfinite(s))
                        throw NumericError("forward: non-finite score at layer " + std::to_string(l) + " head " +
                                           std::to_string(h) + " row " + std::to_string(q));
                    scores[k] = s;
                }
                const bool last = q + 1 == n;
                const HookSite site{l, h, q};
                if (last && !hooks.pre_softmax.empty()) {
                    run_hooks(hooks.pre_softmax, site, std::span<double>(scores.data(), std::min(ni, width)));
                    for (std::size_t k = 0; k < width; ++k)
                        if (!std::isfinite(scores[k]))
                            throw NumericError("forward: pre-softmax hook produced non-finite score at layer " +
                                               std::to_string(l) + " head " + std::to_string(h));
                }
                if (res.scores)
                    std::copy_n(scores.begin(), width, res.scores->row(l, h, q).begin());

                std::span<double> row = res.attn.row(l, h, q);
                double hi = scores[0];
                for (std::size_t k = 1; k < width; ++k) hi = std::max(hi, scores[k]);
                double z = 0.0;
                for (std::size_t k = 0; k < width; ++k) {
                    row[k] = std::exp(scores[k] - hi);
                    z += row[k];
                }
                for (std::size_t k = 0; k < width; ++k) row[k] /= z;

                if (last && !hooks.post_softmax.empty()) {
                    const std::size_t cols = std::min(ni, width);
                    std::copy_n(row.begin(), cols, before.begin());
                    run_hooks(hooks.post_softmax, site, row.first(cols));
                    bool changed = false;
                    for (std::size_t k = 0; k < cols; ++k) {
                        if (!std::isfinite(row[k]) || row[k] < 0.0)
                            throw NumericError("forward: post-softmax hook produced invalid attention at layer " +
                                               std::to_string(l) + " head " + std::to_string(h));
                        changed = changed || row[k] != before[k];
                    }
                    if (changed && hooks.row_renorm) {
                        double total = 0.0;
                        for (std::size_t k = 0; k < width; ++k) total += row[k];
                        if (!(total > 0.0))
                            throw NumericError("forward: attention row collapsed to zero at layer " +
                                               std::to_string(l) + " head " + std::to_string(h));
                        for (std::size_t k = 0; k < width; ++k) row[k] /= total;
                    }
                }
                if (opts.probe && opts.probe->layer == l && opts.probe->head == h && opts.probe->query == q &&
                    opts.probe->key < width)
                    row[opts.probe->key] += opts.probe->delta;

                double* out = &ctx[q * d + h * dh];
                for (std::size_t k = 0; k < width; ++k) {
                    const double a = row[k];
                    if (a == 0.0) continue;
                    const double* v = &vm[k * dh];
                    for (std::size_t j = 0; j < dh; ++j) out[j] += a * v[j];
                }
            }
        }
        // residual update: x += ctx * Wo
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < d; ++i) {
                const double c = ctx[p * d + i];
                if (c == 0.0) continue;
                const double* wrow = &lw.wo[i * d];
                for (std::size_t j = 0; j < d; ++j) x[p * d + j] += c * wrow[j];
            }
    }

    const std::span<const double> last_hidden(x.data() + (n - 1) * d, d);
    res.logits = readout_->logits(ReadoutContext{seq, res.attn, last_hidden});
    if (res.logits.size() != cfg_.vocab_size) throw DomainError("forward: readout returned wrong vocabulary size");
    for (double v : res.logits)
        if (!std::isfinite(v)) throw NumericError("forward: non-finite logit");
    return res;
}

/// Free-function form of Decoder::forward.
inline ForwardResult forward_full(const Decoder& model, const TokenSequence& seq, const HookSet& hooks = {}) {
    ForwardOptions opts;
    opts.hooks = &hooks;
    return model.forward(seq, opts);
}

/// Mean over heads of the last row's image mass in `layer`.
inline double last_row_image_mass(const AttentionTensor& attn, std::size_t layer, std::size_t image_slots) {
    const std::size_t q = attn.tokens() - 1;
    double m = 0.0;
    for (std::size_t h = 0; h < attn.heads(); ++h) m += image_mass(attn.row(layer, h, q), image_slots);
    return m / static_cast<double>(attn.heads());
}

}  // namespace caac
