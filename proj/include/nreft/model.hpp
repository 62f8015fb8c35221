#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nreft/errors.hpp"
#include "nreft/layer_skip.hpp"
#include "nreft/rng.hpp"
#include "nreft/tensor.hpp"

namespace nreft {

// Decoder-only transformer whose forward pass accepts a skip mask. One
// parameter set realizes both the target policy (all-zeros mask) and any
// nested behavior policy (mask with skipped blocks). A skipped block is the
// identity on the residual stream: attention and feed-forward are bypassed
// together.
//
// Architecture: pre-norm blocks, RMS normalization, SiLU feed-forward,
// learned positional embeddings, untied output projection, no biases.
//
// Two forward paths exist on purpose:
//  * a tape path (forward_logits / completion_logprobs) used for training
//    gradients, batched over a whole sequence;
//  * an incremental path (Decoder) with a per-sequence KV cache used for
//    sampling and for sequence log-probability evaluation.
// Both paths perform the same arithmetic in the same accumulation order, so
// a log-probability recorded at sampling time matches its re-evaluation
// bit-for-bit under the same mask and parameters.

enum class Precision { kF32, kF64 };

inline const char* to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }
inline Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::kF32;
    if (s == "f64") return Precision::kF64;
    throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

struct ModelConfig {
    int num_layers = 4;
    int width = 64;
    int num_heads = 4;
    int vocab_size = 14;
    int max_sequence_length = 48;
    int ffn_multiple = 4;  // feed-forward hidden width = ffn_multiple * width
    Precision precision = Precision::kF32;

    void validate() const {
        if (num_layers < 3) throw ConfigError("num_layers must be >= 3 so a bordered skip set can exist");
        if (width <= 0 || num_heads <= 0) throw ConfigError("width and num_heads must be positive");
        if (width % num_heads != 0) throw ConfigError("width must be divisible by num_heads");
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
        if (max_sequence_length < 2) throw ConfigError("max_sequence_length must be >= 2");
        if (ffn_multiple < 1) throw ConfigError("ffn_multiple must be >= 1");
    }
    int head_dim() const { return width / num_heads; }
    int ffn_dim() const { return ffn_multiple * width; }

    bool operator==(const ModelConfig&) const = default;
};

struct TokenSequence {
    std::vector<int> prompt;
    std::vector<int> completion;

    std::vector<int> full() const {
        std::vector<int> out = prompt;
        out.insert(out.end(), completion.begin(), completion.end());
        return out;
    }
};

template <typename R>
struct BlockParams {
    Tensor<R> attn_norm_gain;  // (d)
    Tensor<R> wq, wk, wv, wo;  // (d, d)
    Tensor<R> mlp_norm_gain;   // (d)
    Tensor<R> w1;              // (d, ffn)
    Tensor<R> w2;              // (ffn, d)
};

template <typename R>
struct PolicyParams {
    ModelConfig config;
    Tensor<R> token_embedding;     // (vocab, d)
    Tensor<R> position_embedding;  // (max_seq, d)
    std::vector<BlockParams<R>> blocks;
    Tensor<R> final_norm_gain;   // (d)
    Tensor<R> output_projection;  // (d, vocab)
    long step_index = 0;

    static PolicyParams random_init(const ModelConfig& cfg, uint64_t seed, double init_std = 0.08) {
        cfg.validate();
        Rng rng(derive_seed(seed, SeedScope::kParamInit));
        auto randn = [&](std::vector<int> shape) {
            Tensor<R> t = Tensor<R>::zeros(std::move(shape));
            for (size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<R>(rng.gaussian() * init_std);
            return t;
        };
        auto ones = [](int n) {
            Tensor<R> t = Tensor<R>::zeros({n});
            std::fill(t.data(), t.data() + t.size(), R(1));
            return t;
        };
        PolicyParams p;
        p.config = cfg;
        p.token_embedding = randn({cfg.vocab_size, cfg.width});
        p.position_embedding = randn({cfg.max_sequence_length, cfg.width});
        p.blocks.resize(static_cast<size_t>(cfg.num_layers));
        for (auto& b : p.blocks) {
            b.attn_norm_gain = ones(cfg.width);
            b.wq = randn({cfg.width, cfg.width});
            b.wk = randn({cfg.width, cfg.width});
            b.wv = randn({cfg.width, cfg.width});
            b.wo = randn({cfg.width, cfg.width});
            b.mlp_norm_gain = ones(cfg.width);
            b.w1 = randn({cfg.width, cfg.ffn_dim()});
            b.w2 = randn({cfg.ffn_dim(), cfg.width});
        }
        p.final_norm_gain = ones(cfg.width);
        p.output_projection = randn({cfg.width, cfg.vocab_size});
        return p;
    }

    std::vector<std::pair<std::string, Tensor<R>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<R>*>> out;
        out.emplace_back("token_embedding", &token_embedding);
        out.emplace_back("position_embedding", &position_embedding);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string prefix = "block" + std::to_string(i) + ".";
            out.emplace_back(prefix + "attn_norm_gain", &blocks[i].attn_norm_gain);
            out.emplace_back(prefix + "wq", &blocks[i].wq);
            out.emplace_back(prefix + "wk", &blocks[i].wk);
            out.emplace_back(prefix + "wv", &blocks[i].wv);
            out.emplace_back(prefix + "wo", &blocks[i].wo);
            out.emplace_back(prefix + "mlp_norm_gain", &blocks[i].mlp_norm_gain);
            out.emplace_back(prefix + "w1", &blocks[i].w1);
            out.emplace_back(prefix + "w2", &blocks[i].w2);
        }
        out.emplace_back("final_norm_gain", &final_norm_gain);
        out.emplace_back("output_projection", &output_projection);
        return out;
    }
    std::vector<std::pair<std::string, const Tensor<R>*>> named_tensors() const {
        auto mutable_view = const_cast<PolicyParams*>(this)->named_tensors();
        std::vector<std::pair<std::string, const Tensor<R>*>> out;
        out.reserve(mutable_view.size());
        for (auto& [name, t] : mutable_view) out.emplace_back(name, t);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (auto& [name, t] : named_tensors()) t->set_requires_grad(rg);
    }
    void zero_grad() {
        for (auto& [name, t] : named_tensors()) t->zero_grad();
    }
    bool all_finite() const {
        for (const auto& [name, t] : named_tensors()) {
            for (size_t i = 0; i < t->size(); ++i) {
                if (!std::isfinite(static_cast<double>(t->data()[i]))) return false;
            }
        }
        return true;
    }
    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& [name, t] : named_tensors()) n += t->size();
        return n;
    }
    PolicyParams clone() const {
        PolicyParams copy;
        copy.config = config;
        copy.step_index = step_index;
        copy.token_embedding = clone_tensor(token_embedding);
        copy.position_embedding = clone_tensor(position_embedding);
        copy.blocks.resize(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) {
            copy.blocks[i].attn_norm_gain = clone_tensor(blocks[i].attn_norm_gain);
            copy.blocks[i].wq = clone_tensor(blocks[i].wq);
            copy.blocks[i].wk = clone_tensor(blocks[i].wk);
            copy.blocks[i].wv = clone_tensor(blocks[i].wv);
            copy.blocks[i].wo = clone_tensor(blocks[i].wo);
            copy.blocks[i].mlp_norm_gain = clone_tensor(blocks[i].mlp_norm_gain);
            copy.blocks[i].w1 = clone_tensor(blocks[i].w1);
            copy.blocks[i].w2 = clone_tensor(blocks[i].w2);
        }
        copy.final_norm_gain = clone_tensor(final_norm_gain);
        copy.output_projection = clone_tensor(output_projection);
        return copy;
    }

private:
    static Tensor<R> clone_tensor(const Tensor<R>& t) {
        return Tensor<R>::from_data(t.shape(), std::vector<R>(t.data(), t.data() + t.size()));
    }
};

namespace detail {

template <typename R>
inline void check_mask(const PolicyParams<R>& params, const SkipMask& mask) {
    if (static_cast<int>(mask.sigma.size()) != params.config.num_layers) {
        throw ConfigError("skip mask length " + std::to_string(mask.sigma.size()) + " does not match num_layers " +
                          std::to_string(params.config.num_layers));
    }
}

template <typename R>
inline void check_tokens(const PolicyParams<R>& params, std::span<const int> tokens) {
    if (tokens.empty()) throw ContractError("token sequence is empty");
    if (static_cast<int>(tokens.size()) > params.config.max_sequence_length) {
        throw DimensionError("sequence length " + std::to_string(tokens.size()) + " exceeds max_sequence_length " +
                             std::to_string(params.config.max_sequence_length));
    }
    for (int tok : tokens) {
        if (tok < 0 || tok >= params.config.vocab_size) {
            throw IndexError("token id " + std::to_string(tok) + " out of vocabulary");
        }
    }
}

}  // namespace detail

// ------------------------------ tape path ------------------------------

// Next-token logits at every position of `tokens` (teacher-forced), shape
// (len(tokens), vocab). Skipped blocks are bypassed entirely.
template <typename R>
Tensor<R> forward_logits(Tape<R>& tape, const PolicyParams<R>& params, std::span<const int> tokens,
                         const SkipMask& mask) {
    detail::check_mask(params, mask);
    detail::check_tokens(params, tokens);
    const ModelConfig& cfg = params.config;
    const int t = static_cast<int>(tokens.size());
    const int hd = cfg.head_dim();
    const R inv_sqrt_hd = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hd)));

    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;

    Tensor<R> x = add(tape, embedding(tape, params.token_embedding, tokens),
                      embedding(tape, params.position_embedding, positions));
    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        if (mask.sigma[static_cast<size_t>(layer)]) continue;
        const BlockParams<R>& b = params.blocks[static_cast<size_t>(layer)];

        Tensor<R> h = rmsnorm(tape, x, b.attn_norm_gain);
        Tensor<R> q = matmul(tape, h, b.wq);
        Tensor<R> k = matmul(tape, h, b.wk);
        Tensor<R> v = matmul(tape, h, b.wv);
        std::vector<Tensor<R>> head_outputs;
        head_outputs.reserve(static_cast<size_t>(cfg.num_heads));
        for (int head = 0; head < cfg.num_heads; ++head) {
            Tensor<R> qh = slice_cols(tape, q, head * hd, hd);
            Tensor<R> kh = slice_cols(tape, k, head * hd, hd);
            Tensor<R> vh = slice_cols(tape, v, head * hd, hd);
            Tensor<R> scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_hd);
            Tensor<R> attn = causal_softmax(tape, scores);
            head_outputs.push_back(matmul(tape, attn, vh));
        }
        Tensor<R> merged = concat_cols(tape, head_outputs);
        x = add(tape, x, matmul(tape, merged, b.wo));

        Tensor<R> m = rmsnorm(tape, x, b.mlp_norm_gain);
        Tensor<R> ff = matmul(tape, silu(tape, matmul(tape, m, b.w1)), b.w2);
        x = add(tape, x, ff);
    }
    Tensor<R> f = rmsnorm(tape, x, params.final_norm_gain);
    return matmul(tape, f, params.output_projection);
}

template <typename R>
Tensor<R> forward_logits(Tape<R>& tape, const PolicyParams<R>& params, std::span<const int> tokens) {
    return forward_logits(tape, params, tokens, SkipMask::none(params.config.num_layers));
}

// Per-token log-probabilities of the completion under teacher forcing, as a
// tape tensor of shape (L,). Used by the trainers for differentiable
// log-likelihoods.
template <typename R>
Tensor<R> completion_logprobs(Tape<R>& tape, const PolicyParams<R>& params, const TokenSequence& seq,
                              const SkipMask& mask) {
    if (seq.completion.empty()) throw ContractError("completion is empty");
    if (seq.prompt.empty()) throw ContractError("prompt is empty");
    const std::vector<int> tokens = seq.full();
    Tensor<R> logits = forward_logits(tape, params, tokens, mask);
    return log_softmax_pick(tape, logits, seq.completion, static_cast<int>(seq.prompt.size()) - 1);
}

// ------------------------------ incremental path ------------------------------

// Shared log-softmax used by both the sampler and sequence scoring so that
// recorded and re-evaluated log-probabilities agree exactly.
template <typename R>
inline std::vector<double> log_softmax_double(std::span<const R> logits) {
    std::vector<double> lp(logits.size());
    double mx = static_cast<double>(logits[0]);
    for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        lp[i] = static_cast<double>(logits[i]) - mx;
        sum += std::exp(lp[i]);
    }
    const double lse = std::log(sum);
    for (double& v : lp) v -= lse;
    return lp;
}

// Single-sequence incremental decoder with a per-layer KV cache.
template <typename R>
class Decoder {
public:
    Decoder(const PolicyParams<R>& params, const SkipMask& mask) : params_(&params), mask_(mask) {
        detail::check_mask(params, mask);
        k_cache_.resize(params.blocks.size());
        v_cache_.resize(params.blocks.size());
    }

    int position() const { return pos_; }

    // Feeds the token at the current position; returns the logits that
    // predict the next token.
    const std::vector<R>& feed(int token) {
        const ModelConfig& cfg = params_->config;
        if (token < 0 || token >= cfg.vocab_size) throw IndexError("token id " + std::to_string(token) + " out of vocabulary");
        if (pos_ >= cfg.max_sequence_length) throw DimensionError("decoder exceeded max_sequence_length");
        const int d = cfg.width;
        const int hd = cfg.head_dim();
        const R inv_sqrt_hd = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hd)));

        x_.assign(static_cast<size_t>(d), R(0));
        const R* emb = params_->token_embedding.data() + static_cast<size_t>(token) * d;
        const R* pos = params_->position_embedding.data() + static_cast<size_t>(pos_) * d;
        for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] = emb[j] + pos[j];

        for (int layer = 0; layer < cfg.num_layers; ++layer) {
            if (mask_.sigma[static_cast<size_t>(layer)]) continue;
            const BlockParams<R>& b = params_->blocks[static_cast<size_t>(layer)];

            rmsnorm_vec(x_, b.attn_norm_gain.data(), norm_);
            vecmat(norm_, b.wq, q_);
            auto& kc = k_cache_[static_cast<size_t>(layer)];
            auto& vc = v_cache_[static_cast<size_t>(layer)];
            const size_t base = kc.size();
            kc.resize(base + static_cast<size_t>(d));
            vc.resize(base + static_cast<size_t>(d));
            vecmat_into(norm_, b.wk, kc.data() + base);
            vecmat_into(norm_, b.wv, vc.data() + base);

            const int context = pos_ + 1;
            attn_out_.assign(static_cast<size_t>(d), R(0));
            for (int head = 0; head < cfg.num_heads; ++head) {
                const int off = head * hd;
                scores_.resize(static_cast<size_t>(context));
                for (int j = 0; j < context; ++j) {
                    const R* krow = kc.data() + static_cast<size_t>(j) * d + off;
                    R s = R(0);
                    for (int e = 0; e < hd; ++e) s += q_[static_cast<size_t>(off + e)] * krow[e];
                    scores_[static_cast<size_t>(j)] = s * inv_sqrt_hd;
                }
                R mx = scores_[0];
                for (int j = 1; j < context; ++j) mx = std::max(mx, scores_[static_cast<size_t>(j)]);
                R sum = R(0);
                for (int j = 0; j < context; ++j) {
                    scores_[static_cast<size_t>(j)] = std::exp(scores_[static_cast<size_t>(j)] - mx);
                    sum += scores_[static_cast<size_t>(j)];
                }
                const R inv = R(1) / sum;
                for (int j = 0; j < context; ++j) scores_[static_cast<size_t>(j)] *= inv;
                for (int j = 0; j < context; ++j) {
                    const R p = scores_[static_cast<size_t>(j)];
                    if (p == R(0)) continue;
                    const R* vrow = vc.data() + static_cast<size_t>(j) * d + off;
                    for (int e = 0; e < hd; ++e) attn_out_[static_cast<size_t>(off + e)] += p * vrow[e];
                }
            }
            vecmat(attn_out_, b.wo, proj_);
            for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] += proj_[static_cast<size_t>(j)];

            rmsnorm_vec(x_, b.mlp_norm_gain.data(), norm_);
            vecmat(norm_, b.w1, ff_);
            for (R& vff : ff_) {
                const R s = R(1) / (R(1) + std::exp(-vff));
                vff = vff * s;
            }
            vecmat(ff_, b.w2, proj_);
            for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] += proj_[static_cast<size_t>(j)];
        }

        rmsnorm_vec(x_, params_->final_norm_gain.data(), norm_);
        vecmat(norm_, params_->output_projection, logits_);
        ++pos_;
        return logits_;
    }

private:
    void rmsnorm_vec(const std::vector<R>& in, const R* gain, std::vector<R>& out) {
        const int d = static_cast<int>(in.size());
        R ss = R(0);
        for (int j = 0; j < d; ++j) ss += in[static_cast<size_t>(j)] * in[static_cast<size_t>(j)];
        const R inv = R(1) / std::sqrt(ss / R(d) + R(kRmsNormEps));
        out.resize(in.size());
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] = in[static_cast<size_t>(j)] * gain[j] * inv;
    }

    void vecmat(const std::vector<R>& a, const Tensor<R>& w, std::vector<R>& out) {
        out.assign(static_cast<size_t>(w.dim(1)), R(0));
        vecmat_into(a, w, out.data());
    }

    // out[j] = sum_k a[k] * w[k, j]; accumulation order matches the tape matmul
    void vecmat_into(const std::vector<R>& a, const Tensor<R>& w, R* out) {
        const int in_dim = w.dim(0), out_dim = w.dim(1);
        std::fill(out, out + out_dim, R(0));
        const R* wd = w.data();
        for (int k = 0; k < in_dim; ++k) {
            const R ak = a[static_cast<size_t>(k)];
            if (ak == R(0)) continue;
            const R* wrow = wd + static_cast<size_t>(k) * out_dim;
            for (int j = 0; j < out_dim; ++j) out[j] += ak * wrow[j];
        }
    }

    const PolicyParams<R>* params_;
    SkipMask mask_;
    int pos_ = 0;
    std::vector<std::vector<R>> k_cache_, v_cache_;
    std::vector<R> x_, norm_, q_, attn_out_, proj_, ff_, scores_, logits_;
};

// log probability of the completion given the prompt, summed over tokens.
// Always <= 0.
template <typename R>
double sequence_logprob(const PolicyParams<R>& params, const TokenSequence& seq, const SkipMask& mask) {
    if (seq.completion.empty()) throw ContractError("completion is empty");
    if (seq.prompt.empty()) throw ContractError("prompt is empty");
    const std::vector<int> tokens = seq.full();
    detail::check_tokens(params, tokens);
    Decoder<R> decoder(params, mask);
    const std::vector<R>* logits = nullptr;
    for (int tok : seq.prompt) logits = &decoder.feed(tok);
    double total = 0.0;
    for (size_t i = 0; i < seq.completion.size(); ++i) {
        const std::vector<double> lp = log_softmax_double(std::span<const R>(*logits));
        total += lp[static_cast<size_t>(seq.completion[i])];
        if (i + 1 < seq.completion.size()) logits = &decoder.feed(seq.completion[i]);
    }
    return total;
}

template <typename R>
double sequence_logprob(const PolicyParams<R>& params, const TokenSequence& seq) {
    return sequence_logprob(params, seq, SkipMask::none(params.config.num_layers));
}

// ------------------------------ sampling ------------------------------

struct SampledSequence {
    TokenSequence seq;
    std::vector<double> logprobs;  // per token, under the filtered renormalized distribution
};

// Ancestral sampling with temperature and nucleus filtering. The recorded
// log-probabilities are those of the distribution actually sampled from
// (after temperature scaling and top-p renormalization). With temperature 1
// and top_p 1 they are exact policy log-probabilities.
template <typename R>
SampledSequence sample_completion(const PolicyParams<R>& params, std::span<const int> prompt, const SkipMask& mask,
                                  int length, double temperature, double top_p, Rng& rng) {
    if (length < 1) throw ConfigError("completion length must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(top_p > 0.0) || top_p > 1.0) throw ConfigError("top_p must lie in (0, 1]");
    if (prompt.empty()) throw ContractError("prompt is empty");
    if (static_cast<int>(prompt.size()) + length > params.config.max_sequence_length) {
        throw DimensionError("prompt plus completion exceeds max_sequence_length");
    }

    SampledSequence out;
    out.seq.prompt.assign(prompt.begin(), prompt.end());
    out.seq.completion.reserve(static_cast<size_t>(length));
    out.logprobs.reserve(static_cast<size_t>(length));

    Decoder<R> decoder(params, mask);
    const std::vector<R>* logits = nullptr;
    for (int tok : prompt) logits = &decoder.feed(tok);

    const int v = params.config.vocab_size;
    std::vector<R> scaled(static_cast<size_t>(v));
    std::vector<int> order(static_cast<size_t>(v));
    for (int step = 0; step < length; ++step) {
        std::vector<double> lp;
        if (temperature == 1.0) {
            lp = log_softmax_double(std::span<const R>(*logits));
        } else {
            for (int j = 0; j < v; ++j) scaled[static_cast<size_t>(j)] = static_cast<R>((*logits)[static_cast<size_t>(j)] / static_cast<R>(temperature));
            lp = log_softmax_double(std::span<const R>(scaled));
        }

        int picked;
        double picked_lp;
        if (top_p >= 1.0) {
            const double u = rng.next_double();
            double cum = 0.0;
            picked = v - 1;
            for (int j = 0; j < v; ++j) {
                cum += std::exp(lp[static_cast<size_t>(j)]);
                if (u < cum) {
                    picked = j;
                    break;
                }
            }
            picked_lp = lp[static_cast<size_t>(picked)];
        } else {
            // nucleus: smallest probability-sorted prefix with mass >= top_p
            for (int j = 0; j < v; ++j) order[static_cast<size_t>(j)] = j;
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)]; });
            double kept_mass = 0.0;
            int kept = 0;
            for (int j = 0; j < v; ++j) {
                kept_mass += std::exp(lp[static_cast<size_t>(order[static_cast<size_t>(j)])]);
                kept = j + 1;
                if (kept_mass >= top_p) break;
            }
            const double u = rng.next_double() * kept_mass;
            double cum = 0.0;
            picked = order[static_cast<size_t>(kept - 1)];
            for (int j = 0; j < kept; ++j) {
                cum += std::exp(lp[static_cast<size_t>(order[static_cast<size_t>(j)])]);
                if (u < cum) {
                    picked = order[static_cast<size_t>(j)];
                    break;
                }
            }
            picked_lp = lp[static_cast<size_t>(picked)] - std::log(kept_mass);
        }

        out.seq.completion.push_back(picked);
        out.logprobs.push_back(picked_lp);
        if (step + 1 < length) logits = &decoder.feed(picked);
    }
    return out;
}

// ------------------------------ checkpoints ------------------------------

// Self-describing binary container: config + every parameter tensor + step
// index. Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'N', 'R', 'F', 'T', 'C', 'K', 'P', '1'};

template <typename R>
void save_checkpoint(const std::string& path, const PolicyParams<R>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open checkpoint " + path + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    auto write_i64 = [&](int64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    write_u32(static_cast<uint32_t>(sizeof(R)));
    const ModelConfig& c = params.config;
    for (int field : {c.num_layers, c.width, c.num_heads, c.vocab_size, c.max_sequence_length, c.ffn_multiple}) {
        write_u32(static_cast<uint32_t>(field));
    }
    write_i64(params.step_index);
    const auto named = params.named_tensors();
    write_u32(static_cast<uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        write_u32(static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(static_cast<uint32_t>(t->shape().size()));
        for (int d : t->shape()) write_u32(static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(R)));
    }
    if (!out) throw ContractError("failed writing checkpoint " + path);
}

template <typename R>
PolicyParams<R> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ContractError(path + " is not a checkpoint file");
    }
    auto read_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    };
    auto read_i64 = [&]() {
        int64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    };
    const uint32_t scalar_size = read_u32();
    if (scalar_size != sizeof(R)) {
        throw ConfigError("checkpoint scalar width " + std::to_string(scalar_size) + " does not match requested " +
                          std::to_string(sizeof(R)));
    }
    ModelConfig cfg;
    cfg.num_layers = static_cast<int>(read_u32());
    cfg.width = static_cast<int>(read_u32());
    cfg.num_heads = static_cast<int>(read_u32());
    cfg.vocab_size = static_cast<int>(read_u32());
    cfg.max_sequence_length = static_cast<int>(read_u32());
    cfg.ffn_multiple = static_cast<int>(read_u32());
    cfg.precision = sizeof(R) == 4 ? Precision::kF32 : Precision::kF64;

    PolicyParams<R> params = PolicyParams<R>::random_init(cfg, /*seed=*/0);
    params.step_index = read_i64();
    const uint32_t tensor_count = read_u32();
    auto named = params.named_tensors();
    if (tensor_count != named.size()) throw ContractError("checkpoint tensor count mismatch");
    for (auto& [name, t] : named) {
        const uint32_t name_len = read_u32();
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        if (stored != name) throw ContractError("checkpoint tensor '" + stored + "' does not match expected '" + name + "'");
        const uint32_t rank = read_u32();
        std::vector<int> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32());
        if (shape != t->shape()) throw ContractError("checkpoint shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(R)));
    }
    if (!in) throw ContractError("truncated checkpoint " + path);
    return params;
}

}  // namespace nreft
