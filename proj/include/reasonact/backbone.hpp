#pragma once

// The autoregressive multimodal backbone: a compact causal transformer over
// [visual patches | instruction | SEP | reasoning | SEP | action queries |
// proprio]. Per-view patch encoding shares one linear embedding; the text
// head ties weights with the token embedding. Action-query hidden states and
// the final reasoning-token hidden state are the interfaces to the action
// head.

#include <optional>

#include "reasonact/config.hpp"
#include "reasonact/nn.hpp"
#include "reasonact/obs.hpp"
#include "reasonact/vocab.hpp"

namespace reasonact {

struct RoleLayout {
    int visual_begin = 0, visual_end = 0;
    int instr_begin = 0, instr_end = 0;
    int sep1 = 0;
    int reason_begin = 0, reason_end = 0;  // padded segment range
    int reason_last = 0;                   // index of last non-PAD reasoning token
    int sep2 = 0;
    int act_begin = 0, act_end = 0;
    int proprio = 0;
    int total = 0;
    bool has_action_tail = true;

    // disjoint ranges covering [0,total)
    void check_partition() const {
        bool ok = visual_begin == 0 && visual_end == instr_begin && instr_end == sep1 &&
                  sep1 + 1 == reason_begin;
        if (has_action_tail)
            ok = ok && reason_end == sep2 && sep2 + 1 == act_begin && act_end == proprio && proprio + 1 == total;
        else
            ok = ok && reason_end == total;
        ok = ok && reason_last >= reason_begin && reason_last < reason_end;
        if (!ok) throw ContractError("sequence layout ranges are inconsistent");
    }
};

template <class S>
struct BackboneOutput {
    Tensor<S> hidden;         // [T, d]
    Tensor<S> text_logits;    // [T, V]
    Tensor<S> action_embs;    // [N_act, d]
    Tensor<S> reasoning_emb;  // [d]
};

template <class S>
struct GeneratedReasoning {
    TokenSequence seq;
    bool truncated = false;
    std::string text;
};

template <class S>
class Backbone {
public:
    struct Block {
        LayerNorm<S> ln1, ln2;
        CausalSelfAttention<S> attn;
        Linear<S> fc1, fc2;
    };

    void init(const ModelConfig& cfg, Rng rng) {
        cfg.validate();
        cfg_ = cfg;
        tok_emb_.name = "backbone.tok_emb";
        tok_emb_.t = init::embedding_table<S>(cfg.vocab_size, cfg.d, rng).set_requires_grad(true);
        pos_emb_.name = "backbone.pos_emb";
        pos_emb_.t = init::embedding_table<S>(cfg.context, cfg.d, rng).set_requires_grad(true);
        view_emb_.name = "backbone.view_emb";
        view_emb_.t = init::embedding_table<S>(cfg.views, cfg.d, rng).set_requires_grad(true);
        const int patch_dim = 3 * cfg.patch * cfg.patch;
        patch_proj_.init("backbone.patch_proj", cfg.d, patch_dim, rng);
        act_queries_.name = "backbone.act_queries";
        act_queries_.t = init::embedding_table<S>(cfg.n_act, cfg.d, rng).set_requires_grad(true);
        proprio_proj_.init("backbone.proprio_proj", cfg.d, cfg.d_p, rng);
        blocks_.resize(static_cast<size_t>(cfg.layers));
        for (int l = 0; l < cfg.layers; ++l) {
            auto& b = blocks_[static_cast<size_t>(l)];
            const std::string p = "backbone.block" + std::to_string(l);
            b.ln1.init(p + ".ln1", cfg.d);
            b.attn.init(p + ".attn", cfg.d, cfg.heads, rng);
            b.ln2.init(p + ".ln2", cfg.d);
            b.fc1.init(p + ".fc1", 4 * cfg.d, cfg.d, rng);
            b.fc2.init(p + ".fc2", cfg.d, 4 * cfg.d, rng);
        }
        final_ln_.init("backbone.final_ln", cfg.d);
    }

    void collect(ParamRegistry<S>& reg) {
        reg.add(&tok_emb_);
        reg.add(&pos_emb_);
        reg.add(&view_emb_);
        patch_proj_.collect(reg);
        reg.add(&act_queries_);
        proprio_proj_.collect(reg);
        for (auto& b : blocks_) {
            b.ln1.collect(reg);
            b.attn.collect(reg);
            b.ln2.collect(reg);
            b.fc1.collect(reg);
            b.fc2.collect(reg);
        }
        final_ln_.collect(reg);
    }

    // the patch encoder and base transformer weights; LoRA adapters attach to
    // the attention/MLP linears only
    void attach_lora(Rng& rng) {
        for (auto& b : blocks_) {
            b.attn.wq.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
            b.attn.wk.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
            b.attn.wv.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
            b.attn.wo.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
            b.fc1.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
            b.fc2.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
        }
    }

    bool has_lora() const { return !blocks_.empty() && blocks_[0].attn.wq.lora.has_value(); }

    template <class Fn>
    void for_each_base_param(Fn fn) {
        fn(tok_emb_);
        fn(pos_emb_);
        fn(view_emb_);
        fn(patch_proj_.w);
        fn(patch_proj_.b);
        fn(act_queries_);
        fn(proprio_proj_.w);
        fn(proprio_proj_.b);
        for (auto& b : blocks_) {
            fn(b.ln1.gain);
            fn(b.ln1.bias);
            fn(b.ln2.gain);
            fn(b.ln2.bias);
            fn(b.attn.wq.w);
            fn(b.attn.wq.b);
            fn(b.attn.wk.w);
            fn(b.attn.wk.b);
            fn(b.attn.wv.w);
            fn(b.attn.wv.b);
            fn(b.attn.wo.w);
            fn(b.attn.wo.b);
            fn(b.fc1.w);
            fn(b.fc1.b);
            fn(b.fc2.w);
            fn(b.fc2.b);
        }
        fn(final_ln_.gain);
        fn(final_ln_.bias);
    }

    // ---- visual encoding -------------------------------------------------

    // each view is split into patches, embedded by the same weights, tagged
    // with its view-id embedding, and the blocks are concatenated in view
    // order: K views of P patches give K*P tokens
    Tensor<S> encode_views(const MultiViewObservation& obs) const {
        if (static_cast<int>(obs.views.size()) != cfg_.views)
            throw DimensionError("expected " + std::to_string(cfg_.views) + " views, got " +
                                 std::to_string(obs.views.size()));
        const int s = cfg_.img, p = cfg_.patch;
        if (s % p != 0) throw ConfigError("image size not divisible by patch size");
        const int grid = s / p;
        const int patches = grid * grid;
        const int patch_dim = 3 * p * p;

        std::vector<S> flat(static_cast<size_t>(cfg_.views * patches) * patch_dim);
        std::vector<int> view_ids;
        view_ids.reserve(static_cast<size_t>(cfg_.views * patches));
        size_t w = 0;
        for (int k = 0; k < cfg_.views; ++k) {
            const auto& img = obs.views[static_cast<size_t>(k)];
            if (static_cast<int>(img.size()) != 3 * s * s) throw DimensionError("view raster has wrong size");
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    for (int c = 0; c < 3; ++c)
                        for (int y = 0; y < p; ++y)
                            for (int x = 0; x < p; ++x)
                                flat[w++] = static_cast<S>(
                                    img[static_cast<size_t>(c) * s * s + static_cast<size_t>(gy * p + y) * s +
                                        (gx * p + x)]);
                    view_ids.push_back(k);
                }
        }
        Tensor<S> patches_t = Tensor<S>::from({cfg_.views * patches, patch_dim}, std::move(flat));
        Tensor<S> tok = patch_proj_.forward(patches_t);
        return add(tok, embedding_rows(view_emb_.t, view_ids));
    }

    // ---- sequence assembly -----------------------------------------------

    std::pair<Tensor<S>, RoleLayout> build_sequence(const Tensor<S>& visual, const TokenSequence& instr,
                                                    const TokenSequence& reasoning,
                                                    const std::vector<float>& proprio,
                                                    bool action_tail = true) const {
        RoleLayout lay;
        const int nv = visual.dim(0);
        const int ni = static_cast<int>(instr.size());
        const int nr = static_cast<int>(reasoning.size());
        lay.visual_begin = 0;
        lay.visual_end = nv;
        lay.instr_begin = nv;
        lay.instr_end = nv + ni;
        lay.sep1 = lay.instr_end;
        lay.reason_begin = lay.sep1 + 1;
        lay.reason_end = lay.reason_begin + nr;
        lay.has_action_tail = action_tail;
        if (action_tail) {
            lay.sep2 = lay.reason_end;
            lay.act_begin = lay.sep2 + 1;
            lay.act_end = lay.act_begin + cfg_.n_act;
            lay.proprio = lay.act_end;
            lay.total = lay.proprio + 1;
        } else {
            lay.total = lay.reason_end;
        }
        lay.reason_last = lay.reason_begin;
        for (int i = 0; i < nr; ++i)
            if (reasoning.ids[static_cast<size_t>(i)] != Vocabulary::kPad) lay.reason_last = lay.reason_begin + i;
        if (lay.total > cfg_.context)
            throw ContractError("sequence length " + std::to_string(lay.total) + " exceeds context " +
                                std::to_string(cfg_.context) + " (visual " + std::to_string(nv) + ", instr " +
                                std::to_string(ni) + ", reasoning " + std::to_string(nr) + ")");
        lay.check_partition();

        std::vector<int> text_ids = instr.ids;
        text_ids.push_back(Vocabulary::kSep);
        text_ids.insert(text_ids.end(), reasoning.ids.begin(), reasoning.ids.end());
        std::vector<Tensor<S>> parts;
        parts.push_back(visual);
        parts.push_back(embedding_rows(tok_emb_.t, text_ids));
        if (action_tail) {
            parts.push_back(embedding_rows(tok_emb_.t, {Vocabulary::kSep}));
            parts.push_back(act_queries_.t);
            std::vector<S> pp(proprio.size());
            for (size_t i = 0; i < proprio.size(); ++i) pp[i] = static_cast<S>(proprio[i]);
            parts.push_back(proprio_proj_.forward(Tensor<S>::from({1, cfg_.d_p}, std::move(pp))));
        }
        Tensor<S> seq = concat_rows(parts);
        return {add(seq, slice_rows(pos_emb_.t, 0, lay.total)), lay};
    }

    // ---- transformer -----------------------------------------------------

    // rows = one or more sequences of length t laid out back to back
    Tensor<S> transformer(const Tensor<S>& x, int t) const {
        const int total_rows = x.dim(0);
        if (total_rows % t != 0) throw DimensionError("row count not a multiple of sequence length");
        const int n_seq = total_rows / t;
        Tensor<S> h = x;
        for (const auto& b : blocks_) {
            Tensor<S> n1 = b.ln1.forward(h);
            Tensor<S> att;
            if (n_seq == 1) {
                att = b.attn.forward(n1);
            } else {
                std::vector<Tensor<S>> outs;
                outs.reserve(static_cast<size_t>(n_seq));
                for (int i = 0; i < n_seq; ++i) outs.push_back(b.attn.forward(slice_rows(n1, i * t, t)));
                att = concat_rows(outs);
            }
            h = add(h, att);
            h = add(h, b.fc2.forward(gelu(b.fc1.forward(b.ln2.forward(h)))));
        }
        return final_ln_.forward(h);
    }

    // weight-tied text head
    Tensor<S> logits(const Tensor<S>& hidden) const { return matmul(hidden, transpose(tok_emb_.t)); }

    BackboneOutput<S> forward(const Tensor<S>& seq, const RoleLayout& lay) const {
        BackboneOutput<S> out;
        out.hidden = transformer(seq, lay.total);
        out.text_logits = logits(out.hidden);
        if (lay.has_action_tail) out.action_embs = slice_rows(out.hidden, lay.act_begin, cfg_.n_act);
        out.reasoning_emb = reshape(slice_rows(out.hidden, lay.reason_last, 1), {cfg_.d});
        return out;
    }

    // mean cross-entropy over reasoning-role positions, shifted by one;
    // PAD targets are excluded. counted==0 comes back flagged with loss 0.
    Tensor<S> ntp_loss(const Tensor<S>& text_logits, const std::vector<int>& full_ids, const RoleLayout& lay,
                       int* counted_out = nullptr) const {
        const int t = text_logits.dim(0);
        if (static_cast<int>(full_ids.size()) != t) throw DimensionError("ntp_loss: ids length mismatch");
        std::vector<int> targets(static_cast<size_t>(t), 0);
        std::vector<uint8_t> mask(static_cast<size_t>(t), 0);
        for (int p = lay.reason_begin; p + 1 < lay.reason_end; ++p) {
            const int next = full_ids[static_cast<size_t>(p + 1)];
            if (next == Vocabulary::kPad) continue;
            targets[static_cast<size_t>(p)] = next;
            mask[static_cast<size_t>(p)] = 1;
        }
        return masked_cross_entropy(text_logits, targets, mask, counted_out);
    }

    // the token ids of the assembled sequence (visual/action positions get PAD)
    std::vector<int> sequence_ids(const TokenSequence& instr, const TokenSequence& reasoning,
                                  const RoleLayout& lay) const {
        std::vector<int> ids(static_cast<size_t>(lay.total), Vocabulary::kPad);
        for (int i = 0; i < static_cast<int>(instr.size()); ++i)
            ids[static_cast<size_t>(lay.instr_begin + i)] = instr.ids[static_cast<size_t>(i)];
        ids[static_cast<size_t>(lay.sep1)] = Vocabulary::kSep;
        for (int i = 0; i < static_cast<int>(reasoning.size()); ++i)
            ids[static_cast<size_t>(lay.reason_begin + i)] = reasoning.ids[static_cast<size_t>(i)];
        if (lay.has_action_tail) ids[static_cast<size_t>(lay.sep2)] = Vocabulary::kSep;
        return ids;
    }

    // Greedy argmax decoding of the reasoning segment, re-running the forward
    // pass with the grown segment each step. Deterministic; stops at EOS or
    // after max_len generated tokens (then flagged truncated).
    GeneratedReasoning<S> generate_reasoning(const Vocabulary& vocab, const Tensor<S>& visual,
                                             const TokenSequence& instr, const std::vector<float>& proprio,
                                             int max_len) const {
        NoGradGuard ng;
        GeneratedReasoning<S> out;
        TokenSequence cur;
        cur.ids = {Vocabulary::kBos};
        cur.roles = {Role::Reasoning};
        for (int step = 0; step < max_len; ++step) {
            auto [seq, lay] = build_sequence(visual, instr, cur, proprio, /*action_tail=*/false);
            Tensor<S> hidden = transformer(seq, lay.total);
            Tensor<S> last = slice_rows(hidden, lay.total - 1, 1);
            Tensor<S> lg = logits(last);
            int next = argmax_lastdim(lg)[0];
            cur.ids.push_back(next);
            cur.roles.push_back(Role::Reasoning);
            if (next == Vocabulary::kEos) break;
        }
        if (cur.ids.back() != Vocabulary::kEos) {
            out.truncated = true;
            cur.ids.push_back(Vocabulary::kEos);
            cur.roles.push_back(Role::Reasoning);
        }
        out.seq = std::move(cur);
        out.text = vocab.detokenize(out.seq.ids);
        return out;
    }

    const ModelConfig& cfg() const { return cfg_; }
    Parameter<S>& tok_emb() { return tok_emb_; }
    Parameter<S>& view_emb() { return view_emb_; }
    Parameter<S>& act_queries() { return act_queries_; }
    Linear<S>& patch_proj() { return patch_proj_; }
    std::vector<Block>& blocks() { return blocks_; }

private:
    ModelConfig cfg_;
    Parameter<S> tok_emb_, pos_emb_, view_emb_, act_queries_;
    Linear<S> patch_proj_, proprio_proj_;
    std::vector<Block> blocks_;
    LayerNorm<S> final_ln_;
};

}  // namespace reasonact
