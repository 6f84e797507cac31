#pragma once

// Full-model assembly: backbone + projection + diffusion head + embodiment
// heads, the combined training objective, the end-to-end act() pipeline
// (observe -> self-generated reasoning -> inject -> denoise -> joint-space
// actions), training-mode control and the versioned checkpoint format.

#include <fstream>

#include "reasonact/backbone.hpp"
#include "reasonact/diffusion.hpp"

namespace reasonact {

enum class TrainMode { Full, Finetune };

inline const char* train_mode_name(TrainMode m) { return m == TrainMode::Full ? "full" : "finetune"; }
inline TrainMode train_mode_from(const std::string& s) {
    if (s == "full") return TrainMode::Full;
    if (s == "finetune") return TrainMode::Finetune;
    throw ConfigError("unknown training mode: " + s);
}

template <class S>
struct TrainingLosses {
    S l_diff = S(0);
    S l_ntp = S(0);
    S alpha = S(0);
    S total = S(0);  // always l_diff + alpha * l_ntp in S-precision
    int ntp_positions = 0;
};

struct PolicyTiming {
    int64_t encode_us = 0;
    int64_t reasoning_us = 0;
    int64_t forward_us = 0;
    int64_t sample_us = 0;
    int64_t head_us = 0;
    int64_t total_us = 0;
};

struct PolicyOutput {
    std::string reasoning_text;
    TokenSequence reasoning_tokens;
    bool reasoning_truncated = false;
    std::vector<std::vector<double>> chunk;  // [H][d_a], joint space
    PolicyTiming timing;
};

struct TrainItem {
    MultiViewObservation obs;
    std::string instruction;
    std::string reasoning;                    // teacher-forced target phrase
    std::vector<std::vector<double>> chunk;   // [H][d_a] raw joint actions
    std::string embodiment;
};

template <class S>
class PolicyModel {
public:
    PolicyModel(const ModelConfig& cfg, Vocabulary vocab, uint64_t seed)
        : cfg_(cfg), vocab_(std::move(vocab)), sched_(make_schedule(cfg.t_train)) {
        if (vocab_.size() != cfg_.vocab_size)
            throw ConfigError("vocabulary size " + std::to_string(vocab_.size()) + " does not match config " +
                              std::to_string(cfg_.vocab_size));
        Rng root(seed);
        Rng r_backbone = root.fork("backbone");
        Rng r_proj = root.fork("proj");
        Rng r_noise = root.fork("noise");
        backbone_.init(cfg_, r_backbone);
        proj_.init("proj", cfg_.d, cfg_.d_c, r_proj);
        noise_.init(cfg_, r_noise);
        seed_ = seed;
        rebuild_registry();
    }

    const ModelConfig& cfg() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const NoiseSchedule& schedule() const { return sched_; }
    ParamRegistry<S>& params() { return reg_; }
    Backbone<S>& backbone() { return backbone_; }
    NoiseNet<S>& noise_net() { return noise_; }
    ActionProjection<S>& projection() { return proj_; }
    TrainMode mode() const { return mode_; }

    // ---- embodiments -------------------------------------------------------

    void adapt_embodiment(const EmbodimentSpec& spec) {
        if (heads_.count(spec.id)) throw RegistryError("embodiment already registered: " + spec.id);
        if (spec.d_a <= 0 || spec.d_a > cfg_.d_x)
            throw ConfigError("embodiment action dim " + std::to_string(spec.d_a) + " must be in [1, d_x=" +
                              std::to_string(cfg_.d_x) + "]");
        if (static_cast<int>(spec.mins.size()) != cfg_.d_x || static_cast<int>(spec.maxs.size()) != cfg_.d_x)
            throw ConfigError("embodiment stats must be sized d_x");
        heads_[spec.id].init(cfg_, spec);
        rebuild_registry();
    }

    bool has_embodiment(const std::string& id) const { return heads_.count(id) > 0; }

    const EmbodimentHead<S>& embodiment(const std::string& id) const {
        auto it = heads_.find(id);
        if (it == heads_.end()) throw RegistryError("unknown embodiment: " + id);
        return it->second;
    }

    std::vector<std::string> embodiment_ids() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : heads_) out.push_back(k);
        return out;
    }

    uint64_t checksum_excluding_heads() const {
        return reg_.checksum_if([](const Parameter<S>& p) { return p.name.rfind("head.", 0) != 0; });
    }

    // ---- training mode -----------------------------------------------------

    // full: everything trainable. finetune: patch encoder and backbone base
    // weights frozen, LoRA adapters attached to the backbone attention/MLP
    // linears; projection, diffusion head and embodiment heads stay trainable.
    void set_training_mode(TrainMode m) {
        for (Parameter<S>* p : reg_.ordered())
            if (!p->frozen && p->t.has_grad())
                throw ContractError("set_training_mode called mid-optimizer-step (pending gradients)");
        mode_ = m;
        if (m == TrainMode::Finetune && !backbone_.has_lora()) {
            Rng r = Rng(seed_).fork("lora");
            backbone_.attach_lora(r);
            rebuild_registry();
        }
        const bool freeze_base = (m == TrainMode::Finetune);
        backbone_.for_each_base_param([&](Parameter<S>& p) { p.set_frozen(freeze_base); });
        for (Parameter<S>* p : reg_.ordered()) {
            const bool is_base = p->name.rfind("backbone.", 0) == 0 && p->name.find(".lora_") == std::string::npos;
            if (!is_base) p->set_frozen(false);
        }
    }

    // ---- combined objective --------------------------------------------------

    // One backbone pass per batch (teacher-forced reasoning); the text head
    // yields L_ntp over reasoning positions and the action-query embeddings
    // plus the reasoning embedding condition the diffusion head for L_diff.
    // total = l_diff + alpha * l_ntp, and gradients reach every unfrozen
    // parameter from both terms.
    std::pair<TrainingLosses<S>, Tensor<S>> forward_train(const std::vector<TrainItem>& batch, Rng& rng) {
        if (batch.empty()) throw ContractError("forward_train on empty batch");
        const std::string& emb_id = batch[0].embodiment;
        for (const auto& it : batch)
            if (it.embodiment != emb_id)
                throw ContractError("mixed embodiments in one batch: " + emb_id + " vs " + it.embodiment);
        const EmbodimentHead<S>& emb = embodiment(emb_id);

        const int b = static_cast<int>(batch.size());
        std::vector<Tensor<S>> seqs;
        seqs.reserve(static_cast<size_t>(b));
        RoleLayout lay{};
        std::vector<int> reason_last(static_cast<size_t>(b));
        std::vector<std::vector<int>> ids_per_sample(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            const auto& item = batch[static_cast<size_t>(i)];
            TokenSequence instr = pad_sequence(vocab_.tokenize(item.instruction, Role::Instruction), cfg_.instr_len);
            TokenSequence reason = pad_sequence(vocab_.tokenize(item.reasoning, Role::Reasoning), cfg_.reason_len);
            Tensor<S> visual = backbone_.encode_views(item.obs);
            auto [seq, l] = backbone_.build_sequence(visual, instr, reason, item.obs.proprio);
            if (i == 0)
                lay = l;
            else if (l.total != lay.total)
                throw ContractError("padded sequence lengths diverge within batch");
            reason_last[static_cast<size_t>(i)] = l.reason_last;
            ids_per_sample[static_cast<size_t>(i)] = backbone_.sequence_ids(instr, reason, l);
            seqs.push_back(seq);
        }
        const int t_len = lay.total;
        Tensor<S> stacked = concat_rows(seqs);
        Tensor<S> hidden = backbone_.transformer(stacked, t_len);
        Tensor<S> text_logits = backbone_.logits(hidden);

        // next-token targets over reasoning positions across the whole batch
        std::vector<int> targets(static_cast<size_t>(b) * t_len, 0);
        std::vector<uint8_t> mask(static_cast<size_t>(b) * t_len, 0);
        for (int i = 0; i < b; ++i) {
            const auto& ids = ids_per_sample[static_cast<size_t>(i)];
            for (int p = lay.reason_begin; p + 1 < lay.reason_end; ++p) {
                const int next = ids[static_cast<size_t>(p + 1)];
                if (next == Vocabulary::kPad) continue;
                targets[static_cast<size_t>(i) * t_len + p] = next;
                mask[static_cast<size_t>(i) * t_len + p] = 1;
            }
        }
        int counted = 0;
        Tensor<S> l_ntp = masked_cross_entropy(text_logits, targets, mask, &counted);

        // conditioning: projected action tokens (mean-pooled) and the final
        // reasoning-token embedding per sample
        std::vector<Tensor<S>> act_rows, remb_rows;
        act_rows.reserve(static_cast<size_t>(b));
        remb_rows.reserve(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            act_rows.push_back(slice_rows(hidden, i * t_len + lay.act_begin, cfg_.n_act));
            remb_rows.push_back(slice_rows(hidden, i * t_len + reason_last[static_cast<size_t>(i)], 1));
        }
        Tensor<S> proj_in = concat_rows(act_rows);                       // [B*n_act, d]
        Tensor<S> projected = proj_.forward(proj_in);                    // [B*n_act, d_c]
        Tensor<S> pooled = reduce(Reduce::Mean, reshape(projected, {b, cfg_.n_act, cfg_.d_c}), 1);  // [B, d_c]
        Tensor<S> remb = concat_rows(remb_rows);                         // [B, d]

        std::vector<std::vector<double>> x0(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            const auto& chunk = batch[static_cast<size_t>(i)].chunk;
            if (static_cast<int>(chunk.size()) != cfg_.horizon)
                throw ContractError("chunk length " + std::to_string(chunk.size()) + " != horizon");
            auto& flat = x0[static_cast<size_t>(i)];
            flat.reserve(static_cast<size_t>(cfg_.horizon * cfg_.d_x));
            for (const auto& a : chunk) {
                auto n = emb.spec.normalize(a);
                flat.insert(flat.end(), n.begin(), n.end());
            }
        }
        auto dl = diffusion_loss(noise_, sched_, x0, pooled, remb, cfg_.ablate_film, rng);

        Tensor<S> total = add(dl.loss, scale(l_ntp, static_cast<S>(cfg_.alpha)));
        TrainingLosses<S> out;
        out.l_diff = dl.loss.item();
        out.l_ntp = l_ntp.item();
        out.alpha = static_cast<S>(cfg_.alpha);
        out.total = total.item();
        out.ntp_positions = counted;
        return {out, total};
    }

    // ---- inference -----------------------------------------------------------

    // deterministic given (weights, obs, instruction, seed)
    PolicyOutput act(const MultiViewObservation& obs, const std::string& instruction, const std::string& emb_id,
                     uint64_t seed) const {
        const EmbodimentHead<S>& emb = embodiment(emb_id);
        NoGradGuard ng;
        PolicyOutput out;
        StageTimer total;

        StageTimer stage;
        Tensor<S> visual = backbone_.encode_views(obs);
        TokenSequence instr = pad_sequence(vocab_.tokenize(instruction, Role::Instruction), cfg_.instr_len);
        out.timing.encode_us = stage.micros();

        stage.reset();
        auto gen = backbone_.generate_reasoning(vocab_, visual, instr, obs.proprio, cfg_.max_reason_tokens);
        out.reasoning_tokens = gen.seq;
        out.reasoning_text = gen.text;
        out.reasoning_truncated = gen.truncated;
        out.timing.reasoning_us = stage.micros();

        stage.reset();
        TokenSequence reason = pad_sequence(gen.seq, cfg_.reason_len);
        auto [seq, lay] = backbone_.build_sequence(visual, instr, reason, obs.proprio);
        Tensor<S> hidden = backbone_.transformer(seq, lay.total);
        Tensor<S> action_embs = slice_rows(hidden, lay.act_begin, cfg_.n_act);
        Tensor<S> remb = slice_rows(hidden, lay.reason_last, 1);  // [1, d]
        Tensor<S> pooled = reduce(Reduce::Mean, proj_.forward(action_embs), 0);  // [d_c]
        Tensor<S> cond = reshape(pooled, {1, cfg_.d_c});
        out.timing.forward_us = stage.micros();

        stage.reset();
        const int dim = cfg_.horizon * cfg_.d_x;
        EpsFn eps_fn = [&](const std::vector<double>& x, int t) {
            std::vector<S> xs(x.size());
            for (size_t i = 0; i < x.size(); ++i) xs[i] = static_cast<S>(x[i]);
            Tensor<S> xt = Tensor<S>::from({1, dim}, std::move(xs));
            Tensor<S> eps = noise_.predict_noise(xt, {t}, cond, remb, cfg_.ablate_film);
            std::vector<double> out_eps(x.size());
            for (size_t i = 0; i < x.size(); ++i) out_eps[i] = static_cast<double>(eps.values()[i]);
            return out_eps;
        };
        Rng rng = Rng(seed).fork("act-noise");
        std::vector<double> chunk_norm = sample_ddim(sched_, eps_fn, dim, cfg_.sample_steps, 0.0, rng);
        out.timing.sample_us = stage.micros();

        stage.reset();
        out.chunk = emb.apply(chunk_norm, cfg_.horizon, cfg_.d_x);
        out.timing.head_us = stage.micros();
        out.timing.total_us = total.micros();
        return out;
    }

    // ---- checkpoint format -----------------------------------------------------
    //
    // magic, u32 version, config blob (flat key=value text), then records of
    // (u32 name length, name, u8 dtype tag, u8 rank, u32 extents, little-endian
    // payload); a zero name length ends the records and a fnv1a64 checksum of
    // all preceding bytes trails the file.

    static constexpr const char* kMagic = "REASONACT-CKPT\n";
    static constexpr uint32_t kVersion = 1;

    void save_checkpoint(const std::string& path, const KvMap& extra_kv = {},
                         const std::vector<std::pair<std::string, std::vector<S>>>& extra_records = {}) const {
        std::ostringstream buf;
        buf.write(kMagic, static_cast<std::streamsize>(std::string(kMagic).size()));
        write_u32(buf, kVersion);

        KvMap kv = extra_kv;
        cfg_.to_kv(kv);
        kv["train_mode"] = train_mode_name(mode_);
        kv["seed"] = std::to_string(seed_);
        std::string vocab_join;
        for (const auto& t : vocab_.tokens()) {
            if (!vocab_join.empty()) vocab_join += ',';
            vocab_join += t;
        }
        kv["vocab.tokens"] = vocab_join;
        std::string emb_list;
        for (const auto& [id, h] : heads_) {
            if (!emb_list.empty()) emb_list += ',';
            emb_list += id;
            kv["emb." + id + ".d_a"] = std::to_string(h.spec.d_a);
            kv["emb." + id + ".mins"] = join_doubles(h.spec.mins);
            kv["emb." + id + ".maxs"] = join_doubles(h.spec.maxs);
        }
        kv["emb.list"] = emb_list;
        const std::string blob = kv_to_text(kv);
        write_u64(buf, blob.size());
        buf.write(blob.data(), static_cast<std::streamsize>(blob.size()));

        for (const Parameter<S>* p : reg_.ordered()) write_record(buf, p->name, p->t.shape(), p->t.values());
        for (const auto& [name, data] : extra_records)
            write_record(buf, name, Shape{static_cast<int>(data.size())}, data);
        write_u32(buf, 0);  // record terminator

        const std::string body = buf.str();
        const uint64_t checksum = fnv1a64(body.data(), body.size());
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint: " + path);
        f.write(body.data(), static_cast<std::streamsize>(body.size()));
        f.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
        if (!f) throw IoError("checkpoint write failed: " + path);
    }

    struct LoadedCheckpoint {
        std::unique_ptr<PolicyModel<S>> model;
        KvMap kv;
        std::map<std::string, std::vector<S>> extra_records;
    };

    static LoadedCheckpoint load_checkpoint(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read checkpoint: " + path);
        std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (body.size() < sizeof(uint64_t) + std::string(kMagic).size())
            throw IoError("checkpoint truncated: " + path);
        uint64_t stored;
        std::memcpy(&stored, body.data() + body.size() - sizeof(uint64_t), sizeof(uint64_t));
        body.resize(body.size() - sizeof(uint64_t));
        if (fnv1a64(body.data(), body.size()) != stored)
            throw IoError("checkpoint checksum mismatch: " + path);

        size_t off = 0;
        const std::string magic = kMagic;
        if (body.compare(0, magic.size(), magic) != 0) throw IoError("bad checkpoint magic: " + path);
        off += magic.size();
        const uint32_t version = read_u32(body, off);
        if (version != kVersion) throw IoError("unsupported checkpoint version: " + std::to_string(version));
        const uint64_t blob_len = read_u64(body, off);
        KvMap kv = parse_kv_text(body.substr(off, blob_len));
        off += blob_len;

        ModelConfig cfg = ModelConfig::from_kv(kv, "model.", /*strict=*/true);
        std::vector<std::string> tokens = split_csv(kv.at("vocab.tokens"));
        auto model = std::make_unique<PolicyModel<S>>(cfg, Vocabulary(std::move(tokens)),
                                                      std::stoull(kv.at("seed")));
        for (const std::string& id : split_csv(kv.at("emb.list"))) {
            if (id.empty()) continue;
            EmbodimentSpec spec;
            spec.id = id;
            spec.d_a = std::stoi(kv.at("emb." + id + ".d_a"));
            spec.mins = parse_doubles(kv.at("emb." + id + ".mins"));
            spec.maxs = parse_doubles(kv.at("emb." + id + ".maxs"));
            model->adapt_embodiment(spec);
        }
        model->set_training_mode(train_mode_from(kv.at("train_mode")));

        LoadedCheckpoint out;
        while (true) {
            const uint32_t name_len = read_u32(body, off);
            if (name_len == 0) break;
            std::string name = body.substr(off, name_len);
            off += name_len;
            const uint8_t dtype = static_cast<uint8_t>(body[off++]);
            const uint8_t rank = static_cast<uint8_t>(body[off++]);
            if (dtype != dtype_tag())
                throw IoError("checkpoint dtype mismatch for " + name);
            Shape shape(rank);
            size_t n = 1;
            for (int i = 0; i < rank; ++i) {
                shape[static_cast<size_t>(i)] = static_cast<int>(read_u32(body, off));
                n *= static_cast<size_t>(shape[static_cast<size_t>(i)]);
            }
            std::vector<S> data(n);
            if (off + n * sizeof(S) > body.size()) throw IoError("checkpoint record overruns file: " + name);
            std::memcpy(data.data(), body.data() + off, n * sizeof(S));
            off += n * sizeof(S);
            Parameter<S>* p = model->reg_.find(name);
            if (p) {
                if (p->t.shape() != shape)
                    throw IoError("checkpoint shape mismatch for " + name);
                p->t.values_mut() = std::move(data);
            } else {
                out.extra_records[name] = std::move(data);
            }
        }
        out.kv = std::move(kv);
        out.model = std::move(model);
        return out;
    }

    uint64_t init_seed() const { return seed_; }

private:
    static uint8_t dtype_tag() { return sizeof(S) == 4 ? 0 : 1; }

    static void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
    static void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
    static uint32_t read_u32(const std::string& b, size_t& off) {
        if (off + 4 > b.size()) throw IoError("checkpoint truncated");
        uint32_t v;
        std::memcpy(&v, b.data() + off, 4);
        off += 4;
        return v;
    }
    static uint64_t read_u64(const std::string& b, size_t& off) {
        if (off + 8 > b.size()) throw IoError("checkpoint truncated");
        uint64_t v;
        std::memcpy(&v, b.data() + off, 8);
        off += 8;
        return v;
    }

    static void write_record(std::ostream& os, const std::string& name, const Shape& shape,
                             const std::vector<S>& data) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const uint8_t dt = dtype_tag();
        os.write(reinterpret_cast<const char*>(&dt), 1);
        const uint8_t rank = static_cast<uint8_t>(shape.size());
        os.write(reinterpret_cast<const char*>(&rank), 1);
        for (int e : shape) write_u32(os, static_cast<uint32_t>(e));
        os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(S)));
    }

    static std::string join_doubles(const std::vector<double>& v) {
        std::string out;
        for (double d : v) {
            if (!out.empty()) out += ',';
            out += fmt_double(d);
        }
        return out;
    }
    static std::vector<double> parse_doubles(const std::string& s) {
        std::vector<double> out;
        std::istringstream in(s);
        std::string tok;
        while (std::getline(in, tok, ',')) out.push_back(std::stod(tok));
        return out;
    }
    static std::vector<std::string> split_csv(const std::string& s) {
        std::vector<std::string> out;
        std::istringstream in(s);
        std::string tok;
        while (std::getline(in, tok, ',')) out.push_back(tok);
        return out;
    }

    void rebuild_registry() {
        reg_ = ParamRegistry<S>{};
        backbone_.collect(reg_);
        proj_.collect(reg_);
        noise_.collect(reg_);
        for (auto& [id, h] : heads_) h.collect(reg_);
    }

    ModelConfig cfg_;
    Vocabulary vocab_;
    Backbone<S> backbone_;
    ActionProjection<S> proj_;
    NoiseNet<S> noise_;
    NoiseSchedule sched_;
    std::map<std::string, EmbodimentHead<S>> heads_;
    ParamRegistry<S> reg_;
    TrainMode mode_ = TrainMode::Full;
    uint64_t seed_ = 0;
};

}  // namespace reasonact
