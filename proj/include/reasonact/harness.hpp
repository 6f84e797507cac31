#pragma once

// Training loop, run configuration, metrics emission, checkpoint/resume, and
// the ablation / benchmark / scaling runners behind the CLI.
//
// Reproducibility: (config, seed, dataset checksum) fully determine the
// metrics file bytes. Anything wall-clock lives in a sidecar .timing.csv so
// the metrics proper stay byte-comparable across runs.

#include <iomanip>

#include "reasonact/evaluate.hpp"
#include "reasonact/policy.hpp"

namespace reasonact {

struct RunConfig {
    ModelConfig model;
    std::string data_prefix = "data/sorting";
    std::string out_dir = "runs/run0";
    std::string init_from = "";  // checkpoint to adapt/finetune from
    double lr_full = 3e-4;
    double lr_finetune = 2e-5;  // fixed fine-tuning rate
    double beta1 = 0.9, beta2 = 0.95, adam_eps = 1e-8, weight_decay = 0.01;
    double clip_norm = 1.0;
    int batch_size = 32;
    int total_steps = 1500;
    int eval_cadence = 0;  // 0 disables periodic eval
    int eval_trials = 20;
    int ckpt_cadence = 0;  // 0 = final checkpoint only
    uint64_t seed = 0;
    std::string mode = "full";
    bool ema = false;
    double ema_decay = 0.999;

    void to_kv(KvMap& kv) const {
        model.to_kv(kv);
        kv["data.prefix"] = data_prefix;
        kv["run.out_dir"] = out_dir;
        kv["run.init_from"] = init_from;
        kv["opt.lr_full"] = fmt_double(lr_full);
        kv["opt.lr_finetune"] = fmt_double(lr_finetune);
        kv["opt.beta1"] = fmt_double(beta1);
        kv["opt.beta2"] = fmt_double(beta2);
        kv["opt.eps"] = fmt_double(adam_eps);
        kv["opt.weight_decay"] = fmt_double(weight_decay);
        kv["opt.clip_norm"] = fmt_double(clip_norm);
        kv["train.batch_size"] = std::to_string(batch_size);
        kv["train.total_steps"] = std::to_string(total_steps);
        kv["train.eval_cadence"] = std::to_string(eval_cadence);
        kv["train.eval_trials"] = std::to_string(eval_trials);
        kv["train.ckpt_cadence"] = std::to_string(ckpt_cadence);
        kv["train.seed"] = std::to_string(seed);
        kv["train.mode"] = mode;
        kv["train.ema"] = ema ? "true" : "false";
        kv["train.ema_decay"] = fmt_double(ema_decay);
    }

    static RunConfig from_kv(const KvMap& kv) {
        RunConfig c;
        c.model = ModelConfig::from_kv(kv);
        KvReader r{kv, false};
        c.data_prefix = r.str("data.prefix", c.data_prefix);
        c.out_dir = r.str("run.out_dir", c.out_dir);
        c.init_from = r.str("run.init_from", c.init_from);
        c.lr_full = r.getd("opt.lr_full", c.lr_full);
        c.lr_finetune = r.getd("opt.lr_finetune", c.lr_finetune);
        c.beta1 = r.getd("opt.beta1", c.beta1);
        c.beta2 = r.getd("opt.beta2", c.beta2);
        c.adam_eps = r.getd("opt.eps", c.adam_eps);
        c.weight_decay = r.getd("opt.weight_decay", c.weight_decay);
        c.clip_norm = r.getd("opt.clip_norm", c.clip_norm);
        c.batch_size = r.geti("train.batch_size", c.batch_size);
        c.total_steps = r.geti("train.total_steps", c.total_steps);
        c.eval_cadence = r.geti("train.eval_cadence", c.eval_cadence);
        c.eval_trials = r.geti("train.eval_trials", c.eval_trials);
        c.ckpt_cadence = r.geti("train.ckpt_cadence", c.ckpt_cadence);
        c.seed = static_cast<uint64_t>(r.geti64("train.seed", static_cast<int64_t>(c.seed)));
        c.mode = r.str("train.mode", c.mode);
        c.ema = r.getb("train.ema", c.ema);
        c.ema_decay = r.getd("train.ema_decay", c.ema_decay);
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read config file: " + path);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return from_kv(parse_kv_text(text));
    }

    void save(const std::string& path) const {
        KvMap kv;
        to_kv(kv);
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write config file: " + path);
        f << kv_to_text(kv);
    }
};

// ---------------------------------------------------------------------------
// metrics

struct MetricsRow {
    int64_t step = 0;
    float l_diff = 0, l_ntp = 0, total = 0;
    double grad_norm = 0;
    double wall_ms = 0;           // sidecar only
    double eval_in_dist = -1.0;   // -1 = not evaluated this step
};

class MetricsWriter {
public:
    MetricsWriter(const std::string& out_dir, const RunConfig& cfg, const std::string& name = "metrics") {
        std::filesystem::create_directories(out_dir);
        path_ = out_dir + "/" + name + ".csv";
        f_.open(path_, std::ios::binary);
        timing_.open(out_dir + "/" + name + ".timing.csv", std::ios::binary);
        if (!f_ || !timing_) throw IoError("cannot open metrics files in " + out_dir);
        KvMap kv;
        cfg.to_kv(kv);
        for (const auto& [k, v] : kv) f_ << "# " << k << "=" << v << "\n";
        f_ << "step,l_diff,l_ntp,total,grad_norm,eval_in_dist\n";
        timing_ << "step,wall_ms\n";
    }

    void write(const MetricsRow& r) {
        char buf[160];
        // %.9g round-trips float32 exactly
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.17g,", static_cast<long long>(r.step),
                      static_cast<double>(r.l_diff), static_cast<double>(r.l_ntp), static_cast<double>(r.total),
                      r.grad_norm);
        f_ << buf;
        if (r.eval_in_dist >= 0) f_ << fmt_double(r.eval_in_dist);
        f_ << "\n";
        f_.flush();
        timing_ << r.step << "," << r.wall_ms << "\n";
        timing_.flush();
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream f_, timing_;
};

// ---------------------------------------------------------------------------
// policy adapter: drives sortworld.evaluate through PolicyModel::act

template <class S>
PolicyFn model_policy(const PolicyModel<S>& model, const std::string& embodiment) {
    return [&model, embodiment](const WorldState&, const MultiViewObservation& obs, const std::string& instruction,
                                uint64_t seed, std::string* reasoning_out) {
        PolicyOutput out = model.act(obs, instruction, embodiment, seed);
        if (reasoning_out) *reasoning_out = out.reasoning_text;
        return out.chunk;
    };
}

// ---------------------------------------------------------------------------
// training

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    float final_total = 0;
    double last_eval = -1;
    int64_t steps_run = 0;
};

namespace harness_detail {

// deterministic shuffled index stream: epoch permutations keyed by (seed, epoch)
inline std::vector<size_t> epoch_perm(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(hash_mix(seed, hash_mix(hash_str("shuffle"), static_cast<uint64_t>(epoch))));
    for (size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    return idx;
}

inline std::vector<size_t> batch_indices(size_t n, int batch, uint64_t seed, int64_t step) {
    std::vector<size_t> out;
    out.reserve(static_cast<size_t>(batch));
    int64_t cursor = (step - 1) * batch;
    while (static_cast<int>(out.size()) < batch) {
        const int64_t epoch = cursor / static_cast<int64_t>(n);
        const size_t off = static_cast<size_t>(cursor % static_cast<int64_t>(n));
        auto perm = epoch_perm(n, seed, epoch);
        for (size_t i = off; i < n && static_cast<int>(out.size()) < batch; ++i) {
            out.push_back(perm[i]);
            ++cursor;
        }
    }
    return out;
}

template <class S>
TrainItem dataset_item(const Dataset& ds, size_t idx, int horizon) {
    const FrameEntry& f = ds.frames[idx];
    TrainItem it;
    it.obs = ds.frame_obs(idx);
    it.instruction = f.instruction;
    it.reasoning = f.phrase;
    it.chunk = ds.frame_chunk(idx, horizon);
    it.embodiment = f.embodiment;
    return it;
}

}  // namespace harness_detail

// Trains per the config, optionally resuming from a checkpoint (bit-identical
// continuation: optimizer moments and the step counter ride inside the file).
template <class S = float>
TrainResult train(const RunConfig& cfg, const std::string& resume_from = "") {
    Dataset ds = load_dataset(cfg.data_prefix, cfg.model.d_x);
    if (ds.frames.empty()) throw ConfigError("dataset is empty: " + cfg.data_prefix);
    const std::string emb_id = ds.frames[0].embodiment;
    EmbodimentSpec spec = ds.spec(emb_id);
    if (ds.img != cfg.model.img)
        throw ConfigError("dataset image size " + std::to_string(ds.img) + " != model config " +
                          std::to_string(cfg.model.img));
    if (spec.d_a > cfg.model.d_x) throw ConfigError("dataset action dim exceeds model d_x");

    std::unique_ptr<PolicyModel<S>> model;
    AdamW<S> opt({cfg.mode == "finetune" ? cfg.lr_finetune : cfg.lr_full, cfg.beta1, cfg.beta2, cfg.adam_eps,
                  cfg.weight_decay});
    int64_t start_step = 0;

    if (!resume_from.empty() || !cfg.init_from.empty()) {
        auto loaded = PolicyModel<S>::load_checkpoint(resume_from.empty() ? cfg.init_from : resume_from);
        model = std::move(loaded.model);
        if (!model->has_embodiment(emb_id)) model->adapt_embodiment(spec);
        model->set_training_mode(train_mode_from(cfg.mode));
        if (!resume_from.empty()) {
            // restore the optimizer mid-stream
            start_step = std::stoll(loaded.kv.at("train.step"));
            opt.set_step_count(std::stoll(loaded.kv.at("opt.step")));
            for (auto& [name, data] : loaded.extra_records) {
                if (name.rfind("__opt.m.", 0) == 0) opt.state()[name.substr(8)].m = std::move(data);
                if (name.rfind("__opt.v.", 0) == 0) opt.state()[name.substr(8)].v = std::move(data);
            }
        }
    } else {
        ModelConfig mc = cfg.model;
        model = std::make_unique<PolicyModel<S>>(mc, Vocabulary::default_vocab(mc.vocab_size), cfg.seed);
        model->adapt_embodiment(spec);
        model->set_training_mode(train_mode_from(cfg.mode));
    }

    std::filesystem::create_directories(cfg.out_dir);
    MetricsWriter metrics(cfg.out_dir, cfg);
    EvalConfig ec;
    ec.horizon = cfg.model.horizon;
    ec.sim.img = cfg.model.img;

    std::map<std::string, std::vector<S>> ema;
    if (cfg.ema)
        for (Parameter<S>* p : model->params().ordered()) ema[p->name] = p->t.values();

    auto save_ckpt = [&](const std::string& path, int64_t step) {
        KvMap extra{{"train.step", std::to_string(step)}, {"opt.step", std::to_string(opt.step_count())}};
        std::vector<std::pair<std::string, std::vector<S>>> recs;
        for (auto& [name, st] : opt.state()) {
            if (st.m.empty()) continue;
            recs.emplace_back("__opt.m." + name, st.m);
            recs.emplace_back("__opt.v." + name, st.v);
        }
        for (auto& [name, v] : ema) recs.emplace_back("__ema." + name, v);
        model->save_checkpoint(path, extra, recs);
    };

    TrainResult res;
    for (int64_t step = start_step + 1; step <= cfg.total_steps; ++step) {
        StageTimer timer;
        auto idxs = harness_detail::batch_indices(ds.frames.size(), cfg.batch_size, cfg.seed, step);
        std::vector<TrainItem> batch;
        batch.reserve(idxs.size());
        for (size_t i : idxs) batch.push_back(harness_detail::dataset_item<S>(ds, i, cfg.model.horizon));

        Rng step_rng(hash_mix(cfg.seed, hash_mix(hash_str("diffusion"), static_cast<uint64_t>(step))));
        auto [losses, total] = model->forward_train(batch, step_rng);
        backward(total);
        const double gnorm = clip_grad_norm(model->params(), cfg.clip_norm);
        opt.step(model->params());
        model->params().zero_grads();

        if (cfg.ema)
            for (Parameter<S>* p : model->params().ordered()) {
                auto& shadow = ema[p->name];
                const auto& w = p->t.values();
                for (size_t i = 0; i < w.size(); ++i)
                    shadow[i] = static_cast<S>(cfg.ema_decay * shadow[i] + (1.0 - cfg.ema_decay) * w[i]);
            }

        MetricsRow row;
        row.step = step;
        row.l_diff = static_cast<float>(losses.l_diff);
        row.l_ntp = static_cast<float>(losses.l_ntp);
        row.total = static_cast<float>(losses.total);
        row.grad_norm = gnorm;
        row.wall_ms = timer.micros() / 1000.0;

        if (cfg.eval_cadence > 0 && step % cfg.eval_cadence == 0) {
            auto rep = evaluate(model_policy(*model, emb_id),
                                emb_id == "bimanual" ? Protocol::BimanualSeen : Protocol::InDist, cfg.eval_trials,
                                hash_mix(cfg.seed, hash_mix(hash_str("eval"), static_cast<uint64_t>(step))),
                                ds.manifest, ec);
            row.eval_in_dist = rep.success_rate;
            res.last_eval = rep.success_rate;
        }
        metrics.write(row);
        res.final_total = static_cast<float>(losses.total);
        res.steps_run = step;

        if (cfg.ckpt_cadence > 0 && step % cfg.ckpt_cadence == 0)
            save_ckpt(cfg.out_dir + "/checkpoint_" + std::to_string(step) + ".bin", step);
    }
    res.checkpoint_path = cfg.out_dir + "/checkpoint_final.bin";
    save_ckpt(res.checkpoint_path, cfg.total_steps);
    res.metrics_path = metrics.path();
    return res;
}

// ---------------------------------------------------------------------------
// ablation: identical seeds and budgets, FiLM generators clamped in arm B

struct AblationResult {
    EvalReport film_in_dist, film_unseen;
    EvalReport clamped_in_dist, clamped_unseen;
    double film_avg = 0, clamped_avg = 0, delta = 0;
};

template <class S = float>
AblationResult ablate_reasoning(const RunConfig& base, int eval_trials = 50) {
    RunConfig a = base;
    a.out_dir = base.out_dir + "/film";
    a.model.ablate_film = false;
    RunConfig b = base;
    b.out_dir = base.out_dir + "/clamped";
    b.model.ablate_film = true;

    TrainResult ra = train<S>(a);
    TrainResult rb = train<S>(b);

    auto ma = PolicyModel<S>::load_checkpoint(ra.checkpoint_path);
    auto mb = PolicyModel<S>::load_checkpoint(rb.checkpoint_path);
    Dataset ds = load_dataset(base.data_prefix, base.model.d_x);
    EvalConfig ec;
    ec.horizon = base.model.horizon;
    ec.sim.img = base.model.img;
    const uint64_t es = hash_mix(base.seed, hash_str("ablate-eval"));

    AblationResult out;
    out.film_in_dist = evaluate(model_policy(*ma.model, "single"), Protocol::InDist, eval_trials, es, ds.manifest, ec);
    out.film_unseen =
        evaluate(model_policy(*ma.model, "single"), Protocol::UnseenMix, eval_trials, es, ds.manifest, ec);
    out.clamped_in_dist =
        evaluate(model_policy(*mb.model, "single"), Protocol::InDist, eval_trials, es, ds.manifest, ec);
    out.clamped_unseen =
        evaluate(model_policy(*mb.model, "single"), Protocol::UnseenMix, eval_trials, es, ds.manifest, ec);
    out.film_avg = (out.film_in_dist.success_rate + out.film_unseen.success_rate) / 2;
    out.clamped_avg = (out.clamped_in_dist.success_rate + out.clamped_unseen.success_rate) / 2;
    out.delta = out.film_avg - out.clamped_avg;
    return out;
}

// ---------------------------------------------------------------------------
// throughput benchmark

struct BenchReport {
    double mean_hz = 0;
    double p50_ms = 0, p95_ms = 0;
    double encode_ms = 0, reasoning_ms = 0, forward_ms = 0, sample_ms = 0, head_ms = 0;
    double stage_sum_ms = 0, total_ms = 0;
};

template <class S = float>
BenchReport bench(const PolicyModel<S>& model, const std::string& emb_id, int n_calls, uint64_t seed,
                  int warmup = 10) {
    if (n_calls <= 0) throw ContractError("bench requires a positive number of measured calls");
    SimParams sim;
    sim.img = model.cfg().img;
    auto manifest = SplitManifest::default_split();
    WorldState w = reset(Protocol::InDist, seed, manifest, sim);
    MultiViewObservation obs = observe(w, sim);
    const std::string instruction = task_instruction(w.task);

    for (int i = 0; i < warmup; ++i) (void)model.act(obs, instruction, emb_id, hash_mix(seed, 900 + i));

    std::vector<double> lat_ms;
    PolicyTiming acc{};
    for (int i = 0; i < n_calls; ++i) {
        StageTimer t;
        PolicyOutput out = model.act(obs, instruction, emb_id, hash_mix(seed, 1000 + i));
        lat_ms.push_back(t.micros() / 1000.0);
        acc.encode_us += out.timing.encode_us;
        acc.reasoning_us += out.timing.reasoning_us;
        acc.forward_us += out.timing.forward_us;
        acc.sample_us += out.timing.sample_us;
        acc.head_us += out.timing.head_us;
        acc.total_us += out.timing.total_us;
    }
    std::sort(lat_ms.begin(), lat_ms.end());
    BenchReport rep;
    double sum = 0;
    for (double v : lat_ms) sum += v;
    rep.mean_hz = 1000.0 / (sum / n_calls);
    rep.p50_ms = lat_ms[static_cast<size_t>(n_calls / 2)];
    rep.p95_ms = lat_ms[static_cast<size_t>(std::min(n_calls - 1, n_calls * 95 / 100))];
    rep.encode_ms = acc.encode_us / 1000.0 / n_calls;
    rep.reasoning_ms = acc.reasoning_us / 1000.0 / n_calls;
    rep.forward_ms = acc.forward_us / 1000.0 / n_calls;
    rep.sample_ms = acc.sample_us / 1000.0 / n_calls;
    rep.head_ms = acc.head_us / 1000.0 / n_calls;
    rep.stage_sum_ms = rep.encode_ms + rep.reasoning_ms + rep.forward_ms + rep.sample_ms + rep.head_ms;
    rep.total_ms = acc.total_us / 1000.0 / n_calls;
    return rep;
}

// ---------------------------------------------------------------------------
// width scaling sweep

struct ScaleArm {
    int width = 0;
    size_t param_count = 0;
    double in_dist = 0, unseen = 0;
};

struct ScaleReport {
    std::vector<ScaleArm> arms;
    bool monotone_unseen = true;  // soft criterion: flagged, not failed
    uint64_t dataset_checksum = 0;
};

template <class S = float>
ScaleReport scale_sweep(const RunConfig& base, const std::vector<int>& widths, int eval_trials = 50) {
    ScaleReport rep;
    rep.dataset_checksum = file_checksum(base.data_prefix + ".idx");
    for (int w : widths) {
        RunConfig c = base;
        c.model.d = w;
        c.out_dir = base.out_dir + "/w" + std::to_string(w);
        TrainResult tr = train<S>(c);
        auto m = PolicyModel<S>::load_checkpoint(tr.checkpoint_path);
        Dataset ds = load_dataset(c.data_prefix, c.model.d_x);
        EvalConfig ec;
        ec.horizon = c.model.horizon;
        ec.sim.img = c.model.img;
        const uint64_t es = hash_mix(base.seed, hash_str("scale-eval"));
        ScaleArm arm;
        arm.width = w;
        arm.param_count = m.model->params().total_count();
        arm.in_dist =
            evaluate(model_policy(*m.model, "single"), Protocol::InDist, eval_trials, es, ds.manifest, ec).success_rate;
        arm.unseen = evaluate(model_policy(*m.model, "single"), Protocol::UnseenMix, eval_trials, es, ds.manifest, ec)
                         .success_rate;
        rep.arms.push_back(arm);
    }
    for (size_t i = 1; i < rep.arms.size(); ++i)
        if (rep.arms[i].unseen < rep.arms[i - 1].unseen) rep.monotone_unseen = false;
    return rep;
}

// ---------------------------------------------------------------------------
// loss-curve plot, emitted as a standalone SVG (presentation only)

inline void write_loss_svg(const std::string& metrics_csv, const std::string& out_svg) {
    std::ifstream f(metrics_csv, std::ios::binary);
    if (!f) throw IoError("cannot read metrics for plotting: " + metrics_csv);
    std::vector<double> steps, totals;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
        std::istringstream in(line);
        std::string tok;
        std::vector<std::string> cols;
        while (std::getline(in, tok, ',')) cols.push_back(tok);
        if (cols.size() < 4) continue;
        steps.push_back(std::stod(cols[0]));
        totals.push_back(std::stod(cols[3]));
    }
    if (steps.empty()) throw ContractError("no metrics rows to plot");
    const double w = 640, h = 360, pad = 40;
    double ymax = *std::max_element(totals.begin(), totals.end());
    double ymin = *std::min_element(totals.begin(), totals.end());
    if (ymax == ymin) ymax = ymin + 1;
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n<polyline fill='none' stroke='steelblue' "
           "stroke-width='1.5' points='";
    for (size_t i = 0; i < steps.size(); ++i) {
        const double x = pad + (w - 2 * pad) * (steps[i] - steps.front()) /
                                   std::max(1.0, steps.back() - steps.front());
        const double y = h - pad - (h - 2 * pad) * (totals[i] - ymin) / (ymax - ymin);
        svg << x << "," << y << " ";
    }
    svg << "'/>\n<text x='" << pad << "' y='20' font-family='monospace' font-size='12'>total loss vs step</text>\n"
        << "</svg>\n";
    std::ofstream out(out_svg, std::ios::binary);
    if (!out) throw IoError("cannot write plot: " + out_svg);
    out << svg.str();
}

}  // namespace reasonact
