// Acceptance suite. Runs every criterion at its pinned tolerance and prints
// one PASS/FAIL line each; exits nonzero if any hard criterion fails (the
// scaling-direction criterion is soft and only flags).
//
// Heavy artifacts (datasets, trained checkpoints) are cached under the work
// directory keyed by their exact run configuration, so re-runs are cheap.
//
//   acceptance [work_dir] [--only B-3[,B-5...]]

#include <filesystem>
#include <iostream>

#include "oracles.hpp"
#include "reasonact/cli.hpp"

using namespace reasonact;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string id;
    bool pass = false;
    bool soft = false;
    std::string detail;
};

std::vector<Criterion> g_results;

void report(const std::string& id, bool pass, const std::string& detail, bool soft = false) {
    g_results.push_back({id, pass, soft, detail});
    std::cout << (pass ? "[PASS] " : (soft ? "[FLAG] " : "[FAIL] ")) << id << "  " << detail << std::endl;
}

std::string g_work = "acceptance_work";

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// cached artifacts

void ensure_dataset(const std::string& prefix, int episodes, uint64_t seed, WorldTask task) {
    if (fs::exists(prefix + ".idx") && fs::exists(prefix + ".bin")) return;
    DatasetGenConfig g;
    g.n_episodes = episodes;
    g.task = task;
    generate_dataset(g, SplitManifest::default_split(), seed, prefix);
}

// trains (or reuses) a run whose directory carries its exact config text
TrainResult ensure_trained(const RunConfig& cfg, const std::string& resume = "") {
    const std::string cfg_path = cfg.out_dir + "/config.cfg";
    const std::string ckpt = cfg.out_dir + "/checkpoint_final.bin";
    KvMap kv;
    cfg.to_kv(kv);
    const std::string want = kv_to_text(kv);
    if (fs::exists(ckpt) && fs::exists(cfg_path) && slurp(cfg_path) == want) {
        TrainResult res;
        res.checkpoint_path = ckpt;
        res.metrics_path = cfg.out_dir + "/metrics.csv";
        res.steps_run = cfg.total_steps;
        return res;
    }
    fs::remove_all(cfg.out_dir);
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg_path, std::ios::binary) << want;
    return train<float>(cfg, resume);
}

// the pilot-calibrated default training recipe (B-1); budgets are committed
// in configs/acceptance_b1.cfg and mirrored here
RunConfig b1_config() {
    RunConfig cfg;
    cfg.data_prefix = g_work + "/data/sorting";
    cfg.out_dir = g_work + "/b1";
    cfg.batch_size = 32;
    cfg.total_steps = 1800;
    cfg.seed = 101;
    cfg.mode = "full";
    return cfg;
}

TrainResult ensure_b1() {
    ensure_dataset(g_work + "/data/sorting", 500, 101, WorldTask::Sorting);
    return ensure_trained(b1_config());
}

EvalConfig eval_cfg(const ModelConfig& mc) {
    EvalConfig ec;
    ec.horizon = mc.horizon;
    ec.sim.img = mc.img;
    return ec;
}

// ---------------------------------------------------------------------------
// B-1  end-to-end learning

void run_b1() {
    auto tr = ensure_b1();
    auto loaded = PolicyModel<float>::load_checkpoint(tr.checkpoint_path);
    Dataset ds = load_dataset(g_work + "/data/sorting", loaded.model->cfg().d_x);
    auto rep = evaluate(model_policy(*loaded.model, "single"), Protocol::InDist, 100,
                        hash_mix(101, hash_str("b1-eval")), ds.manifest, eval_cfg(loaded.model->cfg()));
    char buf[160];
    std::snprintf(buf, sizeof(buf), "in_dist success %.3f over 100 trials (threshold 0.80, %lld steps)",
                  rep.success_rate, static_cast<long long>(tr.steps_run));
    report("B-1", rep.success_rate >= 0.80, buf);
}

// ---------------------------------------------------------------------------
// B-2  multimodality: diffusion vs MSE regression on a two-mode target

struct BimodalNets {
    ModelConfig cfg;
    NoiseNet<float> net;
    NoiseSchedule sch = make_schedule(100);
};

void run_b2() {
    // diffusion head on 1D targets drawn from {-1,+1} with equal weight
    ModelConfig cfg;
    cfg.d = 4;
    cfg.horizon = 1;
    cfg.d_x = 1;
    cfg.d_c = 2;
    cfg.noise_width = 32;
    cfg.noise_blocks = 2;
    cfg.film_trunk = 4;
    cfg.t_train = 100;
    Rng rng(7);
    NoiseNet<float> net;
    net.init(cfg, rng);
    ParamRegistry<float> reg;
    net.collect(reg);
    AdamW<float> opt({.lr = 2e-3, .weight_decay = 0.0});
    auto sch = make_schedule(cfg.t_train);

    Rng data_rng(8);
    const int batch = 64;
    for (int step = 0; step < 800; ++step) {
        std::vector<std::vector<double>> x0(batch);
        for (auto& v : x0) v = {data_rng.u01() < 0.5 ? -1.0 : 1.0};
        auto cond = Tensor<float>::zeros({batch, cfg.d_c});
        auto remb = Tensor<float>::zeros({batch, cfg.d});
        auto parts = diffusion_loss(net, sch, x0, cond, remb, false, data_rng);
        backward(parts.loss);
        opt.step(reg);
        reg.zero_grads();
    }

    int lo = 0, hi = 0, mid = 0;
    Rng srng(9);
    for (int i = 0; i < 1000; ++i) {
        EpsFn fn = [&](const std::vector<double>& x, int t) {
            std::vector<float> xs(x.begin(), x.end());
            auto eps = net.predict_noise(Tensor<float>::from({1, 1}, std::move(xs)), {t},
                                         Tensor<float>::zeros({1, cfg.d_c}), Tensor<float>::zeros({1, cfg.d}), false);
            return std::vector<double>{static_cast<double>(eps.values()[0])};
        };
        const double v = sample_ddim(sch, fn, 1, 10, 0.0, srng)[0];
        if (std::abs(v + 1.0) < 0.25) ++lo;
        if (std::abs(v - 1.0) < 0.25) ++hi;
        if (std::abs(v) < 0.25) ++mid;
    }

    // the MSE regression baseline collapses onto the mean
    Rng mrng(10);
    Linear<float> l1, l2;
    l1.init("mse.l1", 16, 1, mrng);
    l2.init("mse.l2", 1, 16, mrng);
    ParamRegistry<float> mreg;
    l1.collect(mreg);
    l2.collect(mreg);
    AdamW<float> mopt({.lr = 2e-3, .weight_decay = 0.0});
    for (int step = 0; step < 400; ++step) {
        std::vector<float> targets(32);
        for (auto& t : targets) t = mrng.u01() < 0.5 ? -1.f : 1.f;
        auto x = Tensor<float>::full({32, 1}, 1.f);
        auto pred = l2.forward(gelu(l1.forward(x)));
        auto diff = sub(pred, Tensor<float>::from({32, 1}, std::move(targets)));
        backward(mean_all(mul(diff, diff)));
        mopt.step(mreg);
        mreg.zero_grads();
    }
    int near_mean = 0;
    {
        NoGradGuard ng;
        auto out = l2.forward(gelu(l1.forward(Tensor<float>::full({1, 1}, 1.f))));
        // deterministic regressor: one output, counted as its share of 1000
        if (std::abs(out.values()[0]) < 0.25f) near_mean = 1000;
    }

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "diffusion samples near modes: -1:%d +1:%d (need >=300 each); regression within 0.25 of mean: "
                  "%d/1000 (need >=900)",
                  lo, hi, near_mean);
    report("B-2", lo >= 300 && hi >= 300 && near_mean >= 900, buf);
}

// ---------------------------------------------------------------------------
// B-3  sampler and schedule identities

void run_b3() {
    auto sch = make_schedule(100);
    bool mono = true, beta_ok = true;
    for (int t = 0; t < 100; ++t) {
        if (t > 0 && sch.alpha_bar[static_cast<size_t>(t)] >= sch.alpha_bar[static_cast<size_t>(t - 1)]) mono = false;
        if (sch.betas[static_cast<size_t>(t)] < 1e-4 || sch.betas[static_cast<size_t>(t)] > 0.999) beta_ok = false;
    }

    // oracle-eps one-step x0 recovery for every t
    Rng rng(31);
    double worst = 0;
    std::vector<double> x0(8);
    for (auto& v : x0) v = rng.uniform(-1, 1);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> eps(8);
        for (auto& v : eps) v = rng.normal();
        auto xt = q_sample(sch, x0, t, eps);
        const double ab = sch.ab(t);
        for (int i = 0; i < 8; ++i)
            worst = std::max(worst, std::abs((xt[static_cast<size_t>(i)] -
                                              std::sqrt(1 - ab) * eps[static_cast<size_t>(i)]) /
                                                 std::sqrt(ab) -
                                             x0[static_cast<size_t>(i)]));
    }

    // forward-noising moments over 1e5 draws within 3 Monte-Carlo SEs
    const int t_probe = 37, n = 100000;
    const double xv = 0.6;
    Rng mc(32);
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        const double v = q_sample(sch, {xv}, t_probe, {mc.normal()})[0];
        sum += v;
        sumsq += v * v;
    }
    const double ab = sch.ab(t_probe);
    const double mean = sum / n, var = sumsq / n - mean * mean;
    const bool mean_ok = std::abs(mean - std::sqrt(ab) * xv) < 3 * std::sqrt((1 - ab) / n);
    const bool var_ok = std::abs(var - (1 - ab)) < 3 * (1 - ab) * std::sqrt(2.0 / (n - 1));

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "x0 recovery %.2e (<1e-5), abar strictly decreasing %d, betas clipped %d, moments ok %d/%d", worst,
                  mono, beta_ok, mean_ok, var_ok);
    report("B-3", worst < 1e-5 && mono && beta_ok && mean_ok && var_ok, buf);
}

// ---------------------------------------------------------------------------
// B-4  reasoning-injection ablation

void run_b4() {
    ensure_dataset(g_work + "/data/sorting", 500, 101, WorldTask::Sorting);
    RunConfig base = b1_config();
    base.out_dir = g_work + "/b4";
    base.total_steps = 1400;
    base.seed = 202;

    RunConfig a = base;
    a.out_dir = base.out_dir + "/film";
    a.model.ablate_film = false;
    RunConfig b = base;
    b.out_dir = base.out_dir + "/clamped";
    b.model.ablate_film = true;
    auto ra = ensure_trained(a);
    auto rb = ensure_trained(b);

    auto ma = PolicyModel<float>::load_checkpoint(ra.checkpoint_path);
    auto mb = PolicyModel<float>::load_checkpoint(rb.checkpoint_path);
    // identical parameter counts: clamping, not removal
    const bool counts_equal = ma.model->params().total_count() == mb.model->params().total_count();

    Dataset ds = load_dataset(base.data_prefix, base.model.d_x);
    const uint64_t es = hash_mix(base.seed, hash_str("ablate-eval"));
    auto ec = eval_cfg(base.model);
    const double fa_in =
        evaluate(model_policy(*ma.model, "single"), Protocol::InDist, 50, es, ds.manifest, ec).success_rate;
    const double fa_un =
        evaluate(model_policy(*ma.model, "single"), Protocol::UnseenMix, 50, es, ds.manifest, ec).success_rate;
    const double cb_in =
        evaluate(model_policy(*mb.model, "single"), Protocol::InDist, 50, es, ds.manifest, ec).success_rate;
    const double cb_un =
        evaluate(model_policy(*mb.model, "single"), Protocol::UnseenMix, 50, es, ds.manifest, ec).success_rate;
    const double delta = (fa_in + fa_un) / 2 - (cb_in + cb_un) / 2;

    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "film avg %.3f (in %.3f / unseen %.3f) vs clamped avg %.3f (in %.3f / unseen %.3f), delta %.3f "
                  "(need >=0.10), equal param counts %d",
                  (fa_in + fa_un) / 2, fa_in, fa_un, (cb_in + cb_un) / 2, cb_in, cb_un, delta, counts_equal);
    report("B-4", delta >= 0.10 && counts_equal, buf);
}

// ---------------------------------------------------------------------------
// B-5  reasoning shift under object swaps

void run_b5() {
    auto tr = ensure_b1();
    auto loaded = PolicyModel<float>::load_checkpoint(tr.checkpoint_path);
    Dataset ds = load_dataset(g_work + "/data/sorting", loaded.model->cfg().d_x);
    auto rep = evaluate(model_policy(*loaded.model, "single"), Protocol::SwapTrial, 50,
                        hash_mix(101, hash_str("b5-eval")), ds.manifest, eval_cfg(loaded.model->cfg()));
    int renamed = 0;
    for (const auto& t : rep.per_trial_flags)
        for (uint8_t f : t) renamed += f;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "renamed %d/50 swap trials (need >=45, triggered %d)", renamed,
                  rep.swap_triggered);
    report("B-5", renamed >= 45, buf);
}

// ---------------------------------------------------------------------------
// B-6  scaling direction (soft)

void run_b6() {
    ensure_dataset(g_work + "/data/sorting", 500, 101, WorldTask::Sorting);
    RunConfig base = b1_config();
    base.out_dir = g_work + "/b6";
    base.total_steps = 700;
    base.seed = 303;
    auto rep = scale_sweep<float>(base, {64, 128, 256}, 50);
    bool params_increase = true;
    for (size_t i = 1; i < rep.arms.size(); ++i)
        if (rep.arms[i].param_count <= rep.arms[i - 1].param_count) params_increase = false;
    std::string detail = "unseen_mix per width:";
    for (const auto& arm : rep.arms)
        detail += " d" + std::to_string(arm.width) + "=" + std::to_string(arm.unseen).substr(0, 5);
    detail += rep.monotone_unseen ? " (monotone)" : " (NOT monotone)";
    detail += params_increase ? ", params strictly increase" : ", params NOT increasing";
    // soft criterion: a violation flags the run rather than failing it
    report("B-6", rep.monotone_unseen && params_increase, detail, /*soft=*/!params_increase ? false : true);
}

// ---------------------------------------------------------------------------
// B-7  embodiment adaptation

void run_b7() {
    auto b1 = ensure_b1();
    ensure_dataset(g_work + "/data/bimanual", 200, 404, WorldTask::Bimanual);

    // (a) adapting registers one new head and leaves everything else bit-identical
    auto probe = PolicyModel<float>::load_checkpoint(b1.checkpoint_path);
    const uint64_t before = probe.model->checksum_excluding_heads();
    EmbodimentSpec spec = load_stats(g_work + "/data/bimanual", probe.model->cfg().d_x);
    probe.model->adapt_embodiment(spec);
    const bool isolated = probe.model->checksum_excluding_heads() == before;

    // (b) adapted finetune reaches the committed loss threshold in fewer steps
    // than a from-scratch bimanual model under the same seed and budget
    const double tau = 1.10;  // pinned from the pilot: B-1 total loss at its first >=80% eval
    RunConfig ad;
    ad.data_prefix = g_work + "/data/bimanual";
    ad.out_dir = g_work + "/b7/adapted";
    ad.init_from = b1.checkpoint_path;
    ad.mode = "finetune";
    ad.batch_size = 32;
    ad.total_steps = 400;
    ad.seed = 404;
    RunConfig sc = ad;
    sc.out_dir = g_work + "/b7/scratch";
    sc.init_from = "";
    sc.mode = "full";
    auto ra = ensure_trained(ad);
    auto rs = ensure_trained(sc);

    auto steps_to_tau = [&](const std::string& metrics) {
        std::ifstream f(metrics);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
            std::istringstream in(line);
            std::string tok;
            std::vector<std::string> cols;
            while (std::getline(in, tok, ',')) cols.push_back(tok);
            if (std::stod(cols[3]) <= tau) return std::stoll(cols[0]);
        }
        return static_cast<long long>(1 << 30);
    };
    const long long sa = steps_to_tau(ra.metrics_path);
    const long long ss = steps_to_tau(rs.metrics_path);

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "non-head params identical %d; steps to total<=%.2f: adapted %lld vs scratch %s (budget 400)",
                  isolated, tau, sa, ss >= (1 << 30) ? "never" : std::to_string(ss).c_str());
    report("B-7", isolated && sa < ss, buf);
}

// ---------------------------------------------------------------------------
// B-8  numerical core

void run_b8() {
    bool all = true;
    std::string detail;

    // gradient checks over every differentiable block family, 64-bit mode
    {
        ModelConfig cfg;
        cfg.d = 16;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.img = 16;
        cfg.patch = 8;
        cfg.n_act = 2;
        cfg.horizon = 2;
        cfg.d_x = 4;
        cfg.d_c = 8;
        cfg.noise_width = 16;
        cfg.noise_blocks = 2;
        cfg.film_trunk = 4;
        double worst = 0;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(seed);
            Backbone<double> bb;
            bb.init(cfg, rng);
            NoiseNet<double> nn;
            nn.init(cfg, rng);
            ActionProjection<double> pr;
            pr.init("proj", cfg.d, cfg.d_c, rng);
            ParamRegistry<double> reg;
            nn.collect(reg);
            Rng wr(seed + 9);
            for (Parameter<double>* p : reg.ordered())
                for (auto& v : p->t.values_mut()) v += wr.normal() * 0.05;

            auto vocab = Vocabulary::default_vocab();
            MultiViewObservation obs;
            obs.img = 16;
            Rng ir(seed + 70);
            for (int k = 0; k < 2; ++k) {
                std::vector<float> v(static_cast<size_t>(3 * 16 * 16));
                for (auto& p : v) p = static_cast<float>(ir.u01());
                obs.views.push_back(std::move(v));
            }
            obs.proprio.assign(8, 0.2f);
            auto instr = vocab.tokenize("sort all items", Role::Instruction);
            auto reason = vocab.tokenize("grabbing the red car", Role::Reasoning);
            Rng dr(seed + 33);
            auto xt = Tensor<double>::randn({1, cfg.horizon * cfg.d_x}, dr);
            auto eps = Tensor<double>::randn({1, cfg.horizon * cfg.d_x}, dr);

            auto f = [&]() {
                auto visual = bb.encode_views(obs);
                auto [seq, lay] = bb.build_sequence(visual, instr, reason, obs.proprio);
                auto out = bb.forward(seq, lay);
                auto ids = bb.sequence_ids(instr, reason, lay);
                auto ntp = bb.ntp_loss(out.text_logits, ids, lay);
                auto cond = reduce(Reduce::Mean, pr.forward(out.action_embs), 0);
                auto remb = reshape(out.reasoning_emb, {1, cfg.d});
                auto pred = nn.predict_noise(xt, {7}, reshape(cond, {1, cfg.d_c}), remb, false);
                auto diff = sub(pred, eps);
                return add(mean_all(mul(diff, diff)), scale(ntp, 10.0));
            };
            std::vector<Tensor<double>> leaves = {bb.tok_emb().t,
                                                  bb.act_queries().t,
                                                  bb.blocks()[0].attn.wq.w.t,
                                                  bb.blocks()[0].fc2.w.t,
                                                  pr.fc1.w.t,
                                                  pr.ln2.gain.t};
            for (Parameter<double>* p : reg.ordered()) leaves.push_back(p->t);
            auto rep = grad_check<double>(f, leaves, 1e-4, 1e-4);
            worst = std::max(worst, static_cast<double>(rep.max_rel_err));
            if (!rep.pass) all = false;
        }
        detail += "grad_check worst " + std::to_string(worst) + " (tol 1e-4)";
    }

    // loss decomposition holds bit-exactly in every logged metrics row
    {
        fs::create_directories(g_work + "/b8");
        ensure_dataset(g_work + "/b8/ds", 4, 77, WorldTask::Sorting);
        RunConfig cfg;
        cfg.model.d = 32;
        cfg.model.layers = 1;
        cfg.model.heads = 2;
        cfg.model.n_act = 4;
        cfg.model.horizon = 4;
        cfg.model.d_c = 16;
        cfg.model.noise_width = 32;
        cfg.model.noise_blocks = 2;
        cfg.model.film_trunk = 8;
        cfg.data_prefix = g_work + "/b8/ds";
        cfg.out_dir = g_work + "/b8/run";
        cfg.batch_size = 8;
        cfg.total_steps = 12;
        cfg.seed = 78;
        auto tr = ensure_trained(cfg);
        std::ifstream f(tr.metrics_path);
        std::string line;
        float alpha = -1;
        bool rows_ok = true;
        int rows = 0;
        while (std::getline(f, line)) {
            if (line.rfind("# model.alpha=", 0) == 0) alpha = std::stof(line.substr(14));
            if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
            std::istringstream in(line);
            std::string tok;
            std::vector<std::string> cols;
            while (std::getline(in, tok, ',')) cols.push_back(tok);
            const float l_diff = std::stof(cols[1]), l_ntp = std::stof(cols[2]), total = std::stof(cols[3]);
            if (total != l_diff + alpha * l_ntp) rows_ok = false;
            ++rows;
        }
        if (!rows_ok || rows == 0 || alpha != 10.f) all = false;
        detail += "; decomposition exact over " + std::to_string(rows) + " rows";
    }

    // LoRA merged/unmerged agreement < 1e-6
    {
        Rng rng(5);
        Linear<float> lin;
        lin.init("m", 32, 24, rng);
        lin.attach_lora(4, 8.0, rng);
        lin.lora->b.t = Tensor<float>::randn({32, 4}, rng, 0.2f).set_requires_grad(true);
        auto merged = lin.merged_weight();
        float worst = 0;
        for (int i = 0; i < 100; ++i) {
            auto x = Tensor<float>::randn({1, 24}, rng);
            NoGradGuard ng;
            auto a = lin.forward(x);
            auto b = add(matmul(x, transpose(merged)), lin.b.t);
            for (size_t j = 0; j < a.numel(); ++j) worst = std::max(worst, std::abs(a.values()[j] - b.values()[j]));
        }
        if (worst >= 1e-6f) all = false;
        detail += "; lora merge gap " + std::to_string(worst);
    }

    // FiLM-at-init reasoning invariance, bit-exact
    {
        ModelConfig cfg;
        cfg.d = 16;
        cfg.horizon = 2;
        cfg.d_x = 4;
        cfg.d_c = 8;
        cfg.noise_width = 16;
        cfg.noise_blocks = 2;
        cfg.film_trunk = 4;
        Rng rng(6);
        NoiseNet<float> net;
        net.init(cfg, rng);
        Rng dr(7);
        auto xt = Tensor<float>::randn({2, 8}, dr);
        auto cond = Tensor<float>::randn({2, 8}, dr);
        auto e1 = net.predict_noise(xt, {3, 50}, cond, Tensor<float>::randn({2, 16}, dr), false);
        auto e2 = net.predict_noise(xt, {3, 50}, cond, Tensor<float>::randn({2, 16}, dr), false);
        if (e1.values() != e2.values()) all = false;
        detail += "; film-init invariance bit-exact";
    }

    report("B-8", all, detail);
}

// ---------------------------------------------------------------------------
// B-9  determinism and persistence

void run_b9() {
    bool all = true;
    std::string detail;

    // byte-identical dataset regeneration
    fs::remove_all(g_work + "/b9");
    fs::create_directories(g_work + "/b9");
    DatasetGenConfig g;
    g.n_episodes = 6;
    generate_dataset(g, SplitManifest::default_split(), 55, g_work + "/b9/ds");
    const uint64_t i1 = file_checksum(g_work + "/b9/ds.idx"), b1 = file_checksum(g_work + "/b9/ds.bin");
    generate_dataset(g, SplitManifest::default_split(), 55, g_work + "/b9/ds");
    if (file_checksum(g_work + "/b9/ds.idx") != i1 || file_checksum(g_work + "/b9/ds.bin") != b1) all = false;
    detail += "dataset bytes reproduce";

    // byte-identical metrics and checkpoints for identical (config, seed)
    RunConfig cfg;
    cfg.model.d = 32;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.img = 32;
    cfg.model.n_act = 4;
    cfg.model.horizon = 4;
    cfg.model.d_c = 16;
    cfg.model.noise_width = 32;
    cfg.model.noise_blocks = 2;
    cfg.model.film_trunk = 8;
    cfg.data_prefix = g_work + "/b9/ds";
    cfg.out_dir = g_work + "/b9/run";
    cfg.batch_size = 4;
    cfg.total_steps = 4;
    cfg.seed = 66;
    auto r1 = train<float>(cfg);
    const std::string m1 = slurp(r1.metrics_path), c1 = slurp(r1.checkpoint_path);
    auto r2 = train<float>(cfg);
    if (slurp(r2.metrics_path) != m1 || slurp(r2.checkpoint_path) != c1) all = false;
    detail += "; run bytes reproduce";

    // checkpoint round trip preserves act() bit-exactly
    auto loaded = PolicyModel<float>::load_checkpoint(r1.checkpoint_path);
    SimParams sim;
    sim.img = cfg.model.img;
    auto manifest = SplitManifest::default_split();
    auto obs = observe(reset(Protocol::InDist, 3, manifest, sim), sim);
    auto o1 = loaded.model->act(obs, task_instruction(WorldTask::Sorting), "single", 42);
    loaded.model->save_checkpoint(g_work + "/b9/resaved.bin");
    auto again = PolicyModel<float>::load_checkpoint(g_work + "/b9/resaved.bin");
    auto o2 = again.model->act(obs, task_instruction(WorldTask::Sorting), "single", 42);
    if (o1.chunk != o2.chunk || o1.reasoning_text != o2.reasoning_text) all = false;
    detail += "; act() round trip bit-exact";

    report("B-9", all, detail);
}

// ---------------------------------------------------------------------------
// B-10  throughput report

void run_b10() {
    auto tr = ensure_b1();
    auto loaded = PolicyModel<float>::load_checkpoint(tr.checkpoint_path);
    auto rep = bench(*loaded.model, "single", 50, 777);
    const double decomposition_gap = std::abs(rep.stage_sum_ms - rep.total_ms) / rep.total_ms;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "act() %.1f Hz (need >=10), p50 %.1f ms, p95 %.1f ms, stage sum within %.1f%% of total (need <=5%%)",
                  rep.mean_hz, rep.p50_ms, rep.p95_ms, 100 * decomposition_gap);
    report("B-10", rep.mean_hz >= 10.0 && decomposition_gap <= 0.05, buf);
}

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc)
            only = argv[++i];
        else if (a.rfind("--", 0) != 0)
            g_work = a;
    }
    fs::create_directories(g_work);
    auto want = [&](const std::string& id) {
        if (only.empty()) return true;
        std::istringstream in(only);
        std::string tok;
        while (std::getline(in, tok, ','))
            if (tok == id) return true;
        return false;
    };

    try {
        if (want("B-3")) run_b3();
        if (want("B-2")) run_b2();
        if (want("B-8")) run_b8();
        if (want("B-9")) run_b9();
        if (want("B-1")) run_b1();
        if (want("B-10")) run_b10();
        if (want("B-5")) run_b5();
        if (want("B-7")) run_b7();
        if (want("B-4")) run_b4();
        if (want("B-6")) run_b6();
    } catch (const std::exception& e) {
        std::cout << "[FAIL] suite aborted: " << e.what() << std::endl;
        return 1;
    }

    int hard_fails = 0;
    for (const auto& c : g_results)
        if (!c.pass && !c.soft) ++hard_fails;
    std::cout << "----\n" << g_results.size() << " criteria, " << hard_fails << " hard failure(s)" << std::endl;
    return hard_fails == 0 ? 0 : 1;
}
