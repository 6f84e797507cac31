#pragma once

// Conditional diffusion action head: cosine noise schedule, forward noising,
// a residual-MLP noise predictor whose blocks are FiLM-modulated by
// [reasoning embedding ‖ timestep embedding], DDPM/DDIM samplers, and
// per-embodiment output heads with normalization stats.
//
// The head denoises a fixed-width action representation of d_x values per
// horizon step; embodiment actions are zero-padded into that width, so the
// trunk is shared across embodiments and adapting to a new robot initializes
// exactly one new head.

#include <map>

#include "reasonact/config.hpp"
#include "reasonact/nn.hpp"

namespace reasonact {

// ---------------------------------------------------------------------------
// noise schedule

struct NoiseSchedule {
    int t_train = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bar;

    double ab(int t) const {
        if (t < 0 || t >= t_train) throw ContractError("schedule timestep out of range: " + std::to_string(t));
        return alpha_bar[static_cast<size_t>(t)];
    }
};

// cosine schedule: abar_t = f((t+1)/T)^2 / f(0)^2 with f(u) = cos((u+s)/(1+s)*pi/2),
// s = 0.008; betas derived from the ratio and clipped to [1e-4, 0.999], then
// alpha_bar recomputed from the clipped betas so it stays in (0,1) and
// strictly decreasing.
inline NoiseSchedule make_schedule(int t_train) {
    if (t_train < 2) throw ContractError("t_train must be at least 2");
    const double s = 0.008;
    auto f = [&](double u) { return std::cos((u + s) / (1.0 + s) * M_PI / 2.0); };
    const double f0 = f(0.0);
    NoiseSchedule sch;
    sch.t_train = t_train;
    std::vector<double> raw(static_cast<size_t>(t_train));
    for (int t = 0; t < t_train; ++t) {
        const double v = f(static_cast<double>(t + 1) / t_train) / f0;
        raw[static_cast<size_t>(t)] = v * v;
    }
    sch.betas.resize(static_cast<size_t>(t_train));
    sch.alpha_bar.resize(static_cast<size_t>(t_train));
    double prev = 1.0;
    double acc = 1.0;
    for (int t = 0; t < t_train; ++t) {
        double beta = 1.0 - raw[static_cast<size_t>(t)] / prev;
        beta = std::min(0.999, std::max(1e-4, beta));
        prev = raw[static_cast<size_t>(t)];
        sch.betas[static_cast<size_t>(t)] = beta;
        acc *= 1.0 - beta;
        sch.alpha_bar[static_cast<size_t>(t)] = acc;
    }
    return sch;
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
inline std::vector<double> q_sample(const NoiseSchedule& sch, const std::vector<double>& x0, int t,
                                    const std::vector<double>& eps) {
    if (eps.size() != x0.size()) throw DimensionError("q_sample: eps shape differs from x0");
    const double ab = sch.ab(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> xt(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * eps[i];
    return xt;
}

// ---------------------------------------------------------------------------
// projection module bridging backbone embeddings to conditioning width:
// Linear -> GELU -> LayerNorm -> Linear -> LayerNorm

template <class S>
struct ActionProjection {
    Linear<S> fc1, fc2;
    LayerNorm<S> ln1, ln2;

    void init(const std::string& name, int d_in, int d_c, Rng& rng) {
        fc1.init(name + ".fc1", d_c, d_in, rng);
        ln1.init(name + ".ln1", d_c);
        fc2.init(name + ".fc2", d_c, d_c, rng);
        ln2.init(name + ".ln2", d_c);
    }

    void collect(ParamRegistry<S>& reg) {
        fc1.collect(reg);
        ln1.collect(reg);
        fc2.collect(reg);
        ln2.collect(reg);
    }

    // [N, d_in] -> [N, d_c]
    Tensor<S> forward(const Tensor<S>& x) const { return ln2.forward(fc2.forward(ln1.forward(gelu(fc1.forward(x))))); }
};

// ---------------------------------------------------------------------------
// noise prediction network

template <class S>
class NoiseNet {
public:
    struct Block {
        LayerNorm<S> ln;
        Linear<S> fc1, fc2;
        Linear<S> film_site;  // film_trunk -> 2*width, zero weights, bias (1,0)
    };

    void init(const ModelConfig& cfg, Rng& rng) {
        cfg_ = cfg;
        const int in_dim = cfg.horizon * cfg.d_x + cfg.d_c;
        const int w = cfg.noise_width;
        w_in_.init("diffhead.w_in", w, in_dim, rng);
        // FiLM conditioning vector is [reasoning_emb (d) || timestep_emb (w)]
        film_trunk_.init("diffhead.film_trunk", cfg.film_trunk, cfg.d + w, rng);
        blocks_.resize(static_cast<size_t>(cfg.noise_blocks));
        for (int i = 0; i < cfg.noise_blocks; ++i) {
            auto& b = blocks_[static_cast<size_t>(i)];
            const std::string p = "diffhead.block" + std::to_string(i);
            b.ln.init(p + ".ln", w);
            b.fc1.init(p + ".fc1", w, w, rng);
            b.fc2.init(p + ".fc2", w, w, rng);
            // zero weights + (gamma=1, beta=0) bias: modulation is a no-op at
            // init, so the output is independent of the reasoning embedding
            b.film_site.init_zero(p + ".film_site", 2 * w, cfg.film_trunk);
            for (int c = 0; c < w; ++c) b.film_site.b.t.values_mut()[static_cast<size_t>(c)] = S(1);
        }
        // small (not zero) output init: a zero final layer in series with the
        // zero-init FiLM sites would block gradient into the modulation path,
        // and the timestep reaches this net only through FiLM
        w_out_.init("diffhead.w_out", cfg.horizon * cfg.d_x, w, rng);
        for (auto& v : w_out_.w.t.values_mut()) v *= S(0.1);
    }

    void collect(ParamRegistry<S>& reg) {
        w_in_.collect(reg);
        film_trunk_.collect(reg);
        for (auto& b : blocks_) {
            b.ln.collect(reg);
            b.fc1.collect(reg);
            b.fc2.collect(reg);
            b.film_site.collect(reg);
        }
        w_out_.collect(reg);
    }

    // x_t: [B, H*d_x]; cond: [B, d_c] (mean-pooled projected action tokens);
    // reasoning_emb: [B, d]; t: one timestep per row. Returns [B, H*d_x].
    Tensor<S> predict_noise(const Tensor<S>& x_t, const std::vector<int>& t, const Tensor<S>& cond,
                            const Tensor<S>& reasoning_emb, bool ablate_film) const {
        const int b = x_t.dim(0);
        if (cond.dim(0) != b || reasoning_emb.dim(0) != b || static_cast<int>(t.size()) != b)
            throw DimensionError("predict_noise: batch dimensions disagree");
        Tensor<S> h = w_in_.forward(concat_cols(x_t, cond));
        Tensor<S> film_h;
        if (!ablate_film) {
            std::vector<S> temb;
            temb.reserve(static_cast<size_t>(b * cfg_.noise_width));
            for (int i = 0; i < b; ++i) {
                auto e = timestep_embedding_raw<S>(t[static_cast<size_t>(i)], cfg_.noise_width, cfg_.t_train);
                temb.insert(temb.end(), e.begin(), e.end());
            }
            Tensor<S> cvec = concat_cols(reasoning_emb, Tensor<S>::from({b, cfg_.noise_width}, std::move(temb)));
            film_h = film_trunk_.forward(cvec);
        }
        const int w = cfg_.noise_width;
        for (const auto& blk : blocks_) {
            h = add(h, blk.fc2.forward(gelu(blk.fc1.forward(blk.ln.forward(h)))));
            if (!ablate_film) {
                Tensor<S> gb = blk.film_site.forward(film_h);
                h = film_modulate(h, slice_cols(gb, 0, w), slice_cols(gb, w, w));
            }
        }
        return w_out_.forward(h);
    }

    const ModelConfig& cfg() const { return cfg_; }

private:
    ModelConfig cfg_;
    Linear<S> w_in_, w_out_, film_trunk_;
    std::vector<Block> blocks_;
};

// mean squared error between predicted and injected noise; t drawn uniformly
// from {0..T-1}, eps from a unit Gaussian
template <class S>
struct DiffusionLossParts {
    Tensor<S> loss;
    std::vector<int> t;
};

template <class S>
DiffusionLossParts<S> diffusion_loss(const NoiseNet<S>& net, const NoiseSchedule& sch,
                                     const std::vector<std::vector<double>>& x0, const Tensor<S>& cond,
                                     const Tensor<S>& reasoning_emb, bool ablate_film, Rng& rng) {
    const int b = static_cast<int>(x0.size());
    const int dim = static_cast<int>(x0[0].size());
    std::vector<int> t(static_cast<size_t>(b));
    std::vector<S> xt(static_cast<size_t>(b) * dim), eps(static_cast<size_t>(b) * dim);
    for (int i = 0; i < b; ++i) {
        t[static_cast<size_t>(i)] = static_cast<int>(rng.below(static_cast<uint64_t>(sch.t_train)));
        std::vector<double> e(static_cast<size_t>(dim));
        for (auto& v : e) v = rng.normal();
        auto x = q_sample(sch, x0[static_cast<size_t>(i)], t[static_cast<size_t>(i)], e);
        for (int j = 0; j < dim; ++j) {
            xt[static_cast<size_t>(i) * dim + j] = static_cast<S>(x[static_cast<size_t>(j)]);
            eps[static_cast<size_t>(i) * dim + j] = static_cast<S>(e[static_cast<size_t>(j)]);
        }
    }
    Tensor<S> xt_t = Tensor<S>::from({b, dim}, std::move(xt));
    Tensor<S> eps_t = Tensor<S>::from({b, dim}, std::move(eps));
    Tensor<S> pred = net.predict_noise(xt_t, t, cond, reasoning_emb, ablate_film);
    Tensor<S> diff = sub(pred, eps_t);
    return {mean_all(mul(diff, diff)), std::move(t)};
}

// ---------------------------------------------------------------------------
// samplers. eps_fn(x_t, t) -> eps_hat over raw doubles; weights are read-only
// so trajectories parallelize with per-trajectory rng streams.

using EpsFn = std::function<std::vector<double>(const std::vector<double>&, int)>;

// denoised estimates are clipped to the normalized action range during
// sampling (the untrained or far-from-data eps estimate at small abar would
// otherwise blow up through the 1/sqrt(abar) inversion)
constexpr double kDenoisedClip = 1.5;

inline double clip_denoised(double v) { return std::min(kDenoisedClip, std::max(-kDenoisedClip, v)); }

// DDIM over an evenly strided descending timestep subsequence; eta=0 is
// deterministic given the initial draw
inline std::vector<double> sample_ddim(const NoiseSchedule& sch, const EpsFn& eps_fn, int dim, int steps, double eta,
                                       Rng& rng) {
    if (steps < 1 || steps > sch.t_train) throw ContractError("sample steps must be in [1, t_train]");
    std::vector<int> taus;
    for (int i = steps; i >= 1; --i) taus.push_back(i * sch.t_train / steps - 1);
    std::vector<double> x(static_cast<size_t>(dim));
    for (auto& v : x) v = rng.normal();
    for (size_t k = 0; k < taus.size(); ++k) {
        const int t = taus[k];
        const double ab = sch.ab(t);
        const double ab_prev = (k + 1 < taus.size()) ? sch.ab(taus[k + 1]) : 1.0;
        const std::vector<double> eps = eps_fn(x, t);
        const double sigma =
            eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
        const double c0 = std::sqrt(ab_prev);
        const double ce = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        for (int i = 0; i < dim; ++i) {
            const double x0_hat = clip_denoised(
                (x[static_cast<size_t>(i)] - std::sqrt(1.0 - ab) * eps[static_cast<size_t>(i)]) / std::sqrt(ab));
            // keep the trajectory consistent with the clipped estimate
            const double eps_eff = (x[static_cast<size_t>(i)] - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
            double v = c0 * x0_hat + ce * eps_eff;
            if (sigma > 0.0) v += sigma * rng.normal();
            x[static_cast<size_t>(i)] = v;
        }
    }
    return x;
}

// ancestral DDPM over all T steps, posterior mean from the clipped x0 estimate
inline std::vector<double> sample_ddpm(const NoiseSchedule& sch, const EpsFn& eps_fn, int dim, Rng& rng) {
    std::vector<double> x(static_cast<size_t>(dim));
    for (auto& v : x) v = rng.normal();
    for (int t = sch.t_train - 1; t >= 0; --t) {
        const double beta = sch.betas[static_cast<size_t>(t)];
        const double ab = sch.ab(t);
        const double ab_prev = t > 0 ? sch.ab(t - 1) : 1.0;
        const double alpha = 1.0 - beta;
        const std::vector<double> eps = eps_fn(x, t);
        const double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double c_xt = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
        const double var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        for (int i = 0; i < dim; ++i) {
            const double x0_hat = clip_denoised(
                (x[static_cast<size_t>(i)] - std::sqrt(1.0 - ab) * eps[static_cast<size_t>(i)]) / std::sqrt(ab));
            double v = c_x0 * x0_hat + c_xt * x[static_cast<size_t>(i)];
            if (t > 0) v += std::sqrt(var) * rng.normal();
            x[static_cast<size_t>(i)] = v;
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// embodiments

struct EmbodimentSpec {
    std::string id;
    int d_a = 0;
    // per-dim normalization stats over the training set, sized d_x with
    // degenerate entries (min == max) for the padding dims
    std::vector<double> mins, maxs;

    // training-set actions map into [-1, 1]; degenerate dims map to 0
    std::vector<double> normalize(const std::vector<double>& a) const {
        std::vector<double> out(mins.size(), 0.0);
        for (size_t j = 0; j < mins.size(); ++j) {
            const double v = j < a.size() ? a[j] : 0.0;
            out[j] = (maxs[j] > mins[j]) ? 2.0 * (v - mins[j]) / (maxs[j] - mins[j]) - 1.0 : 0.0;
        }
        return out;
    }

    // inverse map; 0 returns the per-dim midpoint
    std::vector<double> denormalize(const std::vector<double>& n) const {
        std::vector<double> out(n.size(), 0.0);
        for (size_t j = 0; j < n.size(); ++j)
            out[j] = (maxs[j] > mins[j]) ? (n[j] + 1.0) / 2.0 * (maxs[j] - mins[j]) + mins[j]
                                         : (mins[j] + maxs[j]) / 2.0;
        return out;
    }
};

template <class S>
struct EmbodimentHead {
    EmbodimentSpec spec;
    Linear<S> head;  // d_x -> d_a, applied per horizon step

    void init(const ModelConfig& cfg, const EmbodimentSpec& sp) {
        spec = sp;
        // identity slice: the denoised representation already carries the
        // normalized action in its first d_a dims
        head.init_zero("head." + sp.id, sp.d_a, cfg.d_x);
        for (int j = 0; j < sp.d_a; ++j) head.w.t.values_mut()[static_cast<size_t>(j) * cfg.d_x + j] = S(1);
    }

    void collect(ParamRegistry<S>& reg) { head.collect(reg); }

    // normalized chunk [H, d_x] -> joint-space actions [H][d_a]
    std::vector<std::vector<double>> apply(const std::vector<double>& chunk, int horizon, int d_x) const {
        NoGradGuard ng;
        std::vector<S> v(chunk.size());
        for (size_t i = 0; i < chunk.size(); ++i) v[i] = static_cast<S>(chunk[i]);
        Tensor<S> rows = Tensor<S>::from({horizon, d_x}, std::move(v));
        Tensor<S> mapped = head.forward(rows);
        std::vector<std::vector<double>> out(static_cast<size_t>(horizon));
        for (int h = 0; h < horizon; ++h) {
            std::vector<double> n(static_cast<size_t>(spec.d_a));
            for (int j = 0; j < spec.d_a; ++j)
                n[static_cast<size_t>(j)] = static_cast<double>(mapped.values()[static_cast<size_t>(h) * spec.d_a + j]);
            // stats are sized d_x; denormalize the first d_a entries
            std::vector<double> padded = n;
            padded.resize(mins_size(), 0.0);
            auto full = spec.denormalize(padded);
            full.resize(static_cast<size_t>(spec.d_a));
            out[static_cast<size_t>(h)] = std::move(full);
        }
        return out;
    }

private:
    size_t mins_size() const { return spec.mins.size(); }
};

}  // namespace reasonact
