#pragma once

// Differentiable layers and the optimizer. Layers are plain structs owning
// named Parameters; models register them into a ParamRegistry whose ordering
// is the canonical one for checkpoints, checksums and optimizer state.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "reasonact/tensor.hpp"

namespace reasonact {

template <class S>
struct Parameter {
    std::string name;
    Tensor<S> t;
    bool frozen = false;

    void set_frozen(bool f) {
        frozen = f;
        // frozen parameters skip grad accumulation entirely
        t.set_requires_grad(!f);
        if (f) t.zero_grad();
    }
};

template <class S>
class ParamRegistry {
public:
    void add(Parameter<S>* p) {
        if (by_name_.count(p->name)) throw RegistryError("duplicate parameter name: " + p->name);
        by_name_[p->name] = p;
        ordered_.push_back(p);
    }

    Parameter<S>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    const std::vector<Parameter<S>*>& ordered() const { return ordered_; }

    size_t total_count() const {
        size_t n = 0;
        for (auto* p : ordered_) n += p->t.numel();
        return n;
    }

    size_t trainable_count() const {
        size_t n = 0;
        for (auto* p : ordered_)
            if (!p->frozen) n += p->t.numel();
        return n;
    }

    void zero_grads() {
        for (auto* p : ordered_) p->t.zero_grad();
    }

    // checksum over values of parameters accepted by the filter
    template <class Pred>
    uint64_t checksum_if(Pred pred) const {
        uint64_t h = 1469598103934665603ULL;
        for (auto* p : ordered_) {
            if (!pred(*p)) continue;
            h = fnv1a64(p->name.data(), p->name.size(), h);
            h = fnv1a64_vec(p->t.values(), h);
        }
        return h;
    }
    uint64_t checksum() const {
        return checksum_if([](const Parameter<S>&) { return true; });
    }

private:
    std::map<std::string, Parameter<S>*> by_name_;
    std::vector<Parameter<S>*> ordered_;
};

namespace init {

// torch-style fan-in uniform for linear weights
template <class S>
Tensor<S> linear_weight(int d_out, int d_in, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_in));
    return Tensor<S>::uniform({d_out, d_in}, rng, -k, k);
}

template <class S>
Tensor<S> embedding_table(int v, int d, Rng& rng) {
    return Tensor<S>::randn({v, d}, rng, 0.02);
}

}  // namespace init

// ---------------------------------------------------------------------------
// linear with optional LoRA adapter on a freezable base weight

template <class S>
struct LoRAAdapter {
    Parameter<S> a;  // [r, d_in]
    Parameter<S> b;  // [d_out, r]
    int rank = 0;
    S scl = S(0);  // lora_alpha / rank
};

template <class S>
struct Linear {
    Parameter<S> w;  // [d_out, d_in]
    Parameter<S> b;  // [d_out]
    std::optional<LoRAAdapter<S>> lora;

    void init(const std::string& name, int d_out, int d_in, Rng& rng) {
        w.name = name + ".w";
        w.t = init::linear_weight<S>(d_out, d_in, rng).set_requires_grad(true);
        b.name = name + ".b";
        b.t = Tensor<S>::zeros({d_out}).set_requires_grad(true);
    }

    void init_zero(const std::string& name, int d_out, int d_in) {
        w.name = name + ".w";
        w.t = Tensor<S>::zeros({d_out, d_in}).set_requires_grad(true);
        b.name = name + ".b";
        b.t = Tensor<S>::zeros({d_out}).set_requires_grad(true);
    }

    int d_out() const { return w.t.dim(0); }
    int d_in() const { return w.t.dim(1); }

    void collect(ParamRegistry<S>& reg) {
        reg.add(&w);
        reg.add(&b);
        if (lora) {
            reg.add(&lora->a);
            reg.add(&lora->b);
        }
    }

    void attach_lora(int rank, double alpha, Rng& rng) {
        if (lora) return;
        if (rank >= std::min(d_in(), d_out()))
            std::fprintf(stderr, "[config warning] LoRA rank %d >= min dim of %s (%dx%d)\n", rank, w.name.c_str(),
                         d_out(), d_in());
        LoRAAdapter<S> ad;
        ad.rank = rank;
        ad.scl = static_cast<S>(alpha / rank);
        ad.a.name = w.name + ".lora_a";
        ad.a.t = init::linear_weight<S>(rank, d_in(), rng).set_requires_grad(true);
        // zero B: the adapter contributes nothing until trained
        ad.b.name = w.name + ".lora_b";
        ad.b.t = Tensor<S>::zeros({d_out(), rank}).set_requires_grad(true);
        lora = std::move(ad);
    }

    // x: [N, d_in] -> [N, d_out]
    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> y = add(matmul(x, transpose(w.t)), b.t);
        if (lora) {
            Tensor<S> low = matmul(matmul(x, transpose(lora->a.t)), transpose(lora->b.t));
            y = add(y, scale(low, lora->scl));
        }
        return y;
    }

    // W + scale * B * A, for the merge-equivalence check
    Tensor<S> merged_weight() const {
        if (!lora) return w.t.detach();
        NoGradGuard ng;
        return add(w.t, scale(matmul(lora->b.t, lora->a.t), lora->scl)).detach();
    }
};

template <class S>
struct LayerNorm {
    Parameter<S> gain;
    Parameter<S> bias;
    double eps = 1e-5;

    void init(const std::string& name, int d) {
        gain.name = name + ".gain";
        gain.t = Tensor<S>::full({d}, S(1)).set_requires_grad(true);
        bias.name = name + ".bias";
        bias.t = Tensor<S>::zeros({d}).set_requires_grad(true);
    }

    void collect(ParamRegistry<S>& reg) {
        reg.add(&gain);
        reg.add(&bias);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return add(mul(layer_norm_lastdim(x, eps), gain.t), bias.t);
    }
};

// gamma/beta may be per-feature vectors [d] or per-row matrices matching h
template <class S>
Tensor<S> film_modulate(const Tensor<S>& h, const Tensor<S>& gamma, const Tensor<S>& beta) {
    return add(mul(h, gamma), beta);
}

// ---------------------------------------------------------------------------
// causal self-attention

template <class S>
struct CausalSelfAttention {
    Linear<S> wq, wk, wv, wo;
    int heads = 1;

    void init(const std::string& name, int d, int n_heads, Rng& rng) {
        if (d % n_heads != 0)
            throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                              std::to_string(n_heads) + " heads");
        heads = n_heads;
        wq.init(name + ".wq", d, d, rng);
        wk.init(name + ".wk", d, d, rng);
        wv.init(name + ".wv", d, d, rng);
        wo.init(name + ".wo", d, d, rng);
    }

    void collect(ParamRegistry<S>& reg) {
        wq.collect(reg);
        wk.collect(reg);
        wv.collect(reg);
        wo.collect(reg);
    }

    // strictly causal additive mask; -1e30 underflows to an exact zero weight
    // after softmax, which keeps prefix outputs bit-identical under suffix
    // perturbations
    static Tensor<S> causal_mask(int t) {
        std::vector<S> m(static_cast<size_t>(t) * t, S(0));
        for (int i = 0; i < t; ++i)
            for (int j = i + 1; j < t; ++j) m[static_cast<size_t>(i) * t + j] = S(-1e30);
        return Tensor<S>::from({t, t}, std::move(m));
    }

    // x: [T, d] -> [T, d]
    Tensor<S> forward(const Tensor<S>& x) const {
        const int t = x.dim(0), d = x.dim(1);
        const int hd = d / heads;
        const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
        Tensor<S> q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
        Tensor<S> mask = causal_mask(t);
        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(q, h * hd, hd);
            Tensor<S> kh = slice_cols(k, h * hd, hd);
            Tensor<S> vh = slice_cols(v, h * hd, hd);
            Tensor<S> scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
            Tensor<S> att = softmax_lastdim(scores);
            head_outs.push_back(matmul(att, vh));
        }
        Tensor<S> cat = head_outs.size() == 1 ? head_outs[0] : concat_heads(head_outs);
        return wo.forward(cat);
    }

private:
    static Tensor<S> concat_heads(const std::vector<Tensor<S>>& hs) {
        Tensor<S> out = hs[0];
        for (size_t i = 1; i < hs.size(); ++i) out = concat_cols(out, hs[i]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// sinusoidal timestep features: [sin(t*w_i), cos(t*w_i)] with log-spaced w_i.
// d must be even; the norm is sqrt(d/2) for every t.

template <class S>
std::vector<S> timestep_embedding_raw(int t, int d, int t_train) {
    if (t < 0 || t >= t_train)
        throw ContractError("timestep " + std::to_string(t) + " outside [0," + std::to_string(t_train) + ")");
    if (d % 2 != 0) throw ConfigError("timestep embedding dimension must be even");
    const int half = d / 2;
    std::vector<S> out(static_cast<size_t>(d));
    for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        out[static_cast<size_t>(i)] = static_cast<S>(std::sin(t * w));
        out[static_cast<size_t>(half + i)] = static_cast<S>(std::cos(t * w));
    }
    return out;
}

template <class S>
Tensor<S> timestep_embedding(int t, int d, int t_train) {
    return Tensor<S>::from({d}, timestep_embedding_raw<S>(t, d, t_train));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Moment state is keyed by parameter name
// and initialized lazily to zeros.

template <class S>
class AdamW {
public:
    struct Hyper {
        double lr = 3e-4;
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    explicit AdamW(Hyper h = {}) : h_(h) {}

    Hyper& hyper() { return h_; }
    int64_t step_count() const { return t_; }

    void step(ParamRegistry<S>& reg) {
        ++t_;
        const double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
        for (Parameter<S>* p : reg.ordered()) {
            if (p->frozen) continue;
            auto& st = state_[p->name];
            if (st.m.empty()) {
                st.m.assign(p->t.numel(), S(0));
                st.v.assign(p->t.numel(), S(0));
            }
            std::vector<S>& w = p->t.values_mut();
            const bool has_g = p->t.has_grad();
            const std::vector<S>* g = has_g ? &p->t.grad() : nullptr;
            for (size_t i = 0; i < w.size(); ++i) {
                const double gi = has_g ? static_cast<double>((*g)[i]) : 0.0;
                double m = h_.beta1 * static_cast<double>(st.m[i]) + (1.0 - h_.beta1) * gi;
                double v = h_.beta2 * static_cast<double>(st.v[i]) + (1.0 - h_.beta2) * gi * gi;
                st.m[i] = static_cast<S>(m);
                st.v[i] = static_cast<S>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double wi = static_cast<double>(w[i]);
                wi -= h_.lr * (mhat / (std::sqrt(vhat) + h_.eps) + h_.weight_decay * wi);
                w[i] = static_cast<S>(wi);
            }
        }
    }

    // serialization hooks for checkpoint resume
    struct Moments {
        std::vector<S> m, v;
    };
    std::map<std::string, Moments>& state() { return state_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    Hyper h_;
    int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

template <class S>
double global_grad_norm(const ParamRegistry<S>& reg) {
    double sq = 0.0;
    for (Parameter<S>* p : reg.ordered()) {
        if (p->frozen || !p->t.has_grad()) continue;
        for (S g : p->t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

template <class S>
double clip_grad_norm(ParamRegistry<S>& reg, double max_norm) {
    const double norm = global_grad_norm(reg);
    if (norm > max_norm && norm > 0.0) {
        const S s = static_cast<S>(max_norm / norm);
        for (Parameter<S>* p : reg.ordered()) {
            if (p->frozen || !p->t.has_grad()) continue;
            for (auto& v : p->t.grad_mut()) v *= s;
        }
    }
    return norm;
}

}  // namespace reasonact
