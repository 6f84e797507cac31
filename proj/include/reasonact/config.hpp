#pragma once

// Flat key=value configuration with dotted section keys. One parser serves
// config files, checkpoint config blobs and metrics headers; round-trips are
// lossless (doubles printed with 17 significant digits).

#include <cstdio>
#include <map>
#include <sstream>
#include <string>

#include "reasonact/common.hpp"

namespace reasonact {

using KvMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + t);
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

inline std::string kv_to_text(const KvMap& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct KvReader {
    const KvMap& kv;
    bool strict;  // throw on missing keys (used when loading checkpoints)

    std::string str(const std::string& k, const std::string& dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) {
            if (strict) throw ConfigError("missing config key: " + k);
            return dflt;
        }
        return it->second;
    }
    int geti(const std::string& k, int dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) {
            if (strict) throw ConfigError("missing config key: " + k);
            return dflt;
        }
        try {
            return std::stoi(it->second);
        } catch (...) {
            throw ConfigError("config key " + k + " is not an integer: " + it->second);
        }
    }
    int64_t geti64(const std::string& k, int64_t dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) {
            if (strict) throw ConfigError("missing config key: " + k);
            return dflt;
        }
        return std::stoll(it->second);
    }
    double getd(const std::string& k, double dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) {
            if (strict) throw ConfigError("missing config key: " + k);
            return dflt;
        }
        try {
            return std::stod(it->second);
        } catch (...) {
            throw ConfigError("config key " + k + " is not a number: " + it->second);
        }
    }
    bool getb(const std::string& k, bool dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) {
            if (strict) throw ConfigError("missing config key: " + k);
            return dflt;
        }
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key " + k + " is not a boolean: " + it->second);
    }
};

// Model topology and diffusion settings. Everything the network construction
// depends on lives here so a checkpoint can rebuild the exact model.
struct ModelConfig {
    // backbone
    int d = 128;
    int layers = 4;
    int heads = 4;
    int context = 128;
    int vocab_size = 64;
    // vision
    int views = 2;
    int img = 32;
    int patch = 8;
    // sequence
    int n_act = 8;
    int d_p = 8;           // proprio width, zero-padded across embodiments
    int instr_len = 12;    // padded instruction segment length for batching
    int reason_len = 10;   // padded reasoning segment length for batching
    int max_reason_tokens = 8;  // generation budget (words + EOS)
    // diffusion head
    int t_train = 100;
    int sample_steps = 10;
    int horizon = 8;     // H, actions per chunk
    int d_x = 8;         // action representation width (>= any embodiment d_a)
    int d_c = 64;        // conditioning width after the projection module
    int noise_width = 128;
    int noise_blocks = 4;
    int film_trunk = 32;  // shared bottleneck inside the FiLM generator
    // training objective
    double alpha = 10.0;
    int lora_rank = 4;
    double lora_alpha = 8.0;
    bool ablate_film = false;  // clamp FiLM to identity (parameters retained)

    int patches_per_view() const {
        if (img % patch != 0)
            throw ConfigError("image size " + std::to_string(img) + " not divisible by patch " +
                              std::to_string(patch));
        int g = img / patch;
        return g * g;
    }
    int n_visual_tokens() const { return views * patches_per_view(); }

    void to_kv(KvMap& kv, const std::string& p = "model.") const {
        kv[p + "d"] = std::to_string(d);
        kv[p + "layers"] = std::to_string(layers);
        kv[p + "heads"] = std::to_string(heads);
        kv[p + "context"] = std::to_string(context);
        kv[p + "vocab_size"] = std::to_string(vocab_size);
        kv[p + "views"] = std::to_string(views);
        kv[p + "img"] = std::to_string(img);
        kv[p + "patch"] = std::to_string(patch);
        kv[p + "n_act"] = std::to_string(n_act);
        kv[p + "d_p"] = std::to_string(d_p);
        kv[p + "instr_len"] = std::to_string(instr_len);
        kv[p + "reason_len"] = std::to_string(reason_len);
        kv[p + "max_reason_tokens"] = std::to_string(max_reason_tokens);
        kv[p + "t_train"] = std::to_string(t_train);
        kv[p + "sample_steps"] = std::to_string(sample_steps);
        kv[p + "horizon"] = std::to_string(horizon);
        kv[p + "d_x"] = std::to_string(d_x);
        kv[p + "d_c"] = std::to_string(d_c);
        kv[p + "noise_width"] = std::to_string(noise_width);
        kv[p + "noise_blocks"] = std::to_string(noise_blocks);
        kv[p + "film_trunk"] = std::to_string(film_trunk);
        kv[p + "alpha"] = fmt_double(alpha);
        kv[p + "lora_rank"] = std::to_string(lora_rank);
        kv[p + "lora_alpha"] = fmt_double(lora_alpha);
        kv[p + "ablate_film"] = ablate_film ? "true" : "false";
    }

    static ModelConfig from_kv(const KvMap& kv, const std::string& p = "model.", bool strict = false) {
        ModelConfig c;
        KvReader r{kv, strict};
        c.d = r.geti(p + "d", c.d);
        c.layers = r.geti(p + "layers", c.layers);
        c.heads = r.geti(p + "heads", c.heads);
        c.context = r.geti(p + "context", c.context);
        c.vocab_size = r.geti(p + "vocab_size", c.vocab_size);
        c.views = r.geti(p + "views", c.views);
        c.img = r.geti(p + "img", c.img);
        c.patch = r.geti(p + "patch", c.patch);
        c.n_act = r.geti(p + "n_act", c.n_act);
        c.d_p = r.geti(p + "d_p", c.d_p);
        c.instr_len = r.geti(p + "instr_len", c.instr_len);
        c.reason_len = r.geti(p + "reason_len", c.reason_len);
        c.max_reason_tokens = r.geti(p + "max_reason_tokens", c.max_reason_tokens);
        c.t_train = r.geti(p + "t_train", c.t_train);
        c.sample_steps = r.geti(p + "sample_steps", c.sample_steps);
        c.horizon = r.geti(p + "horizon", c.horizon);
        c.d_x = r.geti(p + "d_x", c.d_x);
        c.d_c = r.geti(p + "d_c", c.d_c);
        c.noise_width = r.geti(p + "noise_width", c.noise_width);
        c.noise_blocks = r.geti(p + "noise_blocks", c.noise_blocks);
        c.film_trunk = r.geti(p + "film_trunk", c.film_trunk);
        c.alpha = r.getd(p + "alpha", c.alpha);
        c.lora_rank = r.geti(p + "lora_rank", c.lora_rank);
        c.lora_alpha = r.getd(p + "lora_alpha", c.lora_alpha);
        c.ablate_film = r.getb(p + "ablate_film", c.ablate_film);
        c.validate();
        return c;
    }

    void validate() const {
        if (alpha <= 0) throw ConfigError("alpha must be positive");
        for (int v : {d, layers, heads, context, vocab_size, views, img, patch, n_act, d_p, t_train, sample_steps,
                      horizon, d_x, d_c, noise_width, noise_blocks})
            if (v <= 0) throw ConfigError("all model dimensions must be positive");
        if (t_train < 2) throw ConfigError("t_train must be at least 2");
        (void)patches_per_view();
    }
};

}  // namespace reasonact
