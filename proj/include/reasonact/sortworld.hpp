#pragma once

// Deterministic 2D sorting simulator with a scripted expert that narrates its
// phase in closed-vocabulary template phrases. Three task variants share the
// kinematics: quadrant sorting (single arm), bin picking (single arm, held-out
// objects only) and table clearing (bimanual, left panel / right bin).
//
// Determinism contract: (state, action) -> state' is a pure function; episode
// geometry is drawn from a seed-derived stream separate from the visual
// variation stream, so the variation protocols share ground truth with the
// plain run of the same seed.

#include <array>
#include <atomic>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "reasonact/common.hpp"
#include "reasonact/diffusion.hpp"
#include "reasonact/obs.hpp"

namespace reasonact {

enum class Category : uint8_t { Car = 0, Glove, Toy, Key };
enum class ObjColor : uint8_t { Red = 0, Green, Blue, Yellow, Purple, Orange, Pink, Brown };
enum class Glyph : uint8_t { Square = 0, Triangle, Circle, Cross, Diamond, Star };
enum class WorldTask : uint8_t { Sorting = 0, BinPick, Bimanual };

constexpr int kNumCategories = 4;
constexpr int kNumColors = 8;

inline const char* category_word(Category c) {
    static const char* w[] = {"car", "glove", "toy", "key"};
    return w[static_cast<int>(c)];
}
inline const char* sector_word(Category c) {
    static const char* w[] = {"cars", "gloves", "toys", "keys"};
    return w[static_cast<int>(c)];
}
inline const char* color_word(ObjColor c) {
    static const char* w[] = {"red", "green", "blue", "yellow", "purple", "orange", "pink", "brown"};
    return w[static_cast<int>(c)];
}
inline Glyph native_glyph(Category c) {
    static const Glyph g[] = {Glyph::Square, Glyph::Triangle, Glyph::Circle, Glyph::Cross};
    return g[static_cast<int>(c)];
}
// colors are exact u8 multiples so stored rasters round-trip losslessly
inline std::array<float, 3> color_rgb(ObjColor c) {
    static const std::array<std::array<int, 3>, 8> rgb = {{{220, 40, 40},
                                                           {40, 180, 60},
                                                           {60, 90, 220},
                                                           {230, 210, 40},
                                                           {150, 60, 200},
                                                           {240, 140, 30},
                                                           {240, 120, 190},
                                                           {140, 90, 50}}};
    const auto& v = rgb[static_cast<size_t>(c)];
    return {v[0] / 255.f, v[1] / 255.f, v[2] / 255.f};
}

struct ObjectSpec {
    Category category;
    ObjColor color;
    Glyph glyph;
    double x = 0, y = 0;
    double radius = 0.08;
};

struct Gripper {
    double x = 0.5, y = 0.08;
    double open = 1.0;   // [0,1], <0.5 means closed
    int held = -1;       // object index
    double held_dx = 0, held_dy = 0;  // grip-relative offset of the held object
};

struct WorldState {
    WorldTask task = WorldTask::Sorting;
    std::vector<ObjectSpec> objects;
    std::vector<ObjectSpec> distractors;  // rendered, never pickable
    std::vector<Gripper> grippers;        // 1 (single arm) or 2 (bimanual)
    int step_count = 0;
    int background_style = 0;
    std::array<float, 3> tint = {1.f, 1.f, 1.f};
};

struct SimParams {
    int img = 32;
    double step_clamp = 0.05;   // max gripper delta per sim step
    double pick_radius = 0.09;  // grab reach from gripper to object center
    double obj_radius = 0.08;
    int hold_steps = 2;         // sim steps per recorded/control tick
    int easy_min = 2, easy_max = 4;
    int hard_min = 5, hard_max = 8;
    int bimanual_min = 3, bimanual_max = 5;
    int ticks_per_object = 45;  // episode cap = base + this * n_objects
    int tick_cap_base = 30;
};

// ---------------------------------------------------------------------------
// sectors and targets

inline int sector_of_point(double x, double y) {
    // quadrants; 0 TL, 1 TR, 2 BL, 3 BR
    return (x < 0.5 ? 0 : 1) + (y < 0.5 ? 2 : 0);
}
inline int sector_of_category(Category c) { return static_cast<int>(c); }

inline std::pair<double, double> sector_center(Category c) {
    switch (sector_of_category(c)) {
        case 0: return {0.25, 0.75};
        case 1: return {0.75, 0.75};
        case 2: return {0.25, 0.25};
        default: return {0.75, 0.25};
    }
}

inline bool bimanual_left_bound(Category c) { return c == Category::Glove || c == Category::Toy; }

// drop target for an object in the current task
inline std::pair<double, double> drop_target(WorldTask task, const ObjectSpec& o, int idx) {
    double ox = 0.06 * (idx % 2) - 0.03;
    double oy = 0.06 * ((idx / 2) % 2) - 0.03;
    switch (task) {
        case WorldTask::Sorting: {
            auto [cx, cy] = sector_center(o.category);
            return {cx + ox, cy + oy};
        }
        case WorldTask::BinPick:
            return {0.15 + ox, 0.5 + 0.1 * (idx % 3) - 0.1};
        case WorldTask::Bimanual:
        default:
            return bimanual_left_bound(o.category) ? std::make_pair(0.12 + ox, 0.5 + 0.12 * (idx % 3) - 0.12)
                                                   : std::make_pair(0.88 + ox, 0.5 + 0.12 * (idx % 3) - 0.12);
    }
}

inline bool object_placed(WorldTask task, const ObjectSpec& o) {
    switch (task) {
        case WorldTask::Sorting:
            return sector_of_point(o.x, o.y) == sector_of_category(o.category);
        case WorldTask::BinPick:
            return o.x < 0.35;
        case WorldTask::Bimanual:
        default:
            return bimanual_left_bound(o.category) ? o.x < 0.25 : o.x > 0.75;
    }
}

inline const char* task_instruction(WorldTask t) {
    switch (t) {
        case WorldTask::Sorting: return "sort all items into corresponding areas";
        case WorldTask::BinPick: return "move any object on the right panel";
        case WorldTask::Bimanual:
        default: return "clear the table";
    }
}

inline int action_dim(WorldTask t) { return t == WorldTask::Bimanual ? 6 : 3; }
inline const char* embodiment_id(WorldTask t) { return t == WorldTask::Bimanual ? "bimanual" : "single"; }

// ---------------------------------------------------------------------------
// split manifest: allowed (color, category) pairs per split

struct SplitManifest {
    std::set<std::pair<int, int>> seen;  // (color, category)

    bool contains(ObjColor c, Category k) const {
        return seen.count({static_cast<int>(c), static_cast<int>(k)}) > 0;
    }

    std::vector<std::pair<ObjColor, Category>> seen_pairs() const {
        std::vector<std::pair<ObjColor, Category>> out;
        for (auto [c, k] : seen) out.emplace_back(static_cast<ObjColor>(c), static_cast<Category>(k));
        return out;
    }
    std::vector<std::pair<ObjColor, Category>> unseen_pairs() const {
        std::vector<std::pair<ObjColor, Category>> out;
        for (int c = 0; c < kNumColors; ++c)
            for (int k = 0; k < kNumCategories; ++k)
                if (!seen.count({c, k})) out.emplace_back(static_cast<ObjColor>(c), static_cast<Category>(k));
        return out;
    }

    // default split: two held-out colors per category
    static SplitManifest default_split() {
        SplitManifest m;
        const std::set<std::pair<int, int>> held = {
            {static_cast<int>(ObjColor::Pink), static_cast<int>(Category::Car)},
            {static_cast<int>(ObjColor::Brown), static_cast<int>(Category::Car)},
            {static_cast<int>(ObjColor::Red), static_cast<int>(Category::Glove)},
            {static_cast<int>(ObjColor::Blue), static_cast<int>(Category::Glove)},
            {static_cast<int>(ObjColor::Yellow), static_cast<int>(Category::Toy)},
            {static_cast<int>(ObjColor::Orange), static_cast<int>(Category::Toy)},
            {static_cast<int>(ObjColor::Green), static_cast<int>(Category::Key)},
            {static_cast<int>(ObjColor::Purple), static_cast<int>(Category::Key)},
        };
        for (int c = 0; c < kNumColors; ++c)
            for (int k = 0; k < kNumCategories; ++k)
                if (!held.count({c, k})) m.seen.insert({c, k});
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write split manifest: " + path);
        for (auto [c, k] : seen)
            f << color_word(static_cast<ObjColor>(c)) << " " << category_word(static_cast<Category>(k)) << "\n";
    }

    static SplitManifest load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read split manifest: " + path);
        SplitManifest m;
        std::string cw, kw;
        while (f >> cw >> kw) {
            int ci = -1, ki = -1;
            for (int c = 0; c < kNumColors; ++c)
                if (cw == color_word(static_cast<ObjColor>(c))) ci = c;
            for (int k = 0; k < kNumCategories; ++k)
                if (kw == category_word(static_cast<Category>(k))) ki = k;
            if (ci < 0 || ki < 0) throw IoError("bad manifest entry: " + cw + " " + kw);
            m.seen.insert({ci, ki});
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// scenarios / evaluation protocols

enum class Protocol : uint8_t {
    Train = 0,
    InDist,
    Distractors,
    Background,
    Tint,
    Cluttered,
    UnseenMix,
    BinpickUnseen,
    BimanualSeen,
    BimanualMix,
    SwapTrial,
};

inline const char* protocol_name(Protocol p) {
    static const char* n[] = {"train",       "in_dist",        "distractors",   "background",
                              "tint",        "cluttered",      "unseen_mix",    "binpick_unseen",
                              "bimanual_seen", "bimanual_mix", "swap_trial"};
    return n[static_cast<int>(p)];
}

inline Protocol protocol_from(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(Protocol::SwapTrial); ++i)
        if (s == protocol_name(static_cast<Protocol>(i))) return static_cast<Protocol>(i);
    throw ConfigError("unknown protocol id: " + s);
}

inline WorldTask protocol_task(Protocol p) {
    switch (p) {
        case Protocol::BinpickUnseen: return WorldTask::BinPick;
        case Protocol::BimanualSeen:
        case Protocol::BimanualMix: return WorldTask::Bimanual;
        default: return WorldTask::Sorting;
    }
}

// ---------------------------------------------------------------------------
// scene construction

inline bool spawn_excluded(WorldTask task, Category cat, double x, double y) {
    ObjectSpec probe;
    probe.category = cat;
    probe.x = x;
    probe.y = y;
    if (object_placed(task, probe)) return true;           // never spawn pre-solved
    if (task == WorldTask::BinPick && x < 0.5) return true;  // bin-pick items start on the right panel
    if (task == WorldTask::Bimanual && (x < 0.3 || x > 0.7)) return true;
    return false;
}

inline WorldState reset(Protocol proto, uint64_t seed, const SplitManifest& manifest, const SimParams& sim = {}) {
    Rng geom(hash_mix(seed, hash_str("geom")));
    Rng var(hash_mix(seed, hash_str("var")));

    WorldState s;
    s.task = protocol_task(proto);

    int lo = sim.easy_min, hi = sim.easy_max;
    if (proto == Protocol::Cluttered) {
        lo = sim.hard_min;
        hi = sim.hard_max;
    } else if (s.task == WorldTask::Bimanual) {
        lo = sim.bimanual_min;
        hi = sim.bimanual_max;
    }
    const int count = geom.irange(lo, hi);

    // identity pools
    auto seen = manifest.seen_pairs();
    auto unseen = manifest.unseen_pairs();
    std::vector<std::tuple<ObjColor, Category, Glyph>> pool;
    auto add_native = [&](const std::vector<std::pair<ObjColor, Category>>& v) {
        for (auto [c, k] : v) pool.emplace_back(c, k, native_glyph(k));
    };
    switch (proto) {
        case Protocol::BinpickUnseen:
            // held-out pairs crossed with three glyph styles
            for (auto [c, k] : unseen)
                for (Glyph g : {native_glyph(k), Glyph::Diamond, Glyph::Star}) pool.emplace_back(c, k, g);
            break;
        case Protocol::UnseenMix:
        case Protocol::BimanualMix:
            add_native(seen);
            add_native(unseen);
            break;
        default:
            add_native(seen);
            break;
    }

    // identities sampled without replacement so scenes never repeat a pair
    std::vector<int> picks;
    for (int i = 0; i < count; ++i) {
        int p;
        int guard = 0;
        do {
            p = static_cast<int>(geom.below(pool.size()));
            if (++guard > 1000) throw GenerationError("cannot sample distinct object identities");
        } while (std::find(picks.begin(), picks.end(), p) != picks.end());
        picks.push_back(p);
    }
    if (proto == Protocol::UnseenMix || proto == Protocol::BimanualMix) {
        // require at least one object whose pair is excluded from the manifest
        bool any_unseen = false;
        for (int p : picks) {
            auto [c, k, g] = pool[static_cast<size_t>(p)];
            if (!manifest.contains(c, k)) any_unseen = true;
        }
        if (!any_unseen) {
            auto [c0, k0, g0] = pool[static_cast<size_t>(picks[0])];
            (void)c0; (void)k0; (void)g0;
            picks[0] = static_cast<int>(seen.size() + geom.below(unseen.size()));
        }
    }

    for (int i = 0; i < count; ++i) {
        auto [c, k, g] = pool[static_cast<size_t>(picks[static_cast<size_t>(i)])];
        ObjectSpec o;
        o.category = k;
        o.color = c;
        o.glyph = g;
        o.radius = sim.obj_radius;
        int attempts = 0;
        while (true) {
            if (++attempts > 1000)
                throw GenerationError("impossible packing after 1000 rejection samples (seed " +
                                      std::to_string(seed) + ")");
            o.x = geom.uniform(o.radius + 0.02, 1.0 - o.radius - 0.02);
            o.y = geom.uniform(o.radius + 0.02, 1.0 - o.radius - 0.02);
            if (spawn_excluded(s.task, k, o.x, o.y)) continue;
            bool clash = false;
            for (const auto& other : s.objects) {
                const double dx = o.x - other.x, dy = o.y - other.y;
                if (dx * dx + dy * dy < 2.2 * 2.2 * o.radius * o.radius) clash = true;
            }
            if (!clash) break;
        }
        s.objects.push_back(o);
    }

    if (s.task == WorldTask::Bimanual) {
        s.grippers.resize(2);
        s.grippers[0] = {0.3, 0.08, 1.0, -1, 0, 0};
        s.grippers[1] = {0.7, 0.08, 1.0, -1, 0, 0};
    } else {
        s.grippers.resize(1);
        s.grippers[0] = {0.5, 0.08, 1.0, -1, 0, 0};
    }

    // visual variations draw from their own stream; geometry above is shared
    // across {in_dist, distractors, background, tint} for a given seed
    if (proto == Protocol::Distractors) {
        const int n = var.irange(2, 4);
        for (int i = 0; i < n; ++i) {
            ObjectSpec d;
            d.category = Category::Car;  // unused for distractors
            d.color = static_cast<ObjColor>(var.below(kNumColors));
            d.glyph = static_cast<Glyph>(var.below(6));
            d.radius = 0.04;
            d.x = var.uniform(0.06, 0.94);
            d.y = var.uniform(0.06, 0.94);
            s.distractors.push_back(d);
        }
    } else if (proto == Protocol::Background) {
        s.background_style = 1 + static_cast<int>(var.below(2));
    } else if (proto == Protocol::Tint) {
        for (auto& t : s.tint) t = static_cast<float>(var.uniform(0.6, 1.0));
    }
    return s;
}

// ---------------------------------------------------------------------------
// dynamics

inline double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline WorldState step(const WorldState& state, const std::vector<double>& action, const SimParams& sim = {}) {
    const int d_a = action_dim(state.task);
    if (static_cast<int>(action.size()) != d_a)
        throw DimensionError("action dim " + std::to_string(action.size()) + " != " + std::to_string(d_a));
    for (double v : action)
        if (!std::isfinite(v)) throw ContractError("NaN/Inf in action");

    WorldState s = state;
    for (size_t arm = 0; arm < s.grippers.size(); ++arm) {
        Gripper& g = s.grippers[arm];
        const double dx = clamp(action[arm * 3 + 0], -sim.step_clamp, sim.step_clamp);
        const double dy = clamp(action[arm * 3 + 1], -sim.step_clamp, sim.step_clamp);
        const double grip_cmd = clamp(action[arm * 3 + 2], 0.0, 1.0);
        g.x = clamp(g.x + dx, 0.02, 0.98);
        g.y = clamp(g.y + dy, 0.02, 0.98);

        const double prev = g.open;
        g.open = grip_cmd;
        if (prev >= 0.5 && grip_cmd < 0.5 && g.held < 0) {
            // closing: pick the nearest object within reach not held elsewhere
            int best = -1;
            double best_d2 = sim.pick_radius * sim.pick_radius;
            for (size_t i = 0; i < s.objects.size(); ++i) {
                bool taken = false;
                for (const auto& other : s.grippers)
                    if (other.held == static_cast<int>(i)) taken = true;
                if (taken) continue;
                const double ddx = s.objects[i].x - g.x, ddy = s.objects[i].y - g.y;
                const double d2 = ddx * ddx + ddy * ddy;
                if (d2 <= best_d2) {
                    best_d2 = d2;
                    best = static_cast<int>(i);
                }
            }
            if (best >= 0) {
                g.held = best;
                g.held_dx = s.objects[static_cast<size_t>(best)].x - g.x;
                g.held_dy = s.objects[static_cast<size_t>(best)].y - g.y;
            }
        } else if (prev < 0.5 && grip_cmd >= 0.5 && g.held >= 0) {
            g.held = -1;  // opening releases in place
        }

        if (g.held >= 0) {
            // rigid carry at the captured offset
            s.objects[static_cast<size_t>(g.held)].x = clamp(g.x + g.held_dx, 0.02, 0.98);
            s.objects[static_cast<size_t>(g.held)].y = clamp(g.y + g.held_dy, 0.02, 0.98);
        }
    }
    ++s.step_count;
    return s;
}

inline bool all_placed(const WorldState& s) {
    for (const auto& o : s.objects)
        if (!object_placed(s.task, o)) return false;
    return true;
}

// every object placed and every gripper empty; the expert's terminal state
inline bool work_done(const WorldState& s) {
    if (!all_placed(s)) return false;
    for (const auto& g : s.grippers)
        if (g.held >= 0) return false;
    return true;
}

// ---------------------------------------------------------------------------
// renderer

struct RenderOut {
    std::vector<float> pixels;  // 3*S*S, CHW, values are exact k/255 pre-tint
    std::vector<int> mask;      // S*S object index or -1, geometry only
};

namespace render_detail {

inline bool glyph_hit(Glyph g, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (g) {
        case Glyph::Square: return ax < 0.85 * r && ay < 0.85 * r;
        case Glyph::Circle: return dx * dx + dy * dy < r * r;
        case Glyph::Triangle:
            return dy > -0.85 * r && dy < 0.85 * r && ax < 0.85 * r * (0.85 * r - dy) / (1.7 * r);
        case Glyph::Cross: return (ax < 0.35 * r && ay < r) || (ay < 0.35 * r && ax < r);
        case Glyph::Diamond: return ax + ay < r;
        case Glyph::Star:
        default:
            return (ax + ay < 0.7 * r) || (ax < 0.22 * r && ay < r) || (ay < 0.22 * r && ax < r);
    }
}

inline std::array<float, 3> quantize(float r, float g, float b) {
    auto q = [](float v) { return static_cast<float>(std::round(clamp(v, 0.f, 1.f) * 255.0) / 255.0); };
    return {q(r), q(g), q(b)};
}

inline std::array<float, 3> background_at(const WorldState& s, double x, double y) {
    // style 0: quiet per-region shading; styles 1/2 restyle without moving
    // any geometry
    float base = 0.10f;
    if (s.task == WorldTask::Sorting) {
        static const float shade[4] = {0.08f, 0.12f, 0.16f, 0.20f};
        base = shade[sector_of_point(x, y)];
        // thin separators on the quadrant boundaries
        if (std::abs(x - 0.5) < 0.01 || std::abs(y - 0.5) < 0.01) base = 0.35f;
    } else if (s.task == WorldTask::BinPick) {
        base = x < 0.35 ? 0.22f : 0.10f;
        if (std::abs(x - 0.35) < 0.01) base = 0.35f;
    } else {
        base = x < 0.25 ? 0.22f : (x > 0.75 ? 0.05f : 0.12f);
        if (std::abs(x - 0.25) < 0.01 || std::abs(x - 0.75) < 0.01) base = 0.35f;
    }
    switch (s.background_style) {
        case 0: return quantize(base, base, base);
        case 1: return quantize(base * 0.6f, base * 0.8f, base * 1.6f + 0.05f);
        default: {
            const bool check = (static_cast<int>(x * 8) + static_cast<int>(y * 8)) % 2 == 0;
            const float v = check ? base * 1.5f + 0.04f : base * 0.7f;
            return quantize(v, v, v);
        }
    }
}

}  // namespace render_detail

enum class View : uint8_t { Global = 0, Wrist = 1 };

inline RenderOut render(const WorldState& state, View view, const SimParams& sim = {}) {
    const int S = sim.img;
    RenderOut out;
    out.pixels.assign(static_cast<size_t>(3 * S * S), 0.f);
    out.mask.assign(static_cast<size_t>(S * S), -1);

    // world window: global covers the unit square, wrist is a 2x zoom crop
    // centered on the first gripper
    double ox = 0.0, oy = 0.0, w = 1.0;
    if (view == View::Wrist) {
        w = 0.5;
        ox = clamp(state.grippers[0].x - w / 2, 0.0, 1.0 - w);
        oy = clamp(state.grippers[0].y - w / 2, 0.0, 1.0 - w);
    }

    for (int r = 0; r < S; ++r) {
        for (int c = 0; c < S; ++c) {
            const double x = ox + (c + 0.5) / S * w;
            const double y = oy + (1.0 - (r + 0.5) / S) * w;
            auto px = render_detail::background_at(state, x, y);
            int hit_obj = -1;
            for (const auto& d : state.distractors)
                if (render_detail::glyph_hit(d.glyph, x - d.x, y - d.y, d.radius)) {
                    auto col = color_rgb(d.color);
                    px = render_detail::quantize(col[0] * 0.4f + 0.2f, col[1] * 0.4f + 0.2f, col[2] * 0.4f + 0.2f);
                }
            for (size_t i = 0; i < state.objects.size(); ++i) {
                const auto& o = state.objects[i];
                if (render_detail::glyph_hit(o.glyph, x - o.x, y - o.y, o.radius)) {
                    auto col = color_rgb(o.color);
                    px = {col[0], col[1], col[2]};
                    hit_obj = static_cast<int>(i);
                }
            }
            for (const auto& g : state.grippers) {
                const double dx = x - g.x, dy = y - g.y;
                const double gr = 0.035;
                const bool arms = (std::abs(dx) < gr && std::abs(dy) < gr * 0.3) ||
                                  (std::abs(dy) < gr && std::abs(dx) < gr * 0.3);
                const bool core = std::abs(dx) < gr * 0.45 && std::abs(dy) < gr * 0.45;
                if (g.open >= 0.5 ? arms : (arms || core)) px = render_detail::quantize(0.95f, 0.95f, 0.95f);
            }
            const size_t pix = static_cast<size_t>(r) * S + c;
            out.mask[pix] = hit_obj;
            for (int ch = 0; ch < 3; ++ch)
                out.pixels[static_cast<size_t>(ch) * S * S + pix] = px[static_cast<size_t>(ch)];
        }
    }
    if (state.tint != std::array<float, 3>{1.f, 1.f, 1.f}) {
        for (int ch = 0; ch < 3; ++ch)
            for (int p = 0; p < S * S; ++p)
                out.pixels[static_cast<size_t>(ch) * S * S + p] *= state.tint[static_cast<size_t>(ch)];
    }
    return out;
}

inline MultiViewObservation observe(const WorldState& s, const SimParams& sim = {}) {
    MultiViewObservation obs;
    obs.img = sim.img;
    obs.views.push_back(render(s, View::Global, sim).pixels);
    obs.views.push_back(render(s, View::Wrist, sim).pixels);
    obs.proprio.assign(8, 0.f);
    for (size_t arm = 0; arm < s.grippers.size() && arm < 2; ++arm) {
        obs.proprio[arm * 4 + 0] = static_cast<float>(s.grippers[arm].x);
        obs.proprio[arm * 4 + 1] = static_cast<float>(s.grippers[arm].y);
        obs.proprio[arm * 4 + 2] = static_cast<float>(s.grippers[arm].open);
        obs.proprio[arm * 4 + 3] = s.grippers[arm].held >= 0 ? 1.f : 0.f;
    }
    return obs;
}

// ---------------------------------------------------------------------------
// scripted expert

struct ExpertStep {
    std::vector<double> action;  // per-sim-step deltas (held for hold_steps)
    std::string phrase;
};

namespace expert_detail {

// the arm's next unplaced object, nearest first; bimanual arms split by side
inline int pick_target(const WorldState& s, size_t arm) {
    int best = -1;
    double best_d2 = 1e9;
    const Gripper& g = s.grippers[arm];
    for (size_t i = 0; i < s.objects.size(); ++i) {
        const auto& o = s.objects[i];
        if (object_placed(s.task, o)) continue;
        bool taken = false;
        for (size_t a = 0; a < s.grippers.size(); ++a)
            if (a != arm && s.grippers[a].held == static_cast<int>(i)) taken = true;
        if (taken) continue;
        if (s.task == WorldTask::Bimanual) {
            const bool left_job = bimanual_left_bound(o.category);
            if (left_job != (arm == 0)) continue;
        }
        const double dx = o.x - g.x, dy = o.y - g.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline std::string carry_phrase(const WorldState& s, const ObjectSpec& o) {
    switch (s.task) {
        case WorldTask::Sorting: return std::string("placing into ") + sector_word(o.category) + " sector";
        case WorldTask::BinPick: return "placing into left basket";
        case WorldTask::Bimanual:
        default:
            return bimanual_left_bound(o.category) ? "placing into left panel" : "placing into right bin";
    }
}

}  // namespace expert_detail

// proportional approach -> grasp -> carry -> release, narrated with the
// template phrases "grabbing the {color} {category}" and "placing into
// {target} ...". With no work left, the action is zero and the phrase "done".
inline ExpertStep expert_policy(const WorldState& s, const SimParams& sim = {}) {
    ExpertStep out;
    out.action.assign(static_cast<size_t>(action_dim(s.task)), 0.0);
    out.phrase = "done";
    const double reach = 0.04;  // close/open once within this distance

    if (work_done(s)) return out;  // terminal: zero action, "done"

    for (size_t arm = 0; arm < s.grippers.size(); ++arm) {
        const Gripper& g = s.grippers[arm];
        double tx = g.x, ty = g.y, grip = g.open >= 0.5 ? 1.0 : 0.0;
        std::string phrase;

        if (g.held >= 0) {
            const auto& o = s.objects[static_cast<size_t>(g.held)];
            auto [cx, cy] = drop_target(s.task, o, g.held);
            tx = cx - g.held_dx;
            ty = cy - g.held_dy;
            const double dist = std::hypot(tx - g.x, ty - g.y);
            grip = dist < reach ? 1.0 : 0.0;  // open at the drop point
            phrase = expert_detail::carry_phrase(s, o);
        } else {
            const int tgt = expert_detail::pick_target(s, arm);
            if (tgt >= 0) {
                const auto& o = s.objects[static_cast<size_t>(tgt)];
                tx = o.x;
                ty = o.y;
                const double dist = std::hypot(tx - g.x, ty - g.y);
                grip = dist < reach ? 0.0 : 1.0;  // close on top of the object
                phrase = std::string("grabbing the ") + color_word(o.color) + " " + category_word(o.category);
            }
        }

        // deltas sized for the zero-order hold over hold_steps sim steps
        const double h = static_cast<double>(sim.hold_steps);
        out.action[arm * 3 + 0] = clamp((tx - g.x) / h, -sim.step_clamp, sim.step_clamp);
        out.action[arm * 3 + 1] = clamp((ty - g.y) / h, -sim.step_clamp, sim.step_clamp);
        out.action[arm * 3 + 2] = grip;
        if (!phrase.empty() && (out.phrase == "done" || arm == 0)) out.phrase = phrase;
    }
    return out;
}

inline int tick_cap(const WorldState& s, const SimParams& sim) {
    return sim.tick_cap_base + sim.ticks_per_object * static_cast<int>(s.objects.size());
}

// the expert must clear 100 seeded easy scenes before any dataset is generated
inline void expert_self_test(const SimParams& sim, const SplitManifest& manifest, WorldTask task = WorldTask::Sorting,
                             int n = 100) {
    for (int i = 0; i < n; ++i) {
        Protocol proto = task == WorldTask::Bimanual ? Protocol::BimanualSeen : Protocol::InDist;
        WorldState s = reset(proto, hash_mix(0xE0, static_cast<uint64_t>(i)), manifest, sim);
        const int cap = tick_cap(s, sim);
        for (int t = 0; t < cap && !all_placed(s); ++t) {
            auto e = expert_policy(s, sim);
            for (int k = 0; k < sim.hold_steps; ++k) s = step(s, e.action, sim);
        }
        if (!all_placed(s))
            throw GenerationError("expert self-test failed on seed " + std::to_string(i));
    }
}

}  // namespace reasonact
