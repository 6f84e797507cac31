#pragma once

// Dataset files: a line-delimited index (one frame per line, tab-separated
// fields) plus a sidecar binary blob holding the per-view rasters as u8,
// referenced by offset+length. Rendered colors are exact multiples of 1/255,
// so the u8 payload round-trips the float rasters losslessly. A split
// manifest and per-embodiment normalization stats sit beside the data.

#include <filesystem>

#include "reasonact/sortworld.hpp"

namespace reasonact {

struct FrameEntry {
    int episode = 0;
    int step = 0;  // sim step of the frame
    std::string embodiment;
    std::string instruction;
    std::string phrase;
    std::vector<float> proprio;
    std::vector<double> action;
    std::vector<std::pair<uint64_t, uint32_t>> view_refs;  // offset, length into the blob
};

class Dataset {
public:
    std::vector<FrameEntry> frames;
    std::vector<std::pair<size_t, size_t>> episodes;  // [begin, end) frame ranges
    std::vector<uint8_t> blob;
    SplitManifest manifest;
    std::map<std::string, EmbodimentSpec> stats;  // keyed by embodiment id
    int img = 32;
    int views = 2;

    const EmbodimentSpec& spec(const std::string& id) const {
        auto it = stats.find(id);
        if (it == stats.end()) throw RegistryError("dataset has no stats for embodiment: " + id);
        return it->second;
    }

    MultiViewObservation frame_obs(size_t idx) const {
        const FrameEntry& f = frames[idx];
        MultiViewObservation obs;
        obs.img = img;
        obs.proprio = f.proprio;
        for (const auto& [off, len] : f.view_refs) {
            if (off + len > blob.size()) throw IoError("dataset blob reference out of range");
            std::vector<float> px(len);
            for (uint32_t i = 0; i < len; ++i) px[i] = static_cast<float>(blob[off + i]) / 255.f;
            obs.views.push_back(std::move(px));
        }
        return obs;
    }

    // chunk of the next `horizon` recorded actions from this frame, padded by
    // repeating the final action of the episode
    std::vector<std::vector<double>> frame_chunk(size_t idx, int horizon) const {
        size_t ep_end = 0;
        for (const auto& [b, e] : episodes)
            if (idx >= b && idx < e) ep_end = e;
        if (ep_end == 0) throw ContractError("frame index outside any episode");
        std::vector<std::vector<double>> chunk;
        chunk.reserve(static_cast<size_t>(horizon));
        for (int k = 0; k < horizon; ++k) {
            const size_t j = std::min(idx + static_cast<size_t>(k), ep_end - 1);
            chunk.push_back(frames[j].action);
        }
        return chunk;
    }
};

namespace dataset_detail {

inline std::string join_csv_f(const std::vector<float>& v) {
    std::string out;
    for (float x : v) {
        if (!out.empty()) out += ',';
        out += fmt_double(static_cast<double>(x));
    }
    return out;
}
inline std::string join_csv_d(const std::vector<double>& v) {
    std::string out;
    for (double x : v) {
        if (!out.empty()) out += ',';
        out += fmt_double(x);
    }
    return out;
}
inline std::vector<double> parse_csv_d(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return out;
}

}  // namespace dataset_detail

struct DatasetGenConfig {
    int n_episodes = 500;
    WorldTask task = WorldTask::Sorting;
    SimParams sim;
};

// Rolls out the expert with per-episode seeds hash(seed, episode), recording
// one frame per control tick (= sim.hold_steps sim steps). Writes
// <prefix>.idx/.bin/.manifest/.stats; regeneration with the same seed is
// byte-identical.
inline void generate_dataset(const DatasetGenConfig& cfg, const SplitManifest& manifest, uint64_t seed,
                             const std::string& prefix) {
    expert_self_test(cfg.sim, manifest, cfg.task);

    namespace fs = std::filesystem;
    if (!fs::path(prefix).parent_path().empty()) fs::create_directories(fs::path(prefix).parent_path());
    std::ofstream idx(prefix + ".idx", std::ios::binary);
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!idx || !bin) throw IoError("cannot write dataset files at prefix: " + prefix);

    const std::string instruction = task_instruction(cfg.task);
    const std::string emb_id = embodiment_id(cfg.task);
    const int d_a = action_dim(cfg.task);
    std::vector<double> mins(static_cast<size_t>(d_a), 1e30), maxs(static_cast<size_t>(d_a), -1e30);
    uint64_t blob_off = 0;

    const Protocol proto = cfg.task == WorldTask::Bimanual ? Protocol::BimanualSeen : Protocol::Train;
    for (int ep = 0; ep < cfg.n_episodes; ++ep) {
        WorldState s = reset(proto, hash_mix(seed, static_cast<uint64_t>(ep)), manifest, cfg.sim);
        const int cap = tick_cap(s, cfg.sim);
        bool done_recorded = false;
        for (int t = 0; t < cap && !done_recorded; ++t) {
            const ExpertStep e = expert_policy(s, cfg.sim);
            const MultiViewObservation obs = observe(s, cfg.sim);

            idx << ep << '\t' << s.step_count << '\t' << emb_id << '\t' << instruction << '\t' << e.phrase << '\t'
                << dataset_detail::join_csv_f(obs.proprio) << '\t' << dataset_detail::join_csv_d(e.action) << '\t';
            for (size_t v = 0; v < obs.views.size(); ++v) {
                std::vector<uint8_t> bytes(obs.views[v].size());
                for (size_t i = 0; i < bytes.size(); ++i)
                    bytes[i] = static_cast<uint8_t>(std::lround(obs.views[v][i] * 255.f));
                bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
                idx << (v ? ";" : "") << blob_off << ':' << bytes.size();
                blob_off += bytes.size();
            }
            idx << '\n';

            for (int j = 0; j < d_a; ++j) {
                mins[static_cast<size_t>(j)] = std::min(mins[static_cast<size_t>(j)], e.action[static_cast<size_t>(j)]);
                maxs[static_cast<size_t>(j)] = std::max(maxs[static_cast<size_t>(j)], e.action[static_cast<size_t>(j)]);
            }
            if (work_done(s)) done_recorded = true;  // one terminal "done" frame
            for (int k = 0; k < cfg.sim.hold_steps; ++k) s = step(s, e.action, cfg.sim);
        }
    }
    idx.close();
    bin.close();
    manifest.save(prefix + ".manifest");

    std::ofstream st(prefix + ".stats", std::ios::binary);
    if (!st) throw IoError("cannot write dataset stats: " + prefix + ".stats");
    st << "embodiment=" << emb_id << "\n";
    st << "d_a=" << d_a << "\n";
    st << "img=" << cfg.sim.img << "\n";
    st << "views=2\n";
    st << "mins=" << dataset_detail::join_csv_d(mins) << "\n";
    st << "maxs=" << dataset_detail::join_csv_d(maxs) << "\n";
}

// stats are padded out to d_x with degenerate dims so the diffusion head's
// fixed-width representation treats unused channels as constant zero
inline EmbodimentSpec load_stats(const std::string& prefix, int d_x) {
    std::ifstream st(prefix + ".stats", std::ios::binary);
    if (!st) throw IoError("cannot read dataset stats: " + prefix + ".stats");
    std::string text((std::istreambuf_iterator<char>(st)), std::istreambuf_iterator<char>());
    KvMap kv = parse_kv_text(text);
    EmbodimentSpec spec;
    spec.id = kv.at("embodiment");
    spec.d_a = std::stoi(kv.at("d_a"));
    spec.mins = dataset_detail::parse_csv_d(kv.at("mins"));
    spec.maxs = dataset_detail::parse_csv_d(kv.at("maxs"));
    if (spec.d_a > d_x) throw ConfigError("embodiment d_a exceeds the model's action width d_x");
    spec.mins.resize(static_cast<size_t>(d_x), 0.0);
    spec.maxs.resize(static_cast<size_t>(d_x), 0.0);
    return spec;
}

inline Dataset load_dataset(const std::string& prefix, int d_x) {
    Dataset ds;
    std::ifstream idx(prefix + ".idx", std::ios::binary);
    if (!idx) throw IoError("cannot read dataset index: " + prefix + ".idx");
    std::string line;
    int cur_ep = -1;
    size_t begin = 0;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        auto f = dataset_detail::split_tabs(line);
        if (f.size() != 8) throw IoError("malformed dataset index line");
        FrameEntry e;
        e.episode = std::stoi(f[0]);
        e.step = std::stoi(f[1]);
        e.embodiment = f[2];
        e.instruction = f[3];
        e.phrase = f[4];
        for (double v : dataset_detail::parse_csv_d(f[5])) e.proprio.push_back(static_cast<float>(v));
        e.action = dataset_detail::parse_csv_d(f[6]);
        std::istringstream vs(f[7]);
        std::string ref;
        while (std::getline(vs, ref, ';')) {
            size_t colon = ref.find(':');
            e.view_refs.emplace_back(std::stoull(ref.substr(0, colon)),
                                     static_cast<uint32_t>(std::stoul(ref.substr(colon + 1))));
        }
        if (e.episode != cur_ep) {
            if (cur_ep >= 0) ds.episodes.emplace_back(begin, ds.frames.size());
            cur_ep = e.episode;
            begin = ds.frames.size();
        }
        ds.frames.push_back(std::move(e));
    }
    if (!ds.frames.empty()) ds.episodes.emplace_back(begin, ds.frames.size());

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot read dataset blob: " + prefix + ".bin");
    ds.blob.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());

    ds.manifest = SplitManifest::load(prefix + ".manifest");
    EmbodimentSpec spec = load_stats(prefix, d_x);
    std::ifstream st(prefix + ".stats", std::ios::binary);
    std::string stext((std::istreambuf_iterator<char>(st)), std::istreambuf_iterator<char>());
    KvMap skv = parse_kv_text(stext);
    ds.img = std::stoi(skv.at("img"));
    ds.views = std::stoi(skv.at("views"));
    ds.stats[spec.id] = spec;
    return ds;
}

inline uint64_t file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read file for checksum: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    }
    return h;
}

}  // namespace reasonact
