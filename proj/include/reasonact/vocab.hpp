#pragma once

// Closed-vocabulary tokenizer. PAD/BOS/EOS/SEP hold fixed ids; the word list
// covers object colors, categories, sector names and the instruction phrases
// the simulator emits. Persisted as plain text, one token per line, line
// number = id.

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "reasonact/common.hpp"

namespace reasonact {

enum class Role : uint8_t { Instruction = 0, Reasoning = 1, Pad = 2 };

struct TokenSequence {
    std::vector<int> ids;
    std::vector<Role> roles;

    size_t size() const { return ids.size(); }
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;

    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        if (tokens_.size() < 4 || tokens_[0] != "<pad>" || tokens_[1] != "<bos>" || tokens_[2] != "<eos>" ||
            tokens_[3] != "<sep>")
            throw VocabError("vocabulary must start with <pad>, <bos>, <eos>, <sep>");
        for (size_t i = 0; i < tokens_.size(); ++i) {
            if (index_.count(tokens_[i])) throw VocabError("duplicate vocabulary token: " + tokens_[i]);
            index_[tokens_[i]] = static_cast<int>(i);
        }
    }

    static Vocabulary default_vocab(int pad_to = 64) {
        std::vector<std::string> t = {"<pad>", "<bos>", "<eos>", "<sep>"};
        const char* words[] = {
            // colors
            "red", "green", "blue", "yellow", "purple", "orange", "pink", "brown",
            // categories and sector names
            "car", "glove", "toy", "key", "cars", "gloves", "toys", "keys",
            // reasoning phrase words
            "grabbing", "placing", "the", "into", "sector", "done", "grab",
            // instruction words
            "sort", "all", "items", "corresponding", "areas", "move", "any", "object", "on", "right", "panel",
            "clear", "table", "left", "bin", "basket", "to"};
        for (const char* w : words) t.emplace_back(w);
        while (static_cast<int>(t.size()) < pad_to) t.push_back("<unused" + std::to_string(t.size()) + ">");
        return Vocabulary(std::move(t));
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw VocabError("word not in vocabulary: '" + word + "'");
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw VocabError("token id out of range: " + std::to_string(id));
        return tokens_[static_cast<size_t>(id)];
    }

    // BOS + word ids + EOS; whitespace-separated words must all be in vocab
    TokenSequence tokenize(const std::string& text, Role role) const {
        TokenSequence seq;
        seq.ids.push_back(kBos);
        std::istringstream in(text);
        std::string w;
        while (in >> w) seq.ids.push_back(id(w));
        seq.ids.push_back(kEos);
        seq.roles.assign(seq.ids.size(), role);
        return seq;
    }

    // joins word tokens; specials and padding are skipped
    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (int i : ids) {
            if (i == kPad || i == kBos || i == kEos || i == kSep) continue;
            if (!out.empty()) out += ' ';
            out += token(i);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write vocabulary file: " + path);
        for (const auto& t : tokens_) f << t << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read vocabulary file: " + path);
        std::vector<std::string> t;
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            t.push_back(line);
        }
        while (!t.empty() && t.back().empty()) t.pop_back();
        return Vocabulary(std::move(t));
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// pads (or verifies) a token sequence to a fixed segment length
inline TokenSequence pad_sequence(const TokenSequence& seq, int len, Role pad_role = Role::Pad) {
    if (static_cast<int>(seq.size()) > len)
        throw ContractError("token segment of length " + std::to_string(seq.size()) + " exceeds padded length " +
                            std::to_string(len));
    TokenSequence out = seq;
    while (static_cast<int>(out.size()) < len) {
        out.ids.push_back(Vocabulary::kPad);
        out.roles.push_back(pad_role);
    }
    return out;
}

}  // namespace reasonact
