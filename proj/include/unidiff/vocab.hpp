#pragma once

// Closed-vocabulary tokenizer. The grammar is the synthetic scene-description
// template language plus reserved control tokens; ids are dense from 0 with
// <pad> = 0. The vocabulary is frozen per run and dumped (one token per line,
// line number = id) into every checkpoint directory.

#include <cctype>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unidiff/core.hpp"

namespace unidiff::text {

inline constexpr int kMaxPromptLen = 24;  // L_max

class Vocabulary {
public:
    Vocabulary() {
        const char* toks[] = {
            "<pad>",
            // task tokens
            "<t2i>", "<ie>", "<depth>", "<pose>", "<seg>", "<lg>",
            // placeholder + null
            "<p>", "<null>",
            // shapes
            "circle", "square", "triangle", "cross",
            // colors
            "red", "green", "blue", "yellow", "white", "black", "cyan", "magenta",
            // spatial terms
            "left", "right", "above", "below", "top", "bottom", "center", "in",
            "block", "of", "the", "a", "and",
            // counts
            "one", "two", "three",
            // verbs
            "add", "remove", "recolor", "move", "to",
            // separator
            ":",
            // seg target for the scene complement
            "background",
        };
        for (const char* t : toks) {
            index_[t] = static_cast<int>(tokens_.size());
            tokens_.emplace_back(t);
        }
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw ConfigError("unknown token: " + tok);
        return it->second;
    }
    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

    int pad_id() const { return 0; }
    int null_id() const { return id("<null>"); }
    int placeholder_id() const { return id("<p>"); }

    bool is_task_token(int tid) const {
        const std::string& t = token(tid);
        return t == "<t2i>" || t == "<ie>" || t == "<depth>" || t == "<pose>" || t == "<seg>" || t == "<lg>";
    }

    void dump(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write vocabulary: " + path);
        for (const auto& t : tokens_) f << t << "\n";
    }

    // Loads and checks a dumped vocabulary against this one (checkpoints must
    // carry the same frozen vocabulary they were trained with).
    void check_file(const std::string& path) const {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open vocabulary: " + path);
        std::string line;
        size_t i = 0;
        while (std::getline(f, line)) {
            if (i >= tokens_.size() || line != tokens_[i])
                throw ConfigError("vocabulary mismatch at line " + std::to_string(i));
            ++i;
        }
        if (i != tokens_.size()) throw ConfigError("vocabulary file truncated");
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline const Vocabulary& vocabulary() {
    static const Vocabulary v;
    return v;
}

struct TokenSequence {
    std::vector<int> ids;  // length exactly L_max, right-padded with <pad>

    int length() const { return static_cast<int>(ids.size()); }
    int content_length(int pad_id = 0) const {
        int n = 0;
        for (int i : ids)
            if (i != pad_id) ++n;
        return n;
    }
};

// Whitespace-split lookup. Over-length prompts and unknown symbols are
// rejected, never silently truncated. "" maps to the all-<pad> sequence.
inline TokenSequence tokenize(const std::string& prompt, int l_max = kMaxPromptLen) {
    const Vocabulary& voc = vocabulary();
    TokenSequence seq;
    seq.ids.reserve(static_cast<size_t>(l_max));
    size_t i = 0;
    while (i < prompt.size()) {
        while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
        size_t j = i;
        while (j < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[j]))) ++j;
        if (j > i) {
            const std::string sym = prompt.substr(i, j - i);
            if (!voc.contains(sym)) throw ConfigError("unknown token: " + sym);
            if (static_cast<int>(seq.ids.size()) >= l_max)
                throw ConfigError("prompt exceeds " + std::to_string(l_max) + " tokens");
            seq.ids.push_back(voc.id(sym));
        }
        i = j;
    }
    seq.ids.resize(static_cast<size_t>(l_max), voc.pad_id());
    return seq;
}

}  // namespace unidiff::text
