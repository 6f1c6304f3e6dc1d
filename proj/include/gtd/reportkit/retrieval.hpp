#pragma once

// Lexical retrieval over a small local corpus.
//
// Tokens: split on Unicode whitespace, ASCII letters lowercased, ASCII
// punctuation removed anywhere in the token, empty tokens dropped. Non-ASCII
// bytes pass through unchanged.
//
// score(d) = sum over distinct query terms t of count(t, d) * ln(1 + N / df(t))

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gtd/error.hpp"

namespace gtd::report {

struct KnowledgeDoc {
    std::string id;
    std::string title;
    std::string body;
    std::string source;
};

namespace detail {

/// Length of the UTF-8 whitespace sequence at s[i], or 0.
inline std::size_t space_len(std::string_view s, std::size_t i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == ' ' || (c >= 0x09 && c <= 0x0d)) return 1;
    auto at = [&](std::size_t k) { return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u; };
    if (c == 0xc2 && (at(1) == 0x85 || at(1) == 0xa0)) return 2;
    if (c == 0xe1 && at(1) == 0x9a && at(2) == 0x80) return 3;  // U+1680
    if (c == 0xe2 && at(1) == 0x80) {
        const auto d = at(2);
        if ((d >= 0x80 && d <= 0x8a) || d == 0xa8 || d == 0xa9 || d == 0xaf) return 3;  // U+2000..200A, 2028, 2029, 202F
    }
    if (c == 0xe2 && at(1) == 0x81 && at(2) == 0x9f) return 3;  // U+205F
    if (c == 0xe3 && at(1) == 0x80 && at(2) == 0x80) return 3;  // U+3000
    return 0;
}

inline bool ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

} // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
        if (const auto n = detail::space_len(text, i)) {
            flush();
            i += n;
            continue;
        }
        const auto c = static_cast<unsigned char>(text[i++]);
        if (detail::ascii_punct(c)) continue;
        cur += c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
    }
    flush();
    return out;
}

struct Hit {
    std::string id;
    double score = 0.0;
};

class Corpus {
public:
    Corpus() = default;

    explicit Corpus(std::vector<KnowledgeDoc> docs) : docs_(std::move(docs)) {
        std::sort(docs_.begin(), docs_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        for (std::size_t i = 0; i < docs_.size(); ++i) {
            if (docs_[i].id.empty()) throw ContractError("corpus: document with empty id");
            if (i > 0 && docs_[i].id == docs_[i - 1].id) throw ContractError("corpus: duplicate document id '" + docs_[i].id + "'");
            if (tokenize(docs_[i].body).empty()) throw ContractError("corpus: document '" + docs_[i].id + "' has an empty body");
            std::map<std::string, int> tf;
            for (auto& t : tokenize(docs_[i].body)) ++tf[t];
            for (const auto& [t, _] : tf) ++df_[t];
            tf_.push_back(std::move(tf));
        }
    }

    std::size_t size() const { return docs_.size(); }
    const std::vector<KnowledgeDoc>& docs() const { return docs_; }

    const KnowledgeDoc& doc(const std::string& id) const {
        auto it = std::lower_bound(docs_.begin(), docs_.end(), id, [](const auto& d, const auto& k) { return d.id < k; });
        if (it == docs_.end() || it->id != id) throw ContractError("corpus: no document '" + id + "'");
        return *it;
    }

    int df(const std::string& term) const {
        auto it = df_.find(term);
        return it == df_.end() ? 0 : it->second;
    }

    int count(std::size_t doc, const std::string& term) const {
        auto it = tf_[doc].find(term);
        return it == tf_[doc].end() ? 0 : it->second;
    }

    double score(std::size_t doc, const std::set<std::string>& terms) const {
        const double n = static_cast<double>(docs_.size());
        double s = 0.0;
        for (const auto& t : terms) {
            const int c = count(doc, t);
            if (c > 0) s += c * std::log(1.0 + n / df(t));
        }
        return s;
    }

private:
    std::vector<KnowledgeDoc> docs_;
    std::vector<std::map<std::string, int>> tf_;
    std::map<std::string, int> df_;
};

/// Query terms go through the same tokenizer and are deduplicated. Documents
/// scoring zero are never returned.
inline std::vector<Hit> retrieve(const std::vector<std::string>& query, const Corpus& corpus, std::size_t k = 3) {
    if (corpus.size() == 0) throw ContractError("retrieve: empty corpus");
    std::set<std::string> terms;
    for (const auto& q : query)
        for (auto& t : tokenize(q)) terms.insert(std::move(t));
    std::vector<Hit> hits;
    if (terms.empty()) return hits;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const double s = corpus.score(i, terms);
        if (s > 0.0) hits.push_back({corpus.docs()[i].id, s});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

/// Corpus directory: `index.jsonl` with {id, title, file, source} per line;
/// `file` is a UTF-8 text file relative to the directory.
inline Corpus read_corpus(const std::filesystem::path& dir) {
    const auto index = dir / "index.jsonl";
    std::ifstream in(index);
    if (!in) throw std::runtime_error("cannot open corpus index " + index.string());
    std::vector<KnowledgeDoc> docs;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(index.string() + ": " + e.what(), here);
        }
        for (const char* key : {"id", "file"})
            if (!j.contains(key) || !j[key].is_string()) throw ParseError(index.string() + ": missing \"" + key + "\"", here);
        const auto path = dir / j["file"].get<std::string>();
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open corpus document " + path.string());
        std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        docs.push_back({j["id"].get<std::string>(), j.value("title", std::string{}), std::move(body),
                        j.value("source", std::string{})});
    }
    return Corpus(std::move(docs));
}

} // namespace gtd::report
