#pragma once

// Deterministic report assembly: a JSON document built from pipeline outputs,
// rendered to text through a small mustache-style template.
//
// Template syntax: {{a.b}} substitutes a value, {{#a}}...{{/a}} repeats over an
// array (or renders once for a true/object value), {{^a}}...{{/a}} renders when
// the value is false, null or empty. Names resolve innermost context first.

#include <charconv>
#include <cmath>

#include "gtd/evalmetrics/metrics.hpp"
#include "gtd/features/features.hpp"
#include "gtd/forest/forest.hpp"
#include "gtd/reportkit/retrieval.hpp"

namespace gtd::report {

using Json = nlohmann::ordered_json;

inline const std::string kDisclaimer =
    "Research prototype output computed on synthetic data with a placeholder corpus. Not for clinical use.";

inline const std::string kDefaultTemplate = R"(GTD DIAGNOSTIC REPORT
{{title}}

Slide: {{slide_id}}
Patient: {{patient}}

Diagnosis: {{diagnosis.name}} (class {{diagnosis.class}})
Vote shares:
{{#diagnosis.vote_shares}}  {{name}}: {{share}}
{{/diagnosis.vote_shares}}
Lesion statistics:
{{#lesions}}  {{name}}: {{value}}
{{/lesions}}
Feature summary:
{{#features}}  {{index}}. {{name}}: {{value}}
{{/features}}
Retrieval query: {{query}}
Knowledge snippets:
{{#snippets}}  [{{rank}}] {{id}} - {{title}} (score {{score}})
      {{text}}
{{/snippets}}{{^snippets}}  none
{{/snippets}}
{{disclaimer}}
)";

// ---------------------------------------------------------------------------
// Numbers

/// Shortest decimal string that parses back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

/// Rounded to `decimals` places, as an integer JSON value when integral.
inline Json rounded(double v, int decimals = 4) {
    if (!std::isfinite(v)) throw NumericError("report: non-finite value");
    const double s = std::pow(10.0, decimals);
    const double r = std::round(v * s) / s;
    if (r == std::trunc(r) && std::abs(r) < 1e15) return static_cast<std::int64_t>(r);
    return r;
}

/// Largest-remainder rounding of shares to hundredths; the results sum to 100.
inline std::array<int, 3> hundredths(const std::array<double, 3>& shares) {
    std::array<int, 3> units{};
    std::array<double, 3> rem{};
    int total = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double u = shares[c] * 100.0;
        units[c] = static_cast<int>(std::floor(u + 1e-9));
        rem[c] = u - units[c];
        total += units[c];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; total < 100; k = (k + 1) % 3, ++total) ++units[order[k]];
    return units;
}

// ---------------------------------------------------------------------------
// Template rendering

namespace detail {

struct Renderer {
    const std::string& tpl;
    std::vector<const Json*> stack;
    std::vector<std::string> missing;

    const Json* lookup(const std::string& path) const {
        if (path == ".") return stack.back();
        std::vector<std::string> parts;
        for (std::size_t a = 0;;) {
            const auto b = path.find('.', a);
            parts.push_back(path.substr(a, b == std::string::npos ? std::string::npos : b - a));
            if (b == std::string::npos) break;
            a = b + 1;
        }
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
            const Json* cur = *it;
            if (!cur->is_object() || !cur->contains(parts[0])) continue;
            cur = &(*cur)[parts[0]];
            for (std::size_t i = 1; i < parts.size(); ++i) {
                if (!cur->is_object() || !cur->contains(parts[i])) return nullptr;
                cur = &(*cur)[parts[i]];
            }
            return cur;
        }
        return nullptr;
    }

    void note_missing(const std::string& name) {
        if (std::find(missing.begin(), missing.end(), name) == missing.end()) missing.push_back(name);
    }

    static std::string scalar(const Json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
        if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
        if (v.is_number_float()) return format_number(v.get<double>());
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        if (v.is_null()) return "n/a";
        return v.dump();
    }

    static bool truthy(const Json& v) {
        if (v.is_null()) return false;
        if (v.is_boolean()) return v.get<bool>();
        if (v.is_array() || v.is_object() || v.is_string()) return !v.empty();
        return true;
    }

    /// Index just past the matching close tag for section `name` opened before `pos`.
    std::pair<std::size_t, std::size_t> find_close(const std::string& name, std::size_t pos) const {
        int depth = 1;
        while (true) {
            const auto open = tpl.find("{{", pos);
            if (open == std::string::npos) throw ContractError("report template: unclosed section '" + name + "'");
            const auto close = tpl.find("}}", open);
            if (close == std::string::npos) throw ContractError("report template: unterminated tag");
            const std::string tag = tpl.substr(open + 2, close - open - 2);
            if ((tag[0] == '#' || tag[0] == '^') && tag.substr(1) == name) ++depth;
            if (tag[0] == '/' && tag.substr(1) == name && --depth == 0) return {open, close + 2};
            pos = close + 2;
        }
    }

    void render(std::size_t begin, std::size_t end, std::string& out) {
        std::size_t pos = begin;
        while (pos < end) {
            const auto open = tpl.find("{{", pos);
            if (open == std::string::npos || open >= end) {
                out.append(tpl, pos, end - pos);
                return;
            }
            out.append(tpl, pos, open - pos);
            const auto close = tpl.find("}}", open);
            if (close == std::string::npos || close > end) throw ContractError("report template: unterminated tag");
            std::string tag = tpl.substr(open + 2, close - open - 2);
            if (tag.empty()) throw ContractError("report template: empty tag");
            pos = close + 2;
            const char kind = tag[0];
            if (kind == '/') throw ContractError("report template: unexpected close tag '" + tag.substr(1) + "'");
            if (kind != '#' && kind != '^') {
                if (const Json* v = lookup(tag))
                    out += scalar(*v);
                else
                    note_missing(tag);
                continue;
            }
            const std::string name = tag.substr(1);
            const auto [body_end, after] = find_close(name, pos);
            const Json* v = lookup(name);
            if (!v) {
                note_missing(name);
            } else if (kind == '^') {
                if (!truthy(*v)) render(pos, body_end, out);
            } else if (v->is_array()) {
                for (const auto& item : *v) {
                    stack.push_back(&item);
                    render(pos, body_end, out);
                    stack.pop_back();
                }
            } else if (truthy(*v)) {
                stack.push_back(v);
                render(pos, body_end, out);
                stack.pop_back();
            }
            pos = after;
        }
    }
};

} // namespace detail

/// Throws ContractError naming every field the template references but the
/// document lacks.
inline std::string render(const std::string& tpl, const Json& doc) {
    detail::Renderer r{tpl, {&doc}, {}};
    std::string out;
    r.render(0, tpl.size(), out);
    if (!r.missing.empty()) {
        std::string list;
        for (const auto& m : r.missing) list += (list.empty() ? "" : ", ") + m;
        throw ContractError("report template: missing field(s): " + list);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report assembly

struct Report {
    Json json;
    std::string text;
};

/// Query terms from the verdict and lesion characteristics.
inline std::vector<std::string> report_query(const features::FeatureVector& f, int diagnosis) {
    std::vector<std::string> q{eval::kDiagnosisNames.at(static_cast<std::size_t>(diagnosis)), "villi"};
    if (f[0] > 0) q.push_back("edema");
    if (f[1] > 0) q.push_back("hyperplasia");
    if (f[5] > 0) q.push_back("abnormal");
    return q;
}

/// Whitespace-split words with case and punctuation kept.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (std::size_t i = 0; i < text.size();) {
        if (const auto n = detail::space_len(text, i)) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
            i += n;
        } else {
            cur += text[i++];
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline std::string snippet(const std::string& body, std::size_t max_bytes = 240) {
    std::string out;
    for (const auto& w : split_words(body)) {
        if (!out.empty() && out.size() + 1 + w.size() > max_bytes) {
            out += " ...";
            break;
        }
        out += (out.empty() ? "" : " ") + w;
    }
    return out;
}

struct ReportInputs {
    std::string slide_id;
    std::string patient = "anonymous";
    features::FeatureVector features;
    forest::Prediction diagnosis;
    std::vector<Hit> hits;
    std::vector<std::string> query;
};

inline Json report_json(const ReportInputs& in, const Corpus& corpus) {
    if (in.diagnosis.label < 0 || in.diagnosis.label > 2) throw ContractError("report: diagnosis class outside 0..2");
    const auto& name = eval::kDiagnosisNames[static_cast<std::size_t>(in.diagnosis.label)];
    Json j;
    j["title"] = "Diagnosis: " + name;
    j["slide_id"] = in.slide_id;
    j["patient"] = in.patient;
    const auto units = hundredths(in.diagnosis.shares);
    Json shares = Json::array();
    for (std::size_t c = 0; c < 3; ++c)
        shares.push_back({{"class", c}, {"name", eval::kDiagnosisNames[c]}, {"share", units[c] / 100.0}});
    j["diagnosis"] = {{"class", in.diagnosis.label}, {"name", name}, {"vote_shares", shares}};
    Json lesions = Json::array(), feats = Json::array();
    for (std::size_t i = 0; i < features::kFeatureCount; ++i) {
        Json row{{"index", i + 1}, {"name", features::kFeatureNames[i]}, {"value", rounded(in.features[i])}};
        if (i < features::kManualCount) lesions.push_back({{"name", features::kFeatureNames[i]}, {"value", rounded(in.features[i])}});
        feats.push_back(std::move(row));
    }
    j["lesions"] = lesions;
    j["features"] = feats;
    std::string q;
    for (const auto& t : in.query) q += (q.empty() ? "" : " ") + t;
    j["query"] = q;
    Json snips = Json::array();
    for (std::size_t r = 0; r < in.hits.size(); ++r) {
        const auto& d = corpus.doc(in.hits[r].id);
        snips.push_back({{"rank", r + 1},
                         {"id", d.id},
                         {"title", d.title},
                         {"source", d.source},
                         {"score", rounded(in.hits[r].score)},
                         {"text", snippet(d.body)}});
    }
    j["snippets"] = snips;
    j["disclaimer"] = kDisclaimer;
    return j;
}

inline Report assemble_report(const features::FeatureVector& f, const forest::Prediction& diagnosis, const Corpus& corpus,
                              const std::string& patient = "anonymous", std::size_t k = 3,
                              const std::string& tpl = kDefaultTemplate) {
    ReportInputs in{f.slide_id, patient, f, diagnosis, {}, report_query(f, diagnosis.label)};
    in.hits = retrieve(in.query, corpus, k);
    Report r;
    r.json = report_json(in, corpus);
    r.text = render(tpl, r.json);
    return r;
}

} // namespace gtd::report
