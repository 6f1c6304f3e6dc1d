#pragma once

// Dataset manifest: UTF-8 JSON lines, one record per slide:
//   {"id", "image_path", "mask_path", "class_label", "split", "seed"}
// Paths are relative to the manifest's directory unless absolute.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtd/error.hpp"

namespace gtd::slideio {

struct ManifestRecord {
    std::string id;
    std::string image_path;
    std::string mask_path;
    int class_label = 0;
    std::string split;  // "stage1", "stage2", "test", "holdout"
    std::uint64_t seed = 0;

    bool operator==(const ManifestRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const ManifestRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["image_path"] = r.image_path;
    j["mask_path"] = r.mask_path;
    j["class_label"] = r.class_label;
    j["split"] = r.split;
    j["seed"] = r.seed;
    return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    r.mask_path = j.value("mask_path", std::string{});
    r.class_label = j.at("class_label").get<int>();
    r.split = j.at("split").get<std::string>();
    r.seed = j.value("seed", std::uint64_t{0});
    if (r.class_label < 0 || r.class_label > 2) throw ContractError("manifest: class_label out of range for " + r.id);
    return r;
}

inline std::string write_manifest_string(const std::vector<ManifestRecord>& recs) {
    std::string out;
    for (const auto& r : recs) out += to_json(r).dump() + "\n";
    return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& recs) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << write_manifest_string(recs);
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    std::size_t lineno = 0, offset = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) {
            try {
                out.push_back(record_from_json(nlohmann::json::parse(line)));
            } catch (const nlohmann::json::exception& e) {
                throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what(), offset);
            }
        }
        offset += line.size() + 1;
    }
    return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& manifest, const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : manifest.parent_path() / p;
}

} // namespace gtd::slideio
