#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lcl/dataset.hpp"
#include "lcl/error.hpp"
#include "lcl/sampler.hpp"

namespace lcl {

/// One trial of a manifest: recognizing image(s), L candidate images and the
/// index of the candidate sharing the recognizing category. Paths are
/// relative to the image root of the manifest.
struct ManifestEntry {
    std::vector<std::string> recognizing;
    std::vector<std::string> candidates;
    std::size_t answer_index = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr std::size_t kBplTrials = 400;
inline constexpr std::size_t kBplWays = 20;

inline ManifestEntry to_manifest_entry(const Dataset& ds, const Lcc& lcc) {
    ManifestEntry e;
    for (auto s : lcc.recognizing) e.recognizing.push_back(ds.categories.at(lcc.category).samples.at(s).path);
    for (const auto& c : lcc.contrastive) e.candidates.push_back(ds.categories.at(c.category).samples.at(c.sample).path);
    e.answer_index = lcc.answer_index();
    return e;
}

inline std::vector<ManifestEntry> to_manifest(const Dataset& ds, const std::vector<Lcc>& lccs) {
    std::vector<ManifestEntry> out;
    out.reserve(lccs.size());
    for (const auto& l : lccs) out.push_back(to_manifest_entry(ds, l));
    return out;
}

/// Canonical text: a JSON array, two-space indent, trailing newline. Parsing
/// and re-encoding a canonical manifest reproduces it byte for byte.
inline std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["recognizing"] = e.recognizing;
        j["candidates"] = e.candidates;
        j["answer_index"] = e.answer_index;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& what = "manifest") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": invalid JSON: " + e.what());
    }
    if (!j.is_array()) {
        throw DataError(what + ": top level must be an array");
    }
    std::vector<ManifestEntry> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& t = j[i];
        const std::string where = what + " entry " + std::to_string(i);
        ManifestEntry e;
        try {
            for (const auto& [key, value] : t.items()) {
                if (key != "recognizing" && key != "candidates" && key != "answer_index") {
                    throw DataError(where + ": unknown key " + key);
                }
            }
            e.recognizing = t.at("recognizing").get<std::vector<std::string>>();
            e.candidates = t.at("candidates").get<std::vector<std::string>>();
            const auto answer = t.at("answer_index").get<long long>();
            if (answer < 0) {
                throw ProtocolError(where + ": negative answer_index");
            }
            e.answer_index = static_cast<std::size_t>(answer);
        } catch (const nlohmann::json::exception& ex) {
            throw DataError(where + ": " + ex.what());
        }
        if (e.recognizing.empty() || e.candidates.empty()) {
            throw ProtocolError(where + ": needs at least one recognizing and one candidate image");
        }
        if (e.answer_index >= e.candidates.size()) {
            throw ProtocolError(where + ": answer_index " + std::to_string(e.answer_index) + " outside [0, " +
                                std::to_string(e.candidates.size()) + ")");
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("cannot open manifest " + path.string());
    }
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_manifest(text, path.string());
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot write manifest " + path.string());
    }
    f << encode_manifest(entries);
}

/// Throws ProtocolError unless `entries` is the fixed 400-trial, 20-way,
/// one-shot benchmark.
inline void check_bpl(const std::vector<ManifestEntry>& entries) {
    if (entries.size() != kBplTrials) {
        throw ProtocolError("benchmark manifest must hold " + std::to_string(kBplTrials) + " trials, found " +
                            std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].candidates.size() != kBplWays) {
            throw ProtocolError("benchmark trial " + std::to_string(i) + " is " +
                                std::to_string(entries[i].candidates.size()) + "-way, expected " +
                                std::to_string(kBplWays));
        }
        if (entries[i].recognizing.size() != 1) {
            throw ProtocolError("benchmark trial " + std::to_string(i) + " is not one-shot");
        }
    }
}

inline std::vector<ManifestEntry> load_bpl_trials(const std::filesystem::path& path) {
    auto entries = read_manifest(path);
    check_bpl(entries);
    return entries;
}

/// Converts the original one-shot benchmark folders (root/runNN with
/// training/ and test/ images and class_labels.txt listing "test train"
/// path pairs) into manifest entries. Candidates are the run's training
/// images in sorted order; paths are made relative to `root`.
inline std::vector<ManifestEntry> import_bpl_runs(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw DataError("benchmark root is not a directory: " + root.string());
    }
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "class_labels.txt")) runs.push_back(e.path());
    }
    std::sort(runs.begin(), runs.end());
    if (runs.empty()) {
        throw DataError("no run folders with class_labels.txt under " + root.string());
    }
    // Label files may list paths relative to root or to the run folder.
    auto resolve = [&](const fs::path& run, const std::string& p) {
        if (fs::exists(root / p)) return fs::path(p).generic_string();
        if (fs::exists(run / p)) return fs::relative(run / p, root).generic_string();
        throw DataError("image listed in " + (run / "class_labels.txt").string() + " not found: " + p);
    };
    std::vector<ManifestEntry> out;
    for (const auto& run : runs) {
        std::vector<std::string> training;
        for (const auto& e : fs::directory_iterator(run / "training")) {
            if (e.path().extension() == ".png") training.push_back(fs::relative(e.path(), root).generic_string());
        }
        std::sort(training.begin(), training.end());
        std::ifstream labels(run / "class_labels.txt");
        std::string test, train;
        while (labels >> test >> train) {
            const std::string train_path = resolve(run, train);
            auto it = std::find(training.begin(), training.end(), train_path);
            if (it == training.end()) {
                throw DataError("answer " + train + " is not a training image of " + run.string());
            }
            out.push_back({{resolve(run, test)}, training, static_cast<std::size_t>(it - training.begin())});
        }
    }
    return out;
}

} // namespace lcl
