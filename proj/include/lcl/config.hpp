#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lcl/dataset.hpp"
#include "lcl/error.hpp"
#include "lcl/model.hpp"
#include "lcl/trainer.hpp"

namespace lcl {

/// Where images come from: an image tree on disk or generated glyphs. The
/// glyph size always follows model.image_size.
struct DataSource {
    std::string root;
    std::optional<SynthSpec> synth;

    bool configured() const { return !root.empty() || synth.has_value(); }

    friend bool operator==(const DataSource&, const DataSource&) = default;
};

struct DataConfig {
    DataSource train;
    DataSource test;
    SplitSpec split; // applied to the training source
    bool augment = false;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

enum class Protocol { variant, bpl, manifest };

struct EvalConfig {
    Protocol protocol = Protocol::variant;
    std::size_t runs = 100;
    std::size_t n_shot = 1;
    std::string manifest;
    std::string manifest_root; // image root the manifest paths are relative to
    std::uint64_t seed = 1000;
    bool disjoint = false;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct IoConfig {
    std::string checkpoint;
    std::string report;
    std::string loss_trace;
    std::string effective_config;

    friend bool operator==(const IoConfig&, const IoConfig&) = default;
};

/// Everything a command needs. Relative paths are taken relative to the
/// working directory of the process. The output paths of `train` live in
/// `io`; train.checkpoint_path / loss_trace_path stay empty here.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
    IoConfig io;

    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline const std::vector<std::pair<SplitKind, std::string>>& split_names() {
    static const std::vector<std::pair<SplitKind, std::string>> names = {
        {SplitKind::full, "full"},       {SplitKind::small1, "small1"},   {SplitKind::small2, "small2"},
        {SplitKind::tiny1, "tiny1"},     {SplitKind::tiny2, "tiny2"},     {SplitKind::first_n, "first_n"},
        {SplitKind::explicit_list, "list"}};
    return names;
}

inline const std::vector<std::pair<Protocol, std::string>>& protocol_names() {
    static const std::vector<std::pair<Protocol, std::string>> names = {
        {Protocol::variant, "variant"}, {Protocol::bpl, "bpl"}, {Protocol::manifest, "manifest"}};
    return names;
}

template <class E>
std::string enum_name(const std::vector<std::pair<E, std::string>>& names, E value) {
    for (const auto& [e, n] : names) {
        if (e == value) return n;
    }
    throw ContractError("unnamed enum value");
}

template <class E>
E enum_value(const std::vector<std::pair<E, std::string>>& names, const std::string& text, const std::string& field) {
    std::string options;
    for (const auto& [e, n] : names) {
        if (n == text) return e;
        options += (options.empty() ? "" : ", ") + n;
    }
    throw ConfigError(field + ": unknown value \"" + text + "\" (expected one of " + options + ")");
}

// One JSON object of the config. Reads optional fields into defaults and
// remembers which keys were consumed so leftovers can be reported.
class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected a JSON object");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    Section child(const std::string& key) {
        static const nlohmann::json empty = nlohmann::json::object();
        return has(key) ? Section(j_.at(key), field(key)) : Section(empty, field(key));
    }

    template <class T>
    void read(const std::string& key, T& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        const auto name = field(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(name + ": expected true or false");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(name + ": expected a string");
            out = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            if (!v.is_array()) throw ConfigError(name + ": expected an array of strings");
            out.clear();
            for (const auto& e : v) {
                if (!e.is_string()) throw ConfigError(name + ": expected an array of strings");
                out.push_back(e.get<std::string>());
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(name + ": expected a number");
            out = v.get<T>();
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(name + ": expected a non-negative integer");
            out = v.get<T>();
        } else {
            static_assert(std::is_same_v<T, int>);
            if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
            const auto x = v.get<long long>();
            if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(name + ": out of range");
            out = static_cast<int>(x);
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown config key " + field(key));
            }
        }
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline DataSource read_source(Section s) {
    DataSource out;
    s.read("root", out.root);
    if (s.has("synth")) {
        Section g = s.child("synth");
        SynthSpec spec;
        g.read("classes", spec.classes);
        g.read("samples", spec.samples);
        g.read("seed", spec.seed);
        g.read("classes_per_group", spec.classes_per_group);
        g.finish();
        out.synth = spec;
    }
    s.finish();
    return out;
}

inline nlohmann::ordered_json write_source(const DataSource& src) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (!src.root.empty()) j["root"] = src.root;
    if (src.synth) {
        j["synth"] = {{"classes", src.synth->classes},
                      {"samples", src.synth->samples},
                      {"seed", src.synth->seed},
                      {"classes_per_group", src.synth->classes_per_group}};
    }
    return j;
}

inline void validate_source(const DataSource& src, const std::string& name) {
    if (!src.root.empty() && src.synth) {
        throw ConfigError(name + ": give either root or synth, not both");
    }
    if (src.synth && (src.synth->classes == 0 || src.synth->samples == 0 || src.synth->classes_per_group == 0)) {
        throw ConfigError(name + ".synth: classes, samples and classes_per_group must be positive");
    }
}

} // namespace detail

inline void RunConfig::validate() const {
    model.validate();
    train.validate();
    detail::validate_source(data.train, "data.train");
    detail::validate_source(data.test, "data.test");
    if (data.split.kind == SplitKind::first_n && data.split.n == 0) {
        throw ConfigError("data.split.n must be >= 1 for first_n");
    }
    if (data.split.kind == SplitKind::explicit_list && data.split.names.empty()) {
        throw ConfigError("data.split.names must list at least one category");
    }
    if (eval.runs == 0) {
        throw ConfigError("eval.runs must be >= 1");
    }
    if (eval.n_shot == 0) {
        throw ConfigError("eval.n_shot must be >= 1");
    }
    if (eval.protocol == Protocol::bpl && eval.n_shot != 1) {
        throw ConfigError("eval.n_shot must be 1 for the bpl protocol");
    }
}

/// Parses and validates a config document. Absent keys keep their defaults;
/// unknown keys and ill-typed values are ConfigErrors naming the field.
inline RunConfig parse_run_config(const std::string& text, const std::string& what = "config") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(what + ": invalid JSON: " + e.what());
    }
    RunConfig c;
    detail::Section root(j, "");

    auto m = root.child("model");
    m.read("n", c.model.n);
    m.read("L", c.model.L);
    m.read("image_size", c.model.image_size);
    m.read("embed_dim", c.model.embed_dim);
    m.finish();

    auto t = root.child("train");
    t.read("N", c.train.N);
    t.read("lr0", c.train.lr0);
    t.read("momentum", c.train.momentum);
    t.read("d1", c.train.d1);
    t.read("d2", c.train.d2);
    t.read("m", c.train.m);
    t.read("seed", c.train.seed);
    t.read("checkpoint_every", c.train.checkpoint_every);
    t.read("log_every", c.train.log_every);
    t.read("zero_init_dp", c.train.zero_init_dp);
    t.finish();

    auto d = root.child("data");
    if (d.has("train")) c.data.train = detail::read_source(d.child("train"));
    if (d.has("test")) c.data.test = detail::read_source(d.child("test"));
    if (d.has("split")) {
        auto s = d.child("split");
        std::string kind = "full";
        s.read("kind", kind);
        c.data.split.kind = detail::enum_value(detail::split_names(), kind, "data.split.kind");
        s.read("n", c.data.split.n);
        s.read("names", c.data.split.names);
        s.finish();
    }
    d.read("augment", c.data.augment);
    d.finish();

    auto e = root.child("eval");
    std::string protocol = "variant";
    e.read("protocol", protocol);
    c.eval.protocol = detail::enum_value(detail::protocol_names(), protocol, "eval.protocol");
    e.read("runs", c.eval.runs);
    e.read("n_shot", c.eval.n_shot);
    e.read("manifest", c.eval.manifest);
    e.read("manifest_root", c.eval.manifest_root);
    e.read("seed", c.eval.seed);
    e.read("disjoint", c.eval.disjoint);
    e.finish();

    auto io = root.child("io");
    io.read("checkpoint", c.io.checkpoint);
    io.read("report", c.io.report);
    io.read("loss_trace", c.io.loss_trace);
    io.read("effective_config", c.io.effective_config);
    io.finish();

    root.finish();
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open config " + path.string());
    }
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_run_config(text, path.string());
}

/// Fully resolved config with every field spelled out.
inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["model"] = {{"n", c.model.n}, {"L", c.model.L}, {"image_size", c.model.image_size},
                  {"embed_dim", c.model.embed_dim}};
    j["train"] = {{"N", c.train.N},
                  {"lr0", c.train.lr0},
                  {"momentum", c.train.momentum},
                  {"d1", c.train.d1},
                  {"d2", c.train.d2},
                  {"m", c.train.m},
                  {"seed", c.train.seed},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"log_every", c.train.log_every},
                  {"zero_init_dp", c.train.zero_init_dp}};
    nlohmann::ordered_json data;
    if (c.data.train.configured()) data["train"] = detail::write_source(c.data.train);
    if (c.data.test.configured()) data["test"] = detail::write_source(c.data.test);
    data["split"] = {{"kind", detail::enum_name(detail::split_names(), c.data.split.kind)},
                     {"n", c.data.split.n},
                     {"names", c.data.split.names}};
    data["augment"] = c.data.augment;
    j["data"] = std::move(data);
    j["eval"] = {{"protocol", detail::enum_name(detail::protocol_names(), c.eval.protocol)},
                 {"runs", c.eval.runs},
                 {"n_shot", c.eval.n_shot},
                 {"manifest", c.eval.manifest},
                 {"manifest_root", c.eval.manifest_root},
                 {"seed", c.eval.seed},
                 {"disjoint", c.eval.disjoint}};
    j["io"] = {{"checkpoint", c.io.checkpoint},
               {"report", c.io.report},
               {"loss_trace", c.io.loss_trace},
               {"effective_config", c.io.effective_config}};
    return j;
}

inline std::string encode_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline void write_run_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot write effective config " + path.string());
    }
    f << encode_run_config(c);
}

/// Images of one source at model.image_size.
inline Dataset load_source(const DataSource& src, const ModelSpec& model, const std::string& name) {
    if (src.synth) {
        SynthSpec s = *src.synth;
        s.size = static_cast<std::size_t>(model.image_size);
        return synth_glyphs(s);
    }
    if (src.root.empty()) {
        throw ConfigError(name + " is not configured (set root or synth)");
    }
    return load_image_dataset(src.root, static_cast<std::size_t>(model.image_size));
}

/// Training source after the split and, if requested, rotation augmentation.
inline Dataset load_training_set(const RunConfig& c) {
    Dataset ds = split_background(load_source(c.data.train, c.model, "data.train"), c.data.split);
    return c.data.augment ? augment_rotations(ds) : ds;
}

} // namespace lcl
