#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcl/error.hpp"
#include "lcl/image.hpp"
#include "lcl/rng.hpp"

namespace lcl {

struct Sample {
    Image image;
    std::string path; // identifier, relative to the dataset root
};

struct Category {
    std::string name;
    std::size_t group = 0;
    std::vector<Sample> samples;
};

/// Labelled image set: categories (characters) grouped by alphabet. The
/// category id is its index in `categories`.
struct Dataset {
    std::vector<std::string> groups;
    std::vector<Category> categories;

    std::size_t size() const noexcept { return categories.size(); }
    bool empty() const noexcept { return categories.empty(); }

    std::size_t sample_count() const {
        std::size_t n = 0;
        for (const auto& c : categories) n += c.samples.size();
        return n;
    }

    std::size_t min_samples() const {
        std::size_t k = categories.empty() ? 0 : categories.front().samples.size();
        for (const auto& c : categories) k = std::min(k, c.samples.size());
        return k;
    }

    std::size_t max_samples() const {
        std::size_t k = 0;
        for (const auto& c : categories) k = std::max(k, c.samples.size());
        return k;
    }

    /// Side length of the (square) images; 0 when empty.
    std::size_t image_size() const {
        for (const auto& c : categories) {
            if (!c.samples.empty()) return c.samples.front().image.width;
        }
        return 0;
    }

    const Image& image(std::size_t category, std::size_t sample) const {
        return categories.at(category).samples.at(sample).image;
    }

    /// Path -> (category, sample) index for manifest resolution.
    std::map<std::string, std::pair<std::size_t, std::size_t>> path_index() const {
        std::map<std::string, std::pair<std::size_t, std::size_t>> idx;
        for (std::size_t c = 0; c < categories.size(); ++c) {
            for (std::size_t s = 0; s < categories[c].samples.size(); ++s) {
                idx[categories[c].samples[s].path] = {c, s};
            }
        }
        return idx;
    }

    /// Throws DataError on duplicate category names or mixed image sizes.
    void validate() const {
        std::set<std::string> names;
        for (const auto& c : categories) {
            if (!names.insert(c.name).second) {
                throw DataError("duplicate category " + c.name);
            }
            if (c.group >= groups.size()) {
                throw DataError("category " + c.name + " has no group");
            }
        }
        const std::size_t size = image_size();
        for (const auto& c : categories) {
            for (const auto& s : c.samples) {
                if (s.image.width != size || s.image.height != size) {
                    throw DataError("image " + s.path + " is not " + std::to_string(size) + "x" +
                                    std::to_string(size));
                }
            }
        }
    }
};

/// Loads root/<group>/<category>/<sample>.png in lexicographic path order.
/// With image_size > 0 every image is resized to image_size x image_size.
inline Dataset load_image_dataset(const std::filesystem::path& root, std::size_t image_size = 28) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw DataError("dataset root is not a directory: " + root.string());
    }
    auto sorted_dirs = [](const fs::path& p) {
        std::vector<fs::path> out;
        for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_directory()) out.push_back(e.path());
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    Dataset ds;
    for (const auto& gdir : sorted_dirs(root)) {
        const std::size_t group = ds.groups.size();
        ds.groups.push_back(gdir.filename().string());
        for (const auto& cdir : sorted_dirs(gdir)) {
            Category cat;
            cat.name = gdir.filename().string() + "/" + cdir.filename().string();
            cat.group = group;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(cdir)) {
                if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                Image img = read_png_grayscale(f);
                if (image_size > 0) {
                    img = resize(img, image_size);
                }
                cat.samples.push_back(Sample{std::move(img), fs::relative(f, root).generic_string()});
            }
            if (!cat.samples.empty()) ds.categories.push_back(std::move(cat));
        }
    }
    if (ds.categories.empty()) {
        throw DataError("empty dataset: no images under " + root.string());
    }
    ds.validate();
    return ds;
}

/// Resizes every image of the dataset.
inline Dataset resize_dataset(Dataset ds, std::size_t image_size) {
    for (auto& c : ds.categories) {
        for (auto& s : c.samples) {
            s.image = resize(s.image, image_size);
        }
    }
    return ds;
}

/// Each category becomes four categories (0/90/180/270 degrees, clockwise);
/// rotated copies are new classes in the same group.
inline Dataset augment_rotations(const Dataset& ds) {
    Dataset out;
    out.groups = ds.groups;
    out.categories.reserve(ds.categories.size() * 4);
    for (const auto& c : ds.categories) {
        for (int k = 0; k < 4; ++k) {
            Category rc;
            rc.name = k == 0 ? c.name : c.name + "@rot" + std::to_string(90 * k);
            rc.group = c.group;
            for (const auto& s : c.samples) {
                rc.samples.push_back(Sample{rotate90(s.image, k), k == 0 ? s.path : s.path + "@rot" + std::to_string(90 * k)});
            }
            out.categories.push_back(std::move(rc));
        }
    }
    return out;
}

enum class SplitKind { full, small1, small2, tiny1, tiny2, first_n, explicit_list };

/// Category subset selection. small1/small2 are distributed as separate
/// background folders and therefore select everything of the loaded set.
struct SplitSpec {
    SplitKind kind = SplitKind::full;
    std::size_t n = 0;              // first_n
    std::vector<std::string> names; // explicit_list, category names

    friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// tiny1/tiny2 keep the first one/two categories of each group in ingest
/// order; a group with fewer categories contributes what it has.
inline Dataset split_background(const Dataset& ds, const SplitSpec& spec) {
    Dataset out;
    out.groups = ds.groups;
    switch (spec.kind) {
    case SplitKind::full:
    case SplitKind::small1:
    case SplitKind::small2:
        out.categories = ds.categories;
        break;
    case SplitKind::tiny1:
    case SplitKind::tiny2: {
        const std::size_t per_group = spec.kind == SplitKind::tiny1 ? 1 : 2;
        std::vector<std::size_t> taken(ds.groups.size(), 0);
        for (const auto& c : ds.categories) {
            if (taken.at(c.group) < per_group) {
                ++taken[c.group];
                out.categories.push_back(c);
            }
        }
        break;
    }
    case SplitKind::first_n:
        if (spec.n == 0 || spec.n > ds.categories.size()) {
            throw ConfigError("split first-n needs 1 <= n <= " + std::to_string(ds.categories.size()));
        }
        out.categories.assign(ds.categories.begin(), ds.categories.begin() + static_cast<std::ptrdiff_t>(spec.n));
        break;
    case SplitKind::explicit_list: {
        std::map<std::string, std::size_t> by_name;
        for (std::size_t i = 0; i < ds.categories.size(); ++i) by_name[ds.categories[i].name] = i;
        for (const auto& name : spec.names) {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw ConfigError("split lists unknown category " + name);
            }
            out.categories.push_back(ds.categories[it->second]);
        }
        break;
    }
    }
    if (out.categories.empty()) {
        throw DataError("split selects no categories");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic glyphs

struct SynthSpec {
    std::size_t classes = 30;
    std::size_t samples = 20;
    std::size_t size = 28;
    std::uint64_t seed = 1;
    std::size_t classes_per_group = 5;

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// A glyph is a few quadratic Bezier strokes in the unit square.
struct Glyph {
    struct Stroke {
        std::array<double, 2> p0, p1, p2;
    };
    std::vector<Stroke> strokes;
    double thickness = 0.05;
};

inline Glyph synth_glyph_prototype(std::uint64_t seed, std::size_t cls) {
    RngStream rng = RngStream::derive(seed, 2 * cls);
    Glyph g;
    const std::size_t strokes = 2 + rng.uniform_index(3);
    for (std::size_t s = 0; s < strokes; ++s) {
        Glyph::Stroke st;
        for (auto* p : {&st.p0, &st.p1, &st.p2}) {
            (*p)[0] = rng.uniform(0.15, 0.85);
            (*p)[1] = rng.uniform(0.15, 0.85);
        }
        g.strokes.push_back(st);
    }
    g.thickness = rng.uniform(0.045, 0.065);
    return g;
}

/// Small random distortion: per-point noise plus a global similarity
/// transform about the center.
inline Glyph jitter_glyph(const Glyph& proto, RngStream& rng) {
    Glyph g = proto;
    const double angle = 0.12 * rng.normal();
    const double scale = 1.0 + 0.06 * rng.normal();
    const double tx = 0.03 * rng.normal();
    const double ty = 0.03 * rng.normal();
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& st : g.strokes) {
        for (auto* p : {&st.p0, &st.p1, &st.p2}) {
            const double x = (*p)[0] + 0.025 * rng.normal() - 0.5;
            const double y = (*p)[1] + 0.025 * rng.normal() - 0.5;
            (*p)[0] = 0.5 + scale * (c * x - s * y) + tx;
            (*p)[1] = 0.5 + scale * (s * x + c * y) + ty;
        }
    }
    g.thickness *= 1.0 + 0.1 * rng.normal();
    return g;
}

/// Anti-aliased rendering of the strokes onto a size x size grid.
inline Image render_glyph(const Glyph& g, std::size_t size) {
    constexpr int kSegments = 16;
    std::vector<std::array<double, 4>> segs;
    for (const auto& st : g.strokes) {
        auto point = [&](double t) {
            const double u = 1.0 - t;
            return std::array<double, 2>{u * u * st.p0[0] + 2 * u * t * st.p1[0] + t * t * st.p2[0],
                                         u * u * st.p0[1] + 2 * u * t * st.p1[1] + t * t * st.p2[1]};
        };
        auto prev = point(0.0);
        for (int i = 1; i <= kSegments; ++i) {
            const auto cur = point(static_cast<double>(i) / kSegments);
            segs.push_back({prev[0], prev[1], cur[0], cur[1]});
            prev = cur;
        }
    }
    Image img(size, size);
    const double pixel = 1.0 / static_cast<double>(size);
    const double half = std::max(g.thickness, 0.6 * pixel) / 2.0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = (static_cast<double>(x) + 0.5) * pixel;
            const double py = (static_cast<double>(y) + 0.5) * pixel;
            double best = 1e9;
            for (const auto& sg : segs) {
                const double dx = sg[2] - sg[0], dy = sg[3] - sg[1];
                const double len2 = dx * dx + dy * dy;
                double t = len2 > 0 ? ((px - sg[0]) * dx + (py - sg[1]) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ex = sg[0] + t * dx - px, ey = sg[1] + t * dy - py;
                best = std::min(best, ex * ex + ey * ey);
            }
            const double d = std::sqrt(best);
            img.at(x, y) = static_cast<float>(std::clamp((half - d) / pixel + 0.5, 0.0, 1.0));
        }
    }
    return img;
}

/// Synthetic handwriting-like dataset: each class is a random stroke
/// pattern, rendered `samples` times with independent jitter. Groups of
/// classes_per_group consecutive classes play the role of alphabets.
inline Dataset synth_glyphs(const SynthSpec& spec) {
    if (spec.classes_per_group == 0 || spec.size == 0) {
        throw ConfigError("synth: classes_per_group and size must be positive");
    }
    Dataset ds;
    for (std::size_t cls = 0; cls < spec.classes; ++cls) {
        const std::size_t group = cls / spec.classes_per_group;
        if (group == ds.groups.size()) {
            ds.groups.push_back("synth" + std::to_string(spec.seed) + "_g" + std::to_string(group));
        }
        Category cat;
        cat.name = ds.groups[group] + "/c" + std::to_string(cls);
        cat.group = group;
        const Glyph proto = synth_glyph_prototype(spec.seed, cls);
        RngStream rng = RngStream::derive(spec.seed, 2 * cls + 1);
        for (std::size_t k = 0; k < spec.samples; ++k) {
            cat.samples.push_back(
                Sample{render_glyph(jitter_glyph(proto, rng), spec.size), cat.name + "/" + std::to_string(k)});
        }
        ds.categories.push_back(std::move(cat));
    }
    return ds;
}

inline Dataset synth_glyphs(std::size_t classes, std::size_t samples, std::size_t size, std::uint64_t seed) {
    return synth_glyphs(SynthSpec{classes, samples, size, seed, 5});
}

} // namespace lcl
