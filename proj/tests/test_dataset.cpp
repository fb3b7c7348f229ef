#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "lcl/dataset.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed at the end of the test.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("lcl_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Image gradient_image(std::size_t size, float phase) {
    Image img(size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            img.at(x, y) = std::fmod(phase + 0.01f * static_cast<float>(x + 3 * y), 1.0f) * 0.4f;
        }
    }
    return img;
}

void write_tree(const fs::path& root, std::size_t groups, std::size_t cats, std::size_t samples,
                std::size_t size = 12) {
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t c = 0; c < cats; ++c) {
            const fs::path dir = root / ("alpha" + std::to_string(g)) / ("char" + std::to_string(c));
            fs::create_directories(dir);
            for (std::size_t s = 0; s < samples; ++s) {
                char name[32];
                std::snprintf(name, sizeof name, "%02zu.png", s);
                write_png_grayscale(dir / name, gradient_image(size, 0.1f * static_cast<float>(s)));
            }
        }
    }
}

} // namespace

TEST(Loader, CountsCategoriesAndSamples) {
    TempDir tmp("tree");
    write_tree(tmp.path, 2, 3, 20);
    const Dataset ds = load_image_dataset(tmp.path, 28);
    EXPECT_EQ(ds.size(), 6u);
    EXPECT_EQ(ds.groups.size(), 2u);
    EXPECT_EQ(ds.min_samples(), 20u);
    EXPECT_EQ(ds.max_samples(), 20u);
    EXPECT_EQ(ds.image_size(), 28u);
    EXPECT_EQ(ds.categories[0].name, "alpha0/char0");
    EXPECT_EQ(ds.categories[4].group, 1u);
    EXPECT_EQ(ds.categories[0].samples[3].path, "alpha0/char0/03.png");
}

TEST(Loader, DeterministicOrderAndPixels) {
    TempDir tmp("order");
    write_tree(tmp.path, 2, 2, 3);
    const Dataset a = load_image_dataset(tmp.path, 0);
    const Dataset b = load_image_dataset(tmp.path, 0);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t c = 0; c < a.size(); ++c) {
        EXPECT_EQ(a.categories[c].name, b.categories[c].name);
        for (std::size_t s = 0; s < a.categories[c].samples.size(); ++s) {
            EXPECT_EQ(a.image(c, s), b.image(c, s));
            EXPECT_EQ(a.categories[c].samples[s].path, b.categories[c].samples[s].path);
        }
    }
    // Written at 8 bits, so the round trip is within half a grey level.
    const Image ref = gradient_image(12, 0.0f);
    for (std::size_t i = 0; i < ref.pixels.size(); ++i) {
        EXPECT_NEAR(a.image(0, 0).pixels[i], ref.pixels[i], 0.5 / 255.0 + 1e-6);
    }
}

TEST(Loader, InvertsWhiteBackground) {
    TempDir tmp("invert");
    const fs::path dir = tmp.path / "g" / "c";
    fs::create_directories(dir);
    Image img(8, 8, 1.0f);
    img.at(4, 4) = 0.0f;
    write_png_grayscale(dir / "a.png", img);
    const Dataset ds = load_image_dataset(tmp.path, 0);
    EXPECT_FLOAT_EQ(ds.image(0, 0).at(0, 0), 0.0f);
    EXPECT_FLOAT_EQ(ds.image(0, 0).at(4, 4), 1.0f);
}

TEST(Loader, EmptyDirectoryIsDataError) {
    TempDir tmp("empty");
    fs::create_directories(tmp.path / "g" / "c");
    EXPECT_THROW(load_image_dataset(tmp.path), DataError);
    EXPECT_THROW(load_image_dataset(tmp.path / "missing"), DataError);
}

TEST(Loader, ColorImageIsDataError) {
    TempDir tmp("color");
    const fs::path dir = tmp.path / "g" / "c";
    fs::create_directories(dir);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = 4;
    img.height = 4;
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(4 * 4 * 3, 0);
    buf[0] = 255;
    ASSERT_TRUE(png_image_write_to_file(&img, (dir / "rgb.png").c_str(), 0, buf.data(), 0, nullptr));
    EXPECT_THROW(load_image_dataset(tmp.path), DataError);
}

TEST(Loader, CorruptFileIsDataError) {
    TempDir tmp("corrupt");
    const fs::path dir = tmp.path / "g" / "c";
    fs::create_directories(dir);
    std::ofstream(dir / "bad.png") << "not a png";
    EXPECT_THROW(load_image_dataset(tmp.path), DataError);
}

TEST(Resize, SameSizeIsIdentity) {
    const Image img = gradient_image(28, 0.3f);
    EXPECT_EQ(resize(img, 28), img);
}

TEST(Resize, ConstantStaysConstant) {
    const Image img(105, 105, 0.625f);
    const Image out = resize(img, 28);
    ASSERT_EQ(out.width, 28u);
    for (float v : out.pixels) EXPECT_FLOAT_EQ(v, 0.625f);
}

TEST(Resize, RangeAndCorners) {
    RngStream rng(5);
    Image img(105, 105);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform01());
    const Image out = resize(img, 28);
    for (float v : out.pixels) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_FLOAT_EQ(out.at(0, 0), img.at(0, 0));
    EXPECT_FLOAT_EQ(out.at(27, 27), img.at(104, 104));
    EXPECT_FLOAT_EQ(out.at(27, 0), img.at(104, 0));
}

TEST(Resize, LinearRampIsExact) {
    // A linear function is reproduced exactly by bilinear interpolation.
    Image img(10, 10);
    for (std::size_t y = 0; y < 10; ++y)
        for (std::size_t x = 0; x < 10; ++x) img.at(x, y) = static_cast<float>(x) / 9.0f;
    const Image out = resize(img, 4);
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out.at(x, 2), static_cast<double>(x) / 3.0, 1e-6);
}

TEST(Rotate, FourQuarterTurnsIsIdentity) {
    const Image img = gradient_image(7, 0.2f);
    EXPECT_EQ(rotate90(rotate90(rotate90(rotate90(img)))), img);
    EXPECT_EQ(rotate90(rotate90(img, 2), 2), img);
    EXPECT_EQ(rotate90(img, 3), rotate90(img, -1));
    EXPECT_NE(rotate90(img), img);
}

TEST(Rotate, Clockwise) {
    Image img(3, 3);
    img.at(0, 0) = 1.0f; // top-left goes to top-right
    const Image r = rotate90(img);
    EXPECT_FLOAT_EQ(r.at(2, 0), 1.0f);
    EXPECT_THROW(rotate90(Image(3, 2)), ContractError);
}

TEST(Augment, QuadruplesCategories) {
    const Dataset ds = synth_glyphs(60, 3, 10, 4);
    const Dataset aug = augment_rotations(ds);
    EXPECT_EQ(aug.size(), 240u);
    EXPECT_EQ(aug.min_samples(), 3u);
    EXPECT_EQ(aug.max_samples(), 3u);
    EXPECT_NO_THROW(aug.validate());
    EXPECT_EQ(aug.categories[2].name, ds.categories[0].name + "@rot180");
    EXPECT_EQ(aug.image(2, 1), rotate90(ds.image(0, 1), 2));
    EXPECT_EQ(aug.image(4, 0), ds.image(1, 0));
}

TEST(Split, TinySubsets) {
    SynthSpec spec;
    spec.classes = 90;
    spec.samples = 2;
    spec.size = 6;
    spec.classes_per_group = 3; // 30 groups
    const Dataset ds = synth_glyphs(spec);
    ASSERT_EQ(ds.groups.size(), 30u);
    EXPECT_EQ(split_background(ds, {SplitKind::tiny1}).size(), 30u);
    EXPECT_EQ(split_background(ds, {SplitKind::tiny2}).size(), 60u);
    EXPECT_EQ(split_background(ds, {SplitKind::full}).size(), 90u);
    const Dataset t1 = split_background(ds, {SplitKind::tiny1});
    EXPECT_EQ(t1.categories[1].name, ds.categories[3].name);
}

TEST(Split, FirstNAndExplicit) {
    const Dataset ds = synth_glyphs(10, 2, 6, 1);
    const Dataset all = split_background(ds, {SplitKind::first_n, ds.size(), {}});
    ASSERT_EQ(all.size(), ds.size());
    for (std::size_t c = 0; c < ds.size(); ++c) EXPECT_EQ(all.categories[c].name, ds.categories[c].name);
    EXPECT_EQ(split_background(ds, {SplitKind::first_n, 4, {}}).size(), 4u);
    EXPECT_THROW(split_background(ds, {SplitKind::first_n, 11, {}}), ConfigError);
    const Dataset ex = split_background(ds, {SplitKind::explicit_list, 0, {ds.categories[7].name}});
    ASSERT_EQ(ex.size(), 1u);
    EXPECT_EQ(ex.image(0, 1), ds.image(7, 1));
    EXPECT_THROW(split_background(ds, {SplitKind::explicit_list, 0, {"nope"}}), ConfigError);
}

TEST(Synth, DeterministicPerSeed) {
    const Dataset a = synth_glyphs(5, 4, 16, 9);
    const Dataset b = synth_glyphs(5, 4, 16, 9);
    const Dataset c = synth_glyphs(5, 4, 16, 10);
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(a.image(k, s), b.image(k, s));
    }
    EXPECT_NE(a.image(0, 0), c.image(0, 0));
}

TEST(Synth, SamplesVaryAndClassesDiffer) {
    const Dataset ds = synth_glyphs(6, 3, 20, 2);
    EXPECT_NE(ds.image(0, 0), ds.image(0, 1));
    auto dist = [&](std::size_t c1, std::size_t s1, std::size_t c2, std::size_t s2) {
        double d = 0;
        const auto& a = ds.image(c1, s1).pixels;
        const auto& b = ds.image(c2, s2).pixels;
        for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        return d;
    };
    // On average a same-class pair is closer than a cross-class pair.
    double within = 0, across = 0;
    for (std::size_t c = 0; c < 6; ++c) {
        within += dist(c, 0, c, 1);
        across += dist(c, 0, (c + 1) % 6, 1);
    }
    EXPECT_LT(within, across);
    for (const auto& cat : ds.categories) {
        for (const auto& s : cat.samples) {
            double ink = 0;
            for (float v : s.image.pixels) {
                EXPECT_GE(v, 0.0f);
                EXPECT_LE(v, 1.0f);
                ink += v;
            }
            EXPECT_GT(ink, 5.0);
        }
    }
}
