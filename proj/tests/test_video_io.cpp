// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "atmv/errors.hpp"
#include "atmv/rng.hpp"
#include "atmv/tensor.hpp"
#include "atmv/toydata.hpp"
#include "atmv/video_io.hpp"

using namespace atmv;

namespace {

std::string temp_dir(const char* name) {
    const std::string dir = std::string("/tmp/atmv_vio_") + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(real)) == 0;
}

SceneSpec sample_scene() {
    SceneSpec s;
    s.shape_class = ShapeClass::disc;
    s.x0 = 0.25;
    s.y0 = 0.75;
    s.vx = -0.03;
    s.vy = 0.05;
    s.radius = 0.2;
    s.intensity = 0.9;
    return s;
}

}  // namespace

TEST_CASE("pgm: quantization round trip is idempotent") {
    const std::string dir = temp_dir("pgm_rt");
    Rng rng(11);
    Tensor frame = Tensor::from_data({1, 6, 5}, [&] {
        std::vector<real> v(30);
        for (auto& x : v) x = real(rng.uniform());
        return v;
    }());
    write_pgm(dir + "/a.pgm", frame);
    Tensor back = read_pgm(dir + "/a.pgm");
    REQUIRE(back.rank() == 3);
    CHECK(back.dim(0) == 1);
    CHECK(back.dim(1) == 6);
    CHECK(back.dim(2) == 5);
    auto orig = frame.data();
    auto got = back.data();
    for (int i = 0; i < frame.size(); ++i)
        CHECK(std::abs(double(got[i]) - double(orig[i])) <= 0.5 / 255.0 + 1e-7);

    // A second trip through the byte grid changes nothing.
    write_pgm(dir + "/b.pgm", back);
    CHECK(read_bytes(dir + "/a.pgm") == read_bytes(dir + "/b.pgm"));
    CHECK(bitwise_equal(read_pgm(dir + "/b.pgm"), back));
}

TEST_CASE("pgm: bytes map to k/255 and out-of-range values clamp") {
    const std::string dir = temp_dir("pgm_bytes");
    Tensor frame = Tensor::from_data({1, 1, 4}, {real(0.0), real(1.0), real(-0.3), real(2.5)});
    write_pgm(dir + "/c.pgm", frame);
    const std::vector<std::uint8_t> bytes = read_bytes(dir + "/c.pgm");
    // "P5\n4 1\n255\n" is 11 bytes of header.
    REQUIRE(bytes.size() == 15);
    CHECK(bytes[11] == 0);
    CHECK(bytes[12] == 255);
    CHECK(bytes[13] == 0);
    CHECK(bytes[14] == 255);
    Tensor back = read_pgm(dir + "/c.pgm");
    CHECK(back.data()[0] == real(0.0));
    CHECK(back.data()[1] == real(1.0));
}

TEST_CASE("pgm: header comments and extra whitespace are accepted") {
    const std::string dir = temp_dir("pgm_hdr");
    std::string text = "P5\n# a comment\n 3 # trailing comment\n\t2\n# more\n255\n";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    for (int i = 0; i < 6; ++i) bytes.push_back(std::uint8_t(i * 40));
    write_bytes(dir + "/commented.pgm", bytes);
    Tensor frame = read_pgm(dir + "/commented.pgm");
    CHECK(frame.dim(1) == 2);
    CHECK(frame.dim(2) == 3);
    CHECK(frame.data()[5] == real(200 / 255.0));
}

TEST_CASE("pgm: malformed inputs are rejected") {
    const std::string dir = temp_dir("pgm_bad");
    CHECK_THROWS_AS(read_pgm(dir + "/missing.pgm"), IoError);

    Tensor frame = Tensor::full({1, 2, 2}, real(0.5));
    CHECK_THROWS_AS(write_pgm(dir + "/bad.pgm", Tensor::full({2, 2}, real(0.5))), ShapeError);
    CHECK_THROWS_AS(write_pgm(dir + "/bad.pgm", Tensor::full({2, 2, 2}, real(0.5))), ShapeError);

    write_pgm(dir + "/ok.pgm", frame);
    std::vector<std::uint8_t> good = read_bytes(dir + "/ok.pgm");

    {
        std::vector<std::uint8_t> bad = good;
        bad[0] = 'P';
        bad[1] = '6';
        write_bytes(dir + "/wrong_magic.pgm", bad);
        CHECK_THROWS_WITH_AS(read_pgm(dir + "/wrong_magic.pgm"),
                             doctest::Contains("at byte offset 0"), IoError);
    }
    {
        std::vector<std::uint8_t> bad = good;
        bad.resize(bad.size() - 1);
        write_bytes(dir + "/truncated.pgm", bad);
        CHECK_THROWS_AS(read_pgm(dir + "/truncated.pgm"), IoError);
    }
    {
        const std::string text = "P5\n2 2\n65535\n";
        std::vector<std::uint8_t> bad(text.begin(), text.end());
        bad.resize(bad.size() + 8, 0);
        write_bytes(dir + "/maxval.pgm", bad);
        CHECK_THROWS_AS(read_pgm(dir + "/maxval.pgm"), IoError);
    }
    {
        const std::string text = "P5\nx 2\n255\n";
        std::vector<std::uint8_t> bad(text.begin(), text.end());
        write_bytes(dir + "/alpha.pgm", bad);
        CHECK_THROWS_AS(read_pgm(dir + "/alpha.pgm"), IoError);
    }
}

TEST_CASE("manifest: json round trip with and without a scene") {
    VideoManifest m;
    m.frame_count = 8;
    m.height = 32;
    m.width = 16;
    m.seed = 0xdeadbeefcafe1234ull;
    m.scene = sample_scene();

    VideoManifest back = manifest_from_json(manifest_to_json(m));
    CHECK(back.frame_count == m.frame_count);
    CHECK(back.height == m.height);
    CHECK(back.width == m.width);
    CHECK(back.seed == m.seed);
    CHECK(back.generator == kGeneratorVersion);
    REQUIRE(back.scene.has_value());
    CHECK(back.scene->shape_class == ShapeClass::disc);
    CHECK(back.scene->x0 == m.scene->x0);
    CHECK(back.scene->y0 == m.scene->y0);
    CHECK(back.scene->vx == m.scene->vx);
    CHECK(back.scene->vy == m.scene->vy);
    CHECK(back.scene->radius == m.scene->radius);
    CHECK(back.scene->intensity == m.scene->intensity);
    // The recovered scene renders identically to the original.
    CHECK(scene_condition(*back.scene).vec == scene_condition(*m.scene).vec);

    m.scene.reset();
    const std::string text = manifest_to_json(m);
    CHECK(text.find("\"scene\": null") != std::string::npos);
    VideoManifest plain = manifest_from_json(text);
    CHECK_FALSE(plain.scene.has_value());
}

TEST_CASE("manifest: malformed json is rejected") {
    CHECK_THROWS_AS(manifest_from_json("not json at all"), IoError);
    CHECK_THROWS_AS(manifest_from_json("{}"), IoError);
    CHECK_THROWS_AS(manifest_from_json(R"({"frame_count": 1})"), IoError);
    VideoManifest m;
    m.frame_count = 1;
    m.height = 2;
    m.width = 2;
    m.scene = sample_scene();
    std::string text = manifest_to_json(m);
    const std::size_t at = text.find("disc");
    REQUIRE(at != std::string::npos);
    text.replace(at, 4, "blob");
    CHECK_THROWS_AS(manifest_from_json(text), IoError);
}

TEST_CASE("video dir: round trip preserves frames and manifest") {
    const std::string dir = temp_dir("dir_rt");
    Rng rng(5);
    VideoManifest m;
    m.frame_count = 3;
    m.height = 8;
    m.width = 6;
    m.seed = 77;
    m.scene = sample_scene();
    std::vector<Tensor> frames;
    for (int i = 0; i < 3; ++i) {
        std::vector<real> v(48);
        for (auto& x : v) x = real(rng.uniform());
        frames.push_back(Tensor::from_data({1, 8, 6}, std::move(v)));
    }
    write_video_dir(dir + "/clip", frames, m);
    CHECK(std::filesystem::exists(dir + "/clip/frame_0000.pgm"));
    CHECK(std::filesystem::exists(dir + "/clip/frame_0002.pgm"));
    CHECK(std::filesystem::exists(dir + "/clip/manifest.json"));

    VideoOnDisk back = read_video_dir(dir + "/clip");
    CHECK(back.manifest.frame_count == 3);
    CHECK(back.manifest.height == 8);
    CHECK(back.manifest.width == 6);
    CHECK(back.manifest.seed == 77);
    REQUIRE(back.manifest.scene.has_value());
    REQUIRE(back.frames.size() == 3);
    for (int i = 0; i < 3; ++i) {
        auto orig = frames[std::size_t(i)].data();
        auto got = back.frames[std::size_t(i)].data();
        for (int k = 0; k < 48; ++k)
            CHECK(std::abs(double(got[k]) - double(orig[k])) <= 0.5 / 255.0 + 1e-7);
    }

    // Writing the read-back video reproduces every byte.
    write_video_dir(dir + "/clip2", back.frames, back.manifest);
    for (const char* name : {"frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm",
                             "manifest.json"})
        CHECK(read_bytes(dir + "/clip/" + std::string(name)) ==
              read_bytes(dir + "/clip2/" + std::string(name)));
}

TEST_CASE("video dir: mismatches are rejected") {
    const std::string dir = temp_dir("dir_bad");
    VideoManifest m;
    m.frame_count = 2;
    m.height = 4;
    m.width = 4;
    std::vector<Tensor> frames{Tensor::full({1, 4, 4}, real(0.2)),
                               Tensor::full({1, 4, 4}, real(0.8))};

    SUBCASE("frame count disagrees with the manifest") {
        m.frame_count = 3;
        CHECK_THROWS_AS(write_video_dir(dir + "/clip", frames, m), UsageError);
    }
    SUBCASE("frame extents disagree with the manifest") {
        frames[1] = Tensor::full({1, 4, 6}, real(0.8));
        CHECK_THROWS_AS(write_video_dir(dir + "/clip", frames, m), ShapeError);
    }
    SUBCASE("missing frame file on read") {
        write_video_dir(dir + "/clip", frames, m);
        std::filesystem::remove(dir + "/clip/frame_0001.pgm");
        CHECK_THROWS_AS(read_video_dir(dir + "/clip"), IoError);
    }
    SUBCASE("frame file extents disagree with the manifest on read") {
        write_video_dir(dir + "/clip", frames, m);
        write_pgm(dir + "/clip/frame_0001.pgm", Tensor::full({1, 6, 4}, real(0.5)));
        CHECK_THROWS_AS(read_video_dir(dir + "/clip"), IoError);
    }
    SUBCASE("missing manifest") { CHECK_THROWS_AS(read_video_dir(dir + "/nowhere"), IoError); }
}
