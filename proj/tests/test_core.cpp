#include <fstream>

#include "doctest.h"
#include "gma/core.hpp"
#include "gma/errors.hpp"
#include "helpers.hpp"

using namespace gma;

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("labels round-trip and keep class order") {
  for (GmsLabel l : kAllLabels) {
    CHECK(parse_label(to_string(l)) == l);
    CHECK(label_from_index(index_of(l)) == l);
  }
  CHECK_FALSE(parse_label("XX").has_value());
  CHECK(is_normal(GmsLabel::WM));
  CHECK(is_normal(GmsLabel::FM));
  CHECK_FALSE(is_normal(GmsLabel::PR));
}

TEST_CASE("resample_fps 30 -> 6 keeps every fifth frame") {
  VideoClip clip;
  clip.fps = 30;
  for (int i = 0; i < 1800; ++i) clip.frames.emplace_back(2, 2, CV_8UC3, cv::Scalar(i % 256, i / 256, 0));
  const VideoClip out = resample_fps(clip, 6);
  REQUIRE(out.size() == 360);
  CHECK(out.fps == 6);
  for (int k = 0; k < 360; ++k) {
    CHECK(test::same_pixels(out.frames[k], clip.frames[5 * k]));
  }
}

TEST_CASE("resample_fps identity, idempotence and errors") {
  const VideoClip clip = test::noise_clip(12, 4, 4, 30);
  const VideoClip same = resample_fps(clip, 30);
  REQUIRE(same.size() == clip.size());
  for (std::size_t i = 0; i < clip.size(); ++i) CHECK(test::same_pixels(same.frames[i], clip.frames[i]));

  const VideoClip once = resample_fps(clip, 10);
  const VideoClip twice = resample_fps(once, 10);
  REQUIRE(twice.size() == once.size());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(test::same_pixels(twice.frames[i], once.frames[i]));

  CHECK_THROWS_AS(resample_fps(clip, 7), UsageError);
  CHECK_THROWS_AS(resample_fps(clip, 0), UsageError);
  CHECK_THROWS_AS(resample_fps(clip, -6), UsageError);
  CHECK_THROWS_AS(resample_fps(clip, 60), UsageError);
  CHECK(decimation_step(29.97, 9.99) == 3);
}

TEST_CASE("VideoClip validation") {
  VideoClip c = test::noise_clip(2, 4, 4, 6);
  CHECK_NOTHROW(c.validate());
  c.frames.push_back(cv::Mat(5, 4, CV_8UC3));
  CHECK_THROWS_AS(c.validate(), DataError);
  VideoClip empty;
  empty.fps = 6;
  CHECK_THROWS_AS(empty.validate(), DataError);
}

TEST_CASE("manifest parsing") {
  test::TempDir dir("manifest");
  for (const char* f : {"a.mp4", "b.mp4", "c.mp4"}) std::ofstream(dir / f) << "x";
  const std::string header(kManifestHeader);

  SUBCASE("three valid rows") {
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,0,60", "c2,i1,b.mp4,FM,60,120",
                                "\"c,3\",i2,c.mp4,PR,10.5,70.5"});
    const DatasetManifest m = load_manifest(dir / "m.csv");
    REQUIRE(m.entries.size() == 3);
    CHECK(m.entries[2].clip_id == "c,3");
    CHECK(m.entries[1].label == GmsLabel::FM);
    CHECK(m.entries[0].video_path == (dir / "a.mp4").lexically_normal());
    CHECK(m.infant_ids() == std::vector<std::string>{"i1", "i2"});
    CHECK(m.find("c2") != nullptr);
    CHECK(m.find("nope") == nullptr);

    // load -> save -> load is a fixed point
    save_manifest(m, dir / "again.csv");
    CHECK(load_manifest(dir / "again.csv").entries == m.entries);
  }
  SUBCASE("unknown label names row and value") {
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,0,60", "c2,i1,b.mp4,XX,0,60"});
    const std::string msg = error_of([&] { load_manifest(dir / "m.csv"); });
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("XX") != std::string::npos);
  }
  SUBCASE("duplicate clip id") {
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,0,60", "c1,i2,b.mp4,FM,0,60"});
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("duplicate") != std::string::npos);
  }
  SUBCASE("missing file") {
    write_lines(dir / "m.csv", {header, "c1,i1,missing.mp4,WM,0,60"});
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("row 2") != std::string::npos);
  }
  SUBCASE("malformed rows") {
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,0"});
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("row 2") != std::string::npos);
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,zero,60"});
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("row 2") != std::string::npos);
    write_lines(dir / "m.csv", {"clip,infant", "c1,i1"});
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("row 1") != std::string::npos);
  }
  SUBCASE("clip duration must match the configured one") {
    write_lines(dir / "m.csv", {header, "c1,i1,a.mp4,WM,0,30"});
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), DataError);
    CHECK(load_manifest(dir / "m.csv", 30.0).entries.size() == 1);
  }
}

TEST_CASE("config defaults, validation and JSON round-trip") {
  PipelineConfig c;
  CHECK(c.target_fps == 6);
  CHECK(c.chunk_length == 30);
  CHECK(c.chunk_stride == 30);
  CHECK(c.crop_size == 224);
  CHECK(c.alpha == doctest::Approx(0.8));
  CHECK(c.flow_clip_bound == 20.0);
  CHECK(c.mask_threshold == 0.5);
  CHECK(c.learning_rate == doctest::Approx(1e-5));
  CHECK(c.weight_decay == doctest::Approx(1e-2));
  CHECK(c.batch_size == 8);
  CHECK_NOTHROW(c.validate());

  PipelineConfig odd = c;
  odd.chunk_length = 31;
  CHECK_THROWS_AS(odd.validate(), UsageError);
  PipelineConfig bad_alpha = c;
  bad_alpha.alpha = 0;
  CHECK_THROWS_AS(bad_alpha.validate(), UsageError);

  test::TempDir dir("config");
  c.alpha = 1.0;
  c.enable_adjuster = false;
  c.seed = 42;
  save_config(c, dir / "c.json");
  const PipelineConfig back = load_config(dir / "c.json");
  CHECK(nlohmann::json(back) == nlohmann::json(c));

  std::ofstream(dir / "unknown.json") << R"({"alpha": 0.8, "alpah": 1})";
  CHECK_THROWS_AS(load_config(dir / "unknown.json"), UsageError);
  std::ofstream(dir / "partial.json") << R"({"chunk_length": 10})";
  const PipelineConfig partial = load_config(dir / "partial.json");
  CHECK(partial.chunk_length == 10);
  CHECK(partial.chunk_stride == 30);
}

TEST_CASE("fnv1a matches published test vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}
