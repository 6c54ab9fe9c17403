#include "doctest.h"
#include "gma/chunker.hpp"
#include "gma/errors.hpp"
#include "helpers.hpp"

using namespace gma;

namespace {

struct Sequence {
  std::vector<cv::Mat> frames;
  std::vector<FlowPair> flows;
};

// Frame i is filled with i; flow t has dh = t + 0.25, dv = -(t + 0.5) so every
// channel is identifiable.
Sequence numbered(int n, int h = 3, int w = 4) {
  Sequence s;
  for (int i = 0; i < n; ++i) s.frames.emplace_back(h, w, CV_8UC3, cv::Scalar::all(i % 256));
  for (int t = 0; t + 1 < n; ++t) {
    s.flows.push_back({cv::Mat(h, w, CV_32F, cv::Scalar(0.01 * t + 0.25)),
                       cv::Mat(h, w, CV_32F, cv::Scalar(-(0.01 * t + 0.5))), t});
  }
  return s;
}

// Enumerates chunks by direct evaluation of the index formulas.
int count_oracle(int frames, int L, int tau, bool pad) {
  int n = 0;
  for (int k = 1;; ++k) {
    const int last_flow = (k - 1) * tau + L - 1;
    const int spatial = (k - 1) * tau + L / 2 - 1;
    const bool full = last_flow <= frames - 2 && spatial < frames;
    const bool padded = pad && last_flow == frames - 1 && spatial < frames;
    if (!full && !padded) break;
    n = k;
  }
  return n;
}

}  // namespace

TEST_CASE("chunk_indices examples") {
  auto a = chunk_indices(1, 30, 30);
  CHECK(a.spatial_index == 14);
  REQUIRE(a.flow_indices.size() == 30);
  CHECK(a.flow_indices.front() == 0);
  CHECK(a.flow_indices.back() == 29);
  auto b = chunk_indices(2, 30, 30);
  CHECK(b.spatial_index == 44);
  CHECK(b.flow_indices.front() == 30);
  CHECK(b.flow_indices.back() == 59);
  auto c = chunk_indices(1, 2, 1);
  CHECK(c.spatial_index == 0);
  CHECK(c.flow_indices == std::vector<int>{0, 1});
  CHECK_THROWS_AS(chunk_indices(0, 30, 30), UsageError);
  CHECK_THROWS_AS(chunk_indices(1, 31, 30), UsageError);
}

TEST_CASE("chunk counts") {
  CHECK(count_chunks(360, 30, 30, false) == 11);
  CHECK(count_chunks(360, 30, 30, true) == 12);
  CHECK(count_chunks(29, 30, 30, true) == 0);
  for (int frames = 1; frames < 200; frames += 7) {
    for (int L : {2, 4, 10}) {
      for (int tau : {1, 3, 10}) {
        for (bool pad : {false, true}) {
          CHECK(count_chunks(frames, L, tau, pad) == count_oracle(frames, L, tau, pad));
        }
      }
    }
  }
}

TEST_CASE("build_chunks on 360 frames") {
  const Sequence s = numbered(360);
  const auto full = build_chunks(s.frames, s.flows, 30, 30, 20.0, false);
  const auto padded = build_chunks(s.frames, s.flows, 30, 30, 20.0, true);
  CHECK(full.size() == 11);
  REQUIRE(padded.size() == 12);
  CHECK(padded.back().padded);
  CHECK_FALSE(padded.front().padded);
  // The padded chunk repeats flow 358 in its last slot.
  const auto last = deinterleave(padded.back());
  CHECK(last[29].dh.at<float>(0, 0) == last[28].dh.at<float>(0, 0));
  CHECK(build_chunks(numbered(29).frames, numbered(29).flows, 30, 30, 20.0, true).empty());
  CHECK_THROWS_AS(build_chunks(s.frames, std::vector<FlowPair>(s.flows.begin(), s.flows.end() - 1), 30, 30, 20.0, true),
                  UsageError);
}

TEST_CASE("channel interleave follows the stacking order") {
  const Sequence s = numbered(100, 3, 4);
  const double bound = 20.0;
  const auto chunks = build_chunks(s.frames, s.flows, 10, 10, bound, false);
  REQUIRE(!chunks.empty());
  for (const auto& c : chunks) {
    const auto idx = chunk_indices(c.n, 10, 10);
    CHECK(c.x_t.dim(0) == 20);
    CHECK(c.x_t.dim(1) == 3);
    CHECK(c.x_t.dim(2) == 4);
    for (int k = 0; k < 10; ++k) {
      const int f = idx.flow_indices[k];
      CHECK(c.x_t.at(2 * k, 1, 2) == doctest::Approx(s.flows[f].dh.at<float>(1, 2) / bound));
      CHECK(c.x_t.at(2 * k + 1, 1, 2) == doctest::Approx(s.flows[f].dv.at<float>(1, 2) / bound));
    }
    CHECK(c.x_s.at<cv::Vec3b>(0, 0)[0] == idx.spatial_index);
  }
}

TEST_CASE("deinterleave reconstructs conditioned flows bit-exactly") {
  Sequence s = numbered(41, 5, 6);
  cv::RNG rng(7);
  for (auto& f : s.flows) {
    rng.fill(f.dh, cv::RNG::UNIFORM, -30, 30);
    rng.fill(f.dv, cv::RNG::UNIFORM, -30, 30);
  }
  const auto chunks = build_chunks(s.frames, s.flows, 8, 8, 20.0, true);
  for (const auto& c : chunks) {
    const auto parts = deinterleave(c);
    const auto idx = chunk_indices(c.n, 8, 8);
    REQUIRE(parts.size() == 8);
    for (int k = 0; k < 8; ++k) {
      const int f = std::min<int>(idx.flow_indices[k], static_cast<int>(s.flows.size()) - 1);
      const FlowPair ref = clip_and_scale(s.flows[f], 20.0);
      CHECK(cv::norm(parts[k].dh, ref.dh, cv::NORM_INF) == 0.0);
      CHECK(cv::norm(parts[k].dv, ref.dv, cv::NORM_INF) == 0.0);
    }
  }
}

TEST_CASE("frame ranges partition and contain the spatial frame") {
  const Sequence s = numbered(301);
  const auto chunks = build_chunks(s.frames, s.flows, 30, 30, 20.0, true);
  REQUIRE(chunks.size() == 10);
  int expected_begin = 0;
  for (const auto& c : chunks) {
    CHECK(c.frame_begin == expected_begin);
    CHECK(c.frame_end - c.frame_begin == 30);
    const int spatial = chunk_indices(c.n, 30, 30).spatial_index;
    CHECK(spatial >= c.frame_begin);
    CHECK(spatial < c.frame_end);
    expected_begin = c.frame_end;
  }
  CHECK(expected_begin == 300);
}

TEST_CASE("hflip_chunk mirrors and negates horizontal channels") {
  Sequence s = numbered(11, 4, 5);
  cv::RNG rng(1);
  for (auto& f : s.flows) {
    rng.fill(f.dh, cv::RNG::UNIFORM, -5, 5);
    rng.fill(f.dv, cv::RNG::UNIFORM, -5, 5);
  }
  s.frames[4] = test::noise_frame(4, 5, 3);
  const auto c = build_chunks(s.frames, s.flows, 10, 10, 20.0, false).at(0);
  const auto f = hflip_chunk(c);
  for (int ch = 0; ch < 20; ++ch) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        const double sign = ch % 2 == 0 ? -1.0 : 1.0;
        CHECK(f.x_t.at(ch, y, x) == sign * c.x_t.at(ch, y, 4 - x));
      }
    }
  }
  CHECK(f.x_s.at<cv::Vec3b>(1, 0) == c.x_s.at<cv::Vec3b>(1, 4));
  const auto back = hflip_chunk(f);
  CHECK(test::same_pixels(back.x_s, c.x_s));
  for (std::size_t i = 0; i < c.x_t.size(); ++i) CHECK(back.x_t.data()[i] == c.x_t.data()[i]);
}
