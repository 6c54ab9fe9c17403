#include "gma/chunker.hpp"

#include <algorithm>

#include "gma/errors.hpp"

namespace gma {

namespace {

void check_geometry(int chunk_length, int stride) {
  if (chunk_length <= 0 || chunk_length % 2 != 0) {
    throw UsageError("chunk length must be a positive even number");
  }
  if (stride <= 0) throw UsageError("chunk stride must be positive");
}

void copy_plane(const cv::Mat& src, double* dst) {
  for (int y = 0; y < src.rows; ++y) {
    const float* row = src.ptr<float>(y);
    for (int x = 0; x < src.cols; ++x) *dst++ = row[x];
  }
}

}  // namespace

ChunkIndices chunk_indices(int n, int chunk_length, int stride) {
  check_geometry(chunk_length, stride);
  if (n < 1) throw UsageError("chunk index n must be >= 1");
  ChunkIndices out;
  const int start = (n - 1) * stride;
  out.spatial_index = start + chunk_length / 2 - 1;
  out.flow_indices.reserve(chunk_length);
  for (int k = 1; k <= chunk_length; ++k) out.flow_indices.push_back(start + k - 1);
  return out;
}

int count_chunks(int num_frames, int chunk_length, int stride, bool pad_last) {
  check_geometry(chunk_length, stride);
  const int num_flows = num_frames - 1;
  int n = 0;
  for (;;) {
    const int last = n * stride + chunk_length - 1;  // last flow index of chunk n + 1
    if (last <= num_flows - 1 || (pad_last && num_flows >= 1 && last == num_flows)) {
      ++n;
    } else {
      return n;
    }
  }
}

TemporalChunk assemble_chunk(int n, int chunk_length, int stride, const cv::Mat& spatial,
                             std::span<const FlowPair> flows, double flow_bound) {
  check_geometry(chunk_length, stride);
  if (flows.empty() || static_cast<int>(flows.size()) > chunk_length) {
    throw UsageError("a chunk needs between 1 and L flows");
  }
  const ChunkIndices idx = chunk_indices(n, chunk_length, stride);
  const int h = flows.front().dh.rows;
  const int w = flows.front().dh.cols;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TemporalChunk chunk;
  chunk.n = n;
  chunk.x_s = spatial;
  chunk.frame_begin = idx.flow_indices.front();
  chunk.frame_end = chunk.frame_begin + chunk_length;
  chunk.padded = static_cast<int>(flows.size()) < chunk_length;
  chunk.x_t = nn::Tensor({2 * chunk_length, h, w});
  for (int k = 0; k < chunk_length; ++k) {
    const FlowPair& raw = flows[std::min<std::size_t>(k, flows.size() - 1)];
    const FlowPair conditioned = clip_and_scale(raw, flow_bound);
    copy_plane(conditioned.dh, chunk.x_t.data() + (2 * k) * plane);
    copy_plane(conditioned.dv, chunk.x_t.data() + (2 * k + 1) * plane);
  }
  return chunk;
}

std::vector<TemporalChunk> build_chunks(const std::vector<cv::Mat>& frames,
                                        const std::vector<FlowPair>& flows,
                                        int chunk_length, int stride, double flow_bound,
                                        bool pad_last) {
  if (frames.empty() || flows.size() + 1 != frames.size()) {
    throw UsageError("build_chunks needs exactly one flow per consecutive frame pair");
  }
  const int total = count_chunks(static_cast<int>(frames.size()), chunk_length, stride,
                                 pad_last);
  std::vector<TemporalChunk> chunks;
  chunks.reserve(total);
  for (int n = 1; n <= total; ++n) {
    const ChunkIndices idx = chunk_indices(n, chunk_length, stride);
    const std::size_t first = idx.flow_indices.front();
    const std::size_t count = std::min<std::size_t>(chunk_length, flows.size() - first);
    chunks.push_back(assemble_chunk(n, chunk_length, stride, frames.at(idx.spatial_index),
                                    std::span(flows).subspan(first, count), flow_bound));
  }
  return chunks;
}

std::vector<FlowPair> deinterleave(const TemporalChunk& chunk) {
  const int channels = chunk.x_t.dim(0);
  const int h = chunk.x_t.dim(1);
  const int w = chunk.x_t.dim(2);
  std::vector<FlowPair> out;
  out.reserve(channels / 2);
  for (int k = 0; k < channels / 2; ++k) {
    FlowPair f;
    f.t = chunk.frame_begin + k;
    f.dh.create(h, w, CV_32F);
    f.dv.create(h, w, CV_32F);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        f.dh.at<float>(y, x) = static_cast<float>(chunk.x_t.at(2 * k, y, x));
        f.dv.at<float>(y, x) = static_cast<float>(chunk.x_t.at(2 * k + 1, y, x));
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

TemporalChunk hflip_chunk(const TemporalChunk& chunk) {
  TemporalChunk out = chunk;
  out.x_s = cv::Mat();
  cv::flip(chunk.x_s, out.x_s, 1);
  const int channels = chunk.x_t.dim(0);
  const int h = chunk.x_t.dim(1);
  const int w = chunk.x_t.dim(2);
  for (int c = 0; c < channels; ++c) {
    const double sign = (c % 2 == 0) ? -1.0 : 1.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.x_t.at(c, y, x) = sign * chunk.x_t.at(c, y, w - 1 - x);
      }
    }
  }
  return out;
}

}  // namespace gma
