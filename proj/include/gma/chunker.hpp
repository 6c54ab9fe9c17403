#pragma once

#include <span>
#include <vector>

#include <opencv2/core.hpp>

#include "gma/flow.hpp"
#include "gma/nn/tensor.hpp"

namespace gma {

/// Frame indices of the n-th chunk (n >= 1, 0-based frames):
///   spatial = (n - 1) * tau + L / 2 - 1
///   flows   = (n - 1) * tau + k - 1,  k = 1..L
struct ChunkIndices {
  int spatial_index = 0;
  std::vector<int> flow_indices;
};

ChunkIndices chunk_indices(int n, int chunk_length, int stride);

/// One network input. x_t has 2L channels: 0-based channel 2(k-1) holds the
/// conditioned horizontal flow of the k-th flow in the chunk, channel
/// 2(k-1)+1 the vertical flow.
struct TemporalChunk {
  int n = 1;
  cv::Mat x_s;       // RGB CV_8UC3 center frame
  nn::Tensor x_t;    // (2L, H, W)
  int frame_begin = 0;
  int frame_end = 0; // exclusive; frame_end - frame_begin = L
  bool padded = false;
};

/// Number of chunks for a clip of num_frames frames (num_frames - 1 flows).
/// A chunk whose last flow index is exactly num_frames - 1 counts only when
/// pad_last is set; it then reuses the final flow once.
int count_chunks(int num_frames, int chunk_length, int stride, bool pad_last);

/// Chunk n from its center frame and the raw flows it covers. Fewer than L
/// flows means the chunk runs past the clip; the last flow is repeated.
TemporalChunk assemble_chunk(int n, int chunk_length, int stride, const cv::Mat& spatial,
                             std::span<const FlowPair> flows, double flow_bound);

/// Builds chunks n = 1..N. Flows are clipped to +-flow_bound and scaled to
/// [-1, 1]. Requires flows.size() == frames.size() - 1.
std::vector<TemporalChunk> build_chunks(const std::vector<cv::Mat>& frames,
                                        const std::vector<FlowPair>& flows,
                                        int chunk_length, int stride, double flow_bound,
                                        bool pad_last);

/// Splits x_t back into (conditioned) flow pairs, in chunk order.
std::vector<FlowPair> deinterleave(const TemporalChunk& chunk);

/// Mirrors the spatial frame and every flow channel left-right and negates
/// the horizontal channels.
TemporalChunk hflip_chunk(const TemporalChunk& chunk);

}  // namespace gma
