#pragma once

// HMAP1 heatmap tensor files.
//
// Layout: 5-byte magic "HMAP1", five little-endian u32 (heads N, keypoints K,
// height H, width W, channels C), then C*N*K*H*W little-endian f32 values in
// [channel][head][keypoint][row][col] order. Channel 0 holds keypoint
// heatmaps, channel 1 (when C == 2) the depth maps.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spose/error.hpp"
#include "spose/heatmap.hpp"

namespace spose {

inline constexpr char kHmapMagic[5] = {'H', 'M', 'A', 'P', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serialises N heads. All heads must share K, resolution and depth presence.
inline std::string encode_hmap(const std::vector<HeadOutput>& heads) {
  if (heads.empty()) fail(ErrorCode::InvalidArgument, "HMAP1 needs at least one head");
  const HeadOutput& ref = heads.front();
  ref.validate(false);
  const std::size_t k = ref.keypoints();
  const bool depth = ref.has_depth();
  for (const auto& h : heads) {
    h.validate(false);
    if (h.keypoints() != k || h.width() != ref.width() || h.height() != ref.height() || h.has_depth() != depth)
      fail(ErrorCode::SizeMismatch, "HMAP1 heads must share shape");
    if (depth && h.depth_maps.size() != k) fail(ErrorCode::SizeMismatch, "depth map count mismatch");
  }
  const std::uint32_t channels = depth ? 2 : 1;
  std::string out(kHmapMagic, kHmapMagic + 5);
  detail::put_u32(out, static_cast<std::uint32_t>(heads.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(k));
  detail::put_u32(out, static_cast<std::uint32_t>(ref.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(ref.width()));
  detail::put_u32(out, channels);
  out.reserve(out.size() + 4 * channels * heads.size() * k * ref.keypoint_maps.front().size());
  for (std::uint32_t c = 0; c < channels; ++c)
    for (const auto& h : heads)
      for (std::size_t i = 0; i < k; ++i)
        for (double x : (c == 0 ? h.keypoint_maps[i] : h.depth_maps[i]).values())
          detail::put_f32(out, static_cast<float>(x));
  return out;
}

inline std::vector<HeadOutput> decode_hmap(const std::string& bytes) {
  constexpr std::size_t header = 5 + 5 * 4;
  if (bytes.size() < header || std::memcmp(bytes.data(), kHmapMagic, 5) != 0)
    fail(ErrorCode::ParseError, "not an HMAP1 file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  const std::uint32_t n = detail::get_u32(p), k = detail::get_u32(p + 4), h = detail::get_u32(p + 8),
                      w = detail::get_u32(p + 12), c = detail::get_u32(p + 16);
  if (n == 0 || k == 0 || h == 0 || w == 0 || (c != 1 && c != 2))
    fail(ErrorCode::ParseError, "HMAP1 header has invalid dimensions");
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  const std::size_t count = static_cast<std::size_t>(c) * n * k * cells;
  if (bytes.size() != header + 4 * count) fail(ErrorCode::ParseError, "HMAP1 payload size does not match header");
  std::vector<HeadOutput> heads(n);
  const unsigned char* q = p + 20;
  for (std::uint32_t ch = 0; ch < c; ++ch)
    for (std::uint32_t i = 0; i < n; ++i) {
      auto& maps = ch == 0 ? heads[i].keypoint_maps : heads[i].depth_maps;
      for (std::uint32_t kk = 0; kk < k; ++kk) {
        Grid g(static_cast<int>(w), static_cast<int>(h));
        for (std::size_t j = 0; j < cells; ++j, q += 4) g[j] = std::bit_cast<float>(detail::get_u32(q));
        maps.push_back(std::move(g));
      }
    }
  return heads;
}

inline std::vector<HeadOutput> read_hmap_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_hmap(bytes);
}

}  // namespace spose
