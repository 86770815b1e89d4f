#pragma once

// Feature-stack file:
//   "SCDF" | u32 version=1 | u32 L | u32 T | u32 D | f32 frame_rate |
//   L*T*D f32 values, layer-major then row-major. All little-endian.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scdnet/binary_io.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/model.hpp"

namespace scdnet {

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 24;

inline std::vector<unsigned char> encode_features(const LayerStack& stack) {
  stack.validate();
  std::vector<unsigned char> out;
  const auto L = stack.num_layers();
  const auto T = static_cast<std::size_t>(stack.frames());
  const auto D = static_cast<std::size_t>(stack.dim());
  out.reserve(kFeatureHeaderBytes + L * T * D * 4);
  io::put_tag(out, "SCDF");
  io::put_u32(out, kFeatureVersion);
  io::put_u32(out, static_cast<std::uint32_t>(L));
  io::put_u32(out, static_cast<std::uint32_t>(T));
  io::put_u32(out, static_cast<std::uint32_t>(D));
  io::put_f32(out, static_cast<float>(stack.frame_rate));
  for (const auto& layer : stack.layers) {
    for (Eigen::Index i = 0; i < layer.size(); ++i) io::put_f32(out, layer.data()[i]);
  }
  return out;
}

inline LayerStack decode_features(const std::vector<unsigned char>& bytes,
                                  const std::string& what = "feature file") {
  io::Reader r(bytes, what);
  if (r.tag(4) != "SCDF") throw FormatError(what + ": bad magic, expected SCDF");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version) +
                      " (supported: " + std::to_string(kFeatureVersion) + ")");
  }
  const std::uint64_t L = r.u32(), T = r.u32(), D = r.u32();
  const float rate = r.f32();
  if (L == 0 || T == 0 || D == 0) throw FormatError(what + ": zero dimension in header");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 4;
  if (T > limit / L || D > limit / (L * T) || L * T * D > static_cast<std::uint64_t>(
                                                              std::numeric_limits<Eigen::Index>::max())) {
    throw FormatError(what + ": shape overflow");
  }
  const std::uint64_t expected = kFeatureHeaderBytes + L * T * D * 4;
  if (bytes.size() != expected) {
    throw FormatError(what + ": size mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  LayerStack stack;
  stack.frame_rate = rate;
  for (std::uint64_t l = 0; l < L; ++l) {
    Matrix<float> m(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
    stack.layers.push_back(std::move(m));
  }
  return stack;
}

inline void write_features(const LayerStack& stack, const std::string& path) {
  io::write_file(path, encode_features(stack));
}

inline LayerStack read_features(const std::string& path) {
  LayerStack s = decode_features(io::read_file(path), "'" + path + "'");
  s.source = path;
  return s;
}

}  // namespace scdnet
