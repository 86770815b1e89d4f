#pragma once

// Checkpoint file:
//   "SCDN" | u32 version=1 | u32 L | u32 D | u32 H | u32 N | u32 k | u32 heads |
//   every parameter matrix in declaration order as little-endian f32, row-major.
// Shapes are implied by the config block.

#include <cstdint>
#include <string>
#include <vector>

#include "scdnet/binary_io.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/model.hpp"

namespace scdnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<unsigned char> encode_checkpoint(const ModelState<float>& state) {
  const ModelConfig& c = state.config;
  std::vector<unsigned char> out{'S', 'C', 'D', 'N'};
  io::put_u32(out, kCheckpointVersion);
  for (std::int64_t v : {c.layers, c.input_dim, c.hidden, c.blocks, c.kernel, c.heads}) {
    io::put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (const auto& p : state.params) {
    for (Eigen::Index i = 0; i < p.size(); ++i) io::put_f32(out, p.data()[i]);
  }
  return out;
}

inline ModelState<float> decode_checkpoint(const std::vector<unsigned char>& bytes,
                                           const std::string& what = "checkpoint") {
  io::Reader r(bytes, what);
  if (r.tag(4) != "SCDN") throw FormatError(what + ": bad magic, expected SCDN");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.layers = r.u32();
  c.input_dim = r.u32();
  c.hidden = r.u32();
  c.blocks = r.u32();
  c.kernel = r.u32();
  c.heads = r.u32();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(what + ": invalid config block (" + e.what() + ")");
  }
  const ParamLayout layout(c);
  std::uint64_t floats = 0;
  for (const auto& s : layout.shapes) floats += static_cast<std::uint64_t>(s.rows * s.cols);
  const std::uint64_t expected = r.position() + floats * 4;
  if (bytes.size() != expected) {
    throw FormatError(what + ": size mismatch, expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  ModelState<float> state;
  state.config = c;
  for (const auto& s : layout.shapes) {
    Matrix<float> m(s.rows, s.cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
    state.params.push_back(std::move(m));
  }
  return state;
}

inline void write_checkpoint(const ModelState<float>& state, const std::string& path) {
  io::write_file(path, encode_checkpoint(state));
}

inline ModelState<float> read_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path), "'" + path + "'");
}

}  // namespace scdnet
