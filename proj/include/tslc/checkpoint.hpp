#pragma once

#include <string>
#include <vector>

#include "tslc/graph.hpp"

namespace tslc::model {

// Checkpoint layout, all integers little-endian:
//   magic "TSMD" | u16 version=1 | u32 manifest_len
//   | UTF-8 JSON manifest (arch, role, layers, slices with alpha, tensor_index)
//   | concatenated raw little-endian F32 tensor blobs.
// Gate scalars live in the manifest; weight tensors live in the blob section
// and are addressed by {name, dtype, shape, offset, len} index entries.

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_graph(const GraphSpec& g);
GraphSpec deserialize_graph(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const GraphSpec& g, const std::string& path);
GraphSpec load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace tslc::model
