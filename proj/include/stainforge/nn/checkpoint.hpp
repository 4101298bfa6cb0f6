// Copyright 2026 The StainForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary checkpoint: named parameter blocks, little-endian float32.
//
//   magic    8 bytes  "SFCKPT\0\0"
//   version  u32      kCheckpointVersion
//   tag      str      model-type tag
//   n_meta   u32      then n_meta x (key str, value str)
//   n_block  u32      then n_block x (name str, 4 x u32 dims, float32 data)
//
// str = u32 byte length followed by the bytes. Readers reject other versions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stainforge/nn/tensor.hpp"

namespace stainforge::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string model_tag;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor<float>>> blocks;

  const Tensor<float>* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace stainforge::nn
