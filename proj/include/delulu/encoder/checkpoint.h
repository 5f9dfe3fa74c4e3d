// include/delulu/encoder/checkpoint.h

// Copyright 2026  The delulu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/encoder/encoder.h"

namespace delulu {

// Training state that rides along with the weights: free-form metadata plus
// tensors (optimizer moments) in a caller-defined order.
struct CheckpointExtras {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;
};

struct LoadedCheckpoint {
  Encoder encoder;
  std::optional<CheckpointExtras> extras;
};

// Binary layout (little-endian): "DLLU", u32 version, config JSON, named f64
// parameter tensors, then an optional extras section. Writes go through a
// temporary file and a rename.
void SaveCheckpoint(const std::filesystem::path& path, const Encoder& encoder,
                    const CheckpointExtras* extras = nullptr);
LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace delulu
