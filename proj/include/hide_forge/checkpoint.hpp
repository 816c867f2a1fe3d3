// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container used for adapter, anchor and projector
// checkpoints.
//
// Layout (all integers little-endian):
//   magic "HIDEFRG\0" | u32 version | u32 n_meta | n_meta × (str key, str value)
//   | u32 n_tensors | n_tensors × (str name, u64 rows, u64 cols, rows·cols f64)
// where str = u32 length followed by the bytes.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hide_forge/numerics.hpp"

namespace hide_forge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class TensorContainer {
 public:
    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    const std::string& meta(const std::string& key) const;

    // Names are unique; insertion order is preserved on disk.
    void put(std::string name, Matrix tensor);
    bool contains(const std::string& name) const;
    const Matrix& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Matrix>>& tensors() const { return tensors_; }

    std::string serialize() const;
    // Throws IngestionError on a malformed or truncated buffer.
    static TensorContainer deserialize(const std::string& bytes);

    void write(const std::filesystem::path& path) const;
    static TensorContainer read(const std::filesystem::path& path);

 private:
    std::map<std::string, std::string> metadata_;
    std::vector<std::pair<std::string, Matrix>> tensors_;
};

}  // namespace hide_forge
