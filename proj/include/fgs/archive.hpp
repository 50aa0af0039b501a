#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fgs/fgt.hpp"

namespace fgs {

/// Directory-based archive of named FGT1 tensors plus a manifest.json record.
/// Used for cloud and network checkpoints. Saving is deterministic, so
/// save -> load -> save round-trips byte-identically.
struct TensorArchive {
    std::vector<std::pair<std::string, FgtTensor>> tensors;  // insertion order
    nlohmann::json extra;  // module-specific manifest fields

    void add(const std::string& name, FgtTensor t);
    const FgtTensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    void save(const std::string& dir) const;
    static TensorArchive load(const std::string& dir);
};

/// crc32 (zlib) of a file's bytes, as 8 lowercase hex digits.
std::string file_crc32(const std::string& path);

}  // namespace fgs
