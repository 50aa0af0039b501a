#pragma once

#include <string>

#include "fgs/tensor.hpp"

namespace fgs {

/// Raw tensor container used repo-wide. File layout: magic "FGT1", dtype code
/// (u8: 0=f32, 1=f64), rank (u32), dims (u32 each), then the payload,
/// little-endian row-major. Round-trips are bit-exact.
struct FgtTensor {
    diff::Shape shape;
    diff::Dtype dtype = diff::Dtype::F64;
    std::vector<double> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

void save_fgt(const std::string& path, const FgtTensor& t);
FgtTensor load_fgt(const std::string& path);

inline void save_fgt(const std::string& path, const diff::TensorPtr& t) {
    save_fgt(path, FgtTensor{t->shape, t->dtype, t->data});
}

}  // namespace fgs
