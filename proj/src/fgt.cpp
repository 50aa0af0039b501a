#include "fgs/fgt.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace fgs {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename UInt, typename Float>
void put_float(std::ostream& os, double v) {
    const Float f = static_cast<Float>(v);
    UInt bits;
    std::memcpy(&bits, &f, sizeof(Float));
    unsigned char b[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), sizeof(UInt));
}

template <typename UInt, typename Float>
double get_float(std::istream& is) {
    unsigned char b[sizeof(UInt)];
    is.read(reinterpret_cast<char*>(b), sizeof(UInt));
    UInt bits = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bits |= static_cast<UInt>(b[i]) << (8 * i);
    Float f;
    std::memcpy(&f, &bits, sizeof(Float));
    return static_cast<double>(f);
}

}  // namespace

void save_fgt(const std::string& path, const FgtTensor& t) {
    if (diff::numel(t.shape) != t.size())
        throw DataError(cat("save_fgt: ", t.size(), " values for shape ", diff::shape_str(t.shape)));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(cat("save_fgt: cannot open '", path, "'"));
    os.write("FGT1", 4);
    const char dtype = t.dtype == diff::Dtype::F32 ? 0 : 1;
    os.write(&dtype, 1);
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    if (t.dtype == diff::Dtype::F32) {
        for (double v : t.data) put_float<std::uint32_t, float>(os, v);
    } else {
        for (double v : t.data) put_float<std::uint64_t, double>(os, v);
    }
    if (!os) throw DataError(cat("save_fgt: write failed for '", path, "'"));
}

FgtTensor load_fgt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(cat("load_fgt: cannot open '", path, "'"));
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FGT1", 4) != 0)
        throw DataError(cat("load_fgt: bad magic in '", path, "'"));
    char dtype_code;
    is.read(&dtype_code, 1);
    if (dtype_code != 0 && dtype_code != 1)
        throw DataError(cat("load_fgt: bad dtype code ", int(dtype_code), " in '", path, "'"));
    FgtTensor t;
    t.dtype = dtype_code == 0 ? diff::Dtype::F32 : diff::Dtype::F64;
    const std::uint32_t rank = get_u32(is);
    if (rank > 16) throw DataError(cat("load_fgt: implausible rank ", rank, " in '", path, "'"));
    t.shape.resize(rank);
    for (auto& d : t.shape) d = static_cast<std::int64_t>(get_u32(is));
    const std::int64_t n = diff::numel(t.shape);
    t.data.resize(static_cast<std::size_t>(n));
    for (auto& v : t.data)
        v = t.dtype == diff::Dtype::F32 ? get_float<std::uint32_t, float>(is)
                                        : get_float<std::uint64_t, double>(is);
    if (!is) throw DataError(cat("load_fgt: truncated file '", path, "'"));
    return t;
}

}  // namespace fgs
