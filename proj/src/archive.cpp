#include "fgs/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace fgs {

namespace fs = std::filesystem;

void TensorArchive::add(const std::string& name, FgtTensor t) {
    if (has(name)) throw DataError(cat("archive: duplicate tensor '", name, "'"));
    tensors.emplace_back(name, std::move(t));
}

const FgtTensor& TensorArchive::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw DataError(cat("archive: missing tensor '", name, "'"));
}

bool TensorArchive::has(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(),
                       [&](const auto& p) { return p.first == name; });
}

void TensorArchive::save(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError(cat("archive: cannot create '", dir, "': ", ec.message()));

    nlohmann::json manifest;
    manifest["format"] = "fgs-archive";
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        save_fgt(dir + "/" + name + ".fgt", t);
        nlohmann::json e;
        e["name"] = name;
        e["dtype"] = t.dtype == diff::Dtype::F32 ? "f32" : "f64";
        e["shape"] = t.shape;
        entries.push_back(e);
    }
    manifest["tensors"] = entries;
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

    std::ofstream os(dir + "/manifest.json", std::ios::binary);
    if (!os) throw DataError(cat("archive: cannot write manifest in '", dir, "'"));
    os << manifest.dump(2) << "\n";
}

TensorArchive TensorArchive::load(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json", std::ios::binary);
    if (!is) throw DataError(cat("archive: missing manifest in '", dir, "'"));
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const std::exception& e) {
        throw DataError(cat("archive: bad manifest in '", dir, "': ", e.what()));
    }
    if (manifest.value("format", "") != "fgs-archive")
        throw DataError(cat("archive: unrecognized manifest format in '", dir, "'"));

    TensorArchive out;
    for (const auto& e : manifest.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        FgtTensor t = load_fgt(dir + "/" + name + ".fgt");
        const diff::Shape expect = e.at("shape").get<diff::Shape>();
        if (t.shape != expect)
            throw DataError(cat("archive: tensor '", name, "' has shape ", diff::shape_str(t.shape),
                                ", manifest says ", diff::shape_str(expect)));
        out.add(name, std::move(t));
    }
    for (auto it = manifest.begin(); it != manifest.end(); ++it) {
        if (it.key() == "format" || it.key() == "tensors") continue;
        out.extra[it.key()] = it.value();
    }
    return out;
}

std::string file_crc32(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(cat("crc32: cannot open '", path, "'"));
    uLong crc = crc32(0L, Z_NULL, 0);
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize got = is.gcount();
        if (got > 0)
            crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(got));
    }
    char hex[9];
    std::snprintf(hex, sizeof(hex), "%08lx", static_cast<unsigned long>(crc));
    return std::string(hex);
}

}  // namespace fgs
