#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fgs/archive.hpp"
#include "fgs/image.hpp"
#include "fgs/rng.hpp"

using namespace fgs;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
    static int counter = 0;
    auto dir = fs::temp_directory_path() / ("fgs_io_test_" + std::to_string(counter++));
    fs::create_directories(dir);
    return dir.string();
}

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("fgt: save -> load -> save is byte-identical for both dtypes") {
    const std::string dir = temp_dir();
    Rng rng(42);
    for (auto dtype : {diff::Dtype::F32, diff::Dtype::F64}) {
        FgtTensor t;
        t.shape = {2, 3, 4};
        t.dtype = dtype;
        t.data.resize(24);
        for (auto& v : t.data) v = rng.normal(0.0, 2.0);
        if (dtype == diff::Dtype::F32) diff::round_f32(t.data);

        const std::string p1 = dir + "/a.fgt";
        const std::string p2 = dir + "/b.fgt";
        save_fgt(p1, t);
        FgtTensor back = load_fgt(p1);
        CHECK(back.shape == t.shape);
        CHECK(back.dtype == t.dtype);
        for (std::size_t i = 0; i < t.data.size(); ++i) CHECK(back.data[i] == t.data[i]);
        save_fgt(p2, back);
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
}

TEST_CASE("fgt: corrupt magic and truncation are data errors") {
    const std::string dir = temp_dir();
    FgtTensor t;
    t.shape = {4};
    t.data = {1, 2, 3, 4};
    save_fgt(dir + "/t.fgt", t);

    {
        std::ofstream os(dir + "/bad.fgt", std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_fgt(dir + "/bad.fgt"), DataError);

    std::string bytes = read_bytes(dir + "/t.fgt");
    bytes.resize(bytes.size() - 5);
    {
        std::ofstream os(dir + "/trunc.fgt", std::ios::binary);
        os << bytes;
    }
    CHECK_THROWS_AS(load_fgt(dir + "/trunc.fgt"), DataError);
}

TEST_CASE("archive: round-trips tensors and manifest byte-identically") {
    const std::string d1 = temp_dir();
    const std::string d2 = temp_dir();
    Rng rng(7);

    TensorArchive a;
    FgtTensor mu;
    mu.shape = {5, 3};
    mu.dtype = diff::Dtype::F32;
    mu.data.resize(15);
    for (auto& v : mu.data) v = rng.normal();
    diff::round_f32(mu.data);
    a.add("mu", std::move(mu));
    FgtTensor ids;
    ids.shape = {5};
    ids.data = {0, 0, 1, 2, 2};
    a.add("region_ids", std::move(ids));
    a.extra["layout_version"] = 1;
    a.extra["sh_degree"] = 1;
    a.save(d1);

    TensorArchive b = TensorArchive::load(d1);
    CHECK(b.get("mu").shape == diff::Shape{5, 3});
    CHECK(b.extra.at("sh_degree") == 1);
    b.save(d2);
    CHECK(read_bytes(d1 + "/manifest.json") == read_bytes(d2 + "/manifest.json"));
    CHECK(read_bytes(d1 + "/mu.fgt") == read_bytes(d2 + "/mu.fgt"));
    CHECK(read_bytes(d1 + "/region_ids.fgt") == read_bytes(d2 + "/region_ids.fgt"));

    CHECK_THROWS_AS(b.get("nonexistent"), DataError);
}

TEST_CASE("png: rgb and grayscale round-trip at 8-bit resolution") {
    const std::string dir = temp_dir();
    Image img(3, 8, 10);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x) {
            img.at(0, y, x) = x / 9.0;
            img.at(1, y, x) = y / 7.0;
            img.at(2, y, x) = (x + y) / 16.0;
        }
    save_png(dir + "/c.png", img);
    Image back = load_png(dir + "/c.png");
    REQUIRE(back.channels == 3);
    REQUIRE(back.height == 8);
    REQUIRE(back.width == 10);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::fabs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);

    Image mask(1, 6, 6);
    mask.at(0, 2, 3) = 1.0;
    mask.at(0, 3, 3) = 1.0;
    save_png(dir + "/m.png", mask);
    Image mback = load_png(dir + "/m.png");
    for (std::size_t i = 0; i < mask.data.size(); ++i) CHECK(mback.data[i] == mask.data[i]);
}

TEST_CASE("image: dilate, bbox, centroid") {
    Image mask(1, 10, 10);
    mask.at(0, 4, 5) = 1.0;
    mask.at(0, 5, 5) = 1.0;

    Image d = dilate(mask, 2);
    int count = 0;
    for (double v : d.data) count += v > 0.5;
    CHECK(count == 5 * 6);  // 5 wide, 6 tall union of two squares

    BBox box = mask_bbox(mask);
    CHECK(box.x0 == 5);
    CHECK(box.x1 == 5);
    CHECK(box.y0 == 4);
    CHECK(box.y1 == 5);

    double cx = 0, cy = 0;
    REQUIRE(mask_centroid(mask, cx, cy));
    CHECK(cx == doctest::Approx(5.0));
    CHECK(cy == doctest::Approx(4.5));

    Image empty(1, 4, 4);
    CHECK_FALSE(mask_centroid(empty, cx, cy));
    CHECK_FALSE(mask_bbox(empty).valid());
}

TEST_CASE("crc32 detects corruption") {
    const std::string dir = temp_dir();
    {
        std::ofstream os(dir + "/f.bin", std::ios::binary);
        os << "hello world";
    }
    const std::string c1 = file_crc32(dir + "/f.bin");
    {
        std::ofstream os(dir + "/f.bin", std::ios::binary);
        os << "hello worle";
    }
    CHECK(file_crc32(dir + "/f.bin") != c1);
}
