#include "doctest.h"

#include <filesystem>
#include <limits>

#include "gap/error.hpp"
#include "gap/io.hpp"

using namespace gap;
namespace fs = std::filesystem;

namespace {
fs::path scratch_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("gap_io_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}
}  // namespace

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("tensor encoding round-trips bit for bit") {
    Matrix m(3, 5);
    m.setRandom();
    m(1, 2) = -0.0;
    m(2, 4) = std::numeric_limits<double>::denorm_min();
    const Tensor t = tensor_from_states(m);
    CHECK(t.shape == std::vector<std::uint64_t>{5, 3});
    // row-major [n, d]: element (k, i) is state k coordinate i
    CHECK(t.data[2 * 3 + 1] == m(1, 2));
    const std::string bytes = encode_tensor(t);
    CHECK(bytes.substr(0, 4) == "GAPT");
    CHECK(bytes.size() == 4 + 2 + 2 + 16 + 15 * 8);
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // little-endian version
    const Matrix back = states_from_tensor(decode_tensor(bytes));
    CHECK(back == m);
    CHECK(std::signbit(back(1, 2)));

    std::vector<Matrix> stack{Matrix::Random(4, 2), Matrix::Random(4, 2), Matrix::Random(4, 2)};
    const Tensor s = tensor_from_stack(stack);
    CHECK(s.shape == std::vector<std::uint64_t>{3, 2, 4});
    const auto sb = stack_from_tensor(decode_tensor(encode_tensor(s)));
    REQUIRE(sb.size() == 3);
    for (int k = 0; k < 3; ++k) CHECK(sb[static_cast<std::size_t>(k)] == stack[static_cast<std::size_t>(k)]);

    CHECK_THROWS_AS(decode_tensor("NOPE0000"), IoError);
    CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 1)), IoError);
    CHECK_THROWS_AS(states_from_tensor(s), IoError);
}

TEST_CASE("artifacts on disk") {
    const auto dir = scratch_dir("artifacts");
    const Matrix m = Matrix::Random(6, 7);
    const auto rec = write_tensor(dir, "truth.gapt", tensor_from_states(m), "truth");
    CHECK(fs::exists(dir / "truth.gapt.json"));
    CHECK(rec.sha256 == sha256_file(dir / "truth.gapt"));
    FileRecord r2;
    CHECK(states_from_tensor(read_tensor(dir, "truth.gapt", &r2)) == m);
    CHECK(r2.role == "truth");
    CHECK(r2.sha256 == rec.sha256);

    // no stray temp files
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().filename().string().front() == '.';
    CHECK(n == 0);

    // corruption is detected
    std::string bytes = read_file(dir / "truth.gapt");
    bytes[bytes.size() - 1] ^= 1;
    atomic_write(dir / "truth.gapt", bytes);
    CHECK_THROWS_AS(read_tensor(dir, "truth.gapt"), IoError);
    CHECK_THROWS_AS(read_tensor(dir, "absent.gapt"), IoError);
    CHECK_THROWS_AS(read_file(dir / "absent"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("metrics csv") {
    std::vector<MetricRow> rows{{"rmse", 0, 0.1, 32, 7}, {"crps", 12, 1.0 / 3.0, 32, 7}, {"acc", 5, -1e-300, 1, 0}};
    const auto text = format_metrics_csv(rows);
    CHECK(text.rfind("metric,lead,value,member_count,seed\n", 0) == 0);
    const auto back = parse_metrics_csv(text);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].metric == rows[i].metric);
        CHECK(back[i].lead == rows[i].lead);
        CHECK(back[i].value == rows[i].value);
        CHECK(back[i].member_count == rows[i].member_count);
        CHECK(back[i].seed == rows[i].seed);
    }
    CHECK_THROWS_AS(parse_metrics_csv("a,b\n"), IoError);
    CHECK_THROWS_AS(parse_metrics_csv("metric,lead,value,member_count,seed\nx,1,2\n"), IoError);
    CHECK_THROWS_AS(format_metrics_csv({{"a,b", 0, 0, 0, 0}}), InvalidArgument);
}
