#pragma once

// On-disk formats: GAPT tensors with JSON sidecars, metric CSVs, SHA-256
// digests and atomic (temp + rename) writes.
//
// GAPT layout: "GAPT" | u16 version | u16 rank | rank x u64 dims | f64
// payload, all little-endian, payload row-major.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gap/state.hpp"
#include "gap/verification.hpp"

namespace gap {

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr char kToolVersion[] = "0.1.0";

struct Tensor {
    std::vector<std::uint64_t> shape;
    std::vector<double> data;  // row-major

    std::uint64_t numel() const;
    void validate() const;
};

/// A d x n column-major matrix is an [n, d] row-major tensor (rows are states).
Tensor tensor_from_states(const Matrix& states);
Matrix states_from_tensor(const Tensor& t);
/// Stacks equally shaped d x M matrices into an [n, M, d] tensor.
Tensor tensor_from_stack(const std::vector<Matrix>& mats);
std::vector<Matrix> stack_from_tensor(const Tensor& t);

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& p);

/// Writes to a sibling temp file and renames it over `p`.
void atomic_write(const std::filesystem::path& p, std::string_view bytes);
std::string read_file(const std::filesystem::path& p);

struct FileRecord {
    std::string name;   // file name relative to the run directory
    std::string role;
    std::vector<std::uint64_t> shape;  // empty for non-tensor files
    std::string sha256;
    std::map<std::string, double> attrs;  // extra sidecar fields (e.g. trajectory step metadata)
};

/// Writes `<dir>/<name>` and its sidecar `<dir>/<name>.json`.
FileRecord write_tensor(const std::filesystem::path& dir, const std::string& name, const Tensor& t,
                        const std::string& role, const std::map<std::string, double>& attrs = {});
/// Reads a tensor and checks it against its sidecar digest (IoError on
/// mismatch or absence).
Tensor read_tensor(const std::filesystem::path& dir, const std::string& name, FileRecord* rec = nullptr);

/// One CSV per metric family; header `metric,lead,value,member_count,seed`.
struct MetricRow {
    std::string metric;
    std::int64_t lead = 0;
    double value = 0;
    std::int64_t member_count = 0;
    std::uint64_t seed = 0;
};
std::string format_metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(std::string_view text);
FileRecord write_metrics(const std::filesystem::path& dir, const std::string& name,
                         const std::vector<MetricRow>& rows);
/// Text artifact (JSON, CSV) with its digest recorded but no sidecar.
FileRecord write_text(const std::filesystem::path& dir, const std::string& name, std::string_view text,
                      const std::string& role);

}  // namespace gap
