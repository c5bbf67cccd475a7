#include "gap/io.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "gap/error.hpp"
#include "json.hpp"

namespace gap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'G', 'A', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view b, std::size_t& pos) {
    if (pos + sizeof(T) > b.size()) throw IoError("tensor: truncated header");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

std::uint64_t Tensor::numel() const {
    std::uint64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

void Tensor::validate() const {
    require(!shape.empty() && shape.size() <= 0xffff, "tensor: rank must be in [1, 65535]");
    require(numel() == data.size(), "tensor: payload size does not match the shape");
}

Tensor tensor_from_states(const Matrix& states) {
    Tensor t;
    t.shape = {static_cast<std::uint64_t>(states.cols()), static_cast<std::uint64_t>(states.rows())};
    t.data.assign(states.data(), states.data() + states.size());
    return t;
}

Matrix states_from_tensor(const Tensor& t) {
    t.validate();
    if (t.shape.size() != 2) throw IoError("tensor: expected rank 2 (states), got rank " + std::to_string(t.shape.size()));
    Matrix m(static_cast<Eigen::Index>(t.shape[1]), static_cast<Eigen::Index>(t.shape[0]));
    std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(double));
    return m;
}

Tensor tensor_from_stack(const std::vector<Matrix>& mats) {
    require(!mats.empty(), "tensor_from_stack: nothing to stack");
    Tensor t;
    const auto d = mats[0].rows(), m = mats[0].cols();
    t.shape = {mats.size(), static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(d)};
    t.data.reserve(mats.size() * static_cast<std::size_t>(d * m));
    for (const auto& x : mats) {
        require(x.rows() == d && x.cols() == m, "tensor_from_stack: shape mismatch");
        t.data.insert(t.data.end(), x.data(), x.data() + x.size());
    }
    return t;
}

std::vector<Matrix> stack_from_tensor(const Tensor& t) {
    t.validate();
    if (t.shape.size() != 3) throw IoError("tensor: expected rank 3 (stack), got rank " + std::to_string(t.shape.size()));
    const auto n = t.shape[0], m = t.shape[1], d = t.shape[2];
    std::vector<Matrix> out;
    for (std::uint64_t k = 0; k < n; ++k) {
        Matrix x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
        std::memcpy(x.data(), t.data.data() + k * m * d, m * d * sizeof(double));
        out.push_back(std::move(x));
    }
    return out;
}

std::string encode_tensor(const Tensor& t) {
    t.validate();
    std::string out(kMagic, 4);
    put_le<std::uint16_t>(out, kTensorVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.shape.size()));
    for (auto s : t.shape) put_le<std::uint64_t>(out, s);
    const std::size_t head = out.size();
    out.resize(head + t.data.size() * 8);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + head, t.data.data(), t.data.size() * 8);
    } else {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(t.data[i]);
            for (int b = 0; b < 8; ++b) out[head + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
    return out;
}

Tensor decode_tensor(std::string_view b) {
    if (b.size() < 8 || std::memcmp(b.data(), kMagic, 4) != 0) throw IoError("tensor: bad magic (not a GAPT file)");
    std::size_t pos = 4;
    const auto version = get_le<std::uint16_t>(b, pos);
    if (version != kTensorVersion) throw IoError("tensor: unsupported format version " + std::to_string(version));
    const auto rank = get_le<std::uint16_t>(b, pos);
    if (rank == 0) throw IoError("tensor: rank 0");
    Tensor t;
    for (int i = 0; i < rank; ++i) t.shape.push_back(get_le<std::uint64_t>(b, pos));
    const std::uint64_t n = t.numel();
    if (b.size() - pos != n * 8) throw IoError("tensor: payload has " + std::to_string(b.size() - pos) +
                                               " bytes, shape needs " + std::to_string(n * 8));
    t.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<double>(get_le<std::uint64_t>(b, pos));
    return t;
}

std::string sha256_hex(std::string_view bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
        throw IoError("sha256: OpenSSL digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += {hex[md[i] >> 4], hex[md[i] & 0xf]};
    return out;
}

std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

void atomic_write(const fs::path& p, std::string_view bytes) {
    std::error_code ec;
    if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
    const fs::path tmp = p.parent_path() / ("." + p.filename().string() + ".tmp-" + std::to_string(::getpid()));
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, p, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " to " + p.string());
    }
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    if (f.bad()) throw IoError("read failed: " + p.string());
    return ss.str();
}

FileRecord write_tensor(const fs::path& dir, const std::string& name, const Tensor& t, const std::string& role,
                        const std::map<std::string, double>& attrs) {
    const std::string bytes = encode_tensor(t);
    FileRecord r{name, role, t.shape, sha256_hex(bytes), attrs};
    atomic_write(dir / name, bytes);
    json side = {{"name", name}, {"shape", t.shape}, {"role", role}, {"sha256", r.sha256},
                 {"format", "GAPT"}, {"version", kTensorVersion}};
    if (!attrs.empty()) side["attrs"] = attrs;
    atomic_write(dir / (name + ".json"), side.dump(2) + "\n");
    return r;
}

Tensor read_tensor(const fs::path& dir, const std::string& name, FileRecord* rec) {
    const fs::path p = dir / name, side = dir / (name + ".json");
    if (!fs::exists(p)) throw IoError("missing artifact " + p.string());
    if (!fs::exists(side)) throw IoError("missing sidecar " + side.string());
    json meta;
    try {
        meta = json::parse(read_file(side));
    } catch (const json::exception& e) {
        throw IoError("bad sidecar " + side.string() + ": " + e.what());
    }
    const std::string bytes = read_file(p);
    const std::string digest = sha256_hex(bytes);
    if (!meta.contains("sha256") || meta["sha256"].get<std::string>() != digest)
        throw IoError("digest mismatch for " + p.string());
    Tensor t = decode_tensor(bytes);
    if (rec) {
        *rec = FileRecord{name, meta.value("role", std::string()), t.shape, digest, {}};
        if (meta.contains("attrs")) rec->attrs = meta["attrs"].get<std::map<std::string, double>>();
    }
    return t;
}

std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "metric,lead,value,member_count,seed\n";
    for (const auto& r : rows) {
        require(r.metric.find_first_of(",\n\"") == std::string::npos, "metrics: metric names may not contain , \" or newlines");
        out += r.metric + "," + std::to_string(r.lead) + "," + fmt_double(r.value) + "," +
               std::to_string(r.member_count) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

std::vector<MetricRow> parse_metrics_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "metric,lead,value,member_count,seed") throw IoError("metrics: bad header");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw IoError("metrics: expected 5 fields in '" + line + "'");
        try {
            rows.push_back({f[0], std::stoll(f[1]), std::stod(f[2]), std::stoll(f[3]), std::stoull(f[4])});
        } catch (const std::exception&) {
            throw IoError("metrics: unparsable row '" + line + "'");
        }
    }
    return rows;
}

FileRecord write_metrics(const fs::path& dir, const std::string& name, const std::vector<MetricRow>& rows) {
    return write_text(dir, name, format_metrics_csv(rows), "metrics");
}

FileRecord write_text(const fs::path& dir, const std::string& name, std::string_view text, const std::string& role) {
    atomic_write(dir / name, text);
    return FileRecord{name, role, {}, sha256_hex(text), {}};
}

}  // namespace gap
