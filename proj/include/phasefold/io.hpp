#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "phasefold/dataset.hpp"

namespace phasefold {

enum class Format { Csv, Binary };

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) noexcept {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

template <class T>
void write_le(std::ostream& os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error(ErrorCode::Truncated, std::string("unexpected end of file reading ") + what);
    return to_little(v);
}

inline void write_f64_block(std::ostream& os, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double v : values) write_le(os, v);
    }
}

inline std::vector<double> read_f64_block(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw Error(ErrorCode::Truncated, "unexpected end of file in value block");
    if constexpr (std::endian::native == std::endian::big) {
        for (double& v : out) v = to_little(v);
    }
    return out;
}

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Parse a numeric cell; non-numbers and non-finite values are distinct errors.
inline double parse_cell(std::string_view cell, std::size_t line_no, std::size_t col) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    const std::string where = "line " + std::to_string(line_no) + ", column " + std::to_string(col);
    if (cell.empty() || res.ec != std::errc() || res.ptr != last) {
        if (res.ec == std::errc::result_out_of_range) {
            throw Error(ErrorCode::NonFiniteValue, where + ": '" + std::string(cell) + "' overflows");
        }
        throw Error(ErrorCode::NonNumericCell, where + ": '" + std::string(cell) + "'");
    }
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, where + ": '" + std::string(cell) + "'");
    return v;
}

inline constexpr char kDatasetMagic[4] = {'U', 'P', 'S', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace io

inline Dataset read_csv(std::istream& in, std::string source = {}) {
    std::string line;
    if (!std::getline(in, line) || io::trim(line).empty()) {
        throw Error(ErrorCode::MalformedHeader, "missing header row");
    }
    std::vector<std::string> names;
    for (auto field : io::split(line)) {
        if (field.empty()) throw Error(ErrorCode::MalformedHeader, "empty column name in header");
        names.emplace_back(field);
    }
    const std::size_t D = names.size();
    std::vector<double> values;
    std::size_t line_no = 1, rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        auto cells = io::split(line);
        if (cells.size() != D) {
            throw Error(ErrorCode::RaggedRow, "line " + std::to_string(line_no) + " has " +
                                                   std::to_string(cells.size()) + " cells, expected " +
                                                   std::to_string(D));
        }
        for (std::size_t c = 0; c < D; ++c) values.push_back(io::parse_cell(cells[c], line_no, c));
        ++rows;
    }
    if (rows == 0) throw Error(ErrorCode::EmptyDataset, "no data rows");
    return Dataset(rows, D, std::move(values), std::move(names), std::move(source));
}

inline void write_csv(std::ostream& out, const Dataset& data) {
    const auto& names = data.column_names();
    for (std::size_t d = 0; d < names.size(); ++d) out << (d ? "," : "") << names[d];
    out << '\n';
    std::string line;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        line.clear();
        auto r = data.row(i);
        for (std::size_t d = 0; d < r.size(); ++d) {
            if (d) line += ',';
            line += io::format_double(r[d]);
        }
        line += '\n';
        out << line;
    }
}

/// UPSD: magic, u32 version, u64 N, u32 D, N*D little-endian f64 row-major.
inline void write_binary(std::ostream& out, const Dataset& data) {
    out.write(io::kDatasetMagic, 4);
    io::write_le<std::uint32_t>(out, io::kDatasetVersion);
    io::write_le<std::uint64_t>(out, data.rows());
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.dims()));
    io::write_f64_block(out, data.values());
}

inline Dataset read_binary(std::istream& in, std::string source = {}) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in) throw Error(ErrorCode::Truncated, "file shorter than header");
    if (std::memcmp(magic, io::kDatasetMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not a UPSD file");
    const auto version = io::read_le<std::uint32_t>(in, "version");
    if (version != io::kDatasetVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "UPSD version " + std::to_string(version));
    }
    const auto n = io::read_le<std::uint64_t>(in, "N");
    const auto d = io::read_le<std::uint32_t>(in, "D");
    if (n == 0 || d == 0) throw Error(ErrorCode::EmptyDataset, "UPSD header declares N or D of zero");
    auto values = io::read_f64_block(in, static_cast<std::size_t>(n) * d);
    return Dataset(static_cast<std::size_t>(n), d, std::move(values), {}, std::move(source));
}

inline Format format_from_path(const std::string& path) {
    auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".csv") ? Format::Csv : Format::Binary;
}

inline Dataset load_dataset(const std::string& path, Format format) {
    std::ifstream in(path, format == Format::Binary ? std::ios::binary : std::ios::in);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    return format == Format::Csv ? read_csv(in, path) : read_binary(in, path);
}

inline Dataset load_dataset(const std::string& path) { return load_dataset(path, format_from_path(path)); }

inline void save_dataset(const Dataset& data, const std::string& path, Format format) {
    std::ofstream out(path, format == Format::Binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
    if (format == Format::Csv) {
        write_csv(out, data);
    } else {
        write_binary(out, data);
    }
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

inline void save_dataset(const Dataset& data, const std::string& path) {
    save_dataset(data, path, format_from_path(path));
}

/// Index list: an "index" header then one row index per line.
inline void write_indices(std::ostream& out, std::span<const std::size_t> indices) {
    out << "index\n";
    for (std::size_t i : indices) out << i << '\n';
}

inline std::vector<std::size_t> read_indices(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || io::trim(line) != "index") {
        throw Error(ErrorCode::MalformedHeader, "index file must start with an 'index' header");
    }
    std::vector<std::size_t> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cell = io::trim(line);
        if (cell.empty()) continue;
        std::size_t v = 0;
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
            throw Error(ErrorCode::NonNumericCell, "line " + std::to_string(line_no) + ": '" + std::string(cell) + "'");
        }
        out.push_back(v);
    }
    return out;
}

inline void save_indices(std::span<const std::size_t> indices, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
    write_indices(out, indices);
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

inline std::vector<std::size_t> load_indices(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    return read_indices(in);
}

}  // namespace phasefold
