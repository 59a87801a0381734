// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_IO_HPP
#define DVDP_IO_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlp.hpp"
#include "tensor.hpp"

namespace dvdp {

class io_error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

//
// Tensor container, "DVTF":
//   magic[4] | u16 version | u8 dtype | u8 ndim | u64 shape[ndim] | payload
// All integers and payload values are little-endian on disk.
//
enum class Dtype : std::uint8_t
{
    f64 = 0,
    f32 = 1,
};

inline constexpr std::array<char, 4> tensor_magic     = {'D', 'V', 'T', 'F'};
inline constexpr std::uint16_t       tensor_version   = 1;
inline constexpr std::array<char, 4> checkpoint_magic = {'D', 'V', 'C', 'K'};
inline constexpr std::uint16_t       checkpoint_version = 1;

// n-dimensional values as stored on disk
struct TensorRecord
{
    std::vector<std::uint64_t> shape;
    std::vector<double>        values;
    Dtype                      dtype = Dtype::f64;

    friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

namespace detail {

template <std::unsigned_integral U>
void put_le(std::ostream& os, U v)
{
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bytes[i] = char((v >> (8 * i)) & 0xffU);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

template <std::unsigned_integral U>
U get_le(std::istream& is, const char* what)
{
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
        throw io_error(std::string("truncated input while reading ") + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= U(bytes[i]) << (8 * i);
    return v;
}

inline void expect_magic(std::istream& is, const std::array<char, 4>& magic)
{
    std::array<char, 4> got{};
    if (!is.read(got.data(), 4) || got != magic)
        throw io_error("bad magic, expected \"" + std::string(magic.begin(), magic.end()) + "\"");
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw io_error("cannot open " + path.string() + " for writing");
    return os;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw io_error("cannot open " + path.string());
    return is;
}

inline void finish(std::ostream& os, const std::filesystem::path& path)
{
    os.flush();
    if (!os)
        throw io_error("write to " + path.string() + " failed");
}

} // namespace detail

inline void write_record(std::ostream& os, const TensorRecord& r)
{
    if (r.shape.size() > 255)
        throw io_error("tensor file: more than 255 dimensions");
    std::uint64_t count = 1;
    for (std::uint64_t n : r.shape)
        count *= n;
    if (count != r.values.size())
        throw io_error("tensor file: shape does not match value count");

    os.write(tensor_magic.data(), 4);
    detail::put_le(os, tensor_version);
    detail::put_le(os, std::uint8_t(r.dtype));
    detail::put_le(os, std::uint8_t(r.shape.size()));
    for (std::uint64_t n : r.shape)
        detail::put_le(os, n);
    for (double v : r.values) {
        if (r.dtype == Dtype::f64)
            detail::put_le(os, std::bit_cast<std::uint64_t>(v));
        else
            detail::put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
}

inline TensorRecord read_record(std::istream& is)
{
    detail::expect_magic(is, tensor_magic);
    const auto version = detail::get_le<std::uint16_t>(is, "version");
    if (version != tensor_version)
        throw io_error("tensor file: unsupported version " + std::to_string(version));
    TensorRecord r;
    const auto   dtype = detail::get_le<std::uint8_t>(is, "dtype");
    if (dtype > 1)
        throw io_error("tensor file: unknown dtype code " + std::to_string(dtype));
    r.dtype         = Dtype(dtype);
    const auto ndim = detail::get_le<std::uint8_t>(is, "ndim");
    std::uint64_t count = 1;
    for (int i = 0; i < ndim; ++i) {
        r.shape.push_back(detail::get_le<std::uint64_t>(is, "shape"));
        if (r.shape.back() != 0 && count > std::numeric_limits<std::uint32_t>::max() / r.shape.back())
            throw io_error("tensor file: implausibly large shape");
        count *= r.shape.back();
    }
    r.values.resize(count);
    for (double& v : r.values) {
        if (r.dtype == Dtype::f64)
            v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "payload"));
        else
            v = std::bit_cast<float>(detail::get_le<std::uint32_t>(is, "payload"));
    }
    return r;
}

inline TensorRecord to_record(const Tensor& x, Dtype dtype = Dtype::f64)
{
    return {{x.shape.channels, x.shape.height, x.shape.width}, x.data, dtype};
}

// records of rank 1 to 3; missing leading axes become 1
inline Tensor to_tensor(const TensorRecord& r)
{
    if (r.shape.empty() || r.shape.size() > 3)
        throw io_error("tensor file: expected 1 to 3 dimensions, got " + std::to_string(r.shape.size()));
    std::array<std::uint64_t, 3> s = {1, 1, 1};
    std::copy(r.shape.begin(), r.shape.end(), s.end() - std::ptrdiff_t(r.shape.size()));
    return Tensor({s[0], s[1], s[2]}, r.values);
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& x, Dtype dtype = Dtype::f64)
{
    auto os = detail::open_out(path);
    write_record(os, to_record(x, dtype));
    detail::finish(os, path);
}

inline Tensor read_tensor(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    try {
        return to_tensor(read_record(is));
    } catch (const io_error& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

//
// Checkpoint, "DVCK":
//   magic[4] | u16 version | u32 n | JSON metadata[n] | u32 count
//   then per entry: u16 n | name[n] | DVTF record
//
struct Checkpoint
{
    nlohmann::json                                    metadata = nlohmann::json::object();
    std::vector<std::pair<std::string, TensorRecord>> entries;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck)
{
    auto              os   = detail::open_out(path);
    const std::string meta = ck.metadata.dump();
    os.write(checkpoint_magic.data(), 4);
    detail::put_le(os, checkpoint_version);
    detail::put_le(os, std::uint32_t(meta.size()));
    os.write(meta.data(), std::streamsize(meta.size()));
    detail::put_le(os, std::uint32_t(ck.entries.size()));
    for (const auto& [name, record] : ck.entries) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw io_error("checkpoint: entry name too long");
        detail::put_le(os, std::uint16_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_record(os, record);
    }
    detail::finish(os, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    auto is = detail::open_in(path);
    try {
        detail::expect_magic(is, checkpoint_magic);
        if (const auto v = detail::get_le<std::uint16_t>(is, "version"); v != checkpoint_version)
            throw io_error("checkpoint: unsupported version " + std::to_string(v));
        std::string meta(detail::get_le<std::uint32_t>(is, "metadata length"), '\0');
        if (!is.read(meta.data(), std::streamsize(meta.size())))
            throw io_error("truncated input while reading metadata");
        Checkpoint ck;
        try {
            ck.metadata = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::parse_error& e) {
            throw io_error(std::string("checkpoint: bad metadata: ") + e.what());
        }
        const auto count = detail::get_le<std::uint32_t>(is, "entry count");
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name(detail::get_le<std::uint16_t>(is, "name length"), '\0');
            if (!is.read(name.data(), std::streamsize(name.size())))
                throw io_error("truncated input while reading entry name");
            ck.entries.emplace_back(std::move(name), read_record(is));
        }
        return ck;
    } catch (const io_error& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

inline nlohmann::json process_metadata(const DvdpProcess& p)
{
    const TensorShape s = p.cascade.shape(0);
    return {{"schedule_hash", p.schedule.hash()},
            {"cascade_shape", {s.channels, s.height, s.width}},
            {"levels", p.levels()},
            {"backend", to_string(p.cascade.backend())}};
}

// per level: w1 [hidden, input], b1 [hidden], w2 [output, hidden], b2 [output]
inline Checkpoint mlp_checkpoint(const MlpDenoiser& net)
{
    Checkpoint ck;
    ck.metadata           = process_metadata(net.process());
    ck.metadata["hidden"] = net.hidden();
    const auto& theta     = net.parameters();
    for (int k = 0; k <= net.process().levels(); ++k) {
        const MlpDenoiser::Layout l = net.layout(k);
        auto slice = [&](std::size_t from, std::size_t to) {
            return std::vector<double>(theta.begin() + std::ptrdiff_t(from), theta.begin() + std::ptrdiff_t(to));
        };
        const std::string prefix = "level" + std::to_string(k) + ".";
        ck.entries.push_back({prefix + "w1", {{l.hidden, l.input}, slice(l.w1, l.b1)}});
        ck.entries.push_back({prefix + "b1", {{l.hidden}, slice(l.b1, l.w2)}});
        ck.entries.push_back({prefix + "w2", {{l.output, l.hidden}, slice(l.w2, l.b2)}});
        ck.entries.push_back({prefix + "b2", {{l.output}, slice(l.b2, l.end)}});
    }
    return ck;
}

// refuses checkpoints written for another schedule, cascade or width
inline void load_mlp_parameters(MlpDenoiser& net, const Checkpoint& ck)
{
    nlohmann::json expected = process_metadata(net.process());
    expected["hidden"]      = net.hidden();
    for (const auto& [key, value] : expected.items())
        if (!ck.metadata.contains(key) || ck.metadata[key] != value)
            throw io_error("checkpoint: metadata mismatch on \"" + key + "\"");
    const Checkpoint layout = mlp_checkpoint(net);
    if (layout.entries.size() != ck.entries.size())
        throw io_error("checkpoint: wrong number of entries");
    std::vector<double>& theta  = net.parameters();
    std::size_t          offset = 0;
    for (std::size_t i = 0; i < ck.entries.size(); ++i) {
        const auto& [name, record] = ck.entries[i];
        if (name != layout.entries[i].first || record.shape != layout.entries[i].second.shape)
            throw io_error("checkpoint: unexpected entry \"" + name + "\"");
        std::copy(record.values.begin(), record.values.end(), theta.begin() + std::ptrdiff_t(offset));
        offset += record.values.size();
    }
}

//
// Plain (P2) grey map. Values are mapped affinely from [min, max] to
// [0, 255]; a constant image maps to 0. Channels are stacked vertically.
//
inline void write_pgm(const std::filesystem::path& path, const Tensor& x)
{
    if (x.data.empty())
        throw io_error("pgm: empty tensor");
    const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
    const double scale  = *hi > *lo ? 255.0 / (*hi - *lo) : 0.0;
    auto         os     = detail::open_out(path);
    os << "P2\n" << x.shape.width << ' ' << x.shape.channels * x.shape.height << "\n255\n";
    for (std::size_t row = 0; row < x.shape.channels * x.shape.height; ++row) {
        for (std::size_t col = 0; col < x.shape.width; ++col) {
            const double v = x.data[row * x.shape.width + col];
            os << (col ? " " : "") << long(std::lround((v - *lo) * scale));
        }
        os << '\n';
    }
    detail::finish(os, path);
}

// shortest text that parses back to the same double, locale-free
inline std::string format_number(double v)
{
    std::array<char, 32> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
    if (ec != std::errc())
        throw io_error("csv: cannot format number");
    return std::string(buf.data(), end);
}

class CsvWriter
{
public:
    CsvWriter(std::ostream& os, std::vector<std::string> header) : os_(&os), columns_(header.size())
    {
        write_row(header);
    }

    void row(const std::vector<std::string>& cells)
    {
        if (cells.size() != columns_)
            throw io_error("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(columns_));
        write_row(cells);
    }

private:
    void write_row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i)
            *os_ << (i ? "," : "") << cells[i];
        *os_ << '\n';
    }

    std::ostream* os_;
    std::size_t   columns_;
};

} // namespace dvdp

#endif // DVDP_IO_HPP
