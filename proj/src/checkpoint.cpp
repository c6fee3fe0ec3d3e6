#include "crossart/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crossart/errors.hpp"

namespace crossart {

namespace {

constexpr char kCheckpointMagic[8] = {'X', 'A', 'R', 'T', 'C', 'K', 'P', 'T'};
constexpr char kTensorMagic[8] = {'X', 'A', 'R', 'T', 'T', 'N', 'S', 'R'};

class Writer {
public:
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void write_to(const std::filesystem::path& path) const {
        // Write to a sibling file and rename so readers never see a partial file.
        const std::filesystem::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
            out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
            if (!out) throw IoError("failed writing " + tmp.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
    }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path_);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void bytes(char* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    bool at_end() const { return pos_ == buf_.size(); }
    const std::string& path() const { return path_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw IoError("truncated file " + path_);
    }

    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const DenoiserState& state, const std::filesystem::path& path) {
    const DenoiserConfig& c = state.config;
    Writer w;
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointLayoutVersion);
    for (int v : {c.in_channels, c.base_channels, c.depth, c.heads, c.time_embed_dim, c.groups,
                  c.text_width}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u32(static_cast<std::uint32_t>(c.attn_levels.size()));
    for (int l : c.attn_levels) w.u32(static_cast<std::uint32_t>(l));
    w.u64(c.text_seed);
    w.u64(state.seed);
    w.u64(state.parameters.size());
    for (double p : state.parameters) w.f64(p);
    w.write_to(path);
}

DenoiserState load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw VersionError(r.path() + " is not a checkpoint");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointLayoutVersion) {
        throw VersionError("checkpoint layout version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointLayoutVersion));
    }
    DenoiserState s;
    DenoiserConfig& c = s.config;
    c.in_channels = static_cast<int>(r.u32());
    c.base_channels = static_cast<int>(r.u32());
    c.depth = static_cast<int>(r.u32());
    c.heads = static_cast<int>(r.u32());
    c.time_embed_dim = static_cast<int>(r.u32());
    c.groups = static_cast<int>(r.u32());
    c.text_width = static_cast<int>(r.u32());
    const std::uint32_t levels = r.u32();
    if (levels > 64) throw VersionError("implausible attention level count in " + r.path());
    c.attn_levels.clear();
    for (std::uint32_t i = 0; i < levels; ++i) c.attn_levels.push_back(static_cast<int>(r.u32()));
    c.text_seed = r.u64();
    s.seed = r.u64();
    const std::uint64_t count = r.u64();
    if (count != parameter_count(c)) {
        throw VersionError("checkpoint parameter count does not match its configuration");
    }
    s.parameters.resize(count);
    for (double& p : s.parameters) p = r.f64();
    if (!r.at_end()) throw VersionError("trailing bytes in " + r.path());
    return s;
}

void save_tensor(const ImageTensor& t, const std::filesystem::path& path, int index) {
    Writer w;
    w.bytes(kTensorMagic, 8);
    w.u32(kTensorDumpVersion);
    const Dims& d = t.dims();
    for (int v : {d.n, d.c, d.h, d.w}) w.u32(static_cast<std::uint32_t>(v));
    w.u32(static_cast<std::uint32_t>(index));
    for (double v : t.values()) w.f64(v);
    w.write_to(path);
}

ImageTensor load_tensor(const std::filesystem::path& path, int* index) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kTensorMagic, 8) != 0) throw VersionError(r.path() + " is not a tensor dump");
    if (r.u32() != kTensorDumpVersion) throw VersionError("unsupported tensor dump version");
    Dims d;
    d.n = static_cast<int>(r.u32());
    d.c = static_cast<int>(r.u32());
    d.h = static_cast<int>(r.u32());
    d.w = static_cast<int>(r.u32());
    const int idx = static_cast<int>(r.u32());
    if (index) *index = idx;
    std::vector<double> values(d.count());
    for (double& v : values) v = r.f64();
    if (!r.at_end()) throw VersionError("trailing bytes in " + r.path());
    return ImageTensor(d, std::move(values));
}

}  // namespace crossart
