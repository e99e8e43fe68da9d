#include "actloop/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "actloop/error.hpp"

namespace actloop {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'T', 'L', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t u(int width) {
        if (pos_ + width > bytes_.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }
    double f64() { return std::bit_cast<double>(u(8)); }
    bool at_end() const { return pos_ == bytes_.size(); }
    void expect_magic() {
        if (bytes_.size() < 8 || std::memcmp(bytes_.data(), kMagic, 8) != 0) {
            throw ParseError("not a checkpoint file (bad magic)");
        }
        pos_ = 8;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put_u32(out, kCheckpointVersion);
    put_u32(out, ckpt.net.activation == Activation::tanh ? 0u : 1u);
    put_u32(out, static_cast<std::uint32_t>(ckpt.net.layer_sizes.size()));
    for (auto w : ckpt.net.layer_sizes) put_u64(out, w);
    put_u64(out, ckpt.extras.size());
    for (double v : flatten(ckpt.net)) put_f64(out, v);
    for (double v : ckpt.extras) put_f64(out, v);
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    r.expect_magic();
    const auto version = r.u(4);
    if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    const auto act = r.u(4);
    if (act > 1) throw ParseError("unknown activation code in checkpoint");
    const auto n = r.u(4);
    if (n < 2 || n > 64) throw ParseError("implausible layer count in checkpoint");
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes) s = r.u(8);
    const auto n_extra = r.u(8);
    Checkpoint ckpt;
    ckpt.net = make_zero_net(sizes, act == 0 ? Activation::tanh : Activation::linear);
    std::vector<double> flat(ckpt.net.param_count());
    for (auto& v : flat) v = r.f64();
    assign_flat(ckpt.net, flat);
    ckpt.extras.resize(n_extra);
    for (auto& v : ckpt.extras) v = r.f64();
    if (!r.at_end()) throw ParseError("trailing bytes after checkpoint payload");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace actloop
