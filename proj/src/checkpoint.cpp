#include "scl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "scl/errors.hpp"

namespace scl {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'L', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t offset() const { return pos_; }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string str(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n)
            throw FormatError("checkpoint truncated reading " + std::string(what) + " at offset " +
                              std::to_string(pos_));
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::string& config_text, const ParameterStore& store) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(config_text.size()));
    out.insert(out.end(), config_text.begin(), config_text.end());
    for (const Parameter& p : store) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (Real v : p.value.data()) put_f32(out, static_cast<float>(v));
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a checkpoint: missing SCL1 magic at offset 0");
    Reader r(bytes.subspan(4));
    Checkpoint ck;
    ck.config_text = r.str(r.u32());
    std::unordered_set<std::string> seen;
    while (!r.done()) {
        std::string name = r.str(r.u32());
        if (!seen.insert(name).second)
            throw FormatError("duplicate parameter '" + name + "' at offset " + std::to_string(r.offset() + 4));
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw FormatError("bad rank for '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) throw FormatError("zero dimension for '" + name + "'");
        }
        Buffer data(shape_numel(shape));
        for (Real& v : data) v = static_cast<Real>(std::bit_cast<float>(r.u32()));
        ck.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ck;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void load_into(const Checkpoint& ckpt, ParameterStore& store) {
    if (ckpt.params.size() != store.size())
        throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                          std::to_string(store.size()));
    for (const auto& [name, value] : ckpt.params) {
        Parameter* p = store.find(name);
        if (!p) throw FormatError("checkpoint parameter '" + name + "' not in model");
        if (p->value.shape() != value.shape())
            throw FormatError("shape mismatch for '" + name + "': checkpoint " + shape_str(value.shape()) +
                              ", model " + shape_str(p->value.shape()));
        p->value = value;
    }
}

}  // namespace scl
