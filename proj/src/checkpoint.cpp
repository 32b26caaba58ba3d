#include "lanekeep/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "lanekeep/errors.hpp"

namespace lanekeep {

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'K', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }

    std::vector<char> bytes;
};

class Reader {
public:
    explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw FormatError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }
    std::string str(std::size_t max_len = 256) {
        const std::uint32_t n = u32();
        if (n > max_len) throw FormatError("checkpoint string field too long");
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void raw(char* out, std::size_t n) {
        need(n);
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, ActionLabel label, const nn::PolicyValueNet<float>& net) {
    Writer w;
    w.bytes.insert(w.bytes.end(), kMagic.begin(), kMagic.end());
    w.u32(kCheckpointVersion);
    w.str(std::string(label_name(label)));
    w.u32(static_cast<std::uint32_t>(net.action_count()));
    w.u32(static_cast<std::uint32_t>(net.tensors().size()));
    for (const auto& t : net.tensors()) {
        w.str(t.name);
        if (t.cols == 1 && t.name.ends_with(".bias")) {
            w.u32(1);
            w.u32(static_cast<std::uint32_t>(t.rows));
        } else {
            w.u32(2);
            w.u32(static_cast<std::uint32_t>(t.rows));
            w.u32(static_cast<std::uint32_t>(t.cols));
        }
    }
    w.u64(static_cast<std::uint64_t>(net.parameter_count()));
    const auto& p = net.params();
    for (Eigen::Index i = 0; i < p.size(); ++i) w.f32(p(i));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
        if (!out) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

    std::array<char, 8> magic{};
    r.raw(magic.data(), magic.size());
    if (magic != kMagic) throw FormatError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint format_version " + std::to_string(version));
    ActionLabel label;
    try {
        label = parse_label(r.str());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint label: ") + e.what());
    }
    const std::uint32_t n_actions = r.u32();
    if (static_cast<int>(n_actions) != build_config(label).action_count())
        throw FormatError("checkpoint N_actions does not match its label");

    Checkpoint ck{label, nn::PolicyValueNet<float>(static_cast<int>(n_actions), 0)};
    const auto& expected = ck.net.tensors();
    if (r.u32() != expected.size()) throw FormatError("checkpoint tensor table size mismatch");
    for (const auto& t : expected) {
        if (r.str() != t.name) throw FormatError("checkpoint tensor name mismatch at " + t.name);
        const std::uint32_t ndim = r.u32();
        std::uint64_t count = 1;
        if (ndim == 0 || ndim > 2) throw FormatError("checkpoint tensor rank invalid for " + t.name);
        for (std::uint32_t d = 0; d < ndim; ++d) count *= r.u32();
        if (count != static_cast<std::uint64_t>(t.size())) throw FormatError("checkpoint shape mismatch for " + t.name);
    }
    if (r.u64() != static_cast<std::uint64_t>(ck.net.parameter_count()))
        throw FormatError("checkpoint parameter count mismatch");
    auto& p = ck.net.params();
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = r.f32();
    if (!r.at_end()) throw FormatError("checkpoint has trailing bytes");
    if (!p.allFinite()) throw FormatError("checkpoint contains non-finite parameters");
    return ck;
}

}  // namespace lanekeep
