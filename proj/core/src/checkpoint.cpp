#include "taflab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "taflab/errors.hpp"

namespace taflab {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::vector<float> u64_as_floats(std::uint64_t v) {
    const auto lo = static_cast<std::uint32_t>(v & 0xffffffffu);
    const auto hi = static_cast<std::uint32_t>(v >> 32);
    return {std::bit_cast<float>(lo), std::bit_cast<float>(hi)};
}

std::uint64_t floats_as_u64(const std::vector<float>& f) {
    const auto lo = std::bit_cast<std::uint32_t>(f.at(0));
    const auto hi = std::bit_cast<std::uint32_t>(f.at(1));
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

}  // namespace

int Checkpoint::epoch() const {
    auto it = tensors.find("__epoch");
    return it == tensors.end() ? 0 : static_cast<int>(it->second.second.at(0));
}

std::uint64_t Checkpoint::fingerprint() const {
    auto it = tensors.find("__fingerprint");
    return it == tensors.end() ? 0 : floats_as_u64(it->second.second);
}

void Checkpoint::set_epoch(int epoch) {
    tensors["__epoch"] = {{1}, {static_cast<float>(epoch)}};
}

void Checkpoint::set_fingerprint(std::uint64_t fp) {
    tensors["__fingerprint"] = {{2}, u64_as_floats(fp)};
}

Checkpoint checkpoint_from_model(VideoModel& model, const Sgd* opt, int epoch,
                                 std::uint64_t config_fingerprint) {
    Checkpoint ck;
    for (auto& [name, p] : model.parameters()) ck.tensors[name] = {p->shape(), p->values()};
    for (auto& [name, b] : model.buffers()) ck.tensors[name] = {{b->size()}, *b};
    if (opt)
        for (const auto& [name, v] : opt->velocity) ck.tensors["opt." + name] = {{v.size()}, v};
    ck.set_epoch(epoch);
    ck.set_fingerprint(config_fingerprint);
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put_u64(os, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, t.first.size());
        for (std::size_t d : t.first) put_u64(os, d);
        static_assert(std::endian::native == std::endian::little, "writer assumes little-endian");
        os.write(reinterpret_cast<const char*>(t.second.data()),
                 static_cast<std::streamsize>(t.second.size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is) throw IoError("checkpoint: truncated header in " + path);
    if (std::memcmp(magic, kMagic, 7) != 0) throw IoError("checkpoint: bad magic in " + path);
    if (magic[7] != '1')
        throw IoError("checkpoint: unknown format version '" + std::string(1, magic[7]) + "' in " + path);
    Checkpoint ck;
    const std::uint64_t count = get_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = get_u64(is);
        if (name_len > (1u << 20)) throw IoError("checkpoint: corrupt name length in " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rank = get_u64(is);
        if (rank > 16) throw IoError("checkpoint: corrupt rank in " + path);
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = get_u64(is);
            n *= d;
        }
        std::vector<float> data(n);
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw IoError("checkpoint: truncated tensor '" + name + "' in " + path);
        ck.tensors[name] = {std::move(shape), std::move(data)};
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ck, VideoModel& model, Sgd* opt) {
    auto fetch = [&](const std::string& name) -> const std::pair<Shape, std::vector<float>>& {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
        return it->second;
    };
    for (auto& [name, p] : model.parameters()) {
        const auto& t = fetch(name);
        if (t.first != p->shape())
            throw IoError("checkpoint: dimension mismatch for '" + name + "': file " +
                          shape_str(t.first) + " vs model " + shape_str(p->shape()));
        p->values() = t.second;
    }
    for (auto& [name, b] : model.buffers()) {
        const auto& t = fetch(name);
        if (t.second.size() != b->size())
            throw IoError("checkpoint: dimension mismatch for '" + name + "'");
        *b = t.second;
    }
    if (opt) {
        opt->velocity.clear();
        for (const auto& [name, t] : ck.tensors)
            if (name.starts_with("opt.")) opt->velocity[name.substr(4)] = t.second;
    }
}

}  // namespace taflab
