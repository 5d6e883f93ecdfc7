#include "sams/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sams/error.hpp"

namespace sams {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'M', 'S', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "container writes little-endian scalars via memcpy");

template <typename T>
void put(std::ofstream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw ValidationError(path + ": truncated checkpoint");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
    if (has(name)) throw Error("Checkpoint: duplicate entry '" + name + "'");
    entries_.push_back(Entry{name, 0, t.shape(), t.values(), {}});
}

void Checkpoint::put_json(const std::string& name, const nlohmann::json& j) {
    if (has(name)) throw Error("Checkpoint: duplicate entry '" + name + "'");
    entries_.push_back(Entry{name, 1, {}, {}, j.dump()});
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw ValidationError("checkpoint has no entry '" + name + "'");
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const Entry& e = find(name);
    if (e.kind != 0) throw ValidationError("checkpoint entry '" + name + "' is not a tensor");
    return Tensor::from(e.shape, e.data);
}

nlohmann::json Checkpoint::json(const std::string& name) const {
    const Entry& e = find(name);
    if (e.kind != 1) throw ValidationError("checkpoint entry '" + name + "' is not JSON");
    return nlohmann::json::parse(e.text);
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint8_t>(out, e.kind);
        if (e.kind == 0) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
            for (auto d : e.shape) put<std::int64_t>(out, d);
            for (double v : e.data) put<double>(out, v);
        } else {
            put<std::uint64_t>(out, e.text.size());
            out.write(e.text.data(), static_cast<std::streamsize>(e.text.size()));
        }
    }
    if (!out) throw ValidationError("write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError(path + ": not a checkpoint file");
    Checkpoint ckp;
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = get<std::uint32_t>(in, path);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        e.kind = get<std::uint8_t>(in, path);
        if (e.kind == 0) {
            const auto ndim = get<std::uint32_t>(in, path);
            e.shape.resize(ndim);
            for (auto& d : e.shape) d = get<std::int64_t>(in, path);
            const auto numel = shape_numel(e.shape);
            if (numel < 0 || numel > (1LL << 32))
                throw ValidationError(path + ": implausible tensor size");
            e.data.resize(static_cast<std::size_t>(numel));
            for (auto& v : e.data) v = get<double>(in, path);
        } else if (e.kind == 1) {
            const auto len = get<std::uint64_t>(in, path);
            if (len > (1ULL << 32)) throw ValidationError(path + ": implausible JSON size");
            e.text.resize(len);
            in.read(e.text.data(), static_cast<std::streamsize>(len));
        } else {
            throw ValidationError(path + ": unknown entry kind");
        }
        if (!in) throw ValidationError(path + ": truncated checkpoint");
        ckp.entries_.push_back(std::move(e));
    }
    return ckp;
}

}  // namespace sams
