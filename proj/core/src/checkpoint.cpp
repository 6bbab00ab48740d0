#include "wmsteer/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "wmsteer/common.hpp"

namespace wmsteer {

namespace {

constexpr char kMagic[4] = {'W', 'M', 'T', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(static_cast<bool>(is), "checkpoint: truncated file");
    return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
    require(find(name) == nullptr, "checkpoint: duplicate tensor " + name);
    tensors_.emplace_back(name, std::move(t));
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::add_store(const std::string& prefix, const ParamStore& store) {
    for (const auto& p : store.all()) add(prefix + "." + p.name, p.value);
}

void Checkpoint::load_store(const std::string& prefix, ParamStore& store) const {
    for (auto& p : store.all()) {
        const Tensor* t = find(prefix + "." + p.name);
        require(t != nullptr, "checkpoint: missing tensor " + prefix + "." + p.name);
        require(t->same_shape(p.value), "checkpoint: shape mismatch for " + prefix + "." + p.name +
                                            ": " + shape_str(t->shape()) + " vs " +
                                            shape_str(p.value.shape()));
        p.value = *t;
    }
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["meta"] = meta;
    nlohmann::json list = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        offset += static_cast<std::uint64_t>(t.numel());
        list.push_back(std::move(e));
    }
    manifest["tensors"] = std::move(list);
    const std::string mtext = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), "checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_pod(os, kFormatVersion);
    write_pod(os, static_cast<std::uint64_t>(mtext.size()));
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, t] : tensors_)
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    require(static_cast<bool>(os), "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
            "checkpoint: " + path + " is not a WMTC container");
    const auto version = read_pod<std::uint32_t>(is);
    require(version == kFormatVersion,
            "checkpoint: unsupported format version " + std::to_string(version));
    const auto mlen = read_pod<std::uint64_t>(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), static_cast<std::streamsize>(mlen));
    require(static_cast<bool>(is), "checkpoint: truncated manifest in " + path);

    nlohmann::json manifest = nlohmann::json::parse(mtext);
    Checkpoint ck;
    ck.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
        Shape shape = e.at("shape").get<Shape>();
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        require(static_cast<bool>(is), "checkpoint: truncated payload in " + path);
        ck.add(e.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace wmsteer
