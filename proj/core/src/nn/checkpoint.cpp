#include "cipher/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cipher/error.hpp"

namespace cipher::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'P', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const std::string& name, const Tensor& t) {
        str(name);
        u32(static_cast<std::uint32_t>(t.ndim()));
        for (auto d : t.shape()) i64(d);
        raw(t.ptr(), static_cast<std::size_t>(t.numel()) * sizeof(double));
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}
    void raw(void* p, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::string str() {
        const auto n = u32();
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw CheckpointError("checkpoint (" + kind + ") has no tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
    for (const auto& entry : tensors) {
        if (entry.first == name) return true;
    }
    return false;
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint (" + kind + ") has no metadata '" + key + "'");
    return it->second;
}

std::string serialize_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) w.tensor(name, t);
    return w.take();
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.str(ckpt.kind);
    w.str(ckpt.arch_hash);
    w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        w.str(k);
        w.str(v);
    }
    return w.take() + serialize_tensors(ckpt.tensors);
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
    if (const auto version = r.u32(); version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.kind = r.str();
    ckpt.arch_hash = r.str();
    const auto n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = r.str();
        ckpt.meta[key] = r.str();
    }
    const auto n_tensors = r.u32();
    ckpt.tensors.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = r.str();
        const auto rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.i64();
        Tensor t(shape, 0.0);
        r.raw(t.ptr(), static_cast<std::size_t>(t.numel()) * sizeof(double));
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn file behind.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const auto bytes = serialize_checkpoint(ckpt);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return deserialize_checkpoint(ss.str());
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void expect_compatible(const Checkpoint& ckpt, const std::string& kind, const std::string& arch_hash) {
    if (ckpt.kind != kind) {
        throw CheckpointError("checkpoint kind '" + ckpt.kind + "' where '" + kind + "' was expected");
    }
    if (ckpt.arch_hash != arch_hash) {
        throw CheckpointError("architecture hash mismatch: checkpoint " + ckpt.arch_hash + ", configured " + arch_hash);
    }
}

std::vector<std::pair<std::string, Tensor>> snapshot(const ParameterList& params, const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(prefix + p.name, p.var.value());
    return out;
}

void restore(const ParameterList& params, const Checkpoint& ckpt, const std::string& prefix) {
    for (const auto& p : params) {
        const Tensor& t = ckpt.tensor(prefix + p.name);
        if (t.shape() != p.var.shape()) {
            throw CheckpointError("tensor '" + prefix + p.name + "' has shape " + shape_str(t.shape()) +
                                  ", expected " + shape_str(p.var.shape()));
        }
        auto var = p.var;
        var.mutable_value() = t;
    }
}

}  // namespace cipher::nn
