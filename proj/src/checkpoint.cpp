#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "attnlab/errors.hpp"
#include "attnlab/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace attnlab {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'N', 'L', 'A', 'B', 'C', 'K'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_raw(std::FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n)
        throw CheckpointCorruptError("checkpoint write failed: " + path);
}

void write_u32(std::FILE* f, uint32_t v, const std::string& path) {
    write_raw(f, &v, sizeof v, path);
}

void write_str(std::FILE* f, const std::string& s, const std::string& path) {
    write_u32(f, static_cast<uint32_t>(s.size()), path);
    write_raw(f, s.data(), s.size(), path);
}

void read_raw(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n)
        throw CheckpointCorruptError("checkpoint truncated: " + path);
}

uint32_t read_u32(std::FILE* f, const std::string& path) {
    uint32_t v = 0;
    read_raw(f, &v, sizeof v, path);
    return v;
}

std::string read_str(std::FILE* f, const std::string& path, uint32_t max_len) {
    const uint32_t n = read_u32(f, path);
    if (n > max_len)
        throw CheckpointCorruptError("checkpoint corrupt (string length " + std::to_string(n) +
                                     "): " + path);
    std::string s(n, '\0');
    read_raw(f, s.data(), n, path);
    return s;
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw CheckpointCorruptError("cannot open checkpoint for writing: " + path);
    write_raw(f.get(), kMagic, sizeof kMagic, path);
    write_u32(f.get(), kVersion, path);
    const ModelConfig& c = model.cfg;
    write_u32(f.get(), static_cast<uint32_t>(c.n_layer), path);
    write_u32(f.get(), static_cast<uint32_t>(c.n_head), path);
    write_u32(f.get(), static_cast<uint32_t>(c.n_embd), path);
    write_u32(f.get(), static_cast<uint32_t>(c.block_size), path);
    write_u32(f.get(), static_cast<uint32_t>(c.vocab_size), path);
    write_u32(f.get(), static_cast<uint32_t>(c.variant), path);
    write_u32(f.get(), c.tie_embeddings ? 1u : 0u, path);
    write_str(f.get(), model.vocab_chars, path);
    write_u32(f.get(), static_cast<uint32_t>(model.params.size()), path);
    for (const NamedParam& p : model.params) {
        write_str(f.get(), p.name, path);
        const std::vector<int>& shape = p.t.shape();
        write_u32(f.get(), static_cast<uint32_t>(shape.size()), path);
        for (const int d : shape) write_u32(f.get(), static_cast<uint32_t>(d), path);
        const std::vector<double>& d = p.t.data();
        write_raw(f.get(), d.data(), d.size() * sizeof(double), path);
    }
    if (std::fflush(f.get()) != 0)
        throw CheckpointCorruptError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw CheckpointCorruptError("cannot open checkpoint: " + path);
    char magic[8];
    read_raw(f.get(), magic, sizeof magic, path);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointMagicError("not a checkpoint file (bad magic): " + path);
    const uint32_t version = read_u32(f.get(), path);
    if (version != kVersion)
        throw CheckpointCorruptError("unsupported checkpoint version " +
                                     std::to_string(version) + ": " + path);
    ModelConfig cfg;
    cfg.n_layer = static_cast<int>(read_u32(f.get(), path));
    cfg.n_head = static_cast<int>(read_u32(f.get(), path));
    cfg.n_embd = static_cast<int>(read_u32(f.get(), path));
    cfg.block_size = static_cast<int>(read_u32(f.get(), path));
    cfg.vocab_size = static_cast<int>(read_u32(f.get(), path));
    const uint32_t variant_id = read_u32(f.get(), path);
    if (variant_id > static_cast<uint32_t>(Variant::NoiseV2))
        throw CheckpointCorruptError("checkpoint corrupt (variant id " +
                                     std::to_string(variant_id) + "): " + path);
    cfg.variant = static_cast<Variant>(variant_id);
    cfg.tie_embeddings = read_u32(f.get(), path) != 0;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw CheckpointCorruptError("checkpoint corrupt (" + std::string(e.what()) +
                                     "): " + path);
    }
    const std::string vocab = read_str(f.get(), path, 1u << 20);

    Model m = build_model(cfg, 0);
    m.vocab_chars = vocab;
    const uint32_t count = read_u32(f.get(), path);
    if (count != m.params.size())
        throw CheckpointShapeError("checkpoint holds " + std::to_string(count) +
                                   " parameters, model expects " +
                                   std::to_string(m.params.size()) + ": " + path);
    for (NamedParam& p : m.params) {
        const std::string name = read_str(f.get(), path, 1u << 20);
        if (name != p.name)
            throw CheckpointShapeError("checkpoint parameter '" + name + "' where '" + p.name +
                                       "' expected: " + path);
        const uint32_t ndim = read_u32(f.get(), path);
        if (ndim > 8)
            throw CheckpointCorruptError("checkpoint corrupt (rank " + std::to_string(ndim) +
                                         "): " + path);
        std::vector<int> shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i)
            shape[i] = static_cast<int>(read_u32(f.get(), path));
        if (shape != p.t.shape())
            throw CheckpointShapeError("checkpoint parameter '" + name + "' has shape " +
                                       shape_str(shape) + ", model expects " +
                                       shape_str(p.t.shape()) + ": " + path);
        std::vector<double>& d = p.t.data();
        read_raw(f.get(), d.data(), d.size() * sizeof(double), path);
    }
    char extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
        throw CheckpointCorruptError("checkpoint has trailing bytes: " + path);
    return m;
}

Model load_checkpoint_expect(const std::string& path, const ModelConfig& expect) {
    Model m = load_checkpoint(path);
    if (!(m.cfg == expect))
        throw CheckpointShapeError("checkpoint config does not match the requested model (" +
                                   std::string(variant_name(m.cfg.variant)) + " " +
                                   std::to_string(m.cfg.n_layer) + "L/" +
                                   std::to_string(m.cfg.n_head) + "H/" +
                                   std::to_string(m.cfg.n_embd) + "d vs " +
                                   std::string(variant_name(expect.variant)) + " " +
                                   std::to_string(expect.n_layer) + "L/" +
                                   std::to_string(expect.n_head) + "H/" +
                                   std::to_string(expect.n_embd) + "d): " + path);
    return m;
}

} // namespace attnlab
