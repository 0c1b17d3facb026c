#include "attnlab/data.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "attnlab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "token cache format assumes a little-endian host");

namespace attnlab {

namespace {

constexpr char kCacheMagic[8] = {'A', 'T', 'N', 'L', 'A', 'B', 'T', 'C'};
constexpr uint32_t kCacheVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Vocab Vocab::build(std::string_view corpus) {
    if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::array<bool, 256> seen{};
    for (const char c : corpus) seen[static_cast<unsigned char>(c)] = true;
    std::string chars;
    for (int i = 0; i < 256; ++i)
        if (seen[static_cast<size_t>(i)]) chars.push_back(static_cast<char>(i));
    return from_chars(std::move(chars));
}

Vocab Vocab::from_chars(std::string chars) {
    Vocab v;
    v.to_id.fill(-1);
    for (size_t i = 1; i < chars.size(); ++i)
        if (static_cast<unsigned char>(chars[i - 1]) >= static_cast<unsigned char>(chars[i]))
            throw DataError("vocabulary listing must be sorted and duplicate-free");
    v.chars = std::move(chars);
    for (size_t i = 0; i < v.chars.size(); ++i)
        v.to_id[static_cast<unsigned char>(v.chars[i])] = static_cast<int>(i);
    return v;
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (const char c : text) {
        const int id = to_id[static_cast<unsigned char>(c)];
        if (id < 0) {
            std::string what = "character not in vocabulary: ";
            if (std::isprint(static_cast<unsigned char>(c)) != 0)
                what += std::string("'") + c + "'";
            else
                what += "byte " + std::to_string(static_cast<int>(static_cast<unsigned char>(c)));
            throw IndexError(what);
        }
        ids.push_back(id);
    }
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (const int id : ids) {
        if (id < 0 || id >= size())
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(size()));
        out.push_back(chars[static_cast<size_t>(id)]);
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_train_val(const std::vector<int>& tokens,
                                                              double val_fraction,
                                                              int block_size) {
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw UsageError("validation fraction must lie strictly between 0 and 1 (got " +
                         std::to_string(val_fraction) + ")");
    const long long n = static_cast<long long>(tokens.size());
    const long long n_val = std::llround(static_cast<double>(n) * val_fraction);
    const long long n_train = n - n_val;
    const long long need = static_cast<long long>(block_size) + 2;
    if (n_train < need || n_val < need)
        throw DataError("split leaves " + std::to_string(n_train) + " train / " +
                        std::to_string(n_val) + " val tokens; both sides need at least " +
                        std::to_string(need) + " for context " + std::to_string(block_size));
    std::vector<int> train(tokens.begin(), tokens.begin() + n_train);
    std::vector<int> val(tokens.begin() + n_train, tokens.end());
    return {std::move(train), std::move(val)};
}

Batch next_batch(const std::vector<int>& stream, int b, int t_len, Rng& rng) {
    if (b < 1 || t_len < 1) throw UsageError("batch dimensions must be >= 1");
    const long long n = static_cast<long long>(stream.size());
    if (static_cast<long long>(t_len) >= n)
        throw DataError("stream of " + std::to_string(n) + " tokens too short for windows of " +
                        std::to_string(t_len));
    Batch batch;
    batch.b = b;
    batch.t = t_len;
    batch.inputs.resize(static_cast<size_t>(b) * t_len);
    batch.targets.resize(static_cast<size_t>(b) * t_len);
    const uint64_t max_off = static_cast<uint64_t>(n - t_len - 1);
    for (int i = 0; i < b; ++i) {
        const size_t off = static_cast<size_t>(rng.uniform_int(max_off + 1));
        for (int j = 0; j < t_len; ++j) {
            batch.inputs[static_cast<size_t>(i) * t_len + j] = stream[off + static_cast<size_t>(j)];
            batch.targets[static_cast<size_t>(i) * t_len + j] =
                stream[off + static_cast<size_t>(j) + 1];
        }
    }
    return batch;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw DataError("read failed: " + path);
    return ss.str();
}

void write_token_cache(const std::string& path, const Vocab& vocab,
                       const std::vector<int>& tokens) {
    if (vocab.size() > 65536) throw DataError("token cache supports at most 65536 vocabulary ids");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot open token cache for writing: " + path);
    const auto put = [&](const void* p, size_t sz) {
        if (std::fwrite(p, 1, sz, f.get()) != sz)
            throw DataError("token cache write failed: " + path);
    };
    put(kCacheMagic, sizeof kCacheMagic);
    put(&kCacheVersion, sizeof kCacheVersion);
    const uint32_t v = static_cast<uint32_t>(vocab.size());
    put(&v, sizeof v);
    put(vocab.chars.data(), vocab.chars.size());
    const uint64_t count = tokens.size();
    put(&count, sizeof count);
    std::vector<uint16_t> ids(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= vocab.size())
            throw IndexError("token id " + std::to_string(tokens[i]) +
                             " outside vocabulary of " + std::to_string(vocab.size()));
        ids[i] = static_cast<uint16_t>(tokens[i]);
    }
    put(ids.data(), ids.size() * sizeof(uint16_t));
    if (std::fflush(f.get()) != 0) throw DataError("token cache write failed: " + path);
}

std::pair<Vocab, std::vector<int>> read_token_cache(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open token cache: " + path);
    const auto get = [&](void* p, size_t sz) {
        if (std::fread(p, 1, sz, f.get()) != sz)
            throw DataError("token cache truncated: " + path);
    };
    char magic[8];
    get(magic, sizeof magic);
    if (std::memcmp(magic, kCacheMagic, sizeof kCacheMagic) != 0)
        throw DataError("not a token cache (bad magic): " + path);
    uint32_t version = 0;
    get(&version, sizeof version);
    if (version != kCacheVersion)
        throw DataError("unsupported token cache version " + std::to_string(version) + ": " +
                        path);
    uint32_t v = 0;
    get(&v, sizeof v);
    if (v == 0 || v > 65536)
        throw DataError("token cache corrupt (vocab size " + std::to_string(v) + "): " + path);
    std::string chars(v, '\0');
    get(chars.data(), chars.size());
    Vocab vocab = Vocab::from_chars(std::move(chars));
    uint64_t count = 0;
    get(&count, sizeof count);
    std::vector<uint16_t> ids(count);
    get(ids.data(), ids.size() * sizeof(uint16_t));
    std::vector<int> tokens(count);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v)
            throw DataError("token cache corrupt (id " + std::to_string(ids[i]) +
                            " outside vocab of " + std::to_string(v) + "): " + path);
        tokens[i] = ids[i];
    }
    return {std::move(vocab), std::move(tokens)};
}

bool is_token_cache(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) return false;
    char magic[8];
    if (std::fread(magic, 1, sizeof magic, f.get()) != sizeof magic) return false;
    return std::memcmp(magic, kCacheMagic, sizeof kCacheMagic) == 0;
}

std::pair<Vocab, std::vector<int>> load_corpus(const std::string& path) {
    if (is_token_cache(path)) return read_token_cache(path);
    const std::string text = read_text_file(path);
    Vocab vocab = Vocab::build(text);
    std::vector<int> tokens = vocab.encode(text);
    return {std::move(vocab), std::move(tokens)};
}

std::vector<std::pair<std::vector<int>, int>> load_labeled_task(const std::string& path,
                                                                const Vocab& vocab,
                                                                int n_classes) {
    const std::string text = read_text_file(path);
    std::vector<std::pair<std::vector<int>, int>> out;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        const std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string_view::npos)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected text<TAB>label");
        const std::string_view body = line.substr(0, tab);
        const std::string_view label_s = line.substr(tab + 1);
        if (body.empty())
            throw DataError(path + ":" + std::to_string(line_no) + ": empty example text");
        int label = 0;
        try {
            size_t used = 0;
            label = std::stoi(std::string(label_s), &used);
            if (used != label_s.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad label '" +
                            std::string(label_s) + "'");
        }
        if (label < 0 || label >= n_classes)
            throw DataError(path + ":" + std::to_string(line_no) + ": label " +
                            std::to_string(label) + " outside [0, " + std::to_string(n_classes) +
                            ")");
        out.emplace_back(vocab.encode(body), label);
    }
    if (out.empty()) throw DataError("no labeled examples in " + path);
    return out;
}

} // namespace attnlab
