#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnlab/rng.hpp"

namespace attnlab {

// Character-level vocabulary: sorted unique corpus characters mapped to
// dense ids [0, V).
struct Vocab {
    std::string chars;            // id -> char
    std::array<int, 256> to_id{}; // char -> id, -1 when absent

    static Vocab build(std::string_view corpus);      // DataError on empty corpus
    static Vocab from_chars(std::string chars);       // chars must be sorted unique
    int size() const { return static_cast<int>(chars.size()); }
    std::vector<int> encode(std::string_view text) const; // IndexError on unknown char
    std::string decode(std::span<const int> ids) const;   // IndexError on bad id
};

// Contiguous suffix split: first (1 - val_fraction) of the stream is train,
// the rest is validation. Both sides must exceed block_size + 1 tokens.
std::pair<std::vector<int>, std::vector<int>> split_train_val(const std::vector<int>& tokens,
                                                              double val_fraction,
                                                              int block_size);

struct Batch {
    int b = 0;
    int t = 0;
    std::vector<int> inputs;  // [b][t] row-major
    std::vector<int> targets; // inputs shifted one position ahead in the stream
};

// b random offsets, drawn one after another from rng, so a batch of 4k
// equals four consecutive batches of k (gradient-accumulation equivalence
// relies on this).
Batch next_batch(const std::vector<int>& stream, int b, int t_len, Rng& rng);

std::string read_text_file(const std::string& path); // DataError when unreadable

// Token cache: "ATNLABTC", u32 version, u32 vocab size, vocab chars,
// u64 count, little-endian u16 ids. Requires vocab <= 65536.
void write_token_cache(const std::string& path, const Vocab& vocab,
                       const std::vector<int>& tokens);
std::pair<Vocab, std::vector<int>> read_token_cache(const std::string& path);
bool is_token_cache(const std::string& path);

// Reads either a plain-text corpus or a token cache, keyed on the magic.
std::pair<Vocab, std::vector<int>> load_corpus(const std::string& path);

// Lines of "text<TAB>label" -> (token ids, label). DataError on malformed
// lines or labels outside [0, n_classes).
std::vector<std::pair<std::vector<int>, int>> load_labeled_task(const std::string& path,
                                                                const Vocab& vocab,
                                                                int n_classes);

} // namespace attnlab
