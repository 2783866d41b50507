#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nflab/rng.hpp"

namespace nflab {

// Byte-level vocabulary: 256 raw bytes plus PAD and MASK specials.
constexpr int kPadToken = 256;
constexpr int kMaskToken = 257;
constexpr int kByteVocabSize = 258;

std::vector<int> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(const std::vector<int>& ids);  // inverse; rejects specials

struct Corpus {
    std::vector<int> train_tokens;
    std::vector<int> valid_tokens;
    int vocab_size = kByteVocabSize;

    // Splits by contiguous prefix: the first train_fraction of the tokens
    // becomes the train split, the rest the validation split.
    static Corpus from_text(std::string_view text, double train_fraction = 0.9);
    static Corpus from_files(const std::vector<std::string>& paths, double train_fraction = 0.9);
};

struct Batch {
    int batch_size = 0;
    int seq_len = 0;
    std::vector<int> inputs;        // [batch * seq], row-major
    std::vector<int> targets;       // [batch * seq]
    std::vector<uint8_t> loss_mask; // [batch * seq]

    const int* input_row(int b) const { return inputs.data() + static_cast<size_t>(b) * seq_len; }
    const int* target_row(int b) const { return targets.data() + static_cast<size_t>(b) * seq_len; }
    const uint8_t* mask_row(int b) const {
        return loss_mask.data() + static_cast<size_t>(b) * seq_len;
    }
};

// Deterministic next-token batches: the corpus is cut into non-overlapping
// windows of seq_len (+1 token of lookahead for the shifted target); each
// epoch visits every window exactly once in a seed-shuffled order. The final
// batch of an epoch may be short.
class ClmBatcher {
public:
    ClmBatcher(const std::vector<int>& tokens, int batch_size, int seq_len, uint64_t seed);
    Batch next();
    int windows_per_epoch() const { return n_windows_; }

private:
    void reshuffle();
    const std::vector<int>* tokens_;
    int batch_size_, seq_len_, n_windows_;
    std::vector<int> order_;
    int cursor_ = 0;
    Rng rng_;
};

// Masked-objective batches: positions are selected independently with
// probability mask_prob; selected inputs are 80% MASK, 10% a random byte,
// 10% unchanged. Targets hold the original tokens; loss_mask marks the
// selected positions.
class MlmBatcher {
public:
    MlmBatcher(const std::vector<int>& tokens, int batch_size, int seq_len, double mask_prob,
               uint64_t seed);
    Batch next();
    int windows_per_epoch() const { return n_windows_; }

private:
    void reshuffle();
    const std::vector<int>* tokens_;
    int batch_size_, seq_len_, n_windows_;
    double mask_prob_;
    std::vector<int> order_;
    int cursor_ = 0;
    Rng rng_;
};

// Deterministic pseudo-text: Zipf-weighted words over a fixed lowercase
// vocabulary with sentence punctuation. Gives a byte-level LM something
// learnable without shipping a real corpus.
std::string make_synthetic_corpus(size_t n_bytes, uint64_t seed);

}  // namespace nflab
