#include "nflab/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "nflab/errors.hpp"

namespace nflab {

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string detokenize_bytes(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id > 255) {
            throw ValueError("detokenize_bytes: id " + std::to_string(id) +
                             " is not a byte token");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

Corpus Corpus::from_text(std::string_view text, double train_fraction) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
        throw ValueError("corpus: train_fraction must be in (0,1)");
    }
    auto ids = tokenize_bytes(text);
    Corpus c;
    const size_t cut = static_cast<size_t>(static_cast<double>(ids.size()) * train_fraction);
    c.train_tokens.assign(ids.begin(), ids.begin() + static_cast<ptrdiff_t>(cut));
    c.valid_tokens.assign(ids.begin() + static_cast<ptrdiff_t>(cut), ids.end());
    return c;
}

Corpus Corpus::from_files(const std::vector<std::string>& paths, double train_fraction) {
    std::string text;
    for (const auto& p : paths) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw IoError("corpus: cannot open '" + p + "'");
        std::ostringstream ss;
        ss << is.rdbuf();
        text += ss.str();
    }
    return from_text(text, train_fraction);
}

ClmBatcher::ClmBatcher(const std::vector<int>& tokens, int batch_size, int seq_len,
                       uint64_t seed)
    : tokens_(&tokens),
      batch_size_(batch_size),
      seq_len_(seq_len),
      rng_(Rng(seed).split(1)) {  // stream 1: batch order
    if (batch_size < 1 || seq_len < 1) throw ValueError("batcher: batch_size and seq_len must be >= 1");
    if (static_cast<int64_t>(tokens.size()) < seq_len + 1) {
        throw ValueError("batcher: corpus has " + std::to_string(tokens.size()) +
                         " tokens, need at least seq_len+1 = " + std::to_string(seq_len + 1));
    }
    n_windows_ = static_cast<int>((tokens.size() - 1) / static_cast<size_t>(seq_len));
    reshuffle();
}

void ClmBatcher::reshuffle() {
    order_.resize(static_cast<size_t>(n_windows_));
    for (int i = 0; i < n_windows_; ++i) order_[static_cast<size_t>(i)] = i;
    for (int i = n_windows_ - 1; i > 0; --i) {
        const int j = rng_.uniform_int(i + 1);
        std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
    }
    cursor_ = 0;
}

Batch ClmBatcher::next() {
    if (cursor_ >= n_windows_) reshuffle();
    const int take = std::min(batch_size_, n_windows_ - cursor_);
    Batch b;
    b.batch_size = take;
    b.seq_len = seq_len_;
    b.inputs.resize(static_cast<size_t>(take) * seq_len_);
    b.targets.resize(static_cast<size_t>(take) * seq_len_);
    b.loss_mask.assign(static_cast<size_t>(take) * seq_len_, 1);
    for (int r = 0; r < take; ++r) {
        const int64_t start = static_cast<int64_t>(order_[static_cast<size_t>(cursor_ + r)]) * seq_len_;
        for (int j = 0; j < seq_len_; ++j) {
            b.inputs[static_cast<size_t>(r) * seq_len_ + j] = (*tokens_)[static_cast<size_t>(start + j)];
            b.targets[static_cast<size_t>(r) * seq_len_ + j] = (*tokens_)[static_cast<size_t>(start + j + 1)];
        }
    }
    cursor_ += take;
    return b;
}

MlmBatcher::MlmBatcher(const std::vector<int>& tokens, int batch_size, int seq_len,
                       double mask_prob, uint64_t seed)
    : tokens_(&tokens),
      batch_size_(batch_size),
      seq_len_(seq_len),
      mask_prob_(mask_prob),
      rng_(Rng(seed).split(1)) {
    if (batch_size < 1 || seq_len < 1) throw ValueError("batcher: batch_size and seq_len must be >= 1");
    if (mask_prob < 0.0 || mask_prob >= 1.0) {
        throw ValueError("batcher: mask_prob must be in [0,1)");
    }
    if (static_cast<int64_t>(tokens.size()) < seq_len) {
        throw ValueError("batcher: corpus has " + std::to_string(tokens.size()) +
                         " tokens, need at least seq_len = " + std::to_string(seq_len));
    }
    n_windows_ = static_cast<int>(tokens.size() / static_cast<size_t>(seq_len));
    reshuffle();
}

void MlmBatcher::reshuffle() {
    order_.resize(static_cast<size_t>(n_windows_));
    for (int i = 0; i < n_windows_; ++i) order_[static_cast<size_t>(i)] = i;
    for (int i = n_windows_ - 1; i > 0; --i) {
        const int j = rng_.uniform_int(i + 1);
        std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
    }
    cursor_ = 0;
}

Batch MlmBatcher::next() {
    if (cursor_ >= n_windows_) reshuffle();
    const int take = std::min(batch_size_, n_windows_ - cursor_);
    Batch b;
    b.batch_size = take;
    b.seq_len = seq_len_;
    b.inputs.resize(static_cast<size_t>(take) * seq_len_);
    b.targets.resize(static_cast<size_t>(take) * seq_len_);
    b.loss_mask.assign(static_cast<size_t>(take) * seq_len_, 0);
    for (int r = 0; r < take; ++r) {
        const int64_t start = static_cast<int64_t>(order_[static_cast<size_t>(cursor_ + r)]) * seq_len_;
        for (int j = 0; j < seq_len_; ++j) {
            const size_t idx = static_cast<size_t>(r) * seq_len_ + static_cast<size_t>(j);
            const int orig = (*tokens_)[static_cast<size_t>(start + j)];
            b.targets[idx] = orig;
            int input = orig;
            const bool selected = mask_prob_ > 0.0 && rng_.uniform() < mask_prob_;
            if (selected) {
                b.loss_mask[idx] = 1;
                const double r2 = rng_.uniform();
                if (r2 < 0.8) {
                    input = kMaskToken;
                } else if (r2 < 0.9) {
                    input = rng_.uniform_int(256);  // random byte; specials excluded
                }  // else: keep the original token
            }
            b.inputs[idx] = input;
        }
    }
    cursor_ += take;
    return b;
}

std::string make_synthetic_corpus(size_t n_bytes, uint64_t seed) {
    Rng rng = Rng(seed).split(7);
    // Fixed pseudo-word vocabulary with Zipf weights.
    constexpr int kWords = 256;
    std::vector<std::string> words;
    words.reserve(kWords);
    Rng word_rng = Rng(0xabcdef1234ULL);
    for (int i = 0; i < kWords; ++i) {
        const int len = 2 + word_rng.uniform_int(7);
        std::string w;
        for (int j = 0; j < len; ++j) {
            // Vowel/consonant alternation keeps the byte statistics word-like.
            const char* vowels = "aeiou";
            const char* consonants = "bcdfghjklmnpqrstvwz";
            w.push_back(j % 2 == 0 ? consonants[word_rng.uniform_int(19)]
                                   : vowels[word_rng.uniform_int(5)]);
        }
        words.push_back(w);
    }
    std::vector<double> cum(kWords);
    double total = 0.0;
    for (int i = 0; i < kWords; ++i) {
        total += 1.0 / std::pow(i + 1.0, 1.1);
        cum[static_cast<size_t>(i)] = total;
    }

    std::string out;
    out.reserve(n_bytes + 16);
    int sentence_left = 6 + rng.uniform_int(10);
    bool sentence_start = true;
    while (out.size() < n_bytes) {
        const double u = rng.uniform() * total;
        int w = 0;
        while (w < kWords - 1 && cum[static_cast<size_t>(w)] < u) ++w;
        std::string word = words[static_cast<size_t>(w)];
        if (sentence_start) {
            word[0] = static_cast<char>(word[0] - 'a' + 'A');
            sentence_start = false;
        } else {
            out.push_back(' ');
        }
        out += word;
        if (--sentence_left <= 0) {
            out += ".";
            out.push_back(rng.uniform() < 0.25 ? '\n' : ' ');
            sentence_left = 6 + rng.uniform_int(10);
            sentence_start = true;
        }
    }
    out.resize(n_bytes);
    return out;
}

}  // namespace nflab
