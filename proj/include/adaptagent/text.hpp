#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace adaptagent {

// Lowercases, removes ASCII punctuation and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::set<std::string> unigram_set(std::string_view text);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

// Bucket-summed FNV-1a unigram counts, L2-normalized. An empty token list
// yields the zero vector.
std::vector<double> hashed_embedding(const std::vector<std::string>& tokens, std::size_t dims);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Mixes a base seed with a tag so independent streams never share state.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Seeded generator with fully specified draws. Standard distributions are
// implementation-defined, so every draw here goes through mt19937_64 bits
// directly and is identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n) by rejection; n must be positive.
    std::size_t below(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    // k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample(std::size_t n, std::size_t k);

    template <class T>
    const T& pick(const std::vector<T>& items) {
        return items[below(items.size())];
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace adaptagent
