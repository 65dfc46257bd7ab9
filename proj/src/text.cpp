#include "adaptagent/text.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "adaptagent/common.hpp"

namespace adaptagent {

namespace {

constexpr std::string_view kErrorNames[] = {
    "TaskSiteMismatch",   "InvalidElement",      "InvalidOperation", "AlreadyTerminated",
    "NoPath",             "EmptyElementList",    "ViewportTooSmall", "UnknownElement",
    "EmptyBatch",         "ShapeMismatch",       "InsufficientTasks", "NoPeerWebsite",
    "MissingDemonstration", "PreconditionFailed", "ReplayFailure",   "NotEnoughDemos",
    "ClientFailure",      "UnparseableResponse", "EmptyInput",       "MissingLiveSignal",
    "MalformedFile",      "IoFailure",           "SchemaMismatch",   "UnknownSite",
    "UnknownTask",        "InvalidArgument",
};

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::string_view error_name(ErrorCode code) { return kErrorNames[static_cast<int>(code)]; }

std::string_view to_string(Tag tag) {
    switch (tag) {
        case Tag::button: return "button";
        case Tag::link: return "link";
        case Tag::input: return "input";
        case Tag::select: return "select";
        case Tag::text: return "text";
    }
    return "text";
}

std::string_view to_string(Operation op) {
    switch (op) {
        case Operation::click: return "CLICK";
        case Operation::type: return "TYPE";
        case Operation::select: return "SELECT";
    }
    return "CLICK";
}

std::string_view to_string(Modality modality) {
    return modality == Modality::multimodal ? "multimodal" : "text";
}

Tag parse_tag(std::string_view s) {
    for (Tag t : {Tag::button, Tag::link, Tag::input, Tag::select, Tag::text}) {
        if (to_string(t) == s) return t;
    }
    throw Error(ErrorCode::MalformedFile, "unknown tag '" + std::string(s) + "'");
}

Operation parse_operation(std::string_view s) {
    const auto up = [&] {
        std::string u(s);
        for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return u;
    }();
    if (up == "CLICK") return Operation::click;
    if (up == "TYPE") return Operation::type;
    if (up == "SELECT") return Operation::select;
    throw Error(ErrorCode::InvalidOperation, "unknown operation '" + std::string(s) + "'");
}

Modality parse_modality(std::string_view s) {
    const auto l = lower(s);
    if (l == "multimodal") return Modality::multimodal;
    if (l == "text" || l == "text_only" || l == "text-only") return Modality::text_only;
    throw Error(ErrorCode::InvalidArgument, "unknown modality '" + std::string(s) + "'");
}

bool operation_allowed(Tag tag, Operation op) {
    switch (tag) {
        case Tag::button:
        case Tag::link:
        case Tag::text: return op == Operation::click;
        case Tag::input: return op == Operation::type;
        case Tag::select: return op == Operation::select;
    }
    return false;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else if (c < 128 && std::ispunct(c)) {
            continue;
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::set<std::string> unigram_set(std::string_view text) {
    auto tokens = tokenize(text);
    return {tokens.begin(), tokens.end()};
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::vector<double> hashed_embedding(const std::vector<std::string>& tokens, std::size_t dims) {
    std::vector<double> v(dims, 0.0);
    for (const auto& t : tokens) v[fnv1a64(t) % dims] += 1.0;
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm > 0) {
        for (auto& x : v) x /= norm;
    }
    return v;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t z = base ^ fnv1a64(tag);
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return derive_seed(base, std::to_string(index));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "Rng::below(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

std::vector<std::size_t> Rng::sample(std::size_t n, std::size_t k) {
    if (k > n) throw Error(ErrorCode::InvalidArgument, "sample size exceeds population");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + below(n - i)]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace adaptagent
