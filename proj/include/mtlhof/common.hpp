#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtlhof {

// ---------------------------------------------------------------------------
// Error taxonomy. Every failure surfaces as an Error with a stable category
// name so the CLI can emit a single machine-parsable line.
// ---------------------------------------------------------------------------

enum class ErrorCategory {
    shape,
    unsupported_op,
    contract,
    config,
    data,
    vocab,
    length,
    task,
    checkpoint_format,
    checkpoint_integrity,
    divergence,
    io,
    usage,
};

inline const char* error_category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::unsupported_op: return "unsupported-op";
        case ErrorCategory::contract: return "contract";
        case ErrorCategory::config: return "config";
        case ErrorCategory::data: return "data";
        case ErrorCategory::vocab: return "vocab";
        case ErrorCategory::length: return "length";
        case ErrorCategory::task: return "task";
        case ErrorCategory::checkpoint_format: return "checkpoint-format";
        case ErrorCategory::checkpoint_integrity: return "checkpoint-integrity";
        case ErrorCategory::divergence: return "divergence";
        case ErrorCategory::io: return "io";
        case ErrorCategory::usage: return "usage";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }
    const char* category_name() const noexcept { return error_category_name(category_); }

private:
    ErrorCategory category_;
};

#define MTLHOF_DEFINE_ERROR(Name, Cat)                         \
    class Name : public Error {                                \
    public:                                                    \
        explicit Name(const std::string& message)              \
            : Error(ErrorCategory::Cat, message) {}            \
    }

MTLHOF_DEFINE_ERROR(ShapeError, shape);
MTLHOF_DEFINE_ERROR(UnsupportedOpError, unsupported_op);
MTLHOF_DEFINE_ERROR(ContractError, contract);
MTLHOF_DEFINE_ERROR(ConfigError, config);
MTLHOF_DEFINE_ERROR(DataError, data);
MTLHOF_DEFINE_ERROR(VocabError, vocab);
MTLHOF_DEFINE_ERROR(LengthError, length);
MTLHOF_DEFINE_ERROR(TaskError, task);
MTLHOF_DEFINE_ERROR(CheckpointFormatError, checkpoint_format);
MTLHOF_DEFINE_ERROR(CheckpointIntegrityError, checkpoint_integrity);
MTLHOF_DEFINE_ERROR(DivergenceError, divergence);
MTLHOF_DEFINE_ERROR(IoError, io);
MTLHOF_DEFINE_ERROR(UsageError, usage);

#undef MTLHOF_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 is portable across compilers and platforms,
// which keeps seeded runs bit-reproducible; std::mt19937 distributions are
// implementation-defined and would not be.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Derives independent seed streams from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t s = seed ^ (salt + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    return splitmix64(s);
}

inline std::uint64_t tag_hash(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t salt = 0) {
    return mix_seed(mix_seed(seed, tag_hash(tag)), salt);
}

}  // namespace mtlhof
