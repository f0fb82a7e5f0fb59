#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kfwc {

// Error taxonomy. The C API and the CLI map these onto status/exit codes:
// ConfigError -> 2, ArtifactError -> 3, NumericError -> 4, anything else -> 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing, corrupt or incompatible on-disk artifact (dataset, image, checkpoint).
class ArtifactError : public std::runtime_error {
 public:
  explicit ArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values encountered during compute.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an API contract (shape mismatch, empty batch, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// FNV-1a, 64 bit. Used for config hashes, parameter checksums and seed
// derivation; stability across runs on one machine is all that is required.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(uint64_t v);

// Deterministic sub-stream seeds. The documented per-sample augmentation rule
// is derive_seed(run_seed, "aug", epoch, fnv1a64(sample_id)).
inline uint64_t derive_seed(uint64_t base, std::string_view tag,
                            uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = fnv1a64(&base, sizeof(base));
  h = fnv1a64(tag, h);
  h = fnv1a64(&a, sizeof(a), h);
  h = fnv1a64(&b, sizeof(b), h);
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Runs fn(i) for i in [0, n). Work is split into contiguous stripes, one per
// worker; fn must only touch state owned by index i so results do not depend
// on the worker count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

int default_thread_count();

}  // namespace kfwc
