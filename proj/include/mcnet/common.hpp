#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcnet {

using Shape = std::vector<int64_t>;

/// Allocator that default-initializes trivial types, so resize() skips the
/// zero-fill pass. Tensor buffers are written in full by each op; the extra
/// memset costs real time on low-bandwidth machines.
template <typename T>
struct UninitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = UninitAlloc<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0)
      ::new (static_cast<void*>(p)) U;
    else
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Buffer = std::vector<T, UninitAlloc<T>>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Thrown for malformed user input (CLI flags, config files). Maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Runtime failures (solver non-convergence, IO, checksum...). Maps to exit code 1.
struct RuntimeFail : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic parallelism.
//
// Work is split into independent units (rows, samples, channel planes); each
// unit is computed serially by exactly one thread, so results are bitwise
// identical for any thread count. Thread count comes from MCNET_THREADS
// (default: hardware concurrency).

int thread_count();

/// Calls fn(begin, end) over a partition of [0, n). fn must write disjoint
/// outputs per index. Runs inline when n is small or nested.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64-based so streams are identical across
// platforms (std::normal_distribution is implementation-defined; this is not).

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n), unbiased.
  uint64_t below(uint64_t n);

 private:
  uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Derives an independent stream seed from a base seed and a path of indices,
/// e.g. derive_seed(seed, {kAugment, epoch, batch}).
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path);

/// Fisher-Yates with explicit draws; stable across platforms unlike std::shuffle.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// Stream tags for derive_seed paths.
enum SeedStream : uint64_t {
  kSeedInit = 1,
  kSeedShuffle = 2,
  kSeedAugment = 3,
  kSeedEmbed = 4,
  kSeedSynth = 5,
  kSeedSplit = 6,
};

// ---------------------------------------------------------------------------

uint32_t crc32_bytes(const void* data, size_t len, uint32_t seed = 0);

/// When enabled, every op output is scanned for NaN/Inf and throws on hit.
/// On by default in tests and `mcnet verify`; training checks losses instead.
bool& finite_checks();

}  // namespace mcnet
