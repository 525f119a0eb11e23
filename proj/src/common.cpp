#include "mcnet/common.hpp"

#include <zlib.h>

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mcnet {

namespace {

// Tensor buffers are multi-megabyte and short-lived; keep them on the free
// list instead of bouncing pages through mmap/munmap on every op.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning malloc_tuning;

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Thread pool: persistent workers, chunked index ranges, caller participates.

namespace {

class Pool {
 public:
  static Pool& get() {
    static Pool pool;
    return pool;
  }

  int lanes() const { return lanes_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    // One contiguous chunk per lane; each index handled by exactly one lane.
    std::unique_lock<std::mutex> lk(m_);
    job_fn_ = &fn;
    job_n_ = n;
    pending_ = lanes_ - 1;
    ++generation_;
    lk.unlock();
    cv_.notify_all();

    run_lane(0);

    std::unique_lock<std::mutex> wait(m_);
    done_cv_.wait(wait, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() {
    int want = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MCNET_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) want = v;
    }
    lanes_ = want < 1 ? 1 : want;
    for (int i = 1; i < lanes_; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void run_lane(int lane);

  void worker_loop(int lane) {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(m_);
      cv_.wait(lk, [&] { return generation_ != seen; });
      seen = generation_;
      if (stop_) return;
      lk.unlock();
      run_lane(lane);
      lk.lock();
      if (--pending_ == 0) {
        lk.unlock();
        done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  int lanes_ = 1;
};

thread_local bool in_parallel_region = false;

void Pool::run_lane(int lane) {
  bool was = in_parallel_region;
  in_parallel_region = true;  // nested parallel_for inside fn runs inline
  int64_t n = job_n_;
  int64_t lo = n * lane / lanes_;
  int64_t hi = n * (lane + 1) / lanes_;
  if (lo < hi) (*job_fn_)(lo, hi);
  in_parallel_region = was;
}

}  // namespace

int thread_count() { return Pool::get().lanes(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  if (n == 1 || in_parallel_region || Pool::get().lanes() == 1) {
    bool was = in_parallel_region;
    in_parallel_region = true;
    fn(0, n);
    in_parallel_region = was;
    return;
  }
  Pool::get().run(n, fn);
}

// ---------------------------------------------------------------------------

namespace {
inline uint64_t splitmix64(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  // Box-Muller; u1 in (0,1] to keep log finite.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw RuntimeFail("Rng::below(0)");
  uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % n);
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path) {
  uint64_t s = base ^ 0x6a09e667f3bcc908ULL;
  splitmix64(s);
  for (uint64_t p : path) {
    s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64(s);
  }
  uint64_t out = s;
  return splitmix64(out);
}

uint32_t crc32_bytes(const void* data, size_t len, uint32_t seed) {
  return static_cast<uint32_t>(
      ::crc32(seed, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

bool& finite_checks() {
  static bool on = false;
  return on;
}

}  // namespace mcnet
