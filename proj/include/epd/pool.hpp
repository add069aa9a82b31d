#pragma once

#include <cstddef>
#include <cstdlib>
#include <mutex>
#include <new>
#include <unordered_map>
#include <vector>

// Size-keyed cache for large tensor buffers. Training allocates the same
// shapes every step; handing blocks back instead of returning them to the OS
// avoids refaulting hundreds of MB per step.

namespace epd {

class BufferPool {
 public:
  static constexpr std::size_t kMinPooledBytes = std::size_t{1} << 16;

  static BufferPool& instance() {
    static BufferPool* pool = new BufferPool();  // leaked: outlives static tensors
    return *pool;
  }

  void* allocate(std::size_t bytes) {
    if (bytes >= kMinPooledBytes) {
      std::lock_guard lock(mu_);
      auto it = free_.find(bytes);
      if (it != free_.end() && !it->second.empty()) {
        void* p = it->second.back();
        it->second.pop_back();
        cached_ -= bytes;
        return p;
      }
    }
    void* p = std::aligned_alloc(64, (bytes + 63) / 64 * 64);
    if (!p) {
      release();
      p = std::aligned_alloc(64, (bytes + 63) / 64 * 64);
      if (!p) throw std::bad_alloc();
    }
    return p;
  }

  void deallocate(void* p, std::size_t bytes) noexcept {
    if (bytes >= kMinPooledBytes) {
      std::lock_guard lock(mu_);
      if (cached_ + bytes <= limit_) {
        try {
          free_[bytes].push_back(p);
          cached_ += bytes;
          return;
        } catch (...) {
        }
      }
    }
    std::free(p);
  }

  /// Frees every cached block.
  void release() noexcept {
    std::lock_guard lock(mu_);
    for (auto& [bytes, blocks] : free_) {
      for (void* p : blocks) std::free(p);
    }
    free_.clear();
    cached_ = 0;
  }

  void set_limit(std::size_t bytes) {
    {
      std::lock_guard lock(mu_);
      limit_ = bytes;
    }
    if (cached() > bytes) release();
  }

  [[nodiscard]] std::size_t cached() const {
    std::lock_guard lock(mu_);
    return cached_;
  }

 private:
  BufferPool() = default;

  mutable std::mutex mu_;
  std::unordered_map<std::size_t, std::vector<void*>> free_;
  std::size_t cached_ = 0;
  std::size_t limit_ = std::size_t{3} << 30;
};

template <class T>
struct PoolAllocator {
  using value_type = T;

  PoolAllocator() noexcept = default;
  template <class U>
  PoolAllocator(const PoolAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(BufferPool::instance().allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { BufferPool::instance().deallocate(p, n * sizeof(T)); }

  template <class U>
  bool operator==(const PoolAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace epd
