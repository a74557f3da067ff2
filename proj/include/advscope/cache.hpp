#pragma once

#include <cstddef>
#include <functional>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

namespace advscope {

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t evictions = 0;
  std::size_t bytes = 0;
  std::size_t entries = 0;
};

/// Byte-budgeted LRU cache with single-flight computation: concurrent
/// requests for a missing key wait on one computation. Values are handed out
/// as shared_ptr, so eviction never invalidates a value still in use.
template <typename V>
class LruCache {
 public:
  using Ptr = std::shared_ptr<const V>;
  using SizeFn = std::function<std::size_t(const V&)>;

  LruCache(std::size_t byte_budget, SizeFn size_of) : budget_(byte_budget), size_of_(std::move(size_of)) {}

  /// Returns the cached value or runs compute() once for all concurrent
  /// callers. `hit` reports whether this caller avoided the computation.
  Ptr get_or_compute(const std::string& key, const std::function<V()>& compute, bool* hit = nullptr) {
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(key); it != index_.end()) {
      order_.splice(order_.begin(), order_, it->second.position);
      ++stats_.hits;
      if (hit) *hit = true;
      return it->second.value;
    }
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      auto future = it->second;
      ++stats_.hits;
      lock.unlock();
      if (hit) *hit = true;
      return future.get();
    }
    std::promise<Ptr> promise;
    std::shared_future<Ptr> future = promise.get_future().share();
    inflight_.emplace(key, future);
    ++stats_.misses;
    lock.unlock();
    if (hit) *hit = false;

    Ptr value;
    try {
      value = std::make_shared<const V>(compute());
    } catch (...) {
      promise.set_exception(std::current_exception());
      lock.lock();
      inflight_.erase(key);
      throw;
    }
    promise.set_value(value);
    lock.lock();
    inflight_.erase(key);
    insert_locked(key, value);
    return value;
  }

  Ptr find(const std::string& key) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second.position);
    return it->second.value;
  }

  void put(const std::string& key, Ptr value) {
    std::lock_guard lock(mutex_);
    insert_locked(key, std::move(value));
  }

  CacheStats stats() const {
    std::lock_guard lock(mutex_);
    CacheStats s = stats_;
    s.entries = index_.size();
    return s;
  }

 private:
  struct Entry {
    Ptr value;
    std::size_t bytes = 0;
    std::list<std::string>::iterator position;
  };

  void insert_locked(const std::string& key, Ptr value) {
    if (auto it = index_.find(key); it != index_.end()) {
      stats_.bytes -= it->second.bytes;
      order_.erase(it->second.position);
      index_.erase(it);
    }
    const std::size_t bytes = size_of_(*value);
    order_.push_front(key);
    index_.emplace(key, Entry{std::move(value), bytes, order_.begin()});
    stats_.bytes += bytes;
    // The newest entry always stays, even when it alone exceeds the budget.
    while (stats_.bytes > budget_ && order_.size() > 1) {
      const std::string& victim = order_.back();
      auto it = index_.find(victim);
      stats_.bytes -= it->second.bytes;
      index_.erase(it);
      order_.pop_back();
      ++stats_.evictions;
    }
  }

  mutable std::mutex mutex_;
  std::size_t budget_;
  SizeFn size_of_;
  std::list<std::string> order_;
  std::unordered_map<std::string, Entry> index_;
  std::unordered_map<std::string, std::shared_future<Ptr>> inflight_;
  CacheStats stats_;
};

}  // namespace advscope
