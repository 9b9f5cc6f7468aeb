#include "s3ta/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace s3ta {
namespace {

std::atomic<int> g_max_threads{1};

}  // namespace

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

int max_threads() { return g_max_threads.load(); }

int parallel_chunks(std::size_t n) {
  if (n == 0) return 0;
  return static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(max_threads())));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& fn) {
  const int chunks = parallel_chunks(n);
  if (chunks == 0) return;
  if (chunks == 1) {
    fn(0, n, 0);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(chunks);
  for (int c = 0; c < chunks; ++c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    workers.emplace_back([&, begin, end, c] {
      try {
        fn(begin, end, c);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace s3ta
