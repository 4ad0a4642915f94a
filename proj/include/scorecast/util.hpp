#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace scorecast {

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double x) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline double parse_double(std::string_view tok, const std::string& context) {
  if (tok.empty())
    throw std::runtime_error("empty numeric field in " + context);
  char* end = nullptr;
  std::string s(tok);
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw std::runtime_error("cannot parse number '" + s + "' in " + context);
  return v;
}

/// Splits one CSV line on commas; trims a trailing '\r'. No quoting support.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// splitmix64; used to derive independent RNG streams from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs fn(0..n_tasks-1) on up to n_threads workers. Rethrows the first
/// worker exception. Task order within a worker is by increasing index.
inline void parallel_for(std::size_t n_tasks, unsigned n_threads,
                         const std::function<void(std::size_t)>& fn) {
  if (n_tasks == 0) return;
  if (n_threads == 0) n_threads = 1;
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_tasks));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline unsigned default_thread_count() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1u : n;
}

}  // namespace scorecast
