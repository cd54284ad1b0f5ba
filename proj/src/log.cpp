#include "sfpca/log.hpp"

#include <atomic>
#include <iostream>

namespace sfpca {

namespace {
std::atomic<bool> g_quiet{false};
}

void warn(std::string_view message) {
  if (g_quiet.load(std::memory_order_relaxed)) return;
#pragma omp critical(sfpca_warn)
  std::cerr << "sfpca: warning: " << message << '\n';
}

void set_quiet(bool q) { g_quiet.store(q, std::memory_order_relaxed); }

bool quiet() { return g_quiet.load(std::memory_order_relaxed); }

} // namespace sfpca
