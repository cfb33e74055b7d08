#include <atomic>
#include <csignal>
#include <iostream>

#include "microform/cli.hpp"

namespace {
std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted.store(true); }
}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::vector<std::string> args(argv + 1, argv + argc);
  microform::cli::RunOptions opts;
  opts.interrupt = &g_interrupted;
  return microform::cli::run(args, std::cin, std::cout, std::cerr, opts);
}
