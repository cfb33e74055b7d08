#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "microform/state.hpp"

namespace {
std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Remote state server"};
  std::string host = "127.0.0.1";
  int port = 8791;
  std::string state_file = "microform.tfstate";
  app.add_option("--host", host, "address to bind");
  app.add_option("--port", port, "port to bind (0 picks a free one)")->check(CLI::Range(0, 65535));
  app.add_option("--state-file", state_file, "backing state file");
  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  microform::StateServer server(state_file);
  try {
    server.start(host, port);
  } catch (const std::exception& e) {
    std::cerr << "microform-state-server: " << e.what() << "\n";
    return 1;
  }
  std::cout << "state server listening on " << host << ":" << server.port() << std::endl;
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}
