#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "microform/mockcloud.hpp"

namespace {
std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

bool split_host_port(const std::string& s, std::string& host, int& port) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) return false;
  host = s.substr(0, colon);
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    return false;
  }
  return !host.empty() && port >= 0 && port < 65536;
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-memory cloud simulator"};
  std::string listen = "127.0.0.1:8790";
  std::string state_file;
  bool sweep = false;
  app.add_option("--listen", listen, "host:port to serve on");
  app.add_option("--state-file", state_file, "load objects from and save them to this file");
  app.add_flag("--integrity-sweep", sweep, "re-check referential integrity after every mutation");
  CLI11_PARSE(app, argc, argv);

  std::string host;
  int port = 0;
  if (!split_host_port(listen, host, port)) {
    std::cerr << "mockcloud: invalid --listen value '" << listen << "'\n";
    return 1;
  }

  microform::mockcloud::MockCloud cloud({.integrity_sweep = sweep});
  if (!state_file.empty()) {
    std::ifstream in(state_file);
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        cloud.restore(nlohmann::json::parse(ss.str()));
      } catch (const std::exception& e) {
        std::cerr << "mockcloud: cannot load " << state_file << ": " << e.what() << "\n";
        return 1;
      }
    }
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  microform::mockcloud::Server server(cloud);
  try {
    server.start(host, port);
  } catch (const std::exception& e) {
    std::cerr << "mockcloud: " << e.what() << "\n";
    return 1;
  }
  std::cout << "mockcloud listening on " << host << ":" << server.port() << std::endl;
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();

  if (!state_file.empty()) {
    std::ofstream out(state_file, std::ios::trunc);
    out << cloud.snapshot().dump(2) << "\n";
    if (!out) {
      std::cerr << "mockcloud: cannot write " << state_file << "\n";
      return 1;
    }
  }
  return 0;
}
