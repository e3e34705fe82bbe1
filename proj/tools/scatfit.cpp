#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "scatfit/cli.hpp"

namespace {

extern "C" void on_signal(int) { scatfit::request_shutdown(); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::vector<std::string> args(argv, argv + argc);
  return scatfit::run_cli(args, std::cout, std::cerr);
}
