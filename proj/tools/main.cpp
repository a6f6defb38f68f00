#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "dialectid/cli.hpp"
#include "dialectid/interrupt.hpp"

namespace {

extern "C" void on_signal(int) { dialectid::request_interrupt(); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::vector<std::string> args(argv + 1, argv + argc);
  return dialectid::cli::run(args, std::cout, std::cerr);
}
