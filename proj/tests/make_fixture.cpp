// Writes a deterministic PIMA-schema fixture CSV: make_fixture <path> <rows> <positives> [seed]
#include <cstdlib>
#include <iostream>

#include "fixture.hpp"

int main(int argc, char** argv) {
  if (argc < 4) {
    std::cerr << "usage: make_fixture <path> <rows> <positives> [seed]\n";
    return 2;
  }
  const int rows = std::atoi(argv[2]);
  const int positives = std::atoi(argv[3]);
  const std::uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 99;
  fixture::write_csv(fixture::pima_like(rows, positives, seed), argv[1]);
  return 0;
}
