// Writes the synthetic CIFAR-10 fixture: synth <dir> <records per train file> <test records> <seed>
#include <cstdio>
#include <cstdlib>

#include "d2nn/d2nn.h"

int main(int argc, char** argv) {
  if (argc != 5) {
    std::fprintf(stderr, "usage: %s <dir> <records per train file> <test records> <seed>\n", argv[0]);
    return 1;
  }
  const d2nn_status st = d2nn_write_synthetic_cifar(argv[1], std::strtoull(argv[2], nullptr, 10),
                                                    std::strtoull(argv[3], nullptr, 10),
                                                    std::strtoull(argv[4], nullptr, 10));
  if (st != D2NN_OK) {
    std::fprintf(stderr, "%s: %s\n", d2nn_status_name(st), d2nn_last_error());
    return 1;
  }
  return 0;
}
