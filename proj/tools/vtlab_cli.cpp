#include <cstdio>

int main() {
  std::puts("vtlab: subcommands coming online");
  return 0;
}
