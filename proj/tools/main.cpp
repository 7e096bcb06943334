#include <cstdio>

int main() {
  std::puts("notebert: CLI under construction");
  return 0;
}
