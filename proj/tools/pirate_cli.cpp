// Placeholder entry point; subcommands are wired up once the library lands.
#include <cstdio>

int main() {
  std::puts("pirate: no subcommands built yet");
  return 1;
}
