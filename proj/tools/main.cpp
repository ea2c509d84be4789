// Command-line entry point. Subcommands are registered as the pipeline
// stages come online.

#include <cstdio>

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::puts("auscult: no subcommands wired yet");
    return 0;
}
