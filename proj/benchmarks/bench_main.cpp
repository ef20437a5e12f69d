#include <benchmark/benchmark.h>

// The distro's benchmark_main archive carries mismatched LTO bytecode, so
// the driver lives here instead.
int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
