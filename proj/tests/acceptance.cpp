#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "kgmem/verify/checks.hpp"

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-10"};
  std::filesystem::path scratch = std::filesystem::temp_directory_path() / "kgmem_acceptance";
  bool quick = false;
  app.add_option("--scratch", scratch, "working directory for throwaway runs");
  app.add_flag("--quick", quick, "skip the reduced-scale experiments (6, 7)");
  CLI11_PARSE(app, argc, argv);

  std::filesystem::remove_all(scratch);
  std::filesystem::create_directories(scratch);
  const auto results = kgmem::verify::run_checks(!quick, scratch, [](const auto& r) {
    std::cout << kgmem::verify::format_result(r) << std::endl;
  });
  int failed = 0;
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
