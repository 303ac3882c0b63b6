#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadtrack/bench.hpp"
#include "quadtrack/config.hpp"

namespace quadtrack {

/// One trained configuration of a factor study. `row` and `col` place it in
/// the comparison table; only the dynamics study uses a real grid.
struct AblationVariant {
  std::string name;
  RunConfig run;
  std::string row;
  std::string col;
};

/// Factors: 1 actor inputs, 2 time vector placement, 3 smoothness terms,
/// 4 SysID / DR modes, 5 number of parallel environments.
std::vector<AblationVariant> ablation_variants(int factor, const RunConfig& base);

/// Figure-eight cases used to score a factor (the dynamics study only flies
/// the normal speed).
SuiteConfig ablation_suite(int factor, int laps = 10);

struct AblationReport {
  int factor = 0;
  std::vector<AblationVariant> variants;
  std::vector<EvalReport> reports;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Trains every variant with the same seed, evaluates it on `suite` and writes
/// out_dir/<variant>/..., out_dir/report.json and out_dir/table.md.
AblationReport run_ablation(int factor, const RunConfig& base, const SuiteConfig& suite,
                            const std::filesystem::path& out_dir);

}  // namespace quadtrack
