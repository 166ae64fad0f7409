#pragma once

#include "bexp/config.hpp"
#include "bexp/evalkit.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bexp {

// Generated from cfg.dataset with the run seed, or read from
// cfg.dataset_csv_dir (dataset.csv, dataset_id_test.csv, dataset_ood_test.csv).
DatasetBundle load_data(const RunConfig& cfg, std::uint64_t seed);

// Hash of every field that affects results (not out_dir, jobs, dump_data).
std::string config_fingerprint(const RunConfig& cfg);

// One pipeline run. Training failures do not throw: the report comes back
// with status "failed" and the message in `error`.
RunReport execute_run(const RunConfig& cfg, std::uint64_t seed, Arm arm = Arm::full);

// Each command writes its files under cfg.out_dir and returns the process exit
// code: 0 iff every run finished and every file was written.
int cmd_run(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);
int cmd_sweep_t(const RunConfig& cfg, const std::vector<std::size_t>& steps, std::ostream& log);
int cmd_gen_data(const RunConfig& cfg, std::ostream& log);

void write_text(const std::filesystem::path& path, const std::string& content);

} // namespace bexp
