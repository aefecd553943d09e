#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "magat/gridworld.hpp"

namespace magat {

inline constexpr const char* kCaseSchema = "magat.case/1";
inline constexpr const char* kManifestSchema = "magat.manifest/1";

nlohmann::json case_to_json(const GridWorldCase& c);
/// Throws std::runtime_error on a schema mismatch or malformed record.
GridWorldCase case_from_json(const nlohmann::json& j);

/// One JSON record per line.
void write_cases(std::ostream& os, const std::vector<GridWorldCase>& cases);
std::vector<GridWorldCase> read_cases(std::istream& is);
void save_cases(const std::filesystem::path& path, const std::vector<GridWorldCase>& cases);
std::vector<GridWorldCase> load_cases(const std::filesystem::path& path);

struct DatasetManifest {
  DatasetSplit split;
  std::string cases_file;    // relative to the manifest
  nlohmann::json config;     // generating configuration, echoed verbatim
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace magat
