#include "magat/case_io.hpp"

#include <fstream>
#include <stdexcept>

namespace magat {

using nlohmann::json;

namespace {

json cells_to_json(const std::vector<Cell>& cells) {
  json arr = json::array();
  for (Cell c : cells) arr.push_back({c.x, c.y});
  return arr;
}

std::vector<Cell> cells_from_json(const json& j) {
  std::vector<Cell> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) throw std::runtime_error("cell must be [x, y]");
    out.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  return out;
}

void expect_schema(const json& j, const char* schema) {
  if (!j.contains("schema") || j["schema"] != schema)
    throw std::runtime_error(std::string("expected schema ") + schema);
}

}  // namespace

json case_to_json(const GridWorldCase& c) {
  json j;
  j["schema"] = kCaseSchema;
  j["case_id"] = c.case_id;
  j["width"] = c.map.width();
  j["height"] = c.map.height();
  j["obstacles"] = cells_to_json(c.map.obstacles());
  j["starts"] = cells_to_json(c.starts);
  j["goals"] = cells_to_json(c.goals);
  if (c.expert_paths) {
    json paths = json::array();
    for (const auto& p : *c.expert_paths) paths.push_back(encode_actions(p));
    j["expert_paths"] = std::move(paths);
  } else {
    j["expert_paths"] = nullptr;
  }
  j["seed"] = c.rng_seed;
  return j;
}

GridWorldCase case_from_json(const json& j) {
  expect_schema(j, kCaseSchema);
  try {
    GridWorldCase c;
    const std::vector<Cell> obstacles = cells_from_json(j.at("obstacles"));
    c.map = GridMap(j.at("width").get<int>(), j.at("height").get<int>(), obstacles);
    c.starts = cells_from_json(j.at("starts"));
    c.goals = cells_from_json(j.at("goals"));
    c.case_id = j.at("case_id").get<std::string>();
    c.rng_seed = j.at("seed").get<std::uint64_t>();
    const json& paths = j.at("expert_paths");
    if (!paths.is_null()) {
      std::vector<std::vector<Action>> decoded;
      for (const auto& p : paths) decoded.push_back(decode_actions(p.get<std::string>()));
      c.expert_paths = std::move(decoded);
    }
    check_case(c);
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed case record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid case record: ") + e.what());
  }
}

void write_cases(std::ostream& os, const std::vector<GridWorldCase>& cases) {
  for (const auto& c : cases) os << case_to_json(c).dump() << '\n';
}

std::vector<GridWorldCase> read_cases(std::istream& is) {
  std::vector<GridWorldCase> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(case_from_json(json::parse(line)));
  }
  return out;
}

void save_cases(const std::filesystem::path& path, const std::vector<GridWorldCase>& cases) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_cases(os, cases);
}

std::vector<GridWorldCase> load_cases(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_cases(is);
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["schema"] = kManifestSchema;
  j["cases_file"] = m.cases_file;
  j["config"] = m.config;
  j["splits"] = {{"train", m.split.train}, {"valid", m.split.valid}, {"test", m.split.test}};
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  expect_schema(j, kManifestSchema);
  DatasetManifest m;
  m.cases_file = j.at("cases_file").get<std::string>();
  m.config = j.value("config", json::object());
  const json& s = j.at("splits");
  m.split.train = s.at("train").get<std::vector<std::string>>();
  m.split.valid = s.at("valid").get<std::vector<std::string>>();
  m.split.test = s.at("test").get<std::vector<std::string>>();
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << manifest_to_json(m).dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return manifest_from_json(json::parse(is));
}

}  // namespace magat
