#ifndef SPINNET_IO_HPP
#define SPINNET_IO_HPP

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spinnet/errors.hpp"

#ifndef SPINNET_VERSION
#define SPINNET_VERSION "0.0.0"
#endif

namespace spinnet::io {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Output directory for one run. Every file is written at most once; an existing file with
/// the same name is an error rather than being overwritten.
class RunDirectory {
 public:
  RunDirectory(fs::path root, nlohmann::json resolved_config, std::uint64_t seed)
      : root_(std::move(root)),
        config_(std::move(resolved_config)),
        seed_(seed),
        start_(std::chrono::steady_clock::now()),
        timestamp_(utc_timestamp()) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_))
      throw ConfigError("cannot create output directory '" + root_.string() + "'" +
                        (ec ? ": " + ec.message() : std::string()));
    const fs::path probe = root_ / ".spinnet-write-probe";
    {
      std::ofstream f(probe);
      if (!f) throw ConfigError("output directory '" + root_.string() + "' is not writable");
    }
    fs::remove(probe, ec);
  }

  const fs::path& root() const { return root_; }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

  void write_text(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const fs::path p = root_ / name;
    if (fs::exists(p))
      throw ConfigError("refusing to overwrite '" + p.string() + "' (run directories are write-once)");
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot open '" + p.string() + "' for writing");
    body(f);
    f.flush();
    if (!f) throw ConfigError("write to '" + p.string() + "' failed");
    artifacts_.push_back(name);
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write_text(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }

  /// Summary JSON with the manifest embedded under "manifest".
  void write_summary(const std::string& name, nlohmann::json j) {
    j["manifest"] = manifest();
    j["manifest"]["artifacts"].push_back(name);
    write_json(name, j);
  }

  nlohmann::json manifest() const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return {{"config", config_},
            {"seed", seed_},
            {"version", SPINNET_VERSION},
            {"wall_time_s", wall},
            {"timestamp_utc", timestamp_},
            {"artifacts", artifacts_}};
  }

  /// Writes manifest.json listing every artifact produced so far.
  void finalize() {
    nlohmann::json m = manifest();
    m["artifacts"].push_back("manifest.json");
    write_json("manifest.json", m);
  }

 private:
  fs::path root_;
  nlohmann::json config_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  std::string timestamp_;
  std::vector<std::string> artifacts_;
};

/// Numeric columns of a CSV file. A first line that does not parse as numbers is taken as
/// the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read data file '" + path.string() + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::vector<double> row;
    bool numeric = true;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (c.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (t.header.empty() && t.columns.empty()) {
        t.header = cells;
        continue;
      }
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": non-numeric row");
    }
    if (t.columns.empty()) t.columns.resize(row.size());
    if (row.size() != t.columns.size())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    for (std::size_t k = 0; k < row.size(); ++k) t.columns[k].push_back(row[k]);
  }
  if (t.columns.empty()) throw ConfigError("data file '" + path.string() + "' has no rows");
  return t;
}

}  // namespace spinnet::io

#endif  // SPINNET_IO_HPP
