#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spinnet/config.hpp"
#include "spinnet/io.hpp"

using namespace spinnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spinnet_test_config_" + name);
  fs::remove_all(p);
  return p;
}

bool has_error_at(const ValidationReport& r, const std::string& pointer) {
  for (const auto& e : r.errors)
    if (e.rfind(pointer + ":", 0) == 0) return true;
  return false;
}

}  // namespace

TEST(Schema, EmbeddedMatchesRepositoryFile) {
  std::ifstream f(fs::path(SPINNET_SOURCE_DIR) / "schemas" / "run_config.schema.json");
  ASSERT_TRUE(f.good());
  EXPECT_EQ(json::parse(f), run_config_schema());
}

TEST(Schema, MinimalConfigIsValid) {
  const auto r = validate_config({{"experiment", "protocol"}});
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.warnings.empty());
  ASSERT_TRUE(r.config.has_value());
  EXPECT_EQ(r.config->experiment, Experiment::Protocol);
  EXPECT_EQ(r.config->realizations, 100u);
}

TEST(Schema, NamedFieldErrors) {
  auto r = validate_config({{"experiment", "protocol"}, {"network", {{"p1_ppm", -1.0}}}});
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(has_error_at(r, "/network/p1_ppm"));

  r = validate_config({{"experiment", "protocol"}, {"physics", {{"omega_MHz", 0.0}}}});
  EXPECT_TRUE(has_error_at(r, "/physics/omega_MHz"));

  r = validate_config({{"experiment", "teleport"}});
  EXPECT_TRUE(has_error_at(r, "/experiment"));

  r = validate_config({{"experiment", "deer"}, {"echo", {{"bath", 5}}}});
  EXPECT_TRUE(has_error_at(r, "/echo/bath"));

  r = validate_config(json::object());
  EXPECT_TRUE(has_error_at(r, "/experiment"));

  r = validate_config({{"experiment", "diffusion"}, {"diffusion", {{"sizes", {100, "x"}}}}});
  EXPECT_TRUE(has_error_at(r, "/diffusion/sizes/1"));

  r = validate_config({{"experiment", "protocol"}, {"protocol", {{"n_cycles", 40}}}});
  EXPECT_TRUE(has_error_at(r, "/protocol/n_cycles"));

  r = validate_config({{"experiment", "fit"}});
  EXPECT_TRUE(has_error_at(r, "/fit"));
}

TEST(Schema, IntegralFloatsCountAsIntegers) {
  EXPECT_TRUE(validate_config({{"experiment", "protocol"}, {"realizations", 3.0}}).ok());
  EXPECT_FALSE(validate_config({{"experiment", "protocol"}, {"realizations", 3.5}}).ok());
}

TEST(Feasibility, DenseNetworkWarns) {
  // n^{-1/3} at 20000 ppm is 0.59 nm, inside a 1 nm exclusion radius.
  const auto r = validate_config({{"experiment", "protocol"},
                                  {"network", {{"p1_ppm", 20000.0}, {"box_length_nm", 10.0}}}});
  EXPECT_TRUE(r.ok());
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("exclusion radius"), std::string::npos);
  // Just above the threshold there is no warning.
  const double ppm = 1.0 / constants::kDensityPerPpm * 0.99;
  const auto q = validate_config({{"experiment", "protocol"},
                                  {"network", {{"p1_ppm", ppm}, {"nv_ppm", 0.0}, {"box_length_nm", 10.0}}}});
  EXPECT_TRUE(q.warnings.empty());
}

TEST(RunConfig, ResolvedConfigRoundTrips) {
  json j = {{"experiment", "protocol"},
            {"seed", 42},
            {"physics", {{"t1rho_laser_us", nullptr}, {"omega_MHz", 3.0}}},
            {"concentration", {{"gamma_exp_MHz", 1.5}, {"groups", {{{"groups", 2}, {"density_fraction", 0.5}}}}}}};
  const RunConfig a = *validate_config(j).config;
  EXPECT_TRUE(std::isinf(a.t1rho_laser));
  EXPECT_EQ(a.omega, 3.0);
  const json resolved = to_json(a);
  EXPECT_TRUE(resolved["physics"]["t1rho_laser_us"].is_null());
  EXPECT_TRUE(validate_against_schema(resolved).empty());
  const RunConfig b = run_config_from_json(resolved);
  EXPECT_EQ(to_json(b), resolved);
  EXPECT_EQ(b.groups.size(), 1u);
  EXPECT_EQ(*b.gamma_exp, 1.5);
}

TEST(RunDirectory, WriteOnce) {
  const fs::path d = scratch("write_once");
  io::RunDirectory out(d, {{"experiment", "fit"}}, 3);
  out.write_text("a.csv", [](std::ostream& os) { os << "x\n1\n"; });
  EXPECT_THROW(out.write_text("a.csv", [](std::ostream& os) { os << "y\n"; }), ConfigError);
  out.write_summary("s.json", {{"value", 1}});
  out.finalize();
  std::ifstream f(d / "s.json");
  const json s = json::parse(f);
  EXPECT_EQ(s["manifest"]["seed"], 3);
  EXPECT_EQ(s["manifest"]["config"]["experiment"], "fit");
  EXPECT_TRUE(s["manifest"].contains("wall_time_s"));
  std::ifstream m(d / "manifest.json");
  const json mj = json::parse(m);
  EXPECT_EQ(mj["artifacts"], json({"a.csv", "s.json", "manifest.json"}));
  // A second run into the same directory must not clobber the first.
  io::RunDirectory again(d, json::object(), 3);
  EXPECT_THROW(again.write_text("a.csv", [](std::ostream&) {}), ConfigError);
  fs::remove_all(d);
}

TEST(RunDirectory, UnwritableLocationIsConfigError) {
  const fs::path f = scratch("blocker");
  std::ofstream(f) << "file";
  EXPECT_THROW(io::RunDirectory(f / "sub", json::object(), 0), ConfigError);
  fs::remove(f);
}

TEST(Csv, ReadsHeaderAndColumns) {
  const fs::path p = scratch("table.csv");
  std::ofstream(p) << "x,y\n0,1.5\n1,2.5\n";
  const auto t = io::read_csv(p);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y"}));
  ASSERT_EQ(t.columns.size(), 2u);
  EXPECT_EQ(t.columns[1], (std::vector<double>{1.5, 2.5}));
  std::ofstream(p) << "x,y\n0,1\n1\n";
  EXPECT_THROW(io::read_csv(p), ConfigError);
  fs::remove(p);
}
