#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/error.hpp"
#include "elastic_dml/manifest.hpp"
#include "elastic_dml/panel_io.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("elastic_dml_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

Panel small_panel() {
  SimConfig c;
  c.n_articles = 12;
  c.n_weeks = 40;
  return simulate_policy(c);
}

}  // namespace

TEST_CASE("format_real uses nine significant digits") {
  CHECK(csv::format_real(0.1) == "0.1");
  CHECK(csv::format_real(1.0 / 3.0) == "0.333333333");
  CHECK(csv::format_real(123456789012.0) == "1.23456789e+11");
  CHECK(csv::format_real(-0.0) == "0");
  CHECK(csv::format_real(157.5) == "157.5");
  CHECK(csv::format_real(INFINITY) == "inf");
  CHECK(csv::format_real(std::nan("")) == "nan");
}

TEST_CASE("parsing") {
  CHECK(csv::split("a,,b") == std::vector<std::string>{"a", "", "b"});
  CHECK(csv::split("") == std::vector<std::string>{""});
  CHECK(csv::parse_real("2.5", "x") == 2.5);
  CHECK(csv::parse_real("1e-3", "x") == 1e-3);
  CHECK(std::isinf(csv::parse_real("inf", "x")));
  CHECK(csv::parse_int("-17", "x") == -17);
  CHECK(kind_of([] { csv::parse_real("2.5x", "x"); }) == ErrorKind::schema);
  CHECK(kind_of([] { csv::parse_int("1.5", "x"); }) == ErrorKind::schema);
  CHECK(kind_of([] { csv::parse_real("", "x"); }) == ErrorKind::schema);
}

TEST_CASE("csv::read checks header and row width") {
  const fs::path dir = scratch("read");
  csv::write_text(dir / "ok.csv", "a,b\n1,2\n3,4\n");
  const auto t = csv::read(dir / "ok.csv", {"a", "b"});
  CHECK(t.rows.size() == 2);
  CHECK(t.rows[1][1] == "4");
  CHECK(kind_of([&] { csv::read(dir / "ok.csv", {"a", "c"}); }) == ErrorKind::schema);
  csv::write_text(dir / "ragged.csv", "a,b\n1,2,3\n");
  CHECK(kind_of([&] { csv::read(dir / "ragged.csv", {"a", "b"}); }) == ErrorKind::schema);
  CHECK(kind_of([&] { csv::read(dir / "missing.csv", {"a"}); }) == ErrorKind::io);
}

TEST_CASE("sim config json round trip and field errors") {
  SimConfig c;
  c.n_articles = 77;
  c.alpha_sd = 2.5;
  c.master_seed = 9;
  const SimConfig back = sim_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.n_articles == 77);

  CHECK(sim_config_from_json(nlohmann::json::object()).n_articles == SimConfig{}.n_articles);
  auto message = [](const nlohmann::json& j) {
    try {
      sim_config_from_json(j);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
      return std::string(e.what());
    }
    FAIL("expected a config error");
    return std::string();
  };
  CHECK(message({{"bogus", 1}}).find("bogus") != std::string::npos);
  CHECK(message({{"n_weeks", "ten"}}).find("n_weeks") != std::string::npos);
  CHECK(message({{"n_articles", 0}}).find("n_articles") != std::string::npos);
  CHECK(message({{"n_weeks", 2.5}}).find("n_weeks") != std::string::npos);
}

TEST_CASE("panel files round trip") {
  const Panel p = small_panel();
  const fs::path dir = scratch("roundtrip");
  SimConfig c;
  c.n_articles = 12;
  c.n_weeks = 40;
  write_panel(p, dir, c);
  CHECK(fs::exists(dir / "truth.csv"));
  CHECK(fs::exists(dir / "sim_config.json"));

  const Panel back = load_panel(PanelFiles::in_directory(dir));
  CHECK(back.has_truth());
  CHECK(back.size() == p.size());
  CHECK(back.n_weeks == 40);
  CHECK(back.n_cat_d == 45);
  CHECK(panel_csv(back) == panel_csv(p));
  CHECK(statics_csv(back) == statics_csv(p));
  CHECK(truth_csv(back) == truth_csv(p));

  // a second pass is a fixed point
  const fs::path dir2 = scratch("roundtrip2");
  write_panel(back, dir2, c);
  for (const char* f : {"panel.csv", "statics.csv", "truth.csv", "sim_config.json"}) {
    CHECK(csv::read_text(dir / f) == csv::read_text(dir2 / f));
  }

  PanelFiles no_truth;
  no_truth.panel = dir / "panel.csv";
  no_truth.statics = dir / "statics.csv";
  const Panel external = load_panel(no_truth);
  CHECK_FALSE(external.has_truth());
  CHECK(kind_of([&] { truth_csv(external); }) == ErrorKind::unsupported);
}

TEST_CASE("panel schema errors") {
  const Panel p = small_panel();
  const fs::path dir = scratch("schema");
  write_panel(p, dir);
  PanelFiles f = PanelFiles::in_directory(dir);

  const std::string good = csv::read_text(dir / "panel.csv");
  csv::write_text(dir / "panel.csv", "article_id,week,demand\n1,0,3\n");
  CHECK(kind_of([&] { load_panel(f); }) == ErrorKind::schema);

  csv::write_text(dir / "panel.csv", good + "999,0,1,0,1,1\n");
  CHECK(kind_of([&] { load_panel(f); }) == ErrorKind::schema);

  csv::write_text(dir / "panel.csv", good + "0,60,1,0,1,1\n");
  CHECK(kind_of([&] { load_panel(f); }) == ErrorKind::schema);

  csv::write_text(dir / "panel.csv", good + "0,40,1,1.5,1,1\n");
  CHECK(kind_of([&] { load_panel(f); }) == ErrorKind::schema);

  csv::write_text(dir / "panel.csv", good);
  csv::write_text(dir / "sim_config.json", "{not json");
  f.config = dir / "sim_config.json";
  CHECK(kind_of([&] { load_panel(f); }) == ErrorKind::schema);
}

TEST_CASE("sha256 and manifests") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");

  nlohmann::json a;
  a["x"] = 1;
  a["y"] = {1, 2};
  nlohmann::json b;
  b["y"] = {1, 2};
  b["x"] = 1;
  CHECK(config_hash(a) == config_hash(b));
  b["x"] = 2;
  CHECK(config_hash(a) != config_hash(b));

  const fs::path dir = scratch("manifest");
  csv::write_text(dir / "in.txt", "abc");
  CHECK(file_sha256(dir / "in.txt") == sha256_hex("abc"));
  CHECK(kind_of([&] { file_sha256(dir / "nope"); }) == ErrorKind::io);

  RunManifest m;
  m.command = "simulate";
  m.config = a;
  m.seed = 42;
  m.add_input(dir / "in.txt");
  m.write(dir);
  const auto j = nlohmann::json::parse(csv::read_text(dir / "manifest.json"));
  CHECK(j.at("command") == "simulate");
  CHECK(j.at("seed") == 42);
  CHECK(j.at("config_hash") == config_hash(a));
  CHECK(j.at("tool_version") == tool_version());
  CHECK(j.at("inputs").at(0).at("sha256") == sha256_hex("abc"));
  CHECK_FALSE(tool_version().empty());
}
