#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using namespace fieldqc::cli;

namespace {

const std::string kData = FIELDQC_TEST_DATA;

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "fieldqc");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fieldqc_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(invoke({"--help"}).code == kStationary);
  const auto help = invoke({"detect", "--help"});
  CHECK(help.code == kStationary);
  CHECK(help.out.find("Exit codes") != std::string::npos);
  CHECK(invoke({}).code == kUsage);
  CHECK(invoke({"detect", "--input", kData + "/stationary.csv", "--bogus"}).code == kUsage);
  CHECK(invoke({"frobnicate"}).code == kUsage);
  CHECK(invoke({"simulate", "--shape", "10x31", "--n", "0", "--out", "x"}).code == kUsage);
}

TEST_CASE("detect exit codes and summary line") {
  const auto dir = scratch("detect");
  const auto still = invoke({"detect", "--input", kData + "/stationary.csv", "--out",
                              (dir / "s.json").string()});
  CHECK(still.code == kStationary);
  CHECK(still.out == "trial=stationary patches=1 flag=false evidence=1\n");
  const auto report = nlohmann::json::parse(slurp(dir / "s.json"));
  CHECK(report.at("patches") == 1);

  const auto two = invoke({"detect", "--input", kData + "/two_patch.csv"});
  CHECK(two.code == kFlagged);
  CHECK(std::regex_search(two.out, std::regex("^trial=two_patch patches=2 flag=true evidence=")));

  // IID-only candidates surface correlation as patches; AR(1) candidates absorb it.
  CHECK(invoke({"detect", "--input", kData + "/ar1.csv", "--families", "iid"}).code == kFlagged);
  CHECK(invoke({"detect", "--input", kData + "/ar1.csv"}).code == kStationary);
}

TEST_CASE("detect error codes") {
  const auto dir = scratch("errors");
  std::ofstream(dir / "bad.csv") << "row,col,value\n0,0,1\n0,x,2\n";
  CHECK(invoke({"detect", "--input", (dir / "bad.csv").string()}).code == kParse);
  CHECK(invoke({"detect", "--input", (dir / "missing.csv").string()}).code == kParse);
  CHECK(invoke({"detect", "--input", kData + "/stationary.csv", "--score", "waic"}).code ==
        kConfig);
  CHECK(invoke({"detect", "--input", kData + "/stationary.csv", "--families", "matern"}).code ==
        kConfig);
  std::ofstream(dir / "tiny.csv") << "row,col,value\n0,0,1\n0,1,2\n0,2,3\n";
  CHECK(invoke({"detect", "--input", (dir / "tiny.csv").string()}).code == kFit);
}

TEST_CASE("detect with a design runs on GLS residuals") {
  const auto dir = scratch("design");
  std::ofstream design(dir / "design.csv");
  design << "row,col,block\n";
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) design << i << ',' << j << ',' << (j < 5 ? "a" : "b") << '\n';
  design.close();
  const auto r = invoke({"detect", "--input", kData + "/stationary.csv", "--design",
                          (dir / "design.csv").string()});
  CHECK((r.code == kStationary || r.code == kFlagged));
  CHECK(r.err.empty());
}

TEST_CASE("detect is deterministic and independent of the worker count") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const std::vector<std::string> inputs{"--input", kData + "/stationary.csv", "--input",
                                        kData + "/two_patch.csv", "--input", kData + "/ar1.csv"};
  auto with = [&](const fs::path& out, const std::string& jobs) {
    std::vector<std::string> args{"detect"};
    args.insert(args.end(), inputs.begin(), inputs.end());
    args.insert(args.end(), {"--out", out.string(), "--dump-tree", "--jobs", jobs});
    return invoke(args);
  };
  const auto ra = with(a, "1");
  const auto rb = with(b, "3");
  CHECK(ra.code == kFlagged);
  CHECK(ra.out == rb.out);
  const auto fa = tree_bytes(a);
  CHECK(fa.size() == 6);
  CHECK(fa == tree_bytes(b));
}

TEST_CASE("simulate writes CSV and sidecar deterministically") {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  REQUIRE(invoke({"simulate", "--shape", "10x31", "--n", "1", "--seed", "1", "--out", a.string()})
              .code == kStationary);
  REQUIRE(invoke({"simulate", "--shape", "10x31", "--n", "1", "--seed", "1", "--out", b.string()})
              .code == kStationary);
  const auto fa = tree_bytes(a);
  CHECK(fa.size() == 2);
  CHECK(fa.count("trial_0000.csv") == 1);
  CHECK(fa.count("trial_0000.truth.json") == 1);
  CHECK(fa == tree_bytes(b));
  const std::string& csv = fa.at("trial_0000.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') <= 310 + 2);
}

TEST_CASE("simulate failure codes") {
  const auto dir = scratch("sim_fail");
  std::ofstream(dir / "priors.json")
      << R"({"mu": 0, "sigma": 1, "families": {"iid": 1}, "max_param_retries": 1,
            "max_geometry_retries": 1})";
  const auto r = invoke({"simulate", "--shape", "6x6", "--n", "3", "--seed", "4", "--priors",
                          (dir / "priors.json").string(), "--out", (dir / "out").string()});
  CHECK(r.code == kSimulation);
  CHECK(r.err.find("trial ") != std::string::npos);
  std::ofstream(dir / "broken.json") << R"({"mu": {"dist": "cauchy"}})";
  CHECK(invoke({"simulate", "--shape", "6x6", "--priors", (dir / "broken.json").string(),
                 "--out", (dir / "out").string()})
            .code == kConfig);
  CHECK(invoke({"simulate", "--shape", "6by6", "--out", (dir / "out").string()}).code == kConfig);
}

TEST_CASE("evaluate writes one row per trial and variant") {
  const auto dir = scratch("eval");
  REQUIRE(invoke({"simulate", "--shape", "7x7", "--n", "3", "--seed", "2", "--out",
                   (dir / "trials").string()})
              .code == kStationary);
  const auto r = invoke({"evaluate", "--trials", (dir / "trials").string(), "--variants",
                          "binary+top_down,quad+oracle", "--out", (dir / "a").string()});
  CHECK(r.code == kStationary);
  const std::string csv = slurp(dir / "a" / "summary.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 2);
  CHECK(fs::exists(dir / "a" / "summary.json"));
  CHECK(fs::exists(dir / "a" / "timings.csv"));
  REQUIRE(invoke({"evaluate", "--trials", (dir / "trials").string(), "--variants",
                   "binary+top_down,quad+oracle", "--out", (dir / "b").string(), "--jobs", "2"})
              .code == kStationary);
  CHECK(slurp(dir / "b" / "summary.csv") == csv);
  CHECK(slurp(dir / "b" / "summary.json") == slurp(dir / "a" / "summary.json"));

  fs::remove(dir / "trials" / "trial_0001.truth.json");
  CHECK(invoke({"evaluate", "--trials", (dir / "trials").string(), "--out",
                 (dir / "c").string()})
            .code == kMissingSidecar);
  CHECK(invoke({"evaluate", "--trials", (dir / "trials").string(), "--variants", "",
                 "--out", (dir / "c").string()})
            .code == kConfig);
}

TEST_CASE("render") {
  const auto dir = scratch("render");
  std::ofstream(dir / "small.csv") << "row,col,value\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n";
  REQUIRE(invoke({"render", "--input", (dir / "small.csv").string(), "--out",
                   (dir / "a.svg").string()})
              .code == kStationary);
  REQUIRE(invoke({"render", "--input", (dir / "small.csv").string(), "--out",
                   (dir / "b.svg").string()})
              .code == kStationary);
  const std::string svg = slurp(dir / "a.svg");
  CHECK(svg == slurp(dir / "b.svg"));
  std::size_t cells = 0;
  for (std::size_t at = 0; (at = svg.find("<rect x=", at)) != std::string::npos; ++at) ++cells;
  CHECK(cells == 4);

  REQUIRE(invoke({"detect", "--input", kData + "/two_patch.csv", "--out",
                   (dir / "report.json").string()})
              .code == kFlagged);
  REQUIRE(invoke({"render", "--input", (dir / "report.json").string(), "--out",
                   (dir / "r.svg").string()})
              .code == kStationary);
  const std::string overlay = slurp(dir / "r.svg");
  std::set<std::string> colours;
  const std::regex stroke("class=\"patch\"[^>]*stroke=\"([^\"]+)\"");
  for (std::sregex_iterator it(overlay.begin(), overlay.end(), stroke), end; it != end; ++it)
    colours.insert((*it)[1]);
  CHECK(colours.size() == 2);
}

TEST_CASE("commands leave their inputs untouched") {
  const std::string before = slurp(kData + "/two_patch.csv");
  invoke({"detect", "--input", kData + "/two_patch.csv"});
  CHECK(slurp(kData + "/two_patch.csv") == before);
}
