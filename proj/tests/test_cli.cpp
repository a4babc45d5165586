#include <doctest.h>

#include "ebmf/cli.hpp"
#include "ebmf/io.hpp"

#include <filesystem>
#include <random>
#include <sstream>

using namespace ebmf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("ebmf_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ebmf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("simulate, fit, impute and cv pipeline") {
  TempDir d;
  auto sim = run({"simulate", "--kind", "bicluster", "--seed", "1", "-o", d.file("y.csv"), "--truth",
                  d.file("b.csv"), "--full", d.file("full.csv"), "--holdout", "100", "--cells", d.file("cells.csv")});
  REQUIRE(sim.code == 0);
  CHECK(sim.out.find("150x240") != std::string::npos);
  const auto y = read_matrix(d.file("y.csv"));
  CHECK(y.rows() == 150);
  CHECK(y.observed.count() == 150 * 240 - 100);
  const auto cells = read_cells(d.file("cells.csv"));
  REQUIRE(cells.size() == 100);
  for (auto [i, j] : cells) CHECK_FALSE(y.observed(i, j));

  auto fit = run({"fit", "-i", d.file("y.csv"), "-o", d.file("fit.json"), "--pve", d.file("pve.csv"), "--seed", "1"});
  REQUIRE(fit.code == 0);
  const FitResult r = read_fit(d.file("fit.json"));
  CHECK(r.K() >= 2);
  CHECK(read_text(d.file("pve.csv")).rfind("factor,pve\n", 0) == 0);

  auto imp = run({"impute", "-f", d.file("fit.json"), "-c", d.file("cells.csv"), "-o", d.file("imp.csv"), "--data",
                  d.file("full.csv")});
  REQUIRE(imp.code == 0);
  CHECK(imp.out.find("rmse=") != std::string::npos);
  CHECK(imp.out.find("cells=100") != std::string::npos);
  const std::string imputed = read_text(d.file("imp.csv"));
  CHECK(std::count(imputed.begin(), imputed.end(), '\n') == 101);

  auto cv = run({"cv", "-i", d.file("y.csv"), "--folds", "3", "--seed", "2", "-o", d.file("cv.csv"), "--plan",
                 d.file("plan.csv")});
  REQUIRE(cv.code == 0);
  CHECK(cv.out.find("overall,") != std::string::npos);
  CHECK(read_text(d.file("plan.csv")).rfind("axis,index,group,k,seed\n", 0) == 0);

  auto cv_svd = run({"cv", "-i", d.file("y.csv"), "--method", "svd", "--rank", "3"});
  CHECK(cv_svd.code == 0);
}

TEST_CASE("fit on a matrix with NA cells") {
  TempDir d;
  write_text(d.file("na.csv"), "1,2\n3,NA\n");
  auto r = run({"fit", "-i", d.file("na.csv"), "-o", d.file("fit.json")});
  REQUIRE(r.code == 0);
  const FitResult fit = read_fit(d.file("fit.json"));
  CHECK(fit.n == 2);
  CHECK(fit.p == 2);
}

TEST_CASE("usage errors exit 2 with usage text") {
  TempDir d;
  auto missing_output = run({"fit", "-i", d.file("x.csv")});
  CHECK(missing_output.code == 2);
  CHECK(missing_output.err.find("--output") != std::string::npos);
  CHECK(missing_output.err.find("Usage") != std::string::npos);

  CHECK(run({"impute", "-f", "a.json"}).code == 2);
  CHECK(run({"simulate", "--kind", "bicluster"}).code == 2);
  CHECK(run({"fit", "-i", "x.csv", "-o", "y.json", "--prior", "laplace"}).code == 2);
  CHECK(run({"cv", "-i", "x.csv", "--method", "pca"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("data errors exit 1 with a one-line diagnostic") {
  TempDir d;
  write_text(d.file("ragged.csv"), "1,2\n3\n");
  auto r = run({"fit", "-i", d.file("ragged.csv"), "-o", d.file("fit.json")});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 2") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK_FALSE(fs::exists(d.file("fit.json")));

  CHECK(run({"fit", "-i", d.file("nope.csv"), "-o", d.file("fit.json")}).code == 1);

  write_text(d.file("bad.json"), "{not json");
  write_text(d.file("cells.csv"), "0,0\n");
  CHECK(run({"impute", "-f", d.file("bad.json"), "-c", d.file("cells.csv"), "-o", d.file("o.csv")}).code == 1);

  write_text(d.file("small.csv"), "1,2\n3,4\n");
  CHECK(run({"cv", "-i", d.file("small.csv"), "--folds", "3"}).code == 1);
}

TEST_CASE("inputs are left untouched and outputs are deterministic") {
  TempDir d;
  REQUIRE(run({"simulate", "--kind", "rank1", "--n", "40", "--p", "30", "--missing", "0.1", "--seed", "5", "-o",
               d.file("y.tsv")})
              .code == 0);
  write_text(d.file("cells.csv"), "row,col\n0,0\n5,7\n39,29\n");
  const std::string y_before = read_text(d.file("y.tsv"));
  const std::string cells_before = read_text(d.file("cells.csv"));

  std::string first_fit, first_imp, first_cv;
  for (int rep = 0; rep < 2; ++rep) {
    REQUIRE(run({"fit", "-i", d.file("y.tsv"), "-o", d.file("fit.json"), "--prior", "point-normal", "--seed", "3"})
                .code == 0);
    REQUIRE(run({"impute", "-f", d.file("fit.json"), "-c", d.file("cells.csv"), "-o", d.file("imp.csv")}).code == 0);
    auto cv = run({"cv", "-i", d.file("y.tsv"), "--folds", "2", "--seed", "3", "--kmax", "2"});
    REQUIRE(cv.code == 0);
    if (rep == 0) {
      first_fit = read_text(d.file("fit.json"));
      first_imp = read_text(d.file("imp.csv"));
      first_cv = cv.out;
    } else {
      CHECK(read_text(d.file("fit.json")) == first_fit);
      CHECK(read_text(d.file("imp.csv")) == first_imp);
      CHECK(cv.out == first_cv);
    }
  }
  CHECK(read_text(d.file("y.tsv")) == y_before);
  CHECK(read_text(d.file("cells.csv")) == cells_before);
}

TEST_CASE("bench subcommand") {
  TempDir d;
  write_text(d.file("cfg.json"), R"({"replicates": 2, "seed": 3, "methods": ["ebmf_nm", "svd"],
    "scenarios": [{"kind": "rank1", "n": 30, "p": 20, "pi0": 0.5}]})");
  auto r = run({"bench", "-c", d.file("cfg.json"), "--report", d.file("rows.csv"), "--summary", d.file("sum.csv"),
                "--jobs", "2"});
  REQUIRE(r.code == 0);
  CHECK(read_text(d.file("rows.csv")).rfind("scenario,method,replicate,metric,value\n", 0) == 0);
  CHECK(read_text(d.file("sum.csv")) == r.out);

  write_text(d.file("broken.json"), "{\"scenarios\": [");
  CHECK(run({"bench", "-c", d.file("broken.json")}).code == 1);
}
