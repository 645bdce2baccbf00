#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "slitflow/cli.hpp"
#include "slitflow/optics.hpp"

using namespace slitflow;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

int count_lines(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f);
  int n = 0;
  std::string line;
  while (std::getline(f, line)) ++n;
  return n;
}

struct Workspace {
  std::string root = "cli_work";
  Workspace() {
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
  }
  ~Workspace() { std::filesystem::remove_all(root); }
  std::string operator/(const std::string& leaf) const { return root + "/" + leaf; }
};

void write_config(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  f << body;
}

}  // namespace

TEST_CASE("usage errors exit with 2, help with 0") {
  CHECK(cli::dispatch({"--help"}) == 0);
  CHECK(cli::dispatch({"gen-data", "--help"}) == 0);
  CHECK(cli::dispatch({"no-such-command"}) == 2);
  CHECK(cli::dispatch({}) == 2);
  CHECK(cli::dispatch({"gen-data", "--n", "16"}) == 2);        // missing --out
  CHECK(cli::dispatch({"gen-data", "--out", "x", "--n", "sixteen"}) == 2);
  CHECK(cli::dispatch({"evaluate", "--model", "m", "--data", "d", "--out", "o",
                       "--respim", "magic"}) == 2);
}

TEST_CASE("runtime failures exit with 1") {
  const Workspace ws;
  CHECK(cli::dispatch({"gen-data", "--out", ws / "ds", "--n", "2"}) == 1);  // below minimum
  CHECK(cli::dispatch({"train-forward", "--data", ws / "missing", "--out", ws / "x.ckpt"}) == 1);
  CHECK(cli::dispatch({"sample", "--model", ws / "missing.ckpt", "--spectrum", ws / "s.csv",
                       "--out", ws / "o.csv"}) == 1);
}

TEST_CASE("gen-data is reproducible byte for byte") {
  const Workspace ws;
  REQUIRE(cli::dispatch({"gen-data", "--out", ws / "a", "--n", "64", "--seed", "9"}) == 0);
  REQUIRE(cli::dispatch({"gen-data", "--out", ws / "b", "--n", "64", "--seed", "9"}) == 0);
  CHECK(slurp(ws / "a/data.csv") == slurp(ws / "b/data.csv"));
  CHECK(slurp(ws / "a/meta.json") == slurp(ws / "b/meta.json"));

  REQUIRE(cli::dispatch({"gen-data", "--out", ws / "c", "--n", "64", "--seed", "10"}) == 0);
  CHECK(slurp(ws / "a/data.csv") != slurp(ws / "c/data.csv"));
}

TEST_CASE("gradcheck passes and reports per model") {
  CHECK(cli::dispatch({"gradcheck", "--seed", "12"}) == 0);
}

TEST_CASE("the full pipeline runs through the command surface") {
  const Workspace ws;
  REQUIRE(cli::dispatch({"gen-data", "--out", ws / "ds", "--n", "128", "--seed", "4"}) == 0);

  write_config(ws / "fwd.json",
               R"({"model":"forward","epochs":2,"batch_size":32,"seed":2,"hidden_width":24})");
  write_config(ws / "cinn.json",
               R"({"model":"cinn","epochs":2,"batch_size":32,"seed":2,"cond_dim":16,)"
               R"("subnet_hidden":12,"cond_hidden":[16],"num_blocks":3})");
  write_config(ws / "cvae.json",
               R"({"model":"cvae","epochs":2,"batch_size":32,"seed":2,"hidden_width":20,)"
               R"("hidden_layers":2})");

  REQUIRE(cli::dispatch({"train-forward", "--data", ws / "ds", "--out", ws / "fwd.ckpt",
                         "--config", ws / "fwd.json"}) == 0);
  REQUIRE(cli::dispatch({"train-cinn", "--data", ws / "ds", "--out", ws / "cinn.ckpt",
                         "--config", ws / "cinn.json"}) == 0);
  REQUIRE(cli::dispatch({"train-cvae", "--data", ws / "ds", "--out", ws / "cvae.ckpt",
                         "--config", ws / "cvae.json"}) == 0);
  CHECK(std::filesystem::exists(ws / "fwd.ckpt.metrics.jsonl"));

  // a config whose model kind disagrees with the command is a runtime error
  CHECK(cli::dispatch({"train-cvae", "--data", ws / "ds", "--out", ws / "bad.ckpt",
                       "--config", ws / "fwd.json"}) == 1);

  REQUIRE(cli::dispatch({"sample", "--model", ws / "cinn.ckpt", "--from-validation", "0",
                         "--data", ws / "ds", "--n", "40", "--seed", "8",
                         "--out", ws / "samples.csv"}) == 0);
  CHECK(count_lines(ws / "samples.csv") == 41);

  // n = 0 still writes the header
  REQUIRE(cli::dispatch({"sample", "--model", ws / "cinn.ckpt", "--from-validation", "0",
                         "--data", ws / "ds", "--n", "0", "--out", ws / "empty.csv"}) == 0);
  CHECK(count_lines(ws / "empty.csv") == 1);
  CHECK(slurp(ws / "empty.csv") == "lambda1_nm,lambda2_nm,h1_nm,h2_nm,in_bounds\n");

  // both target selectors at once is an error, as is neither
  CHECK(cli::dispatch({"sample", "--model", ws / "cinn.ckpt", "--from-validation", "0",
                       "--data", ws / "ds", "--spectrum", ws / "t.csv",
                       "--out", ws / "x.csv"}) == 1);
  CHECK(cli::dispatch({"sample", "--model", ws / "cinn.ckpt", "--out", ws / "x.csv"}) == 1);
  // a validation index past the split is a runtime error
  CHECK(cli::dispatch({"sample", "--model", ws / "cinn.ckpt", "--from-validation", "500",
                       "--data", ws / "ds", "--out", ws / "x.csv"}) == 1);
  // the forward checkpoint cannot sample
  CHECK(cli::dispatch({"sample", "--model", ws / "fwd.ckpt", "--from-validation", "0",
                       "--data", ws / "ds", "--out", ws / "x.csv"}) == 1);

  REQUIRE(cli::dispatch({"evaluate", "--model", ws / "cinn.ckpt", "--data", ws / "ds",
                         "--from-validation", "1", "--n", "300", "--seed", "8",
                         "--respim", "oracle", "--out", ws / "eval_cinn"}) == 0);
  CHECK(std::filesystem::exists(ws / "eval_cinn/report.json"));
  CHECK(std::filesystem::exists(ws / "eval_cinn/samples.csv"));
  CHECK(std::filesystem::exists(ws / "eval_cinn/band.csv"));
  CHECK(std::filesystem::exists(ws / "eval_cinn/latent.csv"));

  REQUIRE(cli::dispatch({"evaluate", "--model", ws / "cvae.ckpt", "--data", ws / "ds",
                         "--from-validation", "1", "--n", "300", "--seed", "8",
                         "--respim", "surrogate", "--forward", ws / "fwd.ckpt",
                         "--out", ws / "eval_cvae"}) == 0);
  CHECK(std::filesystem::exists(ws / "eval_cvae/report.json"));

  // surrogate re-simulation without a forward checkpoint is an error
  CHECK(cli::dispatch({"evaluate", "--model", ws / "cvae.ckpt", "--data", ws / "ds",
                       "--from-validation", "1", "--n", "100",
                       "--out", ws / "eval_bad"}) == 1);
}

TEST_CASE("spectrum csv reader accepts one row and rejects ragged input") {
  const Workspace ws;
  {
    std::ofstream f(ws / "spectrum.csv");
    f << "T0000,T0001,T0002,T0003\n";
    f << "0.1,0.2,0.3,0.4\n";
  }
  const Spectrum s = cli::read_spectrum_csv(ws / "spectrum.csv");
  REQUIRE(s.size() == 4);
  CHECK(s[0] == 0.1);
  CHECK(s[3] == 0.4);

  {
    std::ofstream f(ws / "ragged.csv");
    f << "a,b,c\n";
    f << "1.0,2.0\n";
  }
  CHECK_THROWS_AS(cli::read_spectrum_csv(ws / "ragged.csv"), std::runtime_error);
  {
    std::ofstream f(ws / "word.csv");
    f << "a,b\n";
    f << "1.0,two\n";
  }
  CHECK_THROWS_AS(cli::read_spectrum_csv(ws / "word.csv"), std::runtime_error);
  CHECK_THROWS_AS(cli::read_spectrum_csv(ws / "absent.csv"), std::runtime_error);
}

TEST_CASE("explicit spectrum targets pair with an explicit device") {
  const Workspace ws;
  REQUIRE(cli::dispatch({"gen-data", "--out", ws / "ds", "--n", "64", "--seed", "4"}) == 0);
  write_config(ws / "cinn.json",
               R"({"model":"cinn","epochs":1,"batch_size":32,"seed":2,"cond_dim":16,)"
               R"("subnet_hidden":12,"cond_hidden":[16],"num_blocks":3})");
  REQUIRE(cli::dispatch({"train-cinn", "--data", ws / "ds", "--out", ws / "cinn.ckpt",
                         "--config", ws / "cinn.json"}) == 0);

  // write a target spectrum from the physics
  const OpticsConfig optics;
  const Spectrum target = simulate({520.0, 690.0, 80.0, 45.0}, optics);
  {
    std::ofstream f(ws / "target.csv");
    for (Index i = 0; i < target.size(); ++i) f << (i ? "," : "") << "T" << i;
    f << "\n";
    char buf[32];
    for (Index i = 0; i < target.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", target[i]);
      f << (i ? "," : "") << buf;
    }
    f << "\n";
  }
  REQUIRE(cli::dispatch({"evaluate", "--model", ws / "cinn.ckpt", "--data", ws / "ds",
                         "--spectrum", ws / "target.csv", "--device", "520", "690", "80", "45",
                         "--n", "200", "--respim", "oracle", "--out", ws / "ev"}) == 0);
  CHECK(std::filesystem::exists(ws / "ev/report.json"));

  // --spectrum without --device cannot be scored
  CHECK(cli::dispatch({"evaluate", "--model", ws / "cinn.ckpt", "--data", ws / "ds",
                       "--spectrum", ws / "target.csv", "--n", "100",
                       "--respim", "oracle", "--out", ws / "ev2"}) == 1);
}
