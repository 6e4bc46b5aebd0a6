#include "doctest.h"

#include <sys/wait.h>

#include <filesystem>
#include <set>

#include "gcn/augment.hpp"
#include "gcn/checkpoint.hpp"

using namespace gcn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

const fs::path& work() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "gcn_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run gcn_cli(const std::string& args) {
  const auto log = work() / "last_output.txt";
  const std::string cmd = "cd '" + work().string() + "' && '" GCN_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = fs::exists(log) ? detail::read_file(log.string()) : "";
  return r;
}

void write(const std::string& name, const std::string& text) { detail::write_file((work() / name).string(), text); }

std::size_t count(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

const char* kDigits = R"({
  "name": "digits-smoke",
  "task": "digits",
  "dataset": {"digits": [0, 1, 2, 3], "colors": ["red", "green"], "transforms": ["rot0"],
              "holdout": [{"digit": 2, "color": "red"}]},
  "train": {"batch_size": 8, "total_batches": 200, "checkpoint_every": 100}
})";

const char* kGlyphs = R"({
  "name": "glyph-smoke",
  "task": "glyphs",
  "dataset": {"identities": 3, "expressions": 2, "resolution": 16, "transforms": ["rot0"]},
  "train": {"batch_size": 6, "total_batches": 30},
  "recognizer": {"total_batches": 20, "batch_size": 8}
})";

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
  CHECK(gcn_cli("").code == 2);
  CHECK(gcn_cli("frobnicate").code == 2);
  CHECK(gcn_cli("train").code == 2);
  CHECK(gcn_cli("--help").code == 0);
  CHECK(gcn_cli("gradcheck --layer nonexistent").code == 2);
}

TEST_CASE("cli gradcheck: healthy build passes, a corrupted layer fails by name") {
  const auto ok = gcn_cli("gradcheck");
  CHECK(ok.code == 0);
  for (const auto& layer : {"fully_connected ", "conv2d ", "deconv2d ", "leaky_relu ", "max_pool2d ",
                            "softmax_cross_entropy ", "mse_pixel_loss "})
    CHECK(count(ok.out, std::string("\n") + layer) + (ok.out.rfind(layer, 0) == 0 ? 1 : 0) == 1);
  const auto bad = gcn_cli("gradcheck --corrupt deconv2d");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("deconv2d") != std::string::npos);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

const fs::path& digits_run() {
  static const fs::path run = [] {
    write("digits.json", kDigits);
    const auto r = gcn_cli("train -q -c digits.json -o digits_run");
    REQUIRE(r.code == 0);
    return work() / "digits_run";
  }();
  return run;
}

TEST_CASE("cli train: smoke run writes every artifact") {
  const auto& run = digits_run();
  for (const auto* f : {"config.json", "metrics.csv", "checkpoints/generator.gcn", "checkpoints/classifier.gcn",
                        "data/train/manifest.json", "data/holdout/manifest.json"})
    CHECK(fs::exists(run / f));
  CHECK(count(detail::read_file((run / "metrics.csv").string()), "\n") == 201);
  CHECK(gcn_cli("train -q -c digits.json -o digits_run").code == 2);
}

TEST_CASE("cli train: resume extends the run") {
  const auto& run = digits_run();
  CHECK(gcn_cli("train -q -c digits.json -o digits_run --resume --set train.seed=4").code == 2);
  CHECK(gcn_cli("train -q -c digits.json -o digits_run --resume --set train.total_batches=210").code == 0);
  CHECK(count(detail::read_file((run / "metrics.csv").string()), "\n") == 211);
}

TEST_CASE("cli generate: loadable image, predictions and schema errors") {
  digits_run();
  const auto g = gcn_cli("generate digits_run/checkpoints/generator.gcn -f digit=3 -f color=green -f transform=rot0 "
                         "-o out/three.ppm --reference digits_run/data/train/images/000005.ppm");
  CHECK(g.code == 0);
  CHECK(g.out.find("predicted digit") != std::string::npos);
  CHECK(g.out.find("squared error to reference") != std::string::npos);
  const auto img = read_netpbm((work() / "out/three.ppm").string());
  CHECK(img.shape() == Shape{3, 28, 28});
  CHECK(encode_netpbm(img) == detail::read_file((work() / "out/three.ppm").string()));
  CHECK(gcn_cli("generate digits_run/checkpoints/generator.gcn --blend-feature color --blend red:0.5,blue:0.5 -o b.ppm")
            .code == 0);
  CHECK(gcn_cli("generate digits_run/checkpoints/generator.gcn -f digit=eleven -o x.ppm").code == 2);
  CHECK(gcn_cli("generate digits_run/checkpoints/generator.gcn --blend-feature color --blend red:0.7,blue:0.7 -o x.ppm")
            .code == 2);
  CHECK(gcn_cli("generate digits_run/checkpoints/generator.gcn -o x.pgm").code == 2);
}

TEST_CASE("cli dataset inspect: summarizes a manifest") {
  digits_run();
  const auto i = gcn_cli("dataset inspect digits_run/data/holdout/manifest.json");
  CHECK(i.code == 0);
  CHECK(i.out.find("samples   1") != std::string::npos);
  CHECK(i.out.find("red=1") != std::string::npos);
}

TEST_CASE("cli train: bad inputs fail cleanly without outputs") {
  write("typo.json", R"({"task": "digits", "trian": {}})");
  const auto typo = gcn_cli("train -c typo.json -o typo_run");
  CHECK(typo.code == 2);
  CHECK(typo.out.find("trian") != std::string::npos);
  CHECK_FALSE(fs::exists(work() / "typo_run"));

  write("missing.json", R"({"task": "digits", "dataset": {"source": "mnist", "mnist_images": "nowhere/imgs",
                            "mnist_labels": "nowhere/labels"}})");
  const auto missing = gcn_cli("train -c missing.json -o missing_run");
  CHECK(missing.code == 2);
  CHECK(missing.out.find("nowhere") != std::string::npos);
  CHECK_FALSE(fs::exists(work() / "missing_run"));

  write("unstable.json", R"({"task": "digits", "dataset": {"digits": [1], "colors": ["red"], "transforms": ["rot0"]},
      "loss_weights": {"features": {"digit": 100, "color": 100, "transform": 100}},
      "train": {"batch_size": 1, "total_batches": 1}})");
  const auto unstable = gcn_cli("train -q -c unstable.json -o unstable_run");
  CHECK(unstable.code == 0);
  CHECK(unstable.out.find("warning") != std::string::npos);
}

TEST_CASE("cli augment/eval: counts, filtering and report") {
  write("glyphs.json", kGlyphs);
  REQUIRE(gcn_cli("train -q -c glyphs.json -o glyph_run").code == 0);
  REQUIRE(gcn_cli("dataset build -c glyphs.json --set dataset.session=1 -o test_set").code == 0);

  const auto a = gcn_cli("augment glyph_run/checkpoints -p 3 -e 2 -t 0 -o aug_all");
  REQUIRE(a.code == 0);
  std::set<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(work() / "aug_all"))
    if (entry.path().extension() == ".ppm") files.insert(fs::relative(entry.path(), work() / "aug_all").string());
  CHECK(files.size() == 18);
  CHECK(files.count("happy/2_0.ppm") == 1);
  const auto kept = Json::parse(detail::read_file((work() / "aug_all/manifest.json").string()));
  CHECK(kept["samples"].size() == 18);
  CHECK(kept["params"]["generated"] == 18);

  const auto strict = gcn_cli("augment glyph_run/checkpoints -p 3 -e 2 -t 1 -o aug_none");
  REQUIRE(strict.code == 0);
  CHECK(Json::parse(detail::read_file((work() / "aug_none/manifest.json").string()))["samples"].empty());
  CHECK(count(detail::read_file((work() / "aug_none/rejections.csv").string()), "\n") == 19);
  CHECK(gcn_cli("augment glyph_run/checkpoints -p 4 -e 2 -o aug_bad").code == 2);

  const auto e = gcn_cli("eval --original glyph_run/data/train/manifest.json --synthesized aug_all/manifest.json "
                         "--test test_set/manifest.json -c glyphs.json -o report.json");
  REQUIRE(e.code == 0);
  const auto report = augmentation_report_from_json(Json::parse(detail::read_file((work() / "report.json").string())), "report");
  CHECK(report.generated == 18);
  CHECK(report.kept == 18);
  CHECK(report.test_size == 6);

  const auto same = gcn_cli("eval --original glyph_run/data/train/manifest.json --synthesized "
                            "glyph_run/data/train/manifest.json --test test_set/manifest.json -c glyphs.json -o same.json");
  REQUIRE(same.code == 0);
  const auto s = augmentation_report_from_json(Json::parse(detail::read_file((work() / "same.json").string())), "report");
  CHECK(s.original_accuracy == s.synthesized_accuracy);
  CHECK(gcn_cli("eval --original glyph_run/data/train/manifest.json --synthesized aug_none/manifest.json "
                "--test test_set/manifest.json -c glyphs.json")
            .code == 2);
}
