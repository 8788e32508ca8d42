#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "detpo/cli/commands.hpp"
#include "detpo/config.hpp"
#include "detpo/detections_io.hpp"
#include "detpo/error.hpp"
#include "scenario.hpp"

using namespace detpo;
namespace fs = std::filesystem;

namespace {

const fs::path kData = DETPO_TEST_DATA_DIR;

// Two 100x100 images, one box per class per image.
fs::path write_coco(const fs::path& dir, const std::vector<std::string>& names) {
  nlohmann::json doc;
  doc["images"] = {{{"id", 1}, {"file_name", "a.jpg"}, {"width", 100}, {"height", 100}},
                   {{"id", 2}, {"file_name", "b.jpg"}, {"width", 100}, {"height", 100}}};
  doc["categories"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  int ann = 1;
  for (std::size_t c = 0; c < names.size(); ++c) {
    doc["categories"].push_back({{"id", c + 1}, {"name", names[c]}});
    for (int img = 1; img <= 2; ++img) {
      doc["annotations"].push_back({{"id", ann++},
                                    {"image_id", img},
                                    {"category_id", c + 1},
                                    {"bbox", {10 + 20 * c, 10, 15, 15}}});
    }
  }
  const fs::path file = dir / "coco.json";
  std::ofstream(file) << doc.dump();
  return file;
}

void mock_detector(scenario::MockRig& rig) {
  rig.model->detect = [](const std::string&, const std::string&, ImageId) {
    return std::vector<scenario::Box>{{{10, 10, 25, 25}, 0.8}};
  };
}

cli::DatasetRef tiny(const std::string& split) {
  cli::DatasetRef ref;
  ref.path = kData / "tiny";
  ref.split = split;
  return ref;
}

}  // namespace

TEST(Interpolate, ReplacesVariables) {
  ::setenv("DETPO_TEST_VAR", "abc", 1);
  const auto doc = interpolate_env(nlohmann::json::parse(
      R"({"a": "x${DETPO_TEST_VAR}y", "b": ["${DETPO_TEST_VAR}"], "c": 1, "d": "$${HOME}"})"));
  EXPECT_EQ(doc["a"], "xabcy");
  EXPECT_EQ(doc["b"][0], "abc");
  EXPECT_EQ(doc["c"], 1);
  EXPECT_EQ(doc["d"], "${HOME}");
  ::unsetenv("DETPO_TEST_UNSET_VAR");
  EXPECT_THROW(interpolate_env(std::string("${DETPO_TEST_UNSET_VAR}")), ConfigError);
}

TEST(RunConfigFile, LoadsAndResolvesPaths) {
  const auto c = RunConfig::load(kData / "run_config.json");
  EXPECT_EQ(c.dataset, kData / "tiny");
  EXPECT_EQ(c.val_split, "valid");
  EXPECT_EQ(c.backend.kind, BackendKind::kMock);
  EXPECT_EQ(c.optimizer.t_max, 3);
  EXPECT_EQ(c.optimizer.seed, 7u);
  EXPECT_EQ(c.hash(), RunConfig::load(kData / "run_config.json").hash());
  RunConfig other = c;
  other.optimizer.t_max = 4;
  EXPECT_NE(other.hash(), c.hash());
  EXPECT_THROW(RunConfig::load(kData / "does_not_exist.json"), ConfigError);
}

TEST(Datasets, SplitDirectoryResolution) {
  EXPECT_EQ(cli::resolve_annotation_file(tiny("val")),
            kData / "tiny" / "valid" / "_annotations.coco.json");
  const auto ds = cli::load_dataset(tiny("train"));
  EXPECT_EQ(ds.classes.size(), 2u);
  EXPECT_EQ(ds.classes[0].description, "domestic cat");
  EXPECT_THROW(cli::load_dataset(tiny("nope")), DatasetError);
}

TEST(Detect, OneRequestPerImageAndClass) {
  scenario::TempDir dir;
  scenario::MockRig rig;
  mock_detector(rig);
  cli::DetectArgs args;
  args.dataset.path = write_coco(dir.path, {"dog"});
  args.out_dir = dir.path / "out";
  const auto out = cli::run_detect(args, *rig.backend);
  EXPECT_EQ(rig.transport->call_count(), 2u);
  EXPECT_EQ(out.run.requests.size(), 2u);
  const auto ds = cli::load_dataset(args.dataset);
  const auto back = read_detections_file(out.detections_file, ds);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].score, 0.8);
  EXPECT_TRUE(fs::exists(out.usage_file));
  EXPECT_TRUE(fs::exists(out.trace_file));
}

TEST(Detect, MultiClassUsesOneRequestPerImage) {
  scenario::TempDir dir;
  scenario::MockRig rig;
  rig.transport = std::make_shared<MockTransport>(MockScript::from_json(nlohmann::json::parse(
      R"({"rules": [{"contains": ["\"cat\", \"dog\", \"bird\""],
                     "text": "[{\"bbox_2d\": [1, 1, 9, 9], \"label\": \"bird\"}]"}]})")));
  Backend backend({}, rig.transport, [](std::chrono::milliseconds) {});
  cli::DetectArgs args;
  args.dataset.path = write_coco(dir.path, {"cat", "dog", "bird"});
  args.mode = DetectMode::kMultiClass;
  args.out_dir = dir.path / "out";
  const auto out = cli::run_detect(args, backend);
  EXPECT_EQ(rig.transport->call_count(), 2u);
  ASSERT_EQ(out.run.detections.size(), 2u);
  EXPECT_EQ(out.run.detections[0].class_id, 2);
}

TEST(Detect, MissingApiKeyIsConfigError) {
  const auto doc = nlohmann::json::parse(
      R"({"kind": "http", "endpoint": "http://127.0.0.1:9/v1", "api_key_env": "DETPO_TEST_NO_KEY"})");
  ::unsetenv("DETPO_TEST_NO_KEY");
  EXPECT_THROW(make_backend(BackendDescriptor::from_json(doc)), ConfigError);
}

TEST(Evaluate, WritesAllArtifacts) {
  scenario::TempDir dir;
  scenario::MockRig rig;
  mock_detector(rig);
  cli::DetectArgs args;
  args.dataset.path = write_coco(dir.path, {"dog"});
  args.out_dir = dir.path / "det";
  const auto det = cli::run_detect(args, *rig.backend);
  cli::EvaluateArgs eval;
  eval.dataset = args.dataset;
  eval.detections = det.detections_file;
  eval.out_dir = dir.path / "eval";
  const auto out = cli::run_evaluate(eval);
  EXPECT_DOUBLE_EQ(out.eval.map50, 1.0);
  for (const char* name : {"eval.json", "tide.json", "confusion.json", "confusion.csv"}) {
    EXPECT_TRUE(fs::exists(eval.out_dir / name)) << name;
  }
}

TEST(Report, ConsistentWithRunArtifacts) {
  scenario::TempDir dir;
  const auto config = RunConfig::load(kData / "run_config.json");
  auto backend = make_backend(config.backend);

  cli::OptimizeArgs opt;
  opt.dataset = tiny("train");
  opt.val = tiny("valid");
  opt.config = config.optimizer;
  opt.out_dir = dir.path / "opt";
  opt.config_hash = config.hash();
  const auto optimized = cli::run_optimize(opt, *backend);

  cli::DetectArgs det;
  det.dataset = tiny("test");
  det.prompt_file = optimized.prompt_file;
  det.out_dir = dir.path / "det";
  det.config_hash = config.hash();
  const auto detected = cli::run_detect(det, *backend);

  cli::EvaluateArgs eval;
  eval.dataset = tiny("test");
  eval.detections = detected.detections_file;
  eval.out_dir = dir.path / "eval";
  const auto evaluated = cli::run_evaluate(eval);

  ReportInputs inputs;
  inputs.traces = {optimized.trace_file, detected.trace_file};
  inputs.evals = {evaluated.eval_file};
  inputs.prompt_file = optimized.prompt_file;
  const auto summary = cli::run_report(inputs, dir.path / "report.md");

  ASSERT_EQ(summary.classes.size(), 2u);
  EXPECT_EQ(summary.classes[0].name, "cat");
  EXPECT_EQ(summary.classes[1].name, "dog");
  for (const auto& row : summary.classes) {
    EXPECT_FALSE(row.provenance.empty());
    ASSERT_EQ(row.test_ap.size(), 1u);
    EXPECT_TRUE(row.test_ap[0].has_value());
  }
  EXPECT_NEAR(*summary.classes[0].test_ap[0], evaluated.eval.per_class[0].ap, 1e-12);
  EXPECT_EQ(summary.config_hashes, (std::vector<std::string>{config.hash(), config.hash()}));

  Usage expected;
  for (const auto& r : detected.run.requests) expected += r.usage;
  for (const auto& c : optimized.result.classes) {
    for (const auto& e : c.trace.entries()) {
      if (e.value("type", "") == "request") {
        expected.prompt_tokens += e.at("prompt_tokens").get<std::int64_t>();
        expected.completion_tokens += e.at("completion_tokens").get<std::int64_t>();
      }
    }
  }
  EXPECT_EQ(summary.total_tokens().total(), expected.total());
  EXPECT_EQ(summary.total_tokens().total(), backend->total_usage().total());
  EXPECT_TRUE(fs::exists(dir.path / "report.md"));
}
