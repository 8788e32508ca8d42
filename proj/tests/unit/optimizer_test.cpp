#include <fstream>

#include <gtest/gtest.h>

#include "detpo/error.hpp"
#include "detpo/optimizer.hpp"
#include "scenario.hpp"

using namespace detpo;
using scenario::Box;
using scenario::MockRig;
using scenario::Step;

namespace {

// Images 1..4 with one "cat" each at [10,10,50,50].
OptimizerInputs cat_inputs() {
  OptimizerInputs inputs;
  inputs.classes = scenario::classes({"cat"});
  std::vector<ImageRecord> images;
  std::vector<GroundTruthBox> gts;
  for (ImageId id = 1; id <= 4; ++id) {
    images.push_back(scenario::image(id));
    gts.push_back(scenario::gt(id, 0, {10, 10, 50, 50}, id));
  }
  inputs.train = DatasetSplit(SplitRole::kTrain, images, gts, 1);
  return inputs;
}

// Definition at level L finds images 1..L and fires a stray box elsewhere.
auto ladder(std::map<std::string, int> levels, int fallback) {
  return [levels, fallback](const std::string&, const std::string& def, ImageId id) {
    auto it = levels.find(def);
    const int level = it == levels.end() ? fallback : it->second;
    if (id <= level) return std::vector<Box>{{{10, 10, 50, 50}, 0.9}};
    return std::vector<Box>{{{60, 60, 90, 90}, 0.5}};
  };
}

PromptCandidate candidate(const std::string& text, Provenance provenance) {
  PromptCandidate c;
  c.text = text;
  c.provenance = provenance;
  return c;
}

std::vector<std::string> actions(const ClassOptimizationResult& r) {
  std::vector<std::string> out;
  for (const auto& h : r.state->history) out.push_back(h.action);
  return out;
}

struct Stage1 : ::testing::Test {
  MockRig rig;
  TemplateRegistry templates = TemplateRegistry::load_default();
  OptimizerConfig config;
  Rng rng{3};
  TraceLog trace;
};

}  // namespace

TEST_F(Stage1, SingleClassKeepsSummaryVerbatim) {
  const auto inputs = cat_inputs();
  rig.model->summaries["cat"] = "A small furry feline.\n\nUsually sitting.";
  ClassContext ctx{inputs, *rig.backend, templates, config, rng, trace};
  const auto c = stage1_bootstrap(inputs.classes[0], ctx);
  EXPECT_EQ(c.text, "A small furry feline.\n\nUsually sitting.");
  EXPECT_EQ(c.provenance, Provenance::kStage1);
  EXPECT_EQ(rig.count(Step::kSummarize), 1u);
  EXPECT_EQ(rig.count(Step::kRefine), 0u);
  ASSERT_EQ(rig.transport->calls().size(), 1u);
  EXPECT_EQ(rig.transport->calls()[0].image_ids, (std::vector<ImageId>{1, 2, 3, 4}));
}

TEST_F(Stage1, OneContrastivePassPerOtherClass) {
  OptimizerInputs inputs;
  inputs.classes = scenario::classes({"cat", "dog", "bird"});
  inputs.train = DatasetSplit(SplitRole::kTrain,
                              {scenario::image(1), scenario::image(2), scenario::image(3)},
                              {scenario::gt(1, 0, {0, 0, 10, 10}), scenario::gt(2, 1, {0, 0, 10, 10}),
                               scenario::gt(3, 2, {0, 0, 10, 10})},
                              3);
  rig.model->refinements["cat"] = {"cat vs dog", "cat vs bird"};
  ClassContext ctx{inputs, *rig.backend, templates, config, rng, trace};
  const auto c = stage1_bootstrap(inputs.classes[0], ctx);
  EXPECT_EQ(c.text, "cat vs bird");
  EXPECT_EQ(rig.count(Step::kRefine), 2u);
  EXPECT_EQ(rig.count_containing("cat summary"), 1u);
}

TEST_F(Stage1, NoInstancesIsAnError) {
  auto inputs = cat_inputs();
  inputs.classes = scenario::classes({"cat", "dog"});
  ClassContext ctx{inputs, *rig.backend, templates, config, rng, trace};
  EXPECT_THROW(stage1_bootstrap(inputs.classes[1], ctx), DatasetError);
}

TEST(Stage2, StrictlyImprovingNeverReverts) {
  const auto inputs = cat_inputs();
  MockRig rig;
  rig.model->summaries["cat"] = "P1";
  rig.model->refinements["cat"] = {"R1", "R2", "R3", "R4", "R5", "R6"};
  rig.model->detect = ladder({{"P1", 1}, {"R2", 2}, {"R4", 3}, {"R6", 4}}, 0);
  OptimizerConfig config;
  config.t_max = 5;
  const auto r = optimize_class(inputs.classes[0], inputs, *rig.backend,
                                TemplateRegistry::load_default(), config);
  ASSERT_FALSE(r.fell_back) << r.message;
  EXPECT_EQ(actions(r), (std::vector<std::string>{"accept", "accept", "accept", "early_stop"}));
  EXPECT_TRUE(r.state->stopped_early);
  EXPECT_EQ(r.state->best, "R6");
  EXPECT_EQ(r.state->best_iteration, 3);
  EXPECT_DOUBLE_EQ(r.state->best_map, 1.0);
  EXPECT_EQ(r.final.text, "R6");
}

TEST(Stage2, SingleIterationBudget) {
  const auto inputs = cat_inputs();
  MockRig rig;
  rig.model->detect = ladder({}, 1);
  OptimizerConfig config;
  config.t_max = 1;
  const auto r = optimize_class(inputs.classes[0], inputs, *rig.backend,
                                TemplateRegistry::load_default(), config);
  ASSERT_FALSE(r.fell_back) << r.message;
  EXPECT_EQ(r.state->history.size(), 1u);
  EXPECT_EQ(r.state->t, 1);
  EXPECT_EQ(rig.count(Step::kRefine), 2u);
}

TEST(Stage2, UsedImagesAreExcluded) {
  const auto inputs = cat_inputs();
  MockRig rig;
  rig.model->detect = ladder({}, 1);
  OptimizerConfig config;
  config.t_max = 2;
  const auto r = optimize_class(inputs.classes[0], inputs, *rig.backend,
                                TemplateRegistry::load_default(), config);
  ASSERT_FALSE(r.fell_back) << r.message;
  ASSERT_EQ(r.state->history.size(), 2u);
  const auto& first = r.state->history[0].selection;
  const auto& second = r.state->history[1].selection;
  ASSERT_TRUE(first.false_negative && second.false_negative);
  EXPECT_NE(first.false_negative->image_id, second.false_negative->image_id);
  EXPECT_FALSE(r.state->excluded.empty());
}

class Stage3 : public ::testing::Test {
 protected:
  Stage3() {
    inputs_ = cat_inputs();
    inputs_.val = DatasetSplit(SplitRole::kVal, {scenario::image(7)},
                               {scenario::gt(7, 0, {0, 0, 100, 100})}, 1);
  }

  // Validation AP is set by the height of the single predicted box.
  PromptCandidate select(std::vector<PromptCandidate>& candidates,
                         const std::map<std::string, double>& heights, const std::string& alt) {
    rig_.model->alternatives["cat"] = alt;
    rig_.model->detect = [heights](const std::string&, const std::string& def, ImageId) {
      auto it = heights.find(def);
      return std::vector<Box>{{{0, 0, 100, it == heights.end() ? 10.0 : it->second}, 0.9}};
    };
    Rng rng(1);
    TraceLog trace;
    ClassContext ctx{inputs_, *rig_.backend, templates_, config_, rng, trace};
    return stage3_select(inputs_.classes[0], candidates, ctx);
  }

  OptimizerInputs inputs_;
  MockRig rig_;
  TemplateRegistry templates_ = TemplateRegistry::load_default();
  OptimizerConfig config_;
};

TEST_F(Stage3, BetterAlternativeWins) {
  std::vector<PromptCandidate> c{candidate("P0", Provenance::kSeed),
                                 candidate("P1", Provenance::kStage1),
                                 candidate("Pstar", Provenance::kBest),
                                 candidate("PT", Provenance::kFinal)};
  const auto chosen = select(c, {{"P0", 52}, {"P1", 62}, {"Pstar", 72}, {"PT", 72}, {"Palt", 92}},
                             "Palt");
  EXPECT_EQ(chosen.text, "Palt");
  EXPECT_EQ(chosen.provenance, Provenance::kAlternative);
  EXPECT_NEAR(*chosen.val_map, 0.9, 1e-12);
}

TEST_F(Stage3, TieGoesToBest) {
  std::vector<PromptCandidate> c{candidate("Palt-like", Provenance::kFinal),
                                 candidate("Pstar", Provenance::kBest)};
  const auto chosen = select(c, {{"Pstar", 72}, {"Palt-like", 72}, {"Palt", 72}}, "Palt");
  EXPECT_EQ(chosen.text, "Pstar");
  EXPECT_EQ(chosen.provenance, Provenance::kBest);
}

TEST_F(Stage3, IdenticalTextsEvaluatedOnce) {
  std::vector<PromptCandidate> c{candidate("same", Provenance::kSeed),
                                 candidate("same", Provenance::kStage1),
                                 candidate("same", Provenance::kBest),
                                 candidate("same", Provenance::kFinal)};
  const auto chosen = select(c, {{"same", 72}}, "same");
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(rig_.count(Step::kDetect), 1u);
  EXPECT_EQ(chosen.provenance, Provenance::kBest);
}

TEST(Selection, PriorityOrder) {
  EXPECT_LT(selection_priority(Provenance::kBest), selection_priority(Provenance::kFinal));
  EXPECT_LT(selection_priority(Provenance::kFinal), selection_priority(Provenance::kAlternative));
  EXPECT_LT(selection_priority(Provenance::kAlternative), selection_priority(Provenance::kStage1));
  EXPECT_LT(selection_priority(Provenance::kStage1), selection_priority(Provenance::kSeed));
  EXPECT_LT(selection_priority(Provenance::kSeed), selection_priority(Provenance::kIteration));
  for (auto p : {Provenance::kSeed, Provenance::kStage1, Provenance::kIteration, Provenance::kBest,
                 Provenance::kFinal, Provenance::kAlternative}) {
    EXPECT_EQ(provenance_from_string(to_string(p)), p);
  }
}

TEST(Dataset, ClassWithoutInstancesIsSkipped) {
  auto inputs = cat_inputs();
  inputs.classes = scenario::classes({"cat", "unicorn"});
  inputs.classes[1].description = "a horned horse";
  MockRig rig;
  rig.model->detect = ladder({}, 4);
  OptimizerConfig config;
  config.t_max = 1;
  const auto r = optimize_dataset(inputs, *rig.backend, TemplateRegistry::load_default(), config);
  ASSERT_EQ(r.classes.size(), 2u);
  EXPECT_FALSE(r.classes[0].fell_back);
  EXPECT_TRUE(r.classes[1].fell_back);
  EXPECT_FALSE(r.classes[1].failed);
  EXPECT_EQ(r.classes[1].final.text, "a horned horse");
  EXPECT_EQ(r.classes[1].final.provenance, Provenance::kSeed);
  EXPECT_EQ(rig.count_containing("unicorn"), 0u);
  EXPECT_FALSE(r.any_failed());
}

TEST(Dataset, BackendFailureFallsBackToSeed) {
  auto inputs = cat_inputs();
  inputs.classes[0].description = "domestic cat";
  BackendDescriptor d;
  d.retry.max_retries = 0;
  Backend broken(d, std::make_shared<MockTransport>(MockScript{}), [](std::chrono::milliseconds) {});
  OptimizerConfig config;
  config.t_max = 1;
  const auto r = optimize_dataset(inputs, broken, TemplateRegistry::load_default(), config);
  EXPECT_TRUE(r.classes[0].fell_back);
  EXPECT_TRUE(r.classes[0].failed);
  EXPECT_EQ(r.classes[0].final.text, "domestic cat");
  EXPECT_TRUE(r.any_failed());
}

TEST(Config, ValidationAndJson) {
  OptimizerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.t_max = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = OptimizerConfig::from_json(nlohmann::json::parse(R"({"t_max": 4, "k_shot": 2, "seed": 9})"));
  EXPECT_EQ(c.t_max, 4);
  EXPECT_EQ(c.k_shot, 2);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.jobs, 1);
  EXPECT_EQ(OptimizerConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(PromptFile, RoundTrip) {
  auto inputs = cat_inputs();
  inputs.classes = scenario::classes({"cat", "dog"});
  DatasetOptimization result;
  ClassOptimizationResult cat;
  cat.class_id = 0;
  cat.class_name = "cat";
  cat.final = candidate("fluffy 'cat' \"quoted\"", Provenance::kBest);
  cat.final.val_map = 0.5;
  result.classes.push_back(cat);

  scenario::TempDir dir;
  const auto file = dir.path / "prompts.json";
  write_prompt_file(file, result);
  const auto prompts = read_prompt_file(file);
  ASSERT_EQ(prompts.size(), 1u);
  EXPECT_EQ(prompts.at("cat").definition, "fluffy 'cat' \"quoted\"");
  EXPECT_EQ(prompts.at("cat").provenance, "best");
  EXPECT_EQ(prompts.at("cat").val_map, 0.5);
  EXPECT_FALSE(prompts.at("cat").train_map.has_value());
  const auto defs = definitions_for(prompts, inputs.classes);
  EXPECT_EQ(defs, (std::map<ClassId, std::string>{{0, "fluffy 'cat' \"quoted\""}}));

  std::ofstream(dir.path / "bad.json") << "[1, 2]";
  EXPECT_THROW(read_prompt_file(dir.path / "bad.json"), ConfigError);
  EXPECT_THROW(read_prompt_file(dir.path / "missing.json"), ConfigError);
}
