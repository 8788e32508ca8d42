#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "detpo/dataset.hpp"

namespace detpo {

enum class TemplateId {
  kSystem,
  kMultiClassDetect,
  kSingleClassDetect,
  kDetectWithInstructions,
  kInitSummarize,
  kRefineContrastive,
  kRefineExcludeFp,
  kRefineIncludeFn,
  kGenerateAlternative,
  kDetpoDetect,
  kVqaScore,
};

std::string_view to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view name);
std::span<const TemplateId> all_template_ids();

using SlotMap = std::map<std::string, std::string>;

// A clause dropped from the rendered text when its slot is empty.
struct OptionalClause {
  std::string slot;
  std::string begin;  // literal text where the clause starts
  std::string end;    // literal text right after the slot marker, also dropped
};

struct PromptTemplate {
  TemplateId id = TemplateId::kSystem;
  std::string text;
  std::vector<std::string> slots;  // every {name} marker, in first-use order
  std::vector<OptionalClause> optional;

  bool is_optional(std::string_view slot) const;
};

/// Prompt templates loaded from a directory holding one UTF-8 file per
/// template plus manifest.json. Slots use `{name}`; `{{` and `}}` render as
/// literal braces.
class TemplateRegistry {
 public:
  static TemplateRegistry load(const std::filesystem::path& directory);
  // $DETPO_TEMPLATE_DIR if set, otherwise the directory baked in at build time.
  static std::filesystem::path default_directory();
  static TemplateRegistry load_default() { return load(default_directory()); }

  const PromptTemplate& get(TemplateId id) const;

  // Throws TemplateError when a required slot is unbound.
  std::string render(TemplateId id, const SlotMap& slots) const;

 private:
  std::map<TemplateId, PromptTemplate> templates_;
};

enum class ExtractionQuality { kFencedMapping, kLastFence, kParagraph };

const char* to_string(ExtractionQuality quality);

struct ExtractedDefinition {
  std::string text;
  ExtractionQuality quality = ExtractionQuality::kFencedMapping;

  bool low_confidence() const { return quality == ExtractionQuality::kParagraph; }
};

/// Pulls the updated class definition out of a refinement answer. Prefers a
/// fenced {'<class>': <definition>} mapping, then the last fenced block, then
/// the trailing paragraph. Throws TemplateError on empty output.
ExtractedDefinition extract_definition(std::string_view model_text, std::string_view class_name);

// Wraps a definition the way refinement answers are expected to look.
std::string fenced_definition(std::string_view class_name, std::string_view definition);

// "name1", "name2", ... for the multi-class prompts.
std::string category_prompt(std::span<const ClassSpec> classes);

// One "name: description" line per class with a non-empty description.
std::string multi_class_instructions(std::span<const ClassSpec> classes,
                                     const std::map<ClassId, std::string>& definitions = {});

}  // namespace detpo
