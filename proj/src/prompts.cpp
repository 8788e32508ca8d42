#include "detpo/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "detpo/error.hpp"

#ifndef DETPO_DEFAULT_TEMPLATE_DIR
#define DETPO_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace detpo {

namespace {

constexpr std::array<std::pair<TemplateId, std::string_view>, 11> kTemplateNames{{
    {TemplateId::kSystem, "system"},
    {TemplateId::kMultiClassDetect, "multi-class-detect"},
    {TemplateId::kSingleClassDetect, "single-class-detect"},
    {TemplateId::kDetectWithInstructions, "detect-with-instructions"},
    {TemplateId::kInitSummarize, "init-summarize"},
    {TemplateId::kRefineContrastive, "refine-contrastive"},
    {TemplateId::kRefineExcludeFp, "refine-exclude-fp"},
    {TemplateId::kRefineIncludeFn, "refine-include-fn"},
    {TemplateId::kGenerateAlternative, "generate-alternative"},
    {TemplateId::kDetpoDetect, "detpo-detect"},
    {TemplateId::kVqaScore, "vqa-score"},
}};

bool is_slot_char(char ch) {
  return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == ' ';
}

// Parses `{name}` at `pos`; returns the slot name or nullopt when the brace
// is literal text.
std::optional<std::string> slot_at(std::string_view text, std::size_t pos) {
  if (text[pos] != '{' || pos + 1 >= text.size()) return std::nullopt;
  const char first = text[pos + 1];
  if (!(std::isalpha(static_cast<unsigned char>(first)) || first == '_')) return std::nullopt;
  std::size_t end = pos + 1;
  while (end < text.size() && is_slot_char(text[end])) ++end;
  if (end >= text.size() || text[end] != '}') return std::nullopt;
  return std::string(text.substr(pos + 1, end - pos - 1));
}

std::vector<std::string> scan_slots(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      ++i;
      continue;
    }
    if (auto slot = slot_at(text, i)) {
      if (std::find(out.begin(), out.end(), *slot) == out.end()) out.push_back(*slot);
      i += slot->size() + 1;
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read template file " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

struct Fence {
  std::string body;  // without the language tag
};

std::vector<Fence> find_fences(std::string_view text) {
  std::vector<Fence> out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string_view::npos) break;
    std::size_t body = open + 3;
    while (body < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[body])) || text[body] == '_' ||
            text[body] == '-' || text[body] == '+')) {
      ++body;
    }
    const auto close = text.find("```", body);
    if (close == std::string_view::npos) break;
    out.push_back({std::string(text.substr(body, close - body))});
    pos = close + 3;
  }
  return out;
}

// Reads a quoted Python/JSON string starting at `pos`. Supports triple
// quotes and backslash escapes.
std::optional<std::string> read_quoted(std::string_view s, std::size_t& pos) {
  const char q = s[pos];
  const bool triple = s.substr(pos, 3) == std::string(3, q);
  pos += triple ? 3 : 1;
  std::string out;
  while (pos < s.size()) {
    const char ch = s[pos];
    if (ch == '\\' && pos + 1 < s.size()) {
      const char next = s[pos + 1];
      switch (next) {
        case 'n':
          out += '\n';
          break;
        case 't':
          out += '\t';
          break;
        default:
          out += next;
      }
      pos += 2;
      continue;
    }
    if (triple ? s.substr(pos, 3) == std::string(3, q) : ch == q) {
      pos += triple ? 3 : 1;
      return out;
    }
    out += ch;
    ++pos;
  }
  return std::nullopt;
}

void skip_ws(std::string_view s, std::size_t& pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
}

struct Mapping {
  std::string key;
  std::string value;
};

// Finds `{ 'key': value }` mappings inside `body`.
// Reads one `'key': value` pair at `pos`; leaves `pos` after the value.
std::optional<Mapping> read_pair(std::string_view body, std::size_t& pos) {
  skip_ws(body, pos);
  if (pos >= body.size() || (body[pos] != '\'' && body[pos] != '"')) return std::nullopt;
  auto key = read_quoted(body, pos);
  if (!key) return std::nullopt;
  skip_ws(body, pos);
  if (pos >= body.size() || body[pos] != ':') return std::nullopt;
  ++pos;
  skip_ws(body, pos);
  if (pos >= body.size()) return std::nullopt;
  std::string value;
  if (body[pos] == '\'' || body[pos] == '"') {
    const std::size_t open = pos;
    auto quoted = read_quoted(body, pos);
    std::size_t after = pos;
    skip_ws(body, after);
    if (quoted && after < body.size() && (body[after] == '}' || body[after] == ',')) {
      value = *quoted;
    } else {
      // Unescaped quote inside the value (e.g. "dog's"): take everything
      // up to the last matching quote before the closing brace.
      const auto close = body.rfind('}');
      const auto last_quote =
          close == std::string_view::npos ? close : body.rfind(body[open], close);
      if (last_quote == std::string_view::npos || last_quote <= open) return std::nullopt;
      value = std::string(body.substr(open + 1, last_quote - open - 1));
      pos = last_quote + 1;
    }
  } else {
    const auto close = body.rfind('}');
    if (close == std::string_view::npos || close <= pos) return std::nullopt;
    value = trim(body.substr(pos, close - pos));
    pos = close;
  }
  return Mapping{*key, trim(value)};
}

std::vector<Mapping> find_mappings(std::string_view body) {
  std::vector<Mapping> out;
  for (std::size_t start = body.find('{'); start != std::string_view::npos;
       start = body.find('{', start + 1)) {
    std::size_t pos = start + 1;
    while (auto pair = read_pair(body, pos)) {
      out.push_back(std::move(*pair));
      skip_ws(body, pos);
      if (pos >= body.size() || body[pos] != ',') break;
      ++pos;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(TemplateId id) {
  for (const auto& [tid, name] : kTemplateNames) {
    if (tid == id) return name;
  }
  return "unknown";
}

TemplateId template_id_from_string(std::string_view name) {
  for (const auto& [tid, n] : kTemplateNames) {
    if (n == name) return tid;
  }
  throw TemplateError("unknown template id '" + std::string(name) + "'");
}

std::span<const TemplateId> all_template_ids() {
  static const std::vector<TemplateId> ids = [] {
    std::vector<TemplateId> out;
    for (const auto& entry : kTemplateNames) out.push_back(entry.first);
    return out;
  }();
  return ids;
}

bool PromptTemplate::is_optional(std::string_view slot) const {
  return std::any_of(optional.begin(), optional.end(),
                     [&](const OptionalClause& c) { return c.slot == slot; });
}

std::filesystem::path TemplateRegistry::default_directory() {
  if (const char* env = std::getenv("DETPO_TEMPLATE_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return DETPO_DEFAULT_TEMPLATE_DIR;
}

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& directory) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(directory / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError("malformed template manifest: " + std::string(e.what()));
  }
  TemplateRegistry registry;
  for (TemplateId id : all_template_ids()) {
    const std::string name(to_string(id));
    if (!manifest.contains(name)) {
      throw TemplateError("template manifest lacks '" + name + "'");
    }
    const auto& entry = manifest.at(name);
    PromptTemplate tpl;
    tpl.id = id;
    tpl.text = read_file(directory / entry.at("file").get<std::string>());
    tpl.slots = scan_slots(tpl.text);
    for (const auto& opt : entry.value("optional", nlohmann::json::array())) {
      OptionalClause clause{opt.at("slot").get<std::string>(),
                            opt.at("clause_begin").get<std::string>(),
                            opt.value("clause_end", "")};
      const auto begin = tpl.text.find(clause.begin);
      const auto marker = tpl.text.find("{" + clause.slot + "}");
      if (begin == std::string::npos || marker == std::string::npos || marker < begin ||
          tpl.text.compare(marker + clause.slot.size() + 2, clause.end.size(), clause.end) != 0) {
        throw TemplateError("optional clause for '" + clause.slot + "' does not match template " +
                            name);
      }
      tpl.optional.push_back(std::move(clause));
    }
    registry.templates_.emplace(id, std::move(tpl));
  }
  return registry;
}

const PromptTemplate& TemplateRegistry::get(TemplateId id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) {
    throw TemplateError("unknown template id '" + std::string(to_string(id)) + "'");
  }
  return it->second;
}

std::string TemplateRegistry::render(TemplateId id, const SlotMap& slots) const {
  const PromptTemplate& tpl = get(id);
  std::string text = tpl.text;

  for (const auto& clause : tpl.optional) {
    auto bound = slots.find(clause.slot);
    if (bound != slots.end() && !trim(bound->second).empty()) continue;
    const auto begin = text.find(clause.begin);
    const auto marker = text.find("{" + clause.slot + "}", begin);
    text.erase(begin, marker + clause.slot.size() + 2 + clause.end.size() - begin);
  }

  for (const auto& slot : tpl.slots) {
    if (!tpl.is_optional(slot) && !slots.contains(slot)) {
      throw TemplateError("template '" + std::string(to_string(id)) + "' needs slot {" + slot +
                          "}");
    }
  }

  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if ((ch == '{' || ch == '}') && i + 1 < text.size() && text[i + 1] == ch) {
      out += ch;
      ++i;
      continue;
    }
    if (ch == '{') {
      if (auto slot = slot_at(text, i)) {
        auto value = slots.find(*slot);
        if (value != slots.end()) out += value->second;
        i += slot->size() + 1;
        continue;
      }
    }
    out += ch;
  }
  return out;
}

const char* to_string(ExtractionQuality quality) {
  switch (quality) {
    case ExtractionQuality::kFencedMapping:
      return "fenced_mapping";
    case ExtractionQuality::kLastFence:
      return "last_fence";
    case ExtractionQuality::kParagraph:
      return "paragraph";
  }
  return "paragraph";
}

ExtractedDefinition extract_definition(std::string_view model_text, std::string_view class_name) {
  if (trim(model_text).empty()) {
    throw TemplateError("empty refinement output");
  }
  const auto fences = find_fences(model_text);
  const std::string wanted = lower(trim(class_name));

  for (auto it = fences.rbegin(); it != fences.rend(); ++it) {
    const auto mappings = find_mappings(it->body);
    for (const auto& m : mappings) {
      if (lower(trim(m.key)) == wanted && !m.value.empty()) {
        return {m.value, ExtractionQuality::kFencedMapping};
      }
    }
    if (mappings.size() == 1 && !mappings.front().value.empty()) {
      return {mappings.front().value, ExtractionQuality::kFencedMapping};
    }
  }
  for (auto it = fences.rbegin(); it != fences.rend(); ++it) {
    auto body = trim(it->body);
    if (!body.empty()) return {body, ExtractionQuality::kLastFence};
  }

  // Trailing paragraph: text after the last blank line.
  std::string text = trim(model_text);
  std::size_t cut = std::string::npos;
  for (std::size_t pos = text.find('\n'); pos != std::string::npos; pos = text.find('\n', pos + 1)) {
    std::size_t next = pos + 1;
    while (next < text.size() && (text[next] == ' ' || text[next] == '\t' || text[next] == '\r')) {
      ++next;
    }
    if (next < text.size() && text[next] == '\n') cut = next;
  }
  auto paragraph = trim(cut == std::string::npos ? text : text.substr(cut + 1));
  if (paragraph.empty()) throw TemplateError("no definition found in refinement output");
  return {paragraph, ExtractionQuality::kParagraph};
}

std::string fenced_definition(std::string_view class_name, std::string_view definition) {
  auto escape = [](std::string_view s) {
    std::string out;
    for (char ch : s) {
      switch (ch) {
        case '\\':
          out += "\\\\";
          break;
        case '\'':
          out += "\\'";
          break;
        case '\n':
          out += "\\n";
          break;
        case '\t':
          out += "\\t";
          break;
        default:
          out += ch;
      }
    }
    return out;
  };
  return "```python {'" + escape(class_name) + "': '" + escape(definition) + "'}```";
}

std::string category_prompt(std::span<const ClassSpec> classes) {
  std::string out;
  for (const auto& c : classes) {
    if (!out.empty()) out += ", ";
    out += "\"" + c.name + "\"";
  }
  return out;
}

std::string multi_class_instructions(std::span<const ClassSpec> classes,
                                     const std::map<ClassId, std::string>& definitions) {
  std::string out;
  for (const auto& c : classes) {
    std::string text;
    if (auto it = definitions.find(c.id); it != definitions.end()) {
      text = it->second;
    } else {
      text = c.description;
      if (!c.instructions.empty()) text += (text.empty() ? "" : " ") + c.instructions;
    }
    if (trim(text).empty()) continue;
    if (!out.empty()) out += "\n";
    out += c.name + ": " + text;
  }
  return out;
}

}  // namespace detpo
