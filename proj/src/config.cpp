#include "detpo/config.hpp"

#include <cstdlib>
#include <fstream>

#include "detpo/hash.hpp"

namespace detpo {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

}  // namespace

std::string interpolate_env(const std::string& text) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto dollar = text.find('$', pos);
    if (dollar == std::string::npos) {
      out.append(text, pos);
      break;
    }
    out.append(text, pos, dollar - pos);
    if (text.compare(dollar, 3, "$${") == 0) {
      out += "${";
      pos = dollar + 3;
      continue;
    }
    if (text.compare(dollar, 2, "${") != 0) {
      out += '$';
      pos = dollar + 1;
      continue;
    }
    const auto close = text.find('}', dollar + 2);
    if (close == std::string::npos) throw ConfigError("unterminated ${ in '" + text + "'");
    const std::string name = text.substr(dollar + 2, close - dollar - 2);
    const char* value = std::getenv(name.c_str());
    if (value == nullptr) throw ConfigError("environment variable " + name + " is not set");
    out += value;
    pos = close + 1;
  }
  return out;
}

nlohmann::json interpolate_env(const nlohmann::json& doc) {
  if (doc.is_string()) return interpolate_env(doc.get<std::string>());
  if (doc.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : doc) out.push_back(interpolate_env(v));
    return out;
  }
  if (doc.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : doc.items()) out[k] = interpolate_env(v);
    return out;
  }
  return doc;
}

RunConfig RunConfig::from_json(const nlohmann::json& raw, const std::filesystem::path& base_dir) {
  if (!raw.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json doc = interpolate_env(raw);
  RunConfig c;
  try {
    if (doc.contains("dataset")) c.dataset = resolve(base_dir, doc.at("dataset").get<std::string>());
    c.split = doc.value("split", c.split);
    if (doc.contains("val_split")) c.val_split = doc.at("val_split").get<std::string>();
    if (doc.contains("metadata")) {
      c.metadata = resolve(base_dir, doc.at("metadata").get<std::string>());
    }
    if (doc.contains("templates")) {
      c.templates = resolve(base_dir, doc.at("templates").get<std::string>());
    }
    if (doc.contains("mode")) c.mode = detect_mode_from_string(doc.at("mode").get<std::string>());
    c.score_threshold = doc.value("score_threshold", c.score_threshold);
    if (doc.contains("backend")) c.backend = BackendDescriptor::from_json(doc.at("backend"), base_dir);
    if (doc.contains("scorer")) c.scorer = BackendDescriptor::from_json(doc.at("scorer"), base_dir);
    if (doc.contains("optimizer")) c.optimizer = OptimizerConfig::from_json(doc.at("optimizer"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + file.string() + " is not valid JSON");
  return from_json(doc, file.parent_path());
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json out;
  out["dataset"] = dataset.generic_string();
  out["split"] = split;
  out["val_split"] = val_split ? nlohmann::ordered_json(*val_split) : nlohmann::ordered_json(nullptr);
  out["metadata"] =
      metadata ? nlohmann::ordered_json(metadata->generic_string()) : nlohmann::ordered_json(nullptr);
  out["templates"] = templates.generic_string();
  out["mode"] = detpo::to_string(mode);
  out["score_threshold"] = score_threshold;
  out["backend"] = backend.to_json();
  out["scorer"] = scorer ? scorer->to_json() : nlohmann::ordered_json(nullptr);
  out["optimizer"] = optimizer.to_json();
  return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

}  // namespace detpo
