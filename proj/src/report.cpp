#include "detpo/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "detpo/error.hpp"
#include "detpo/hash.hpp"

namespace detpo {

namespace {

std::string fmt(std::optional<double> v, int digits = 4) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, *v);
  return buf;
}

std::optional<double> number_or_null(const nlohmann::json& doc, const char* key) {
  if (doc.contains(key) && doc.at(key).is_number()) return doc.at(key).get<double>();
  return std::nullopt;
}

ClassRow& row_for(ReportSummary& summary, const std::string& name) {
  auto it = std::find_if(summary.classes.begin(), summary.classes.end(),
                         [&](const ClassRow& r) { return r.name == name; });
  if (it != summary.classes.end()) return *it;
  ClassRow row;
  row.name = name;
  row.test_ap.resize(summary.eval_names.size());
  summary.classes.push_back(std::move(row));
  return summary.classes.back();
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Usage ReportSummary::total_tokens() const {
  Usage total;
  for (const auto& [phase, usage] : tokens_by_phase) total += usage;
  return total;
}

ReportSummary summarize_report(const ReportInputs& inputs) {
  ReportSummary summary;
  for (const auto& file : inputs.evals) {
    // Files written by `evaluate` are all eval.json; name them by directory.
    const std::string dir = file.parent_path().filename().string();
    summary.eval_names.push_back(file.filename() == "eval.json" && !dir.empty()
                                     ? dir
                                     : file.stem().string());
  }

  if (inputs.prompt_file) {
    const std::string bytes = read_file(*inputs.prompt_file);
    summary.prompt_file_hash = fnv1a_hex(bytes);
    const auto doc = nlohmann::ordered_json::parse(bytes, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw Error("prompt file " + inputs.prompt_file->string() + " is not a JSON object");
    }
    for (const auto& [name, entry] : doc.items()) {
      ClassRow& row = row_for(summary, name);
      if (entry.is_object()) {
        row.train_map = number_or_null(entry, "train_map");
        row.val_map = number_or_null(entry, "val_map");
        row.provenance = entry.value("provenance", "");
      }
    }
  }

  for (std::size_t e = 0; e < inputs.evals.size(); ++e) {
    const auto doc = nlohmann::json::parse(read_file(inputs.evals[e]), nullptr, false);
    if (doc.is_discarded() || !doc.contains("per_class")) {
      throw Error("eval file " + inputs.evals[e].string() + " lacks per_class results");
    }
    for (const auto& entry : doc.at("per_class")) {
      ClassRow& row = row_for(summary, entry.value("name", std::to_string(entry.value("class_id", 0))));
      row.test_ap[e] = number_or_null(entry, "ap");
    }
  }

  for (const auto& file : inputs.traces) {
    const TraceFile trace = read_trace(file);
    summary.config_hashes.push_back(trace.header.value("config_hash", ""));
    summary.wall_clock_ms += trace.header.value("wall_clock_ms", std::int64_t{0});
    for (const auto& entry : trace.entries) {
      const std::string type = entry.value("type", "");
      if (type == "request") {
        const RequestRecord r = request_record_from_json(entry);
        summary.tokens_by_phase[r.phase] += r.usage;
        summary.tokens_by_step[{r.phase, r.step}] += r.usage;
        ++summary.requests_by_phase[r.phase];
        summary.model_latency_ms += r.latency_ms;
      } else if (type == "evaluation" && entry.value("split", "") == "train" &&
                 entry.value("iteration", -1) == 0) {
        const double map = entry.value("map", 0.0);
        summary.iterations[entry.value("class", "")].push_back({0, "initial", map, map});
      } else if (type == "iteration") {
        const std::string action = entry.value("action", "");
        if (action != "accept" && action != "revert") continue;
        summary.iterations[entry.value("class", "")].push_back(
            {entry.value("iteration", 0), action, entry.value("map", 0.0),
             entry.value("accepted_map", 0.0)});
      }
    }
  }
  return summary;
}

std::string render_report(const ReportSummary& summary) {
  std::ostringstream out;
  out << "# DetPO report\n\n";
  out << "- Config hash: ";
  if (summary.config_hashes.empty()) out << "-";
  for (std::size_t i = 0; i < summary.config_hashes.size(); ++i) {
    out << (i ? ", " : "") << "`" << summary.config_hashes[i] << "`";
  }
  out << "\n- Prompt file hash: "
      << (summary.prompt_file_hash.empty() ? "-" : "`" + summary.prompt_file_hash + "`") << "\n\n";

  out << "## mAP by class\n\n| Class | Provenance | Train mAP | Val mAP |";
  for (const auto& name : summary.eval_names) out << " " << name << " AP |";
  out << "\n|---|---|---|---|";
  for (std::size_t i = 0; i < summary.eval_names.size(); ++i) out << "---|";
  out << "\n";
  for (const auto& row : summary.classes) {
    out << "| " << row.name << " | " << (row.provenance.empty() ? "-" : row.provenance) << " | "
        << fmt(row.train_map) << " | " << fmt(row.val_map) << " |";
    for (const auto& ap : row.test_ap) out << " " << fmt(ap) << " |";
    out << "\n";
  }

  out << "\n## Iterations\n";
  if (summary.iterations.empty()) out << "\nNo optimization iterations recorded.\n";
  for (const auto& row : summary.classes) {
    const auto it = summary.iterations.find(row.name);
    if (it == summary.iterations.end()) continue;
    out << "\n### " << row.name << "\n\n| t | Action | mAP | Accepted mAP |\n|---|---|---|---|\n";
    for (const auto& p : it->second) {
      out << "| " << p.iteration << " | " << p.action << " | " << fmt(p.map) << " | "
          << fmt(p.accepted_map) << " |\n";
    }
  }

  const Usage total = summary.total_tokens();
  out << "\n## Tokens by phase\n\n| Phase | Requests | Prompt | Completion | Total |\n"
         "|---|---|---|---|---|\n";
  std::size_t requests = 0;
  for (const auto& [phase, usage] : summary.tokens_by_phase) {
    const std::size_t n = summary.requests_by_phase.at(phase);
    requests += n;
    out << "| " << phase << " | " << n << " | " << usage.prompt_tokens << " | "
        << usage.completion_tokens << " | " << usage.total() << " |\n";
  }
  out << "| **total** | " << requests << " | " << total.prompt_tokens << " | "
      << total.completion_tokens << " | " << total.total() << " |\n";

  out << "\n### Tokens by step\n\n| Phase | Step | Prompt | Completion | Total |\n"
         "|---|---|---|---|---|\n";
  for (const auto& [key, usage] : summary.tokens_by_step) {
    out << "| " << key.first << " | " << key.second << " | " << usage.prompt_tokens << " | "
        << usage.completion_tokens << " | " << usage.total() << " |\n";
  }

  out << "\n## Wall clock\n\n| Measure | ms |\n|---|---|\n"
      << "| Command wall clock | " << summary.wall_clock_ms << " |\n"
      << "| Summed model latency | " << summary.model_latency_ms << " |\n";
  return out.str();
}

}  // namespace detpo
