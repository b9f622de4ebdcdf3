#include "latkit/store.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>

#include "latkit/binio.hpp"
#include "latkit/error.hpp"
#include "latkit/log.hpp"

namespace latkit {

namespace {

using nlohmann::json;

constexpr const char* kStoreFormat = "latkit-store/1";

MetricKind parse_metric_kind(const std::string& s) {
  for (auto k : {MetricKind::accuracy, MetricKind::roc_auc, MetricKind::token_loss, MetricKind::success_rate}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown metric kind '" + s + "'");
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw Error("short write to " + path.string());
}

/// Complete lines of an append-only log. A trailing line without newline is
/// the remains of an interrupted write and is ignored.
std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  if (!std::filesystem::exists(path)) return out;
  const auto text = binio::read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      log_warning("ignoring incomplete last line of " + path.string());
      break;
    }
    if (nl > pos) out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string record_to_json(const EvalRecord& r) {
  json j;
  j["run_id"] = r.run_id;
  j["mode"] = r.mode;
  j["epsilon"] = r.epsilon;
  j["split_index"] = r.split_index;
  j["seed"] = r.seed;
  j["step"] = r.step;
  j["clean_kind"] = std::string(to_string(r.clean_kind));
  j["robust_kind"] = std::string(to_string(r.robust_kind));
  j["backdoor_kind"] = std::string(to_string(r.backdoor_kind));
  j["clean"] = r.clean;
  j["robust"] = r.robust;
  j["robust_per_kind"] = r.robust_per_kind;
  j["backdoor"] = r.backdoor;
  j["backdoor_per_spec"] = r.backdoor_per_spec;
  return j.dump();
}

EvalRecord record_from_json(const std::string& line) {
  try {
    const auto j = json::parse(line);
    EvalRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.epsilon = j.at("epsilon").get<double>();
    r.split_index = j.at("split_index").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.step = j.at("step").get<std::size_t>();
    r.clean_kind = parse_metric_kind(j.at("clean_kind").get<std::string>());
    r.robust_kind = parse_metric_kind(j.at("robust_kind").get<std::string>());
    r.backdoor_kind = parse_metric_kind(j.at("backdoor_kind").get<std::string>());
    r.clean = j.at("clean").get<double>();
    r.robust = j.at("robust").get<double>();
    r.robust_per_kind = j.at("robust_per_kind").get<std::map<std::string, double>>();
    r.backdoor = j.at("backdoor").get<double>();
    r.backdoor_per_spec = j.at("backdoor_per_spec").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed record: ") + e.what());
  }
}

ResultsStore ResultsStore::open_for(const std::filesystem::path& dir, const std::string& manifest_canonical) {
  std::filesystem::create_directories(dir);
  const auto meta = dir / "store.json";
  if (!std::filesystem::exists(meta)) {
    json j;
    j["format"] = kStoreFormat;
    j["manifest"] = json::parse(manifest_canonical);
    binio::write_file_atomic(meta, j.dump(2) + "\n");
  }
  ResultsStore s(dir);
  s.load();
  if (json::parse(s.manifest_) != json::parse(manifest_canonical)) {
    throw ConfigError("store " + dir.string() +
                      " was produced by a different manifest; choose another output directory");
  }
  return s;
}

ResultsStore ResultsStore::open(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "store.json")) throw FormatError("no results store at " + dir.string());
  ResultsStore s(dir);
  s.load();
  return s;
}

void ResultsStore::load() {
  try {
    const auto meta = json::parse(binio::read_file(dir_ / "store.json"));
    if (meta.at("format") != kStoreFormat) throw FormatError("unsupported store format in " + dir_.string());
    manifest_ = meta.at("manifest").dump();
  } catch (const json::exception& e) {
    throw FormatError("malformed store.json in " + dir_.string() + ": " + e.what());
  }
  for (const auto& line : read_lines(dir_ / "registry.jsonl")) {
    try {
      const auto j = json::parse(line);
      RunEntry e;
      e.run_id = j.at("run_id").get<std::string>();
      e.fingerprint = j.at("fingerprint").get<std::string>();
      e.steps = j.at("steps").get<std::vector<std::size_t>>();
      e.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
      if (!runs_.count(e.run_id)) run_order_.push_back(e.run_id);
      runs_[e.run_id] = std::move(e);
    } catch (const json::exception& e) {
      throw FormatError("malformed registry line in " + dir_.string() + ": " + e.what());
    }
  }
  for (const auto& line : read_lines(dir_ / "records.jsonl")) log_.push_back(record_from_json(line));
}

bool ResultsStore::has_run(const std::string& run_id) const { return runs_.count(run_id) != 0; }

void ResultsStore::commit(const RunEntry& entry, const std::vector<EvalRecord>& records, bool force) {
  if (has_run(entry.run_id) && !force) {
    throw ContractError("run " + entry.run_id + " is already complete in " + dir_.string() + " (use --force)");
  }
  for (const auto& r : records) {
    if (r.run_id != entry.run_id) throw ContractError("record of " + r.run_id + " committed under " + entry.run_id);
    append_line(dir_ / "records.jsonl", record_to_json(r));
    log_.push_back(r);
  }
  json j;
  j["run_id"] = entry.run_id;
  j["fingerprint"] = entry.fingerprint;
  j["steps"] = entry.steps;
  j["checkpoints"] = entry.checkpoints;
  append_line(dir_ / "registry.jsonl", j.dump());
  if (!runs_.count(entry.run_id)) run_order_.push_back(entry.run_id);
  runs_[entry.run_id] = entry;
}

std::vector<EvalRecord> ResultsStore::run_records(const std::string& run_id) const {
  std::map<std::size_t, const EvalRecord*> latest;
  for (const auto& r : log_)
    if (r.run_id == run_id) latest[r.step] = &r;
  std::vector<EvalRecord> out;
  for (const auto& [step, r] : latest) out.push_back(*r);
  return out;
}

std::vector<EvalRecord> ResultsStore::records() const {
  std::vector<EvalRecord> out;
  for (const auto& id : run_order_) {
    auto rs = run_records(id);
    out.insert(out.end(), rs.begin(), rs.end());
  }
  return out;
}

std::string records_csv(const std::vector<EvalRecord>& records) {
  std::vector<ParetoPoint> points;
  for (std::size_t i = 0; i < records.size(); ++i) {
    points.push_back({records[i].oriented_clean(), records[i].oriented_robust(), i});
  }
  std::set<std::pair<double, double>> front;
  if (!points.empty()) {
    for (const auto& p : pareto_frontier(points)) front.insert({p.clean, p.robust});
  }
  std::string out = std::string(kRecordsCsvHeader) + "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out += r.run_id + "," + r.mode + "," + format_double(r.epsilon) + "," + std::to_string(r.split_index) + "," +
           std::to_string(r.seed) + "," + std::to_string(r.step) + "," + r.metric_kind() + "," +
           format_double(r.clean) + "," + format_double(r.robust) + "," + format_double(r.backdoor) + "," +
           (front.count({points[i].clean, points[i].robust}) ? "1" : "0") + "\n";
  }
  return out;
}

void ResultsStore::write_csv(const std::vector<std::string>& order) const {
  std::vector<std::string> ids;
  std::set<std::string> listed;
  for (const auto& id : order) {
    listed.insert(id);
    if (has_run(id)) ids.push_back(id);
  }
  for (const auto& id : run_order_)
    if (!listed.count(id)) ids.push_back(id);
  std::vector<EvalRecord> rows;
  for (const auto& id : ids) {
    auto rs = run_records(id);
    rows.insert(rows.end(), rs.begin(), rs.end());
  }
  binio::write_file_atomic(dir_ / "records.csv", records_csv(rows));
}

std::filesystem::path ResultsStore::checkpoint_path(const std::string& run_id, std::size_t step) const {
  return dir_ / "checkpoints" / run_id / ("step-" + std::to_string(step) + ".ckpt");
}

}  // namespace latkit
