#include "latkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "latkit/binio.hpp"
#include "latkit/experiment.hpp"
#include "latkit/store.hpp"

namespace latkit {

namespace {

constexpr double kWidth = 760, kHeight = 480;
constexpr double kLeft = 80, kRight = 200, kTop = 50, kBottom = 60;

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* mode_color(std::string_view mode) {
  if (mode == "clean") return "#1f77b4";
  if (mode == "lat") return "#d62728";
  if (mode == "at") return "#2ca02c";
  if (mode == "rlp") return "#9467bd";
  return "#222222";
}

/// Marker shape per mode: circle, square, triangle, diamond; a cross for
/// the pretrained checkpoint.
std::string marker(std::string_view mode, double x, double y, const std::string& extra = "") {
  const std::string c = mode_color(mode);
  const std::string style = " fill=\"" + c + "\" stroke=\"#000000\" stroke-width=\"0.5\"" + extra;
  const double r = 4.0;
  if (mode == "clean") return "<circle cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"" + px(r) + "\"" + style + "/>";
  if (mode == "lat") {
    return "<rect x=\"" + px(x - r) + "\" y=\"" + px(y - r) + "\" width=\"" + px(2 * r) + "\" height=\"" + px(2 * r) +
           "\"" + style + "/>";
  }
  if (mode == "at") {
    return "<polygon points=\"" + px(x) + "," + px(y - r - 1) + " " + px(x - r - 1) + "," + px(y + r) + " " +
           px(x + r + 1) + "," + px(y + r) + "\"" + style + "/>";
  }
  if (mode == "rlp") {
    return "<polygon points=\"" + px(x) + "," + px(y - r - 1) + " " + px(x + r + 1) + "," + px(y) + " " + px(x) + "," +
           px(y + r + 1) + " " + px(x - r - 1) + "," + px(y) + "\"" + style + "/>";
  }
  return "<path d=\"M" + px(x - r - 1) + " " + px(y - r - 1) + " L" + px(x + r + 1) + " " + px(y + r + 1) + " M" +
         px(x - r - 1) + " " + px(y + r + 1) + " L" + px(x + r + 1) + " " + px(y - r - 1) +
         "\" stroke=\"#000000\" stroke-width=\"2\" fill=\"none\"" + extra + "/>";
}

/// Linear map of a data range onto a pixel range; a degenerate range is
/// widened for layout only.
struct Axis {
  double lo, hi, p0, p1;
  Axis(double l, double h, double a, double b) : lo(l), hi(h), p0(a), p1(b) {
    if (!(hi > lo)) {
      const double pad = std::max(std::abs(lo) * 0.05, 1e-3);
      lo -= pad;
      hi += pad;
    }
  }
  double operator()(double v) const { return p0 + (v - lo) / (hi - lo) * (p1 - p0); }
};

class Svg {
 public:
  Svg(double w, double h, const std::string& title) {
    out_ = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) +
           "\" height=\"" + px(h) + "\" viewBox=\"0 0 " + px(w) + " " + px(h) + "\" font-family=\"sans-serif\">\n";
    out_ += "<title>" + escape(title) + "</title>\n";
    out_ += "<rect x=\"0\" y=\"0\" width=\"" + px(w) + "\" height=\"" + px(h) + "\" fill=\"#ffffff\"/>\n";
    text(w / 2 - 160, 24, title, 15, "title");
  }
  void raw(const std::string& s) { out_ += s + "\n"; }
  void text(double x, double y, const std::string& s, int size = 11, const std::string& cls = "", const char* anchor = "start") {
    out_ += "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" font-size=\"" + std::to_string(size) + "\"";
    if (!cls.empty()) out_ += " class=\"" + cls + "\"";
    out_ += " text-anchor=\"" + std::string(anchor) + "\">" + escape(s) + "</text>\n";
  }
  void line(double x0, double y0, double x1, double y1, const std::string& style) {
    out_ += "<line x1=\"" + px(x0) + "\" y1=\"" + px(y0) + "\" x2=\"" + px(x1) + "\" y2=\"" + px(y1) + "\" " + style +
            "/>\n";
  }
  /// Frame, five ticks per axis and axis titles.
  void axes(const Axis& x, const Axis& y, const std::string& xlabel, const std::string& ylabel) {
    const std::string s = "stroke=\"#000000\" stroke-width=\"1\"";
    line(x.p0, y.p0, x.p1, y.p0, s);
    line(x.p0, y.p0, x.p0, y.p1, s);
    for (int i = 0; i <= 4; ++i) {
      const double xv = x.lo + (x.hi - x.lo) * i / 4.0;
      const double yv = y.lo + (y.hi - y.lo) * i / 4.0;
      line(x(xv), y.p0, x(xv), y.p0 + 5, s);
      text(x(xv), y.p0 + 18, short_num(xv), 10, "", "middle");
      line(x.p0 - 5, y(yv), x.p0, y(yv), s);
      text(x.p0 - 8, y(yv) + 4, short_num(yv), 10, "", "end");
    }
    text((x.p0 + x.p1) / 2, y.p0 + 40, xlabel, 12, "", "middle");
    out_ += "<text x=\"" + px(x.p0 - 55) + "\" y=\"" + px((y.p0 + y.p1) / 2) +
            "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 " + px(x.p0 - 55) + " " +
            px((y.p0 + y.p1) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  }
  std::string finish() { return out_ + "</svg>\n"; }

 private:
  std::string out_;
};

std::string polyline(const std::string& run_id, const std::vector<std::pair<double, double>>& pts, const char* color,
                     const std::string& cls = "run") {
  std::string s = "<polyline class=\"" + cls + "\" data-run=\"" + escape(run_id) + "\" fill=\"none\" stroke=\"" +
                  color + "\" stroke-width=\"1\" stroke-opacity=\"0.6\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + px(pts[i].first) + "," + px(pts[i].second);
  return s + "\"/>";
}

void legend(Svg& svg, const std::vector<std::string>& modes, double x, double y) {
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const double yy = y + 18.0 * static_cast<double>(i);
    svg.raw(marker(modes[i], x, yy));
    svg.text(x + 12, yy + 4, modes[i], 11);
  }
}

std::string oriented_label(MetricKind kind, bool already_oriented, const std::string& what) {
  const auto name = std::string(to_string(kind));
  if (already_oriented || higher_is_better(kind)) return what + " " + name;
  return "-" + what + " " + name;
}

std::vector<std::string> modes_in(const std::vector<EvalRecord>& records) {
  std::vector<std::string> out;
  for (const char* m : {"pretrained", "clean", "lat", "at", "rlp"}) {
    if (std::any_of(records.begin(), records.end(), [&](const EvalRecord& r) { return r.mode == m; })) {
      out.push_back(m);
    }
  }
  return out;
}

/// Runs in record order, each with its records' indices.
std::vector<std::pair<std::string, std::vector<std::size_t>>> group_runs(const std::vector<EvalRecord>& records) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].run_id;
    if (id == kPretrainedRunId) continue;
    if (!at.count(id)) {
      at[id] = out.size();
      out.push_back({id, {}});
    }
    out[at[id]].second.push_back(i);
  }
  return out;
}

double normalized(double v, double lo, double hi) { return hi == lo ? 1.0 : (v - lo) / (hi - lo); }

ReportFiles pareto_report(const ResultsStore& store, ReportKind kind, const std::filesystem::path& dir) {
  const auto records = store.records();
  const auto runs = group_runs(records);
  const bool backdoor = kind == ReportKind::pareto_backdoor;
  const std::string name(to_string(kind));
  if (runs.empty()) {
    throw EmptyReportError(name + ": store " + store.dir().string() +
                           " holds no fine-tuning records; run a manifest with a non-empty sweep first");
  }
  std::vector<ParetoPoint> points;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    points.push_back({r.oriented_clean(), backdoor ? r.oriented_backdoor() : r.oriented_robust(), i});
  }
  const auto bounds = bounds_of(points);
  const auto front = pareto_frontier(points);
  std::set<std::pair<double, double>> on_front;
  for (const auto& p : front) on_front.insert({p.clean, p.robust});

  ReportFiles files;
  files.csv = dir / (name + ".csv");
  files.svg = dir / (name + ".svg");
  files.summary = dir / (name + "-areas.csv");
  files.points = records.size();
  files.runs = runs.size();

  std::string csv = std::string(kRecordsCsvHeader) + ",x,y,x_norm,y_norm\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto& p = points[i];
    csv += r.run_id + "," + r.mode + "," + format_double(r.epsilon) + "," + std::to_string(r.split_index) + "," +
           std::to_string(r.seed) + "," + std::to_string(r.step) + "," + r.metric_kind() + "," +
           format_double(r.clean) + "," + format_double(r.robust) + "," + format_double(r.backdoor) + "," +
           (on_front.count({p.clean, p.robust}) ? "1" : "0") + "," + format_double(p.clean) + "," +
           format_double(p.robust) + "," + format_double(normalized(p.clean, bounds.clean_lo, bounds.clean_hi)) + "," +
           format_double(normalized(p.robust, bounds.robust_lo, bounds.robust_hi)) + "\n";
  }
  binio::write_file_atomic(files.csv, csv);

  // Areas share the bounds of all points so groups are comparable.
  std::string areas = "group,points,frontier_points,area,x_lo,x_hi,y_lo,y_hi\n";
  std::vector<std::pair<std::string, double>> area_list;
  auto add_area = [&](const std::string& group, const std::vector<ParetoPoint>& pts) {
    const double a = pareto_area(pts, bounds);
    areas += group + "," + std::to_string(pts.size()) + "," + std::to_string(pareto_frontier(pts).size()) + "," +
             format_double(a) + "," + format_double(bounds.clean_lo) + "," + format_double(bounds.clean_hi) + "," +
             format_double(bounds.robust_lo) + "," + format_double(bounds.robust_hi) + "\n";
    area_list.push_back({group, a});
  };
  const auto modes = modes_in(records);
  for (const auto& m : modes) {
    if (m == "pretrained") continue;
    std::vector<ParetoPoint> pts;
    for (const auto& p : points)
      if (records[p.source].mode == m) pts.push_back(p);
    add_area(m, pts);
  }
  add_area("all", points);
  binio::write_file_atomic(files.summary, areas);

  const auto& any = records.front();
  const std::string xlabel = oriented_label(any.clean_kind, false, "clean");
  const std::string ylabel = backdoor ? oriented_label(any.backdoor_kind, any.backdoor_kind == MetricKind::token_loss,
                                                       "backdoor")
                                      : oriented_label(any.robust_kind, any.robust_kind == MetricKind::token_loss,
                                                       "robust");
  Svg svg(kWidth, kHeight, backdoor ? "clean vs backdoor robustness" : "clean vs held-out robustness");
  const Axis ax(bounds.clean_lo, bounds.clean_hi, kLeft, kWidth - kRight);
  const Axis ay(bounds.robust_lo, bounds.robust_hi, kHeight - kBottom, kTop);
  svg.axes(ax, ay, xlabel, ylabel);
  for (const auto& [id, idx] : runs) {
    std::vector<std::pair<double, double>> pts;
    for (auto i : idx) pts.push_back({ax(points[i].clean), ay(points[i].robust)});
    svg.raw(polyline(id, pts, mode_color(records[idx.front()].mode)));
  }
  std::string d;
  for (std::size_t i = 0; i < front.size(); ++i) {
    const double x = ax(front[i].clean), y = ay(front[i].robust);
    d += i == 0 ? "M" + px(ax.p0) + " " + px(y) + " H" + px(x) : " V" + px(y) + " H" + px(x);
  }
  d += " V" + px(ay.p0);
  svg.raw("<path class=\"frontier\" d=\"" + d + "\" fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2\" stroke-dasharray=\"6,3\"/>");
  for (std::size_t i = 0; i < records.size(); ++i) {
    svg.raw(marker(records[i].mode, ax(points[i].clean), ay(points[i].robust),
                   " data-run=\"" + escape(records[i].run_id) + "\" data-step=\"" + std::to_string(records[i].step) + "\""));
  }
  legend(svg, modes, kWidth - kRight + 30, kTop + 10);
  double ty = kTop + 20 + 18.0 * static_cast<double>(modes.size());
  svg.text(kWidth - kRight + 20, ty, "staircase area (shared bounds)", 10);
  for (const auto& [group, a] : area_list) {
    ty += 15;
    svg.text(kWidth - kRight + 24, ty, group + ": " + short_num(a), 10, "area");
    files.notes.push_back("area " + group + " = " + short_num(a));
  }
  binio::write_file_atomic(files.svg, svg.finish());
  return files;
}

ReportFiles delta_report(const ResultsStore& store, const std::filesystem::path& dir) {
  const auto records = store.records();
  const auto runs = group_runs(records);
  const auto refs = store.run_records(kPretrainedRunId);
  if (refs.empty() || runs.empty()) {
    throw EmptyReportError("delta-over-time: store " + store.dir().string() +
                           " needs the pretrained record and at least one fine-tuning run");
  }
  const auto& ref = refs.front();
  ReportFiles files;
  files.csv = dir / "delta-over-time.csv";
  files.svg = dir / "delta-over-time.svg";
  files.runs = runs.size();

  struct Series {
    std::string id, mode;
    std::vector<DeltaPoint> deltas;
  };
  std::vector<Series> all;
  std::string csv =
      "run_id,mode,epsilon,split_index,seed,step,metric_kind,delta_clean,delta_robust,delta_backdoor,entrenchment\n";
  double max_step = 1, lo_r = 0, hi_r = 0, lo_b = 0, hi_b = 0;
  std::size_t entrenched_points = 0;
  std::set<std::string> entrenched_runs;
  for (const auto& [id, idx] : runs) {
    std::vector<EvalRecord> series{ref};
    for (auto i : idx) series.push_back(records[i]);
    series.front().step = 0;
    const auto deltas = robustness_delta(series);
    for (std::size_t k = 0; k < deltas.size(); ++k) {
      const auto& r = k == 0 ? records[idx.front()] : series[k];
      const auto& dp = deltas[k];
      csv += id + "," + r.mode + "," + format_double(r.epsilon) + "," + std::to_string(r.split_index) + "," +
             std::to_string(r.seed) + "," + std::to_string(dp.step) + "," + r.metric_kind() + "," +
             format_double(dp.clean) + "," + format_double(dp.robust) + "," + format_double(dp.backdoor) + "," +
             (dp.entrenchment ? "1" : "0") + "\n";
      max_step = std::max(max_step, static_cast<double>(dp.step));
      lo_r = std::min(lo_r, dp.robust);
      hi_r = std::max(hi_r, dp.robust);
      lo_b = std::min(lo_b, dp.backdoor);
      hi_b = std::max(hi_b, dp.backdoor);
      if (dp.entrenchment) {
        ++entrenched_points;
        entrenched_runs.insert(id);
      }
      ++files.points;
    }
    all.push_back({id, records[idx.front()].mode, deltas});
  }
  binio::write_file_atomic(files.csv, csv);

  // Two panels: held-out robustness delta and backdoor robustness delta.
  const double panel = (kWidth + 240 - kLeft - 60) / 2;
  Svg svg(kWidth + 240, kHeight, "robustness change during clean fine-tuning (negative = harm)");
  const auto& kinds = ref;
  for (int p = 0; p < 2; ++p) {
    const double x0 = kLeft + p * (panel + 30);
    const Axis ax(0, max_step, x0, x0 + panel - 40);
    const Axis ay(p == 0 ? lo_r : lo_b, p == 0 ? hi_r : hi_b, kHeight - kBottom, kTop);
    svg.axes(ax, ay, "fine-tuning step",
             p == 0 ? "delta " + oriented_label(kinds.robust_kind, kinds.robust_kind == MetricKind::token_loss, "robust")
                    : "delta " + oriented_label(kinds.backdoor_kind, kinds.backdoor_kind == MetricKind::token_loss,
                                                "backdoor"));
    svg.line(ax.p0, ay(0), ax.p1, ay(0), "stroke=\"#888888\" stroke-dasharray=\"4,3\"");
    for (const auto& s : all) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& d : s.deltas) pts.push_back({ax(static_cast<double>(d.step)), ay(p == 0 ? d.robust : d.backdoor)});
      svg.raw(polyline(s.id, pts, mode_color(s.mode), p == 0 ? "run" : "run-backdoor"));
      for (const auto& d : s.deltas) {
        const double x = ax(static_cast<double>(d.step)), y = ay(p == 0 ? d.robust : d.backdoor);
        svg.raw(marker(s.mode, x, y));
        if (p == 1 && d.entrenchment) {
          svg.raw("<circle class=\"entrenchment\" cx=\"" + px(x) + "\" cy=\"" + px(y) +
                  "\" r=\"7\" fill=\"none\" stroke=\"#ff0000\" stroke-width=\"1.5\"/>");
        }
      }
    }
  }
  legend(svg, modes_in(records), kWidth + 240 - 70, kTop + 10);
  svg.text(kLeft, kHeight - 8,
           "entrenchment (red rings): " + std::to_string(entrenched_points) + " checkpoints in " +
               std::to_string(entrenched_runs.size()) + " runs",
           11, "entrenchment-count");
  binio::write_file_atomic(files.svg, svg.finish());
  files.notes.push_back("entrenchment: " + std::to_string(entrenched_points) + " checkpoints in " +
                        std::to_string(entrenched_runs.size()) + " runs");
  for (const auto& id : entrenched_runs) files.notes.push_back("entrenched run: " + id);
  return files;
}

ReportFiles layer_report(const ResultsStore& store, const std::filesystem::path& dir) {
  const auto path = store.dir() / "layer_sweep.json";
  if (!std::filesystem::exists(path)) {
    throw EmptyReportError("layer-sweep: store " + store.dir().string() + " has no layer sweep; run sweep-layers first");
  }
  const auto rows = layer_sweep_from_json(binio::read_file(path));
  if (rows.empty()) throw EmptyReportError("layer-sweep: the stored sweep is empty");
  ReportFiles files;
  files.csv = dir / "layer-sweep.csv";
  files.svg = dir / "layer-sweep.svg";
  files.summary = dir / "layer-sweep-runs.csv";
  const auto& kinds = rows.front().runs.front();

  std::string csv = "split_index,epsilon,seeds,metric_kind,clean_mean,robust_mean\n";
  std::string runs_csv = std::string(kRecordsCsvHeader) + "\n";
  std::vector<EvalRecord> flat;
  for (const auto& r : rows) {
    csv += std::to_string(r.split) + "," + format_double(r.epsilon) + "," + std::to_string(r.runs.size()) + "," +
           kinds.metric_kind() + "," + format_double(r.clean_mean) + "," + format_double(r.robust_mean) + "\n";
    flat.insert(flat.end(), r.runs.begin(), r.runs.end());
  }
  const auto body = records_csv(flat);
  runs_csv = body;
  binio::write_file_atomic(files.csv, csv);
  binio::write_file_atomic(files.summary, runs_csv);
  files.points = rows.size();

  double lo = rows.front().clean_mean, hi = lo;
  for (const auto& r : rows) {
    lo = std::min({lo, r.clean_mean, r.robust_mean});
    hi = std::max({hi, r.clean_mean, r.robust_mean});
  }
  Svg svg(kWidth, kHeight, "LAT split layer sweep");
  const Axis ax(static_cast<double>(rows.front().split), static_cast<double>(rows.back().split), kLeft,
                kWidth - kRight);
  const Axis ay(lo, hi, kHeight - kBottom, kTop);
  svg.axes(ax, ay, "split index", "mean " + std::string(to_string(kinds.clean_kind)));
  const char* colors[2] = {"#1f77b4", "#d62728"};
  for (int s = 0; s < 2; ++s) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows) pts.push_back({ax(static_cast<double>(r.split)), ay(s == 0 ? r.clean_mean : r.robust_mean)});
    svg.raw(polyline(s == 0 ? "clean-mean" : "robust-mean", pts, colors[s], "series"));
    for (const auto& [x, y] : pts) {
      svg.raw("<circle cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"4\" fill=\"" + colors[s] + "\"/>");
    }
  }
  svg.text(kWidth - kRight + 20, kTop + 14, "clean mean", 11);
  svg.text(kWidth - kRight + 20, kTop + 32, "robust mean", 11);
  svg.raw("<circle cx=\"" + px(kWidth - kRight + 10) + "\" cy=\"" + px(kTop + 10) + "\" r=\"4\" fill=\"" + colors[0] + "\"/>");
  svg.raw("<circle cx=\"" + px(kWidth - kRight + 10) + "\" cy=\"" + px(kTop + 28) + "\" r=\"4\" fill=\"" + colors[1] + "\"/>");
  binio::write_file_atomic(files.svg, svg.finish());

  // Ordering of the curve is reported only.
  bool up = true, down = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    up = up && rows[i].robust_mean >= rows[i - 1].robust_mean;
    down = down && rows[i].robust_mean <= rows[i - 1].robust_mean;
  }
  files.notes.push_back(std::string("robust mean across splits: ") +
                        (rows.size() < 2 ? "single split" : up ? "non-decreasing" : down ? "non-increasing" : "non-monotone"));
  return files;
}

}  // namespace

std::string_view to_string(ReportKind kind) {
  switch (kind) {
    case ReportKind::pareto_novel: return "pareto-novel";
    case ReportKind::pareto_backdoor: return "pareto-backdoor";
    case ReportKind::delta_over_time: return "delta-over-time";
    case ReportKind::layer_sweep: return "layer-sweep";
  }
  return "?";
}

ReportKind parse_report_kind(std::string_view text) {
  for (auto k : {ReportKind::pareto_novel, ReportKind::pareto_backdoor, ReportKind::delta_over_time,
                 ReportKind::layer_sweep}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown report kind '" + std::string(text) +
                    "' (expected pareto-novel, pareto-backdoor, delta-over-time or layer-sweep)");
}

ReportFiles write_report(const std::filesystem::path& store_dir, ReportKind kind) {
  const auto store = ResultsStore::open(store_dir);
  const auto dir = store_dir / "reports";
  std::filesystem::create_directories(dir);
  switch (kind) {
    case ReportKind::pareto_novel:
    case ReportKind::pareto_backdoor: return pareto_report(store, kind, dir);
    case ReportKind::delta_over_time: return delta_report(store, dir);
    case ReportKind::layer_sweep: return layer_report(store, dir);
  }
  throw ConfigError("unknown report kind");
}

}  // namespace latkit
