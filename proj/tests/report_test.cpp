#include "latkit/report.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "latkit/experiment.hpp"
#include "support/tempdir.hpp"

namespace latkit {
namespace {

namespace pt = boost::property_tree;
using testing::slurp;
using testing::TempDir;

EvalRecord rec(const std::string& id, const std::string& mode, std::size_t step, double clean, double robust,
               double backdoor) {
  EvalRecord r;
  r.run_id = id;
  r.mode = mode;
  r.epsilon = mode == "clean" || mode == "pretrained" ? 0.0 : 0.1;
  r.split_index = mode == "lat" ? 2 : 0;
  r.seed = 1;
  r.step = step;
  r.clean = clean;
  r.robust = robust;
  r.backdoor = backdoor;
  return r;
}

void commit(ResultsStore& s, const std::vector<EvalRecord>& rs) {
  RunEntry e{rs.front().run_id, "fp", {}, {}};
  for (const auto& r : rs) e.steps.push_back(r.step);
  s.commit(e, rs);
}

ResultsStore fabricated(const std::filesystem::path& dir) {
  auto s = ResultsStore::open_for(dir, "{}");
  commit(s, {rec(kPretrainedRunId, "pretrained", 0, 0.9, 0.6, 0.5)});
  return s;
}

pt::ptree parse_svg(const std::filesystem::path& p) {
  pt::ptree tree;
  std::istringstream in(slurp(p));
  pt::read_xml(in, tree);  // throws on malformed XML
  return tree;
}

// Elements named `tag` anywhere below `node`, optionally with a given class.
std::size_t count(const pt::ptree& node, const std::string& tag, const std::string& cls = "") {
  std::size_t n = 0;
  for (const auto& [name, child] : node) {
    if (name == tag && (cls.empty() || child.get("<xmlattr>.class", "") == cls)) ++n;
    n += count(child, tag, cls);
  }
  return n;
}

std::size_t csv_rows(const std::filesystem::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
}

TEST(ReportKind, ParsesNames) {
  for (auto k : {ReportKind::pareto_novel, ReportKind::pareto_backdoor, ReportKind::delta_over_time,
                 ReportKind::layer_sweep}) {
    EXPECT_EQ(parse_report_kind(to_string(k)), k);
  }
  try {
    parse_report_kind("pareto");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pareto-backdoor"), std::string::npos);
  }
}

TEST(ParetoReport, SingleRunGivesOnePolyline) {
  TempDir dir;
  auto s = fabricated(dir.path());
  commit(s, {rec("clean-seed1", "clean", 1, 0.92, 0.62, 0.4), rec("clean-seed1", "clean", 2, 0.95, 0.58, 0.3)});
  for (auto kind : {ReportKind::pareto_novel, ReportKind::pareto_backdoor}) {
    const auto files = write_report(dir.path(), kind);
    EXPECT_EQ(files.csv, dir / "reports" / (std::string(to_string(kind)) + ".csv"));
    EXPECT_EQ(files.points, 3u);
    EXPECT_EQ(csv_rows(files.csv), files.points);
    EXPECT_EQ(files.runs, 1u);
    const auto svg = parse_svg(files.svg);
    EXPECT_EQ(count(svg, "polyline", "run"), 1u);
    EXPECT_EQ(count(svg, "path", "frontier"), 1u);
    const auto header = slurp(files.csv).substr(0, slurp(files.csv).find('\n'));
    EXPECT_EQ(header, std::string(kRecordsCsvHeader) + ",x,y,x_norm,y_norm");
  }
}

TEST(ParetoReport, OnePolylinePerRunAndAreasPerMode) {
  TempDir dir;
  auto s = fabricated(dir.path());
  commit(s, {rec("clean-seed1", "clean", 1, 0.92, 0.62, 0.4), rec("clean-seed1", "clean", 2, 0.95, 0.58, 0.3)});
  commit(s, {rec("lat-x", "lat", 1, 0.91, 0.7, 0.1), rec("lat-x", "lat", 2, 0.93, 0.72, 0.05)});
  commit(s, {rec("at-x", "at", 1, 0.5, 0.5, 0.5), rec("at-x", "at", 2, 0.6, 0.55, 0.4)});
  const auto files = write_report(dir.path(), ReportKind::pareto_novel);
  EXPECT_EQ(files.runs, 3u);
  EXPECT_EQ(csv_rows(files.csv), 7u);
  const auto svg = parse_svg(files.svg);
  EXPECT_EQ(count(svg, "polyline", "run"), 3u);

  // Frontier flags: lat step 2 and clean step 2 dominate everything else.
  const auto csv = slurp(files.csv);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  std::size_t flagged = 0;
  while (std::getline(lines, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 15u);
    if (cols[10] == "1") {
      ++flagged;
      EXPECT_TRUE((cols[0] == "lat-x" || cols[0] == "clean-seed1") && cols[5] == "2") << line;
    }
  }
  EXPECT_EQ(flagged, 2u);

  const auto areas = slurp(files.summary);
  for (const char* group : {"\nclean,", "\nlat,", "\nat,", "\nall,"}) {
    EXPECT_NE(areas.find(group), std::string::npos) << group;
  }
}

TEST(ParetoReport, EmptyStoreIsAnError) {
  TempDir dir;
  fabricated(dir.path());
  EXPECT_THROW(write_report(dir.path(), ReportKind::pareto_novel), EmptyReportError);
  EXPECT_THROW(write_report(dir.path(), ReportKind::delta_over_time), EmptyReportError);
  EXPECT_THROW(write_report(dir.path(), ReportKind::layer_sweep), EmptyReportError);
  EXPECT_FALSE(std::filesystem::exists(dir / "reports/pareto-novel.svg"));
}

TEST(DeltaReport, DecreasingBackdoorSeriesIsFlagged) {
  TempDir dir;
  auto s = fabricated(dir.path());
  // Backdoor success climbs above the pretrained 0.5 from step 2 on.
  commit(s, {rec("rlp-x", "rlp", 1, 0.9, 0.6, 0.45), rec("rlp-x", "rlp", 2, 0.9, 0.6, 0.6),
             rec("rlp-x", "rlp", 3, 0.9, 0.6, 0.7)});
  commit(s, {rec("lat-x", "lat", 1, 0.9, 0.65, 0.2), rec("lat-x", "lat", 2, 0.9, 0.7, 0.1)});
  const auto files = write_report(dir.path(), ReportKind::delta_over_time);
  EXPECT_EQ(files.runs, 2u);
  EXPECT_EQ(csv_rows(files.csv), 7u);  // each run starts from the pretrained point at step 0
  EXPECT_EQ(files.points, 7u);
  const auto csv = slurp(files.csv);
  EXPECT_NE(csv.find("lat-x,lat,0.10000000000000001,2,1,0,accuracy/accuracy/success-rate,0,0,0,0\n"),
            std::string::npos);
  EXPECT_NE(csv.find("rlp-x,rlp,0.10000000000000001,0,1,1,accuracy/accuracy/success-rate,0,0,"), std::string::npos)
      << csv;
  std::size_t flagged_lines = 0;
  std::istringstream lines(csv);
  for (std::string line; std::getline(lines, line);) {
    if (line.size() > 2 && line.compare(line.size() - 2, 2, ",1") == 0) {
      ++flagged_lines;
      EXPECT_EQ(line.rfind("rlp-x", 0), 0u) << line;
    }
  }
  EXPECT_EQ(flagged_lines, 2u);
  const auto svg = parse_svg(files.svg);
  EXPECT_EQ(count(svg, "polyline", "run"), 2u);
  EXPECT_EQ(count(svg, "polyline", "run-backdoor"), 2u);
  EXPECT_EQ(count(svg, "circle", "entrenchment"), 2u);
  bool noted = false;
  for (const auto& n : files.notes) noted = noted || n == "entrenched run: rlp-x";
  EXPECT_TRUE(noted);
}

TEST(LayerReport, TableFromStoredSweep) {
  TempDir dir;
  fabricated(dir.path());
  std::vector<LayerSweepRow> rows(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i].split = i + 1;
    rows[i].epsilon = 0.5 * static_cast<double>(i + 1);
    rows[i].clean_mean = 0.9;
    rows[i].robust_mean = 0.5 + 0.1 * static_cast<double>(i);
    auto r = rec("layer", "lat", 4, 0.9, rows[i].robust_mean, 0.1);
    r.split_index = i + 1;
    rows[i].runs = {r};
  }
  binio::write_file_atomic(dir / "layer_sweep.json", layer_sweep_to_json(rows));
  const auto files = write_report(dir.path(), ReportKind::layer_sweep);
  EXPECT_EQ(csv_rows(files.csv), 3u);
  EXPECT_EQ(csv_rows(files.summary), 3u);
  const auto csv = slurp(files.csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "split_index,epsilon,seeds,metric_kind,clean_mean,robust_mean");
  parse_svg(files.svg);
  bool ordering = false;
  for (const auto& n : files.notes) ordering = ordering || n.find("non-decreasing") != std::string::npos;
  EXPECT_TRUE(ordering);
}

// The command line, end to end.
int cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(LATKIT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto log = dir / "log.txt";
  {
    std::ofstream(dir / "bad.yaml") << "task: image-cls\noutput: o\nsweep:\n  modez: [lat]\n";
    std::ofstream(dir / "empty.yaml") << "task: image-cls\noutput: store\ndata:\n  train_size: 200\n"
                                         "  test_size: 50\nbackdoors:\n  count: 10\npretrain:\n  epochs: 1\n"
                                         "  threshold: 0.01\nsweep:\n  modes: []\nbattery:\n  kinds: [rotation]\n"
                                         "  severities: [1]\n";
  }
  EXPECT_EQ(cli("validate " + (dir / "bad.yaml").string(), log), 1);
  EXPECT_NE(slurp(log).find("bad.yaml:4:"), std::string::npos) << slurp(log);
  EXPECT_EQ(cli("validate " + (dir / "missing.yaml").string(), log), 1);
  EXPECT_EQ(cli("frobnicate", log), 1);
  EXPECT_EQ(cli("validate " + (dir / "empty.yaml").string(), log), 0);
  EXPECT_EQ(cli("run " + (dir / "empty.yaml").string(), log), 0);
  EXPECT_EQ(cli("report " + (dir / "store").string() + " pareto", log), 1);
  EXPECT_EQ(cli("report " + (dir / "store").string() + " pareto-novel", log), 2);
  EXPECT_NE(slurp(log).find("no fine-tuning records"), std::string::npos) << slurp(log);
  EXPECT_EQ(cli("report " + (dir / "nowhere").string() + " pareto-novel", log), 2);
  EXPECT_EQ(cli("run " + (dir / "empty.yaml").string(), log), 0);
  EXPECT_NE(slurp(log).find("no-op"), std::string::npos) << slurp(log);
}

}  // namespace
}  // namespace latkit
