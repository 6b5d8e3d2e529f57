#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "d2nn/pipeline.hpp"

namespace d2nn {

using nlohmann::json;
namespace fs = std::filesystem;

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json ReportSummary::to_json() const {
  json ensembles_json = json::array();
  for (const auto& e : ensembles) {
    std::vector<double> sizes(e.sizes.begin(), e.sizes.end());
    ensembles_json.push_back({{"name", e.name},
                              {"n_max", e.n_max},
                              {"sizes", e.sizes},
                              {"size_mean", mean(sizes)},
                              {"validation_accuracy", e.validation_accuracy},
                              {"validation_accuracy_mean", mean(e.validation_accuracy)},
                              {"validation_accuracy_std", stddev(e.validation_accuracy)},
                              {"test_accuracy", e.test_accuracy},
                              {"test_accuracy_mean", mean(e.test_accuracy)},
                              {"test_accuracy_std", stddev(e.test_accuracy)},
                              {"equal_weights_test_accuracy", e.equal_weights_test_accuracy},
                              {"equal_weights_test_accuracy_mean", mean(e.equal_weights_test_accuracy)}});
  }
  const auto best = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); };
  return {{"networks", networks},
          {"individual_validation_accuracy", individual_validation},
          {"individual_validation_mean", mean(individual_validation)},
          {"individual_validation_best", best(individual_validation)},
          {"individual_test_accuracy", individual_test},
          {"individual_test_mean", mean(individual_test)},
          {"individual_test_best", best(individual_test)},
          {"ensembles", ensembles_json},
          {"test_isolated", test_isolated},
          {"degenerate_scores", degenerate_scores}};
}

namespace {

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- svg

struct Series {
  std::string name;
  std::vector<double> values;
  std::string color;
};

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 70;

std::string svg_frame(const std::string& title, const std::string& ylabel, double ymin, double ymax) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
    << "</text>\n";
  const double ph = kH - kTop - kBottom;
  for (int t = 0; t <= 5; ++t) {
    const double v = ymin + (ymax - ymin) * t / 5.0;
    const double y = kTop + ph * (1.0 - t / 5.0);
    s << "<line x1=\"" << kLeft << "\" x2=\"" << kW - kRight << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
      << fmt(v, 1) << "</text>\n";
  }
  s << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << svg_escape(ylabel) << "</text>\n";
  return s.str();
}

std::string bar_chart(const std::string& title, const std::string& ylabel, const std::vector<std::string>& labels,
                      const std::vector<Series>& series) {
  double ymax = 1.0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (std::isfinite(v)) ymax = std::max(ymax, v);
    }
  }
  ymax = std::ceil(ymax / 10.0) * 10.0;
  std::string out = svg_frame(title, ylabel, 0.0, ymax);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double group = pw / std::max<std::size_t>(1, labels.size());
  const double bar = group * 0.8 / std::max<std::size_t>(1, series.size());
  std::ostringstream s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double gx = kLeft + group * i + group * 0.1;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = i < series[k].values.size() ? series[k].values[i] : NAN;
      if (!std::isfinite(v)) continue;
      const double h = ph * v / ymax;
      s << "<rect x=\"" << gx + bar * k << "\" y=\"" << kTop + ph - h << "\" width=\"" << bar * 0.95
        << "\" height=\"" << h << "\" fill=\"" << series[k].color << "\"/>\n";
    }
    s << "<text x=\"" << gx + group * 0.4 << "\" y=\"" << kTop + ph + 14 << "\" text-anchor=\"end\" transform=\"rotate(-40 "
      << gx + group * 0.4 << " " << kTop + ph + 14 << ")\">" << svg_escape(labels[i]) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double lx = kLeft + 10 + 150.0 * k;
    s << "<rect x=\"" << lx << "\" y=\"" << kH - 18 << "\" width=\"10\" height=\"10\" fill=\"" << series[k].color
      << "\"/><text x=\"" << lx + 14 << "\" y=\"" << kH - 9 << "\">" << svg_escape(series[k].name) << "</text>\n";
  }
  return out + s.str() + "</svg>\n";
}

std::string scatter(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                    const std::vector<double>& x, const std::vector<double>& y) {
  double top = 1.0;
  for (double v : x) top = std::max(top, v);
  for (double v : y) top = std::max(top, v);
  std::string out = svg_frame(title, ylabel, 0.0, top);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + pw * v / top; };
  auto py = [&](double v) { return kTop + ph * (1.0 - v / top); };
  std::ostringstream s;
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(top) << "\" y2=\"" << py(top)
    << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    s << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(y[i]) << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
  }
  for (int t = 0; t <= 5; ++t) {
    const double v = top * t / 5.0;
    s << "<text x=\"" << px(v) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fmt(v, 0)
      << "</text>\n";
  }
  s << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 20 << "\" text-anchor=\"middle\">" << svg_escape(xlabel)
    << "</text>\n";
  return out + s.str() + "</svg>\n";
}

void write(const fs::path& path, const std::string& text) { detail::write_text_atomic(path, text); }

}  // namespace

ReportSummary write_report(const fs::path& out_dir, const ScoreCache& validation, const ScoreCache& test,
                           const std::vector<PruningRun>& runs, const std::vector<std::vector<PruningTrace>>& traces,
                           const LogSink& log) {
  require(validation.network_ids == test.network_ids, ErrorKind::Stale,
          "validation and test caches cover different networks");
  require(traces.size() == runs.size(), ErrorKind::InvalidArgument, "one trace list per pruning run is required");
  fs::create_directories(out_dir);

  ReportSummary summary;
  summary.networks = validation.network_ids;
  summary.degenerate_scores = validation.degenerate + test.degenerate;
  for (std::size_t k = 0; k < validation.networks; ++k) {
    summary.individual_validation.push_back(100.0 * network_accuracy(validation, k));
    summary.individual_test.push_back(100.0 * network_accuracy(test, k));
  }

  std::string accuracy_tsv =
      "run\trepeat\tn_max\tn\tvalidation_accuracy\ttest_accuracy\tequal_weights_test_accuracy\taccuracy_per_network\n";
  std::string tpr_tsv = "run\trepeat\tclass\ttpr\n";
  std::string nmax_tsv = "run\trepeat\tn_max\tn\tvalidation_accuracy\ttest_accuracy\n";
  std::string equal_tsv = "run\trepeat\toptimized_test_accuracy\tequal_weights_test_accuracy\tdifference\n";
  std::string accuracy_txt;
  std::vector<double> scatter_x, scatter_y;
  std::vector<std::optional<double>> first_tpr;

  for (std::size_t j = 0; j < runs.size(); ++j) {
    EnsembleOutcome outcome;
    outcome.name = runs[j].name;
    outcome.n_max = runs[j].config.n_max;
    for (std::size_t r = 0; r < traces[j].size(); ++r) {
      const PruningTrace& trace = traces[j][r];
      const PruningRecord& sel = select_ensemble(trace, runs[j].config.n_max);
      const auto pred = ensemble_predictions(test, sel.members, &sel.weights);
      const Metrics m = report_metrics(pred, test.labels, static_cast<int>(sel.members.size()), test.classes);
      const double equal = 100.0 * ensemble_accuracy(test, sel.members, nullptr);
      outcome.sizes.push_back(sel.members.size());
      outcome.validation_accuracy.push_back(100.0 * sel.validation_accuracy);
      outcome.test_accuracy.push_back(m.accuracy);
      outcome.equal_weights_test_accuracy.push_back(equal);

      const std::string prefix = runs[j].name + "\t" + std::to_string(r) + "\t";
      accuracy_tsv += prefix + std::to_string(runs[j].config.n_max) + "\t" + std::to_string(sel.members.size()) + "\t" +
                      fmt(100.0 * sel.validation_accuracy) + "\t" + fmt(m.accuracy) + "\t" + fmt(equal) + "\t" +
                      fmt(m.accuracy_per_network, 3) + "\n";
      for (int c = 0; c < test.classes; ++c) {
        tpr_tsv += prefix + std::to_string(c) + "\t" + (m.tpr[c] ? fmt(*m.tpr[c]) : std::string("NA")) + "\n";
      }
      equal_tsv += prefix + fmt(m.accuracy) + "\t" + fmt(equal) + "\t" + fmt(equal - m.accuracy) + "\n";
      if (j == 0 && r == 0) first_tpr = m.tpr;

      for (int n_max = 1; n_max <= static_cast<int>(validation.networks); ++n_max) {
        const PruningRecord& s = select_ensemble(trace, n_max);
        const double t = 100.0 * ensemble_accuracy(test, s.members, &s.weights);
        nmax_tsv += prefix + std::to_string(n_max) + "\t" + std::to_string(s.members.size()) + "\t" +
                    fmt(100.0 * s.validation_accuracy) + "\t" + fmt(t) + "\n";
        scatter_x.push_back(n_max);
        scatter_y.push_back(static_cast<double>(s.members.size()));
      }
    }
    const std::string line = outcome.name + "\t" + fmt(mean(outcome.test_accuracy)) + "\t" +
                             fmt(stddev(outcome.test_accuracy));
    accuracy_txt += line + "\n";
    if (log) {
      log(LogLevel::Info, outcome.name + ": ensemble test accuracy " + fmt(mean(outcome.test_accuracy)) + " +/- " +
                              fmt(stddev(outcome.test_accuracy)) + " % (equal weights " +
                              fmt(mean(outcome.equal_weights_test_accuracy)) + " %, N_max " +
                              std::to_string(outcome.n_max) + ")");
    }
    summary.ensembles.push_back(std::move(outcome));
  }

  std::string individual_tsv = "kind\tid\tvalidation_accuracy\ttest_accuracy\n";
  for (std::size_t k = 0; k < summary.networks.size(); ++k) {
    individual_tsv += "network\t" + summary.networks[k] + "\t" + fmt(summary.individual_validation[k]) + "\t" +
                      fmt(summary.individual_test[k]) + "\n";
  }
  for (const auto& e : summary.ensembles) {
    individual_tsv += "ensemble\t" + e.name + "\t" + fmt(mean(e.validation_accuracy)) + "\t" +
                      fmt(mean(e.test_accuracy)) + "\n";
  }

  write(out_dir / "accuracy.tsv", accuracy_tsv);
  write(out_dir / "accuracy.txt", accuracy_txt);
  write(out_dir / "tpr.tsv", tpr_tsv);
  write(out_dir / "n_vs_nmax.tsv", nmax_tsv);
  write(out_dir / "equal_vs_optimized.tsv", equal_tsv);
  write(out_dir / "individual_vs_ensemble.tsv", individual_tsv);

  // Plots.
  {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (int c = 0; c < static_cast<int>(first_tpr.size()); ++c) {
      labels.push_back("class " + std::to_string(c));
      values.push_back(first_tpr[c] ? *first_tpr[c] : NAN);
    }
    write(out_dir / "tpr.svg", bar_chart("Per-class true positive rate (test)", "TPR (%)", labels,
                                         {{"ensemble", values, "#1f77b4"}}));
  }
  {
    std::vector<std::string> labels = summary.networks;
    std::vector<double> val = summary.individual_validation, tst = summary.individual_test;
    for (const auto& e : summary.ensembles) {
      labels.push_back("ensemble " + e.name);
      val.push_back(mean(e.validation_accuracy));
      tst.push_back(mean(e.test_accuracy));
    }
    write(out_dir / "individual_vs_ensemble.svg",
          bar_chart("Individual networks vs ensemble", "accuracy (%)", labels,
                    {{"validation", val, "#ff7f0e"}, {"test", tst, "#1f77b4"}}));
  }
  write(out_dir / "n_vs_nmax.svg", scatter("Selected ensemble size vs N_max", "N_max", "N", scatter_x, scatter_y));
  {
    std::vector<std::string> labels;
    std::vector<double> opt, eq;
    for (const auto& e : summary.ensembles) {
      labels.push_back(e.name);
      opt.push_back(mean(e.test_accuracy));
      eq.push_back(mean(e.equal_weights_test_accuracy));
    }
    write(out_dir / "equal_vs_optimized.svg",
          bar_chart("Optimized vs equal class weights (test)", "accuracy (%)", labels,
                    {{"optimized", opt, "#1f77b4"}, {"equal weights", eq, "#2ca02c"}}));
  }
  write(out_dir / "summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

}  // namespace d2nn
