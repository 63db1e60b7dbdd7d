#include "drmpc/outputs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

namespace drmpc {

namespace {

using nlohmann::json;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string f3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

const char* variant_color(Variant v) {
  switch (v) {
    case Variant::wass: return "#1f77b4";
    case Variant::cl_wass: return "#d62728";
    case Variant::inn_wass: return "#2ca02c";
  }
  return "#000000";
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Maps a data rectangle onto a pixel rectangle (y up).
struct Frame {
  double x0, y0, w, h;          // pixels
  double xmin, xmax, ymin, ymax;  // data

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

class Svg {
 public:
  Svg(double width, double height) {
    os_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f3(width) << "\" height=\"" << f3(height)
        << "\" viewBox=\"0 0 " << f3(width) << ' ' << f3(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << f3(width) << "\" height=\"" << f3(height) << "\" fill=\"white\"/>\n";
  }

  void polyline(const Frame& f, const std::vector<std::pair<double, double>>& pts, const std::string& color,
                double width, double opacity = 1.0, const std::string& dash = "") {
    if (pts.empty()) return;
    os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << f3(width) << "\" stroke-opacity=\""
        << f3(opacity) << '"';
    if (!dash.empty()) os_ << " stroke-dasharray=\"" << dash << '"';
    os_ << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      os_ << (i ? " " : "") << f3(f.px(pts[i].first)) << ',' << f3(f.py(pts[i].second));
    os_ << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& color, double width) {
    os_ << "<line x1=\"" << f3(x1) << "\" y1=\"" << f3(y1) << "\" x2=\"" << f3(x2) << "\" y2=\"" << f3(y2)
        << "\" stroke=\"" << color << "\" stroke-width=\"" << f3(width) << "\"/>\n";
  }

  void markers(const Frame& f, const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    for (const auto& [x, y] : pts)
      os_ << "<circle cx=\"" << f3(f.px(x)) << "\" cy=\"" << f3(f.py(y)) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
  }

  void rect(const Frame& f, double xlo, double ylo, double xhi, double yhi, const std::string& fill, double opacity,
            const std::string& stroke = "none", const std::string& dash = "") {
    os_ << "<rect x=\"" << f3(f.px(xlo)) << "\" y=\"" << f3(f.py(yhi)) << "\" width=\"" << f3(f.px(xhi) - f.px(xlo))
        << "\" height=\"" << f3(f.py(ylo) - f.py(yhi)) << "\" fill=\"" << fill << "\" fill-opacity=\"" << f3(opacity)
        << "\" stroke=\"" << stroke << '"';
    if (!dash.empty()) os_ << " stroke-dasharray=\"" << dash << '"';
    os_ << "/>\n";
  }

  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 11) {
    os_ << "<text x=\"" << f3(x) << "\" y=\"" << f3(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
        << "\">" << s << "</text>\n";
  }

  void axes(const Frame& f, const std::string& xlabel, const std::string& ylabel, int xticks = 5, int yticks = 5) {
    os_ << "<rect x=\"" << f3(f.x0) << "\" y=\"" << f3(f.y0) << "\" width=\"" << f3(f.w) << "\" height=\"" << f3(f.h)
        << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    for (int i = 0; i <= xticks; ++i) {
      const double v = f.xmin + (f.xmax - f.xmin) * i / xticks;
      text(f.px(v), f.y0 + f.h + 14, f3(v), "middle", 9);
    }
    for (int i = 0; i <= yticks; ++i) {
      const double v = f.ymin + (f.ymax - f.ymin) * i / yticks;
      text(f.x0 - 4, f.py(v) + 3, f3(v), "end", 9);
    }
    text(f.x0 + f.w / 2, f.y0 + f.h + 30, xlabel, "middle");
    os_ << "<text x=\"" << f3(f.x0 - 40) << "\" y=\"" << f3(f.y0 + f.h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
        << f3(f.x0 - 40) << ' ' << f3(f.y0 + f.h / 2) << ")\">" << ylabel << "</text>\n";
  }

  std::string str() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  std::ostringstream os_;
};

std::string iteration_series_svg(const std::vector<ExperimentResult>& results, const std::string& title,
                                 const std::string& ylabel,
                                 const std::function<double(const IterationRecord&)>& value,
                                 const std::function<std::optional<double>(const ExperimentResult&)>& reference) {
  int jmax = 1;
  double ymax = 0.0;
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      jmax = std::max(jmax, rec.iteration);
      ymax = std::max(ymax, value(rec));
    }
    if (const auto ref = reference(r)) ymax = std::max(ymax, *ref);
  }
  if (ymax <= 0.0) ymax = 1.0;
  Svg svg(640, 400);
  const Frame f{70, 40, 520, 300, 1.0, static_cast<double>(std::max(jmax, 2)), 0.0, ymax * 1.05};
  svg.text(320, 22, title, "middle", 13);
  svg.axes(f, "iteration", ylabel, std::min(std::max(jmax, 2) - 1, 10));
  double ly = 56;
  for (const auto& r : results) {
    const std::string color = variant_color(r.variant);
    std::vector<std::pair<double, double>> pts;
    for (const auto& rec : r.records) pts.emplace_back(rec.iteration, value(rec));
    svg.polyline(f, pts, color, 1.8);
    svg.markers(f, pts, color);
    if (const auto ref = reference(r)) svg.polyline(f, {{f.xmin, *ref}, {f.xmax, *ref}}, color, 1.0, 0.7, "5,4");
    svg.line(480, ly, 500, ly, color, 2.0);
    svg.text(506, ly + 4, to_string(r.variant));
    ly += 16;
  }
  return svg.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << content;
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_trajectories_csv(std::ostream& os, const std::vector<ExperimentResult>& results) {
  Index nx = 0, nu = 0;
  for (const auto& r : results)
    for (const auto& rec : r.records) {
      if (!rec.states.empty()) nx = rec.states.front().size();
      if (!rec.inputs.empty()) nu = rec.inputs.front().size();
    }
  os << "variant,iteration,t";
  for (Index i = 1; i <= nx; ++i) os << ",x" << i;
  for (Index i = 1; i <= nu; ++i) os << ",u" << i;
  os << ",step_time_s\n";
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      for (std::size_t t = 0; t < rec.states.size(); ++t) {
        os << to_string(r.variant) << ',' << rec.iteration << ',' << t;
        for (Index i = 0; i < nx; ++i) os << ',' << g17(rec.states[t](i));
        for (Index i = 0; i < nu; ++i) os << ',' << (t < rec.inputs.size() ? g17(rec.inputs[t](i)) : "");
        os << ',' << (t < rec.step_times.size() ? g17(rec.step_times[t]) : "") << '\n';
      }
    }
  }
}

std::string metrics_json(const std::vector<ExperimentResult>& results, Clock clock) {
  json doc;
  doc["clock"] = clock == Clock::wall ? "wall" : "work";
  doc["variants"] = json::array();
  for (const auto& r : results) {
    json v;
    v["variant"] = to_string(r.variant);
    v["initial_cost"] = r.initial.costs.empty() ? 0.0 : r.initial.costs.front();
    v["initial_steps"] = r.initial.inputs.size();
    v["iterations"] = json::array();
    for (const auto& rec : r.records) {
      v["iterations"].push_back({{"iteration", rec.iteration},
                                 {"steps", rec.inputs.size()},
                                 {"total_time", total(rec.step_times)},
                                 {"mean_step_time", mean(rec.step_times)},
                                 {"iteration_cost", rec.cost},
                                 {"samples_gathered", rec.samples_gathered},
                                 {"total_samples", rec.total_samples},
                                 {"safety_build_time", rec.safety_build_time},
                                 {"pruned", rec.pruned},
                                 {"fallback_steps", rec.fallback_steps}});
    }
    v["safe_set_trajectories"] = std::vector<Index>(r.safe_set.active_trajectories().begin(),
                                                    r.safe_set.active_trajectories().end());
    doc["variants"].push_back(std::move(v));
  }
  return doc.dump(2) + "\n";
}

std::string trajectories_svg(const std::vector<ExperimentResult>& results, const ExperimentSetup& setup) {
  const Vector lo = setup.obstacle.C * setup.mpc.state_lo;
  const Vector hi = setup.obstacle.C * setup.mpc.state_hi;
  const double pw = 420.0;
  const double ph = pw * (hi(1) - lo(1)) / (hi(0) - lo(0));
  const std::size_t panels = std::max<std::size_t>(results.size(), 1);
  Svg svg(60 + static_cast<double>(panels) * (pw + 60), ph + 90);

  // Bounding boxes of the nominal body and of all displaced copies.
  Vector blo = Vector::Constant(2, 1e300), bhi = Vector::Constant(2, -1e300);
  for (const auto& v : setup.obstacle.body.vertices()) {
    blo = blo.cwiseMin(v);
    bhi = bhi.cwiseMax(v);
  }
  Vector wlo = Vector::Constant(2, 1e300), whi = Vector::Constant(2, -1e300);
  for (const auto& w : setup.uncertainty.support.vertices()) {
    wlo = wlo.cwiseMin(w);
    whi = whi.cwiseMax(w);
  }

  for (std::size_t p = 0; p < results.size(); ++p) {
    const auto& r = results[p];
    const Frame f{60 + static_cast<double>(p) * (pw + 60), 40, pw, ph, lo(0), hi(0), lo(1), hi(1)};
    svg.text(f.x0 + pw / 2, 24, to_string(r.variant), "middle", 13);
    svg.rect(f, blo(0) + wlo(0), blo(1) + wlo(1), bhi(0) + whi(0), bhi(1) + whi(1), "#d62728", 0.12, "#d62728", "4,3");
    svg.rect(f, blo(0), blo(1), bhi(0), bhi(1), "#d62728", 0.45);
    svg.axes(f, "x1", "x2", 7, 5);
    const std::string color = variant_color(r.variant);
    const double n = static_cast<double>(std::max<std::size_t>(r.records.size(), 1));
    for (std::size_t j = 0; j < r.records.size(); ++j) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& x : r.records[j].states) pts.emplace_back(x(0), x(1));
      svg.polyline(f, pts, color, 1.2, 0.25 + 0.75 * static_cast<double>(j + 1) / n);
    }
    std::vector<std::pair<double, double>> init;
    for (const auto& x : r.initial.states) init.emplace_back(x(0), x(1));
    svg.polyline(f, init, "#000000", 1.6, 1.0, "6,4");
  }
  return svg.str();
}

std::string timing_svg(const std::vector<ExperimentResult>& results, Clock clock) {
  return iteration_series_svg(
      results, "Mean time per step", clock == Clock::wall ? "seconds" : "work units",
      [](const IterationRecord& rec) { return mean(rec.step_times); },
      [](const ExperimentResult&) { return std::optional<double>(); });
}

std::string cost_svg(const std::vector<ExperimentResult>& results) {
  return iteration_series_svg(
      results, "Iteration cost", "cost", [](const IterationRecord& rec) { return rec.cost; },
      [](const ExperimentResult& r) {
        return r.initial.costs.empty() ? std::optional<double>() : std::optional<double>(r.initial.costs.front());
      });
}

void emit_outputs(const std::vector<ExperimentResult>& results, const ExperimentSetup& setup,
                  const std::filesystem::path& out_dir) {
  require(!results.empty(), "outputs: no results to write");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory " + out_dir.string());
  std::ostringstream csv;
  write_trajectories_csv(csv, results);
  write_file(out_dir / "trajectories.csv", csv.str());
  write_file(out_dir / "metrics.json", metrics_json(results, setup.clock));
  write_file(out_dir / "trajectories.svg", trajectories_svg(results, setup));
  write_file(out_dir / "timing.svg", timing_svg(results, setup.clock));
  write_file(out_dir / "cost.svg", cost_svg(results));
}

}  // namespace drmpc
