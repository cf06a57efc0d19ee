#include "tapd/evalkit/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "tapd/error.hpp"
#include "tapd/evalkit/metrics.hpp"
#include "tapd/model/frame.hpp"
#include "tapd/scenegen/scenegen.hpp"

namespace tapd::evalkit {

using numkit::Tensor;

namespace {

Tensor history_for(const scenegen::Scene& scene, const scenegen::TimeLayout& layout, int tau) {
  return scenegen::truncate_history(scene, {layout, tau});
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

Forecast forecast_from_history(const oaf::OafParams& params, const scenegen::Scene& scene, const Tensor& history_world, int tau,
                               int norm_tau) {
  const auto& layout = params.config().layout;
  const model::AoiFrame frame = model::scene_frame(scene, layout);
  const model::ModelInput input =
      model::build_input(model::states_to_local(history_world, frame), scene.map, frame, layout.observed());
  numkit::Tape tape(false);
  const auto enc = oaf::encode(tape, input, tau, params, nullptr, norm_tau);
  const auto pred = oaf::decode(tape, oaf::extract_aoi(enc, scene.aoi_indices), params);
  return {pred.trajectories.value(), pred.logits.value()};
}

OafForecaster::OafForecaster(std::string name, const oaf::OafParams& params, int norm_tau)
    : name_(std::move(name)), params_(params), norm_tau_(norm_tau) {}

Forecast OafForecaster::predict(const scenegen::Scene& scene, int tau) const {
  return forecast_from_history(params_, scene, history_for(scene, layout(), tau), tau, norm_tau_);
}

IsolatedForecaster::IsolatedForecaster(std::string name, std::map<int, const oaf::OafParams*> per_length)
    : name_(std::move(name)), models_(std::move(per_length)) {
  if (models_.empty()) throw ValueError("isolated forecaster needs at least one model");
  for (const auto& [tau, p] : models_)
    if (!(p->config().layout == models_.begin()->second->config().layout)) throw ValueError("isolated models disagree on layout");
}

scenegen::TimeLayout IsolatedForecaster::layout() const { return models_.begin()->second->config().layout; }

Forecast IsolatedForecaster::predict(const scenegen::Scene& scene, int tau) const {
  const auto it = models_.find(tau);
  if (it == models_.end()) throw DependencyError(name_ + ": no model trained for tau=" + std::to_string(tau));
  return forecast_from_history(*it->second, scene, history_for(scene, layout(), tau), tau);
}

BackfillForecaster::BackfillForecaster(std::string name, const oaf::OafParams& oaf, const tbm::TbmParams& tbm)
    : name_(std::move(name)), oaf_(oaf), tbm_(tbm) {
  if (!(oaf.config().layout == tbm.config().layout)) throw ValueError("forecaster and backfilling layouts differ");
}

Forecast BackfillForecaster::predict(const scenegen::Scene& scene, int tau) const {
  const int h = oaf_.max_length();
  const Tensor observed = history_for(scene, layout(), tau);
  if (tau == h) return forecast_from_history(oaf_, scene, observed, h);
  ++calls_;
  const auto filled = tbm::backfill(observed, scene.map, scene.aoi_indices, tau, tbm_);
  return forecast_from_history(oaf_, scene, filled.completed, h);
}

Forecast OracleForecaster::predict(const scenegen::Scene& scene, int) const {
  const Tensor gt = model::future_targets(scene, layout_, model::scene_frame(scene, layout_));
  const std::size_t a = gt.dim(0), t = gt.dim(1);
  std::vector<double> traj;
  traj.reserve(a * modes_ * t * 2);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t m = 0; m < modes_; ++m)
      traj.insert(traj.end(), gt.vec().begin() + static_cast<long>(i * t * 2), gt.vec().begin() + static_cast<long>((i + 1) * t * 2));
  return {Tensor::raw({a, modes_, t, 2}, std::move(traj)), Tensor::zeros({a, modes_})};
}

const MetricRow* MetricReport::find(const std::string& method, int tau, std::size_t k) const {
  for (const auto& r : rows)
    if (r.method == method && r.tau == tau && r.k == k) return &r;
  return nullptr;
}

std::vector<std::string> MetricReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

std::vector<int> MetricReport::taus() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.tau);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> MetricReport::ks() const {
  std::set<std::size_t> s;
  for (const auto& r : rows) s.insert(r.k);
  return {s.begin(), s.end()};
}

void MetricReport::append(const MetricReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

Tensor top_k_modes(const Forecast& f, std::size_t aoi, std::size_t k) {
  const std::size_t modes = f.trajectories.dim(1), t = f.trajectories.dim(2);
  if (k < 1 || k > modes) throw ValueError("K=" + std::to_string(k) + " outside [1, " + std::to_string(modes) + "]");
  std::vector<std::size_t> idx(modes);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return f.logits[aoi * modes + a] > f.logits[aoi * modes + b]; });
  std::vector<double> out;
  out.reserve(k * t * 2);
  for (std::size_t j = 0; j < k; ++j) {
    const auto first = f.trajectories.vec().begin() + static_cast<long>((aoi * modes + idx[j]) * t * 2);
    out.insert(out.end(), first, first + static_cast<long>(t * 2));
  }
  return Tensor::raw({k, t, 2}, std::move(out));
}

MetricReport evaluate_variable_length(const Forecaster& model, std::span<const scenegen::Scene> scenes,
                                      const scenegen::TimeLayout& data_layout, std::span<const int> taus,
                                      std::span<const std::size_t> ks) {
  if (!(model.layout() == data_layout)) {
    throw FormatError("evaluate: model layout (dT=" + std::to_string(model.layout().delta_t) + ", H=" +
                      std::to_string(model.layout().intervals) + ") does not match the dataset header");
  }
  if (taus.empty()) throw ValueError("evaluate: empty tau set");
  if (ks.empty()) throw ValueError("evaluate: empty K set");
  if (scenes.empty()) throw ValueError("evaluate: empty dataset");
  const int h = static_cast<int>(data_layout.intervals);
  for (int tau : taus)
    if (tau < 1 || tau > h) throw ValueError("evaluate: tau " + std::to_string(tau) + " outside [1, " + std::to_string(h) + "]");

  MetricReport report;
  for (int tau : taus) {
    std::vector<MetricRow> rows(ks.size());
    std::vector<std::size_t> missed(ks.size(), 0);
    for (const auto& scene : scenes) {
      const Forecast f = model.predict(scene, tau);
      const Tensor gt_all = model::future_targets(scene, data_layout, model::scene_frame(scene, data_layout));
      const std::size_t t_f = gt_all.dim(1);
      for (std::size_t a = 0; a < gt_all.dim(0); ++a) {
        const Tensor gt = Tensor::raw({t_f, 2}, std::vector<double>(gt_all.vec().begin() + static_cast<long>(a * t_f * 2),
                                                                    gt_all.vec().begin() + static_cast<long>((a + 1) * t_f * 2)));
        for (std::size_t j = 0; j < ks.size(); ++j) {
          const Tensor cands = top_k_modes(f, a, ks[j]);
          const double fde_k = min_fde_k(cands, gt);
          rows[j].min_ade += min_ade_k(cands, gt);
          rows[j].min_fde += fde_k;
          if (fde_k > kMissThreshold) ++missed[j];
          ++rows[j].n_samples;
        }
      }
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
      auto& r = rows[j];
      const double n = static_cast<double>(r.n_samples);
      r.method = model.name();
      r.tau = tau;
      r.k = ks[j];
      r.min_ade /= n;
      r.min_fde /= n;
      r.mr = static_cast<double>(missed[j]) / n;
      report.rows.push_back(r);
    }
  }
  return report;
}

double gap_from_values(double short_fde, double full_fde) { return short_fde - full_fde; }

double gap(const MetricReport& report, const std::string& method, int tau_short, int tau_full, std::size_t k) {
  const MetricRow* s = report.find(method, tau_short, k);
  const MetricRow* f = report.find(method, tau_full, k);
  if (!s || !f) {
    throw ValueError("gap: missing row for " + method + " at tau=" + std::to_string(s ? tau_full : tau_short) +
                     ", K=" + std::to_string(k));
  }
  return gap_from_values(s->min_fde, f->min_fde);
}

GapStats gap_statistics(const MetricReport& report, const std::string& method_a, const std::string& method_b, int tau_short,
                        int tau_full, std::size_t k) {
  GapStats g;
  g.gap_a = gap(report, method_a, tau_short, tau_full, k);
  g.gap_b = gap(report, method_b, tau_short, tau_full, k);
  g.ratio = g.gap_a != 0.0 ? g.gap_b / g.gap_a : (g.gap_b == 0.0 ? 0.0 : INFINITY);
  return g;
}

ReportFormat parse_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  if (name == "svg") return ReportFormat::kSvg;
  throw ValueError("unknown report format '" + name + "' (expected csv, markdown or svg)");
}

std::string render_csv(const MetricReport& report) {
  if (report.rows.empty()) throw ValueError("render: empty report");
  std::string out = "method,tau,K,min_ade,min_fde,mr,n_samples\n";
  for (const auto& r : report.rows) {
    if (r.method.find_first_of(",\n\"") != std::string::npos) throw ValueError("render: method name '" + r.method + "' is not CSV-safe");
    out += r.method + "," + std::to_string(r.tau) + "," + std::to_string(r.k) + "," + fixed(r.min_ade) + "," + fixed(r.min_fde) +
           "," + fixed(r.mr) + "," + std::to_string(r.n_samples) + "\n";
  }
  return out;
}

MetricReport parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "method,tau,K,min_ade,min_fde,mr,n_samples") {
    throw FormatError("report csv: unexpected header");
  }
  MetricReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError("report csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    try {
      MetricRow r;
      r.method = f[0];
      r.tau = std::stoi(f[1]);
      r.k = std::stoul(f[2]);
      r.min_ade = std::stod(f[3]);
      r.min_fde = std::stod(f[4]);
      r.mr = std::stod(f[5]);
      r.n_samples = std::stoul(f[6]);
      report.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("report csv: bad number on line " + std::to_string(lineno));
    }
  }
  return report;
}

std::string render_markdown(const MetricReport& report, std::size_t delta_t) {
  if (report.rows.empty()) throw ValueError("render: empty report");
  const auto taus = report.taus();
  std::string out;
  for (std::size_t k : report.ks()) {
    if (!out.empty()) out += "\n";
    out += "minADE_" + std::to_string(k) + "/minFDE_" + std::to_string(k) + " (m), MR_" + std::to_string(k) + " in brackets\n\n";
    out += "| Method |";
    for (int tau : taus) out += " " + std::to_string(static_cast<std::size_t>(tau) * delta_t) + "Ts |";
    out += "\n|---|";
    for (std::size_t i = 0; i < taus.size(); ++i) out += "---|";
    out += "\n";
    for (const auto& m : report.methods()) {
      out += "| " + m + " |";
      for (int tau : taus) {
        const MetricRow* r = report.find(m, tau, k);
        out += r ? " " + fixed(r->min_ade, 3) + "/" + fixed(r->min_fde, 3) + " [" + fixed(r->mr, 3) + "] |" : " - |";
      }
      out += "\n";
    }
  }
  return out;
}

std::string render_svg(const MetricReport& report, const std::string& metric, std::size_t k) {
  if (report.rows.empty()) throw ValueError("render: empty report");
  const auto value = [&](const MetricRow& r) {
    if (metric == "min_ade") return r.min_ade;
    if (metric == "min_fde") return r.min_fde;
    if (metric == "mr") return r.mr;
    throw ValueError("render: unknown metric '" + metric + "'");
  };
  const auto taus = report.taus();
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : report.rows)
    if (r.k == k) {
      lo = std::min(lo, value(r));
      hi = std::max(hi, value(r));
    }
  if (!std::isfinite(lo)) throw ValueError("render: no rows for K=" + std::to_string(k));
  if (hi - lo < 1e-9) {
    hi += 0.5;
    lo -= 0.5;
  }
  const double w = 480, h = 320, left = 60, right = 130, top = 30, bottom = 45;
  const double tmin = taus.front(), tmax = taus.back();
  const auto x_of = [&](double tau) { return taus.size() == 1 ? left + (w - left - right) / 2 : left + (tau - tmin) / (tmax - tmin) * (w - left - right); };
  const auto y_of = [&](double v) { return top + (hi - v) / (hi - lo) * (h - top - bottom); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" viewBox=\"0 0 480 320\">\n";
  s += "<rect width=\"480\" height=\"320\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + metric + "_" +
       std::to_string(k) + " vs observation length</text>\n";
  s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(h - bottom, 1) + "\" x2=\"" + fixed(w - right, 1) + "\" y2=\"" +
       fixed(h - bottom, 1) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(top, 1) + "\" x2=\"" + fixed(left, 1) + "\" y2=\"" + fixed(h - bottom, 1) +
       "\" stroke=\"black\"/>\n";
  for (int tau : taus) {
    s += "<text x=\"" + fixed(x_of(tau), 1) + "\" y=\"" + fixed(h - bottom + 16, 1) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + std::to_string(tau) + "</text>\n";
  }
  s += "<text x=\"" + fixed((left + w - right) / 2, 1) + "\" y=\"" + fixed(h - 8, 1) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">tau</text>\n";
  for (double v : {lo, (lo + hi) / 2, hi}) {
    s += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(y_of(v) + 4, 1) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fixed(v, 3) + "</text>\n";
  }
  const auto methods = report.methods();
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const char* color = kColors[mi % (sizeof kColors / sizeof kColors[0])];
    std::string pts;
    for (int tau : taus) {
      const MetricRow* r = report.find(methods[mi], tau, k);
      if (!r) continue;
      if (!pts.empty()) pts += " ";
      pts += fixed(x_of(tau), 2) + "," + fixed(y_of(value(*r)), 2);
      s += "<circle cx=\"" + fixed(x_of(tau), 2) + "\" cy=\"" + fixed(y_of(value(*r)), 2) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(mi);
    s += "<rect x=\"" + fixed(w - right + 10, 1) + "\" y=\"" + fixed(ly, 1) + "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + fixed(w - right + 25, 1) + "\" y=\"" + fixed(ly + 9, 1) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
         methods[mi] + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string render_report(const MetricReport& report, ReportFormat format, std::size_t delta_t, const std::string& metric,
                          std::size_t k) {
  switch (format) {
    case ReportFormat::kCsv:
      return render_csv(report);
    case ReportFormat::kMarkdown:
      return render_markdown(report, delta_t);
    case ReportFormat::kSvg:
      return render_svg(report, metric, k);
  }
  throw ValueError("render: unknown format");
}

}  // namespace tapd::evalkit
