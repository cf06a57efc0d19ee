#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tapd/numkit/tensor.hpp"
#include "tapd/oaf/oaf.hpp"
#include "tapd/scenegen/scene.hpp"
#include "tapd/tbm/tbm.hpp"

namespace tapd::evalkit {

/// Multimodal forecast for every AOI of one scene, in the scene frame as
/// offsets from each AOI's last observed position.
struct Forecast {
  numkit::Tensor trajectories;  // (A, K, T_f, 2)
  numkit::Tensor logits;        // (A, K)
};

/// Inference path evaluated under a truncated observation of length tau.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  virtual scenegen::TimeLayout layout() const = 0;
  virtual Forecast predict(const scenegen::Scene& scene, int tau) const = 0;
};

// Direct OAF inference at length tau. `norm_tau` pins the LayerNorm entry
// (the full-length-only reference uses H at every tau); 0 uses tau.
class OafForecaster : public Forecaster {
 public:
  OafForecaster(std::string name, const oaf::OafParams& params, int norm_tau = 0);
  std::string name() const override { return name_; }
  scenegen::TimeLayout layout() const override { return params_.config().layout; }
  Forecast predict(const scenegen::Scene& scene, int tau) const override;

 private:
  std::string name_;
  const oaf::OafParams& params_;
  int norm_tau_;
};

// One separately trained model per length, each used at its own length.
class IsolatedForecaster : public Forecaster {
 public:
  IsolatedForecaster(std::string name, std::map<int, const oaf::OafParams*> per_length);
  std::string name() const override { return name_; }
  scenegen::TimeLayout layout() const override;
  Forecast predict(const scenegen::Scene& scene, int tau) const override;

 private:
  std::string name_;
  std::map<int, const oaf::OafParams*> models_;
};

// Backfill to full length when tau < H, then OAF at H.
class BackfillForecaster : public Forecaster {
 public:
  BackfillForecaster(std::string name, const oaf::OafParams& oaf, const tbm::TbmParams& tbm);
  std::string name() const override { return name_; }
  scenegen::TimeLayout layout() const override { return oaf_.config().layout; }
  Forecast predict(const scenegen::Scene& scene, int tau) const override;
  std::size_t backfill_calls() const { return calls_; }

 private:
  std::string name_;
  const oaf::OafParams& oaf_;
  const tbm::TbmParams& tbm_;
  mutable std::size_t calls_ = 0;
};

// Returns the ground truth K times; for checking the evaluation plumbing.
class OracleForecaster : public Forecaster {
 public:
  explicit OracleForecaster(scenegen::TimeLayout layout, std::size_t modes = 6) : layout_(layout), modes_(modes) {}
  std::string name() const override { return "oracle"; }
  scenegen::TimeLayout layout() const override { return layout_; }
  Forecast predict(const scenegen::Scene& scene, int tau) const override;

 private:
  scenegen::TimeLayout layout_;
  std::size_t modes_;
};

// Forecast of the full-length forecaster on an explicit world-frame history.
Forecast forecast_from_history(const oaf::OafParams& params, const scenegen::Scene& scene,
                               const numkit::Tensor& history_world, int tau, int norm_tau = 0);

struct MetricRow {
  std::string method;
  int tau = 0;
  std::size_t k = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double mr = 0.0;
  std::size_t n_samples = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  const MetricRow* find(const std::string& method, int tau, std::size_t k) const;
  std::vector<std::string> methods() const;  // first-appearance order
  std::vector<int> taus() const;             // ascending
  std::vector<std::size_t> ks() const;       // ascending
  void append(const MetricReport& other);
};

// The `k` highest-logit modes of one AOI (ties keep the lower index first).
numkit::Tensor top_k_modes(const Forecast& f, std::size_t aoi, std::size_t k);

// For each tau, forecasts every scene under truncation and averages
// min_ade_k/min_fde_k/MR_K over all AOIs in scene order.
MetricReport evaluate_variable_length(const Forecaster& model, std::span<const scenegen::Scene> scenes,
                                      const scenegen::TimeLayout& data_layout, std::span<const int> taus,
                                      std::span<const std::size_t> ks);

// minFDE(tau_short) - minFDE(tau_full) for one method.
double gap(const MetricReport& report, const std::string& method, int tau_short, int tau_full, std::size_t k);
double gap_from_values(double short_fde, double full_fde);

struct GapStats {
  double gap_a = 0.0;
  double gap_b = 0.0;
  double ratio = 0.0;  // gap_b / gap_a
};
GapStats gap_statistics(const MetricReport& report, const std::string& method_a, const std::string& method_b, int tau_short,
                        int tau_full, std::size_t k);

enum class ReportFormat { kCsv, kMarkdown, kSvg };
ReportFormat parse_format(const std::string& name);

std::string render_csv(const MetricReport& report);
MetricReport parse_csv(const std::string& text);
// Methods as rows, lengths as columns, "minADE/minFDE" cells; one table per K.
std::string render_markdown(const MetricReport& report, std::size_t delta_t);
// Metric ("min_ade", "min_fde" or "mr") against tau, one curve per method.
std::string render_svg(const MetricReport& report, const std::string& metric, std::size_t k);
std::string render_report(const MetricReport& report, ReportFormat format, std::size_t delta_t = 5,
                          const std::string& metric = "min_fde", std::size_t k = 6);

}  // namespace tapd::evalkit
