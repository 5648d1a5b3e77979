#pragma once

// Inference over samples and per-decoder metric reports.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dualswin/data.hpp"
#include "dualswin/metrics.hpp"
#include "dualswin/model.hpp"

namespace dualswin {

/// Per-pixel probabilities for one sample; `thyroid` is empty for a
/// single-decoder model.
struct SamplePrediction {
  Grid<float> thyroid;
  Grid<float> ptmc;
  double seconds = 0;  // forward wall-clock share of this sample
};

template <class Real>
std::vector<SamplePrediction> predict(const DualSwinUnet<Real>& model, const std::vector<const Sample*>& samples,
                                      std::size_t batch_size = 1) {
  NoGradGuard guard;
  std::vector<SamplePrediction> out;
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::vector<const Sample*> chunk(samples.begin() + start,
                                           samples.begin() + std::min(samples.size(), start + batch_size));
    const Batch<Real> batch = make_batch<Real>(chunk, static_cast<std::size_t>(model.config().in_channels));
    const auto t0 = std::chrono::steady_clock::now();
    const DualPrediction<Real> pred = model.forward(batch.images);
    const Tensor<Real> ptmc = nn::sigmoid(pred.ptmc_logits).value();
    const Tensor<Real> thy = pred.thyroid_logits.defined() ? nn::sigmoid(pred.thyroid_logits).value() : Tensor<Real>{};
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::size_t H = batch.images.dim(1), W = batch.images.dim(2);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      SamplePrediction p;
      p.seconds = seconds / chunk.size();
      p.ptmc = Grid<float>(H, W);
      for (std::size_t k = 0; k < H * W; ++k) p.ptmc.data[k] = static_cast<float>(ptmc[i * H * W + k]);
      if (!thy.empty()) {
        p.thyroid = Grid<float>(H, W);
        for (std::size_t k = 0; k < H * W; ++k) p.thyroid.data[k] = static_cast<float>(thy[i * H * W + k]);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline Image8 threshold_map(const Grid<float>& prob, double threshold) {
  Image8 m(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.data.size(); ++i) m.data[i] = prob.data[i] >= threshold;
  return m;
}

struct DecoderEvaluation {
  MetricsReport report;
  std::optional<RocCurve> roc;  // absent when not pooled or single-class
  std::vector<MetricsAccumulator::ImageResult> per_image;
};

struct Evaluation {
  std::vector<std::string> ids;
  std::optional<DecoderEvaluation> thyroid;
  DecoderEvaluation ptmc;
};

/// Thresholds every probability map at `threshold` and accumulates metrics.
/// With `pool` the pixel scores are kept for a dataset-level ROC curve.
inline Evaluation evaluate_predictions(const std::vector<const Sample*>& samples,
                                       const std::vector<SamplePrediction>& preds, double threshold,
                                       bool pool = true) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  if (samples.size() != preds.size()) throw DataError("prediction count does not match sample count");
  const bool dual = !preds[0].thyroid.data.empty();
  Evaluation ev;
  MetricsAccumulator thy(dual ? "thyroid_decoder1" : "", pool), ptmc(dual ? "ptmc_decoder2" : "ptmc_single", pool);
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = *samples[i];
    const SamplePrediction& p = preds[i];
    ev.ids.push_back(s.id);
    ev.ptmc.per_image.push_back(ptmc.add(s.ptmc.data, threshold_map(p.ptmc, threshold).data, p.ptmc.data));
    if (dual) {
      if (!ev.thyroid) ev.thyroid.emplace();
      ev.thyroid->per_image.push_back(thy.add(s.thyroid.data, threshold_map(p.thyroid, threshold).data, p.thyroid.data));
    }
    sum += p.seconds;
    sum2 += p.seconds * p.seconds;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n, var = n > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1)) : 0.0;
  const auto finish = [&](MetricsAccumulator& acc, DecoderEvaluation& out) {
    out.report = acc.report();
    out.report.latency_mean_s = mean;
    out.report.latency_std_s = std::sqrt(var);
    if (pool && !std::isnan(out.report.auc)) out.roc = acc.roc();
  };
  finish(ptmc, ev.ptmc);
  if (dual) finish(thy, *ev.thyroid);
  return ev;
}

inline void write_per_image_csv(std::ostream& os, const Evaluation& ev) {
  os << "id,decoder,jaccard,dice,tp,fp,fn,f1,tp_pixels,fp_pixels,fn_pixels,tn_pixels\n";
  const auto rows = [&](const DecoderEvaluation& d) {
    for (std::size_t i = 0; i < d.per_image.size(); ++i) {
      const auto& r = d.per_image[i];
      const auto& c = r.rates.counts;
      os << ev.ids[i] << ',' << d.report.label << ',' << r.jaccard << ',' << r.dice << ',' << r.rates.tp << ','
         << r.rates.fp << ',' << r.rates.fn << ',' << r.rates.f1 << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
         << c.tn << '\n';
    }
  };
  if (ev.thyroid) rows(*ev.thyroid);
  rows(ev.ptmc);
}

/// metrics.csv, per_image.csv and one roc_<label>.csv per decoder.
inline void write_evaluation(const std::filesystem::path& dir, const Evaluation& ev) {
  std::filesystem::create_directories(dir);
  std::ofstream metrics(dir / "metrics.csv");
  write_metrics_header(metrics);
  if (ev.thyroid) write_metrics_row(metrics, ev.thyroid->report);
  write_metrics_row(metrics, ev.ptmc.report);
  std::ofstream per_image(dir / "per_image.csv");
  write_per_image_csv(per_image, ev);
  for (const DecoderEvaluation* d : {ev.thyroid ? &*ev.thyroid : nullptr, &ev.ptmc}) {
    if (!d || !d->roc) continue;
    std::ofstream roc(dir / ("roc_" + d->report.label + ".csv"));
    write_roc_csv(roc, *d->roc);
  }
  if (!metrics || !per_image) throw DataError("failed writing evaluation files to " + dir.string());
}

}  // namespace dualswin
