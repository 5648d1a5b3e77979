#pragma once

// Single-sample forward latency measurement.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dualswin/data.hpp"
#include "dualswin/model.hpp"

namespace dualswin {

struct BenchReport {
  std::string label;
  std::string hardware;
  int warmup = 0;
  std::vector<double> seconds;  // one entry per timed forward pass
  double mean = 0, stddev = 0, p50 = 0, p95 = 0, throughput = 0;
};

/// Linear interpolation between closest ranks, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  std::string s = cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hw threads; single-threaded";
#if defined(__VERSION__)
  s += "; compiler " + std::string(__VERSION__);
#endif
  return s;
}

inline void finish_report(BenchReport& r) {
  const double n = static_cast<double>(r.seconds.size());
  if (r.seconds.empty()) return;
  r.mean = std::accumulate(r.seconds.begin(), r.seconds.end(), 0.0) / n;
  double ss = 0;
  for (double s : r.seconds) ss += (s - r.mean) * (s - r.mean);
  r.stddev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  r.p50 = percentile(r.seconds, 0.5);
  r.p95 = percentile(r.seconds, 0.95);
  r.throughput = r.mean > 0 ? 1.0 / r.mean : 0.0;
}

/// `warmup` untimed then `iters` timed single-image forward passes on a
/// synthetic input held in memory, so decoding and file I/O are excluded.
template <class Real>
BenchReport benchmark_forward(const DualSwinUnet<Real>& model, int iters, int warmup, std::uint64_t seed,
                              std::string label) {
  const auto& cfg = model.config();
  const Sample s = synth_sample(0, static_cast<std::size_t>(cfg.img_size), seed, SynthParams{});
  const Batch<Real> batch = make_batch<Real>({&s}, static_cast<std::size_t>(cfg.in_channels));
  NoGradGuard guard;
  BenchReport r;
  r.label = std::move(label);
  r.hardware = hardware_descriptor();
  r.warmup = warmup;
  for (int i = 0; i < warmup + iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pred = model.forward(batch.images);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (pred.ptmc_logits.value().empty()) throw std::logic_error("benchmark forward produced no output");
    if (i >= warmup) r.seconds.push_back(dt);
  }
  finish_report(r);
  return r;
}

inline void write_bench_report(std::ostream& os, const BenchReport& r) {
  os << "# timing: model forward pass only, batch of one; excludes image decoding and file I/O\n"
     << "# hardware: " << r.hardware << '\n'
     << "# config: " << r.label << '\n'
     << "# warmup: " << r.warmup << '\n'
     << "samples,mean_s,std_s,p50_s,p95_s,throughput_per_s\n"
     << r.seconds.size() << ',' << r.mean << ',' << r.stddev << ',' << r.p50 << ',' << r.p95 << ',' << r.throughput
     << '\n';
}

inline void write_bench_samples(std::ostream& os, const BenchReport& r) {
  os << "iteration,seconds\n";
  for (std::size_t i = 0; i < r.seconds.size(); ++i) os << i << ',' << r.seconds[i] << '\n';
}

}  // namespace dualswin
