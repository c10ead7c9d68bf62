#include "lmattack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace lmattack {

std::vector<double> radial_error(const LandmarkSet& pred, const LandmarkSet& ref, double spacing_mm,
                                 const FrameScale& scale) {
  if (pred.frame != ref.frame) throw InvalidInput("radial_error: frame mismatch");
  if (pred.size() != ref.size()) throw InvalidInput("radial_error: landmark count mismatch");
  if (!(spacing_mm > 0.0)) throw InvalidInput("radial_error: spacing must be positive");
  const double sx = pred.frame == Frame::kResized ? scale.sx : 1.0;
  const double sy = pred.frame == Frame::kResized ? scale.sy : 1.0;
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = (pred.points[i].x - ref.points[i].x) * sx;
    const double dy = (pred.points[i].y - ref.points[i].y) * sy;
    out[i] = std::hypot(dx, dy) * spacing_mm;
  }
  return out;
}

double Aggregate::sdr_at(double radius_mm) const {
  for (std::size_t i = 0; i < kSdrRadiiMm.size(); ++i) {
    if (kSdrRadiiMm[i] == radius_mm) return sdr[i];
  }
  throw InvalidInput("no SDR recorded at radius " + std::to_string(radius_mm));
}

Aggregate aggregate(std::span<const double> errors) {
  if (errors.empty()) throw InvalidInput("aggregate: empty error list");
  Aggregate out;
  out.count = errors.size();
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  out.mre = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  const std::size_t mid = sorted.size() / 2;
  out.medre = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (std::size_t r = 0; r < kSdrRadiiMm.size(); ++r) {
    const auto within = std::upper_bound(sorted.begin(), sorted.end(), kSdrRadiiMm[r]) - sorted.begin();
    out.sdr[r] = 100.0 * static_cast<double>(within) / static_cast<double>(sorted.size());
  }
  return out;
}

std::vector<double> isolation_degree(std::span<const LandmarkSet> sets) {
  if (sets.empty()) throw InvalidInput("isolation_degree: no landmark sets");
  const std::size_t k = sets.front().size();
  if (k < 6) throw InvalidInput("isolation_degree: need at least 6 landmarks");
  std::vector<double> total(k, 0.0);
  std::vector<double> dist(k);
  for (const LandmarkSet& set : sets) {
    if (set.size() != k) throw InvalidInput("isolation_degree: inconsistent landmark counts");
    for (std::size_t i = 0; i < k; ++i) {
      dist.clear();
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        dist.push_back(std::hypot(set.points[i].x - set.points[j].x, set.points[i].y - set.points[j].y));
      }
      std::partial_sort(dist.begin(), dist.begin() + 5, dist.end());
      total[i] += std::accumulate(dist.begin(), dist.begin() + 5, 0.0) / 5.0;
    }
  }
  for (double& t : total) t /= static_cast<double>(sets.size());
  return total;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

IsolationAnalysis isolation_vs_error(std::span<const double> isolation, std::span<const double> mre) {
  if (isolation.size() != mre.size()) throw InvalidInput("isolation_vs_error: length mismatch");
  IsolationAnalysis out;
  out.pearson = pearson(isolation, mre);
  for (std::size_t i = 0; i < isolation.size(); ++i) {
    out.rows.push_back({static_cast<int>(i + 1), isolation[i], mre[i]});
  }
  return out;
}

const char* to_string(Cohort cohort) {
  switch (cohort) {
    case Cohort::kDetection: return "detection";
    case Cohort::kTargeted: return "targeted";
    case Cohort::kStationary: return "stationary";
  }
  return "?";
}

std::vector<double> EvalReport::errors(Cohort cohort) const {
  std::vector<double> out;
  for (const ErrorRow& r : rows) {
    if (r.cohort == cohort) out.push_back(r.error_mm);
  }
  return out;
}

std::optional<Aggregate> EvalReport::summary(Cohort cohort) const {
  const std::vector<double> e = errors(cohort);
  if (e.empty()) return std::nullopt;
  return aggregate(e);
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.precision(17);
  out << "image_id,attempt,landmark,cohort,error_mm\n";
  for (const ErrorRow& r : rows) {
    out << r.image_id << ',' << r.attempt << ',' << r.landmark << ',' << to_string(r.cohort) << ',' << r.error_mm
        << '\n';
  }
}

std::string EvalReport::summary_json() const {
  nlohmann::json j;
  j["meta"] = {{"label", meta.label},           {"epsilon", meta.epsilon}, {"iterations", meta.iterations},
               {"adaptive", meta.adaptive},     {"seed", meta.seed}};
  for (Cohort c : {Cohort::kDetection, Cohort::kTargeted, Cohort::kStationary}) {
    const auto s = summary(c);
    if (!s) continue;
    nlohmann::json sdr;
    for (std::size_t r = 0; r < kSdrRadiiMm.size(); ++r) {
      std::string key = std::to_string(kSdrRadiiMm[r]);
      key.erase(key.find_last_not_of('0') + 1);
      if (key.back() == '.') key.pop_back();
      sdr[key + "mm"] = s->sdr[r];
    }
    j[to_string(c)] = {{"count", s->count}, {"mre_mm", s->mre}, {"medre_mm", s->medre}, {"sdr_percent", sdr}};
  }
  return j.dump(2);
}

void EvalReport::write_summary_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << summary_json() << '\n';
}

}  // namespace lmattack
