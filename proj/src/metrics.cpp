#include "cxs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cxs {

void CostModel::validate() const {
  if (area_total <= 0.0) throw std::invalid_argument("cost model: area_total must be > 0");
  auto it = cost_per_unit_area.find(r_max);
  if (it == cost_per_unit_area.end())
    throw std::invalid_argument("cost model: r_max '" + r_max + "' has no cost entry");
  if (!(it->second > 0.0))
    throw std::invalid_argument("cost model: c(r_max) must be > 0");
  for (const auto& [r, c] : cost_per_unit_area)
    if (!(c >= 0.0) || !std::isfinite(c))
      throw std::invalid_argument("cost model: cost for '" + r + "' must be finite and >= 0");
}

double mocr(const std::vector<CostRequest>& requests, const CostModel& model) {
  model.validate();
  double total = 0.0;
  for (const auto& req : requests) {
    if (req.area < 0.0) throw std::invalid_argument("mocr: negative request area");
    auto it = model.cost_per_unit_area.find(req.resolution);
    if (it == model.cost_per_unit_area.end())
      throw std::invalid_argument("mocr: unknown resolution '" + req.resolution + "'");
    total += req.area * it->second;
  }
  return total / (model.area_total * model.cost_per_unit_area.at(model.r_max));
}

ObrResult obr(const std::vector<ObservationSet>& sets, int tiles_total) {
  if (tiles_total <= 0) throw std::invalid_argument("obr: tiles_total must be > 0");
  ObrResult out;
  out.per_scene.reserve(sets.size());
  for (const auto& s : sets) {
    double v = static_cast<double>(s.selected.size()) / tiles_total;
    out.per_scene.push_back(v);
    out.mean += v;
  }
  if (!sets.empty()) out.mean /= sets.size();
  return out;
}

double average_precision_at_k(const std::vector<int>& ranking,
                              const std::set<int>& relevant, int k) {
  if (k < 1) throw std::invalid_argument("average_precision_at_k: k must be >= 1");
  std::set<int> seen;
  for (int id : ranking)
    if (!seen.insert(id).second)
      throw std::invalid_argument("average_precision_at_k: duplicate id " +
                                  std::to_string(id));
  if (relevant.empty()) return 0.0;
  int hits = 0;
  double sum = 0.0;
  int depth = std::min<int>(k, static_cast<int>(ranking.size()));
  for (int r = 0; r < depth; ++r) {
    if (relevant.count(ranking[r])) {
      ++hits;
      sum += static_cast<double>(hits) / (r + 1);
    }
  }
  return sum / std::min<int>(static_cast<int>(relevant.size()), k);
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom < 1e-12 ? 0.0 : dot / denom;
}

}  // namespace

double retrieval_map(const std::vector<std::vector<double>>& shared_vecs,
                     const std::vector<uint64_t>& labels, const OracleEncoders& enc,
                     int k) {
  if (shared_vecs.empty()) throw std::invalid_argument("retrieval_map: no scenes");
  if (shared_vecs.size() != labels.size())
    throw std::invalid_argument("retrieval_map: vector/label count mismatch");
  int n = static_cast<int>(shared_vecs.size());
  double total = 0.0;
  int queries = 0;
  for (int c = 0; c < enc.concept_count(); ++c) {
    std::set<int> relevant;
    for (int i = 0; i < n; ++i)
      if (labels[i] >> c & 1) relevant.insert(i);
    if (relevant.empty()) continue;
    const auto& f = enc.concept_embedding(c);
    std::vector<std::pair<int, double>> scored(n);
    for (int i = 0; i < n; ++i) scored[i] = {i, cosine(shared_vecs[i], f)};
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<int> ranking(n);
    for (int i = 0; i < n; ++i) ranking[i] = scored[i].first;
    total += average_precision_at_k(ranking, relevant, k);
    ++queries;
  }
  return queries ? total / queries : 0.0;
}

RecognitionMetrics recognition_metrics(
    const std::vector<std::vector<std::pair<int, double>>>& ranked,
    const std::vector<uint64_t>& labels, int concepts) {
  if (ranked.size() != labels.size())
    throw std::invalid_argument("recognition_metrics: ranking/label count mismatch");
  RecognitionMetrics out;
  double map_sum = 0.0;
  int top1_hits = 0;
  for (size_t i = 0; i < ranked.size(); ++i) {
    std::set<int> relevant;
    for (int c = 0; c < concepts; ++c)
      if (labels[i] >> c & 1) relevant.insert(c);
    std::vector<int> ranking;
    ranking.reserve(ranked[i].size());
    for (const auto& [c, s] : ranked[i]) ranking.push_back(c);
    map_sum += average_precision_at_k(ranking, relevant, concepts);
    if (relevant.size() == 1) {
      ++out.single_label_count;
      if (!ranking.empty() && relevant.count(ranking[0])) ++top1_hits;
    }
  }
  out.multilabel_map = ranked.empty() ? 0.0 : map_sum / ranked.size();
  out.top1_acc = out.single_label_count
                     ? static_cast<double>(top1_hits) / out.single_label_count
                     : 0.0;
  return out;
}

std::vector<double> pool_tile_block(const Tensor& token_grid, int tile, int grid) {
  int d = token_grid.shape().back();
  int side = 2 * grid;
  if (tile < 0 || tile >= grid * grid)
    throw std::out_of_range("pool_tile_block: tile out of range");
  int ti = tile / grid, tj = tile % grid;
  std::vector<double> out(d, 0.0);
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v)
      for (int k = 0; k < d; ++k)
        out[k] += token_grid.data()[((2 * ti + u) * side + 2 * tj + v) * d + k];
  for (auto& v : out) v /= 4.0;
  return out;
}

std::vector<RankedTile> tile_completion_retrieval(
    const Tensor& h_tilde, int tile, int grid, const ObservationSet& observation,
    const std::vector<std::vector<double>>& gallery_pooled, int top_n) {
  if (gallery_pooled.empty())
    throw std::invalid_argument("tile_completion_retrieval: empty gallery");
  if (std::binary_search(observation.selected.begin(), observation.selected.end(), tile))
    throw std::invalid_argument("tile_completion_retrieval: tile " +
                                std::to_string(tile) + " was observed");
  std::vector<double> query = pool_tile_block(h_tilde, tile, grid);
  std::vector<RankedTile> ranked(gallery_pooled.size());
  for (size_t i = 0; i < gallery_pooled.size(); ++i)
    ranked[i] = {static_cast<int>(i), cosine(query, gallery_pooled[i])};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedTile& a, const RankedTile& b) { return a.score > b.score; });
  if (top_n < static_cast<int>(ranked.size()))
    ranked.resize(static_cast<size_t>(top_n));
  return ranked;
}

namespace {

std::string f6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "threshold,mean_obr,map100,map20,top1,mlmap,wall_ms\n";
  for (const auto& r : rows) {
    out += f6(r.threshold) + "," + f6(r.mean_obr) + "," + f6(r.map100) + "," +
           f6(r.map20) + "," + f6(r.top1) + "," + f6(r.mlmap) + "," +
           std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "sampler,predictor,supervision,seed,map100,map20,mean_obr,wall_ms\n";
  for (const auto& r : rows) {
    out += r.sampler + "," + r.predictor + "," + r.supervision + "," +
           std::to_string(r.seed) + "," + f6(r.map100) + "," + f6(r.map20) + "," +
           f6(r.mean_obr) + "," + std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

const std::vector<double>& default_sweep_thresholds() {
  static const std::vector<double> grid = {0.00, 0.10, 0.25, 0.45, 0.55, 0.65, 0.85, 1.00};
  return grid;
}

}  // namespace cxs
