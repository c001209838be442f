#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/json_io.hpp"

namespace flagrank::ranking {

struct RankedEntry {
  std::size_t rank = 0;  // 1-based
  std::string process_id;
  double score = 0.0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

using RankedList = std::vector<RankedEntry>;

// Descending score; equal scores ordered by ascending process id.
inline RankedList rank(std::span<const ScoredProcess> scores) {
  std::unordered_set<std::string_view> seen;
  for (const auto& s : scores) {
    require(std::isfinite(s.error), ErrorKind::numeric, "rank: non-finite score for '" + s.process_id + "'");
    require(seen.insert(s.process_id).second, ErrorKind::duplicate, "rank: duplicate process id '" + s.process_id + "'");
  }
  std::vector<const ScoredProcess*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const ScoredProcess* a, const ScoredProcess* b) {
    if (a->error != b->error) return a->error > b->error;
    return a->process_id < b->process_id;
  });
  RankedList out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out.push_back(RankedEntry{i + 1, order[i]->process_id, order[i]->error});
  return out;
}

inline std::vector<int> relevance(const RankedList& ranked, const GroundTruth& truth) {
  std::vector<int> rel;
  rel.reserve(ranked.size());
  for (const auto& e : ranked) rel.push_back(truth.contains(e.process_id) ? 1 : 0);
  return rel;
}

// sum_i rel_i / log2(i + 1), i from 1.
inline double dcg(std::span<const int> rel) {
  double total = 0.0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    require(rel[i] == 0 || rel[i] == 1, ErrorKind::precondition, "dcg: relevance must be 0 or 1");
    if (rel[i]) total += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return total;
}

// DCG over the DCG of the ideal ordering (all m relevant entries first).
inline double ndcg(std::span<const int> rel) {
  const auto m = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 1));
  require(m > 0, ErrorKind::undefined_metric, "ndcg: no attacks among the ranked processes");
  std::vector<int> ideal(rel.size(), 0);
  std::fill_n(ideal.begin(), m, 1);
  return dcg(rel) / dcg(ideal);
}

inline double ndcg(const RankedList& ranked, const GroundTruth& truth) { return ndcg(relevance(ranked, truth)); }

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  double threshold = 0.0;
};

// Equal-width bins over [min, max]; the last bin is closed on the right.
inline Histogram error_histogram(std::span<const double> scores, std::size_t bins, double tau) {
  require(bins >= 1, ErrorKind::precondition, "error_histogram: bins must be >= 1");
  require(!scores.empty(), ErrorKind::precondition, "error_histogram: no scores");
  const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
  const double mn = *mn_it, mx = *mx_it;
  const double width = (mx - mn) / static_cast<double>(bins);
  Histogram h;
  h.threshold = tau;
  for (std::size_t k = 0; k < bins; ++k)
    h.bins.push_back(HistogramBin{mn + width * static_cast<double>(k), k + 1 == bins ? mx : mn + width * static_cast<double>(k + 1), 0});
  for (double s : scores) {
    std::size_t k = width > 0.0 ? static_cast<std::size_t>(std::floor((s - mn) / width)) : 0;
    k = std::min(k, bins - 1);
    ++h.bins[k].count;
  }
  return h;
}

inline json histogram_to_json(const Histogram& h) {
  json bins = json::array();
  for (const auto& b : h.bins) bins.push_back(json{{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  return json{{"bins", bins}, {"threshold", h.threshold}};
}

inline std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// `rank,process_id,score[,is_attack]`
inline void write_ranking_csv(std::ostream& out, const RankedList& ranked, const GroundTruth* truth = nullptr) {
  out << "rank,process_id,score" << (truth ? ",is_attack" : "") << '\n';
  for (const auto& e : ranked) {
    out << e.rank << ',' << e.process_id << ',' << format_score(e.score);
    if (truth) out << ',' << (truth->contains(e.process_id) ? 1 : 0);
    out << '\n';
  }
}

// Centered moving average; the window is truncated at the series ends.
inline std::vector<double> smooth_centered(std::span<const double> values, std::size_t window = 5) {
  require(window >= 1, ErrorKind::precondition, "smooth_centered: window must be >= 1");
  const std::size_t half = window / 2;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size() - 1, i + half);
    double sum = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) sum += values[j];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace flagrank::ranking
