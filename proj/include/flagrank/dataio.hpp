#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flagrank/error.hpp"
#include "flagrank/numkernel.hpp"
#include "flagrank/rng.hpp"

namespace flagrank {

struct ProcessRow {
  std::string id;
  std::vector<std::uint32_t> attrs;  // sorted ascending, unique

  friend bool operator==(const ProcessRow&, const ProcessRow&) = default;
};

// Sparse Boolean process x attribute matrix. Rows keep insertion order.
class BooleanDataset {
 public:
  BooleanDataset() = default;
  explicit BooleanDataset(std::size_t num_attrs, std::vector<std::string> attr_names = {})
      : num_attrs_(num_attrs), attr_names_(std::move(attr_names)) {
    require(attr_names_.empty() || attr_names_.size() == num_attrs_, ErrorKind::invalid_shape,
            "attribute name count does not match num_attrs");
  }

  void add_row(std::string id, std::vector<std::uint32_t> attrs) {
    require(!id.empty(), ErrorKind::format, "empty process id");
    for (std::size_t i = 0; i < attrs.size(); ++i) {
      require(attrs[i] < num_attrs_, ErrorKind::range,
              "attribute index " + std::to_string(attrs[i]) + " >= num_attrs " + std::to_string(num_attrs_));
      require(i == 0 || attrs[i - 1] < attrs[i], ErrorKind::format,
              "attribute indices of '" + id + "' must be strictly ascending");
    }
    require(!index_.contains(id), ErrorKind::duplicate, "duplicate process id '" + id + "'");
    index_.emplace(id, rows_.size());
    rows_.push_back(ProcessRow{std::move(id), std::move(attrs)});
  }

  std::size_t num_attrs() const noexcept { return num_attrs_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const std::vector<ProcessRow>& rows() const noexcept { return rows_; }
  const ProcessRow& row(std::size_t i) const { return rows_.at(i); }

  const std::vector<std::string>& attr_names() const noexcept { return attr_names_; }
  void set_attr_names(std::vector<std::string> names) {
    require(names.empty() || names.size() == num_attrs_, ErrorKind::invalid_shape,
            "attribute name count does not match num_attrs");
    attr_names_ = std::move(names);
  }
  std::string attr_name(std::size_t j) const {
    return j < attr_names_.size() ? attr_names_[j] : "attr_" + std::to_string(j);
  }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Dense 0/1 matrix of the selected rows.
  Matrix dense(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), num_attrs_, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (auto a : rows_.at(idx[i]).attrs) out(i, a) = 1.0;
    return out;
  }

  Matrix dense() const {
    std::vector<std::size_t> all(rows_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return dense(all);
  }

  friend bool operator==(const BooleanDataset& a, const BooleanDataset& b) {
    return a.num_attrs_ == b.num_attrs_ && a.rows_ == b.rows_ && a.attr_names_ == b.attr_names_;
  }

 private:
  std::size_t num_attrs_ = 0;
  std::vector<ProcessRow> rows_;
  std::vector<std::string> attr_names_;
  std::unordered_map<std::string, std::size_t> index_;
};

// A process and its anomaly score (higher = more anomalous).
struct ScoredProcess {
  std::string process_id;
  double error = 0.0;

  friend bool operator==(const ScoredProcess&, const ScoredProcess&) = default;
};

struct GroundTruth {
  std::set<std::string> attack_ids;

  bool contains(std::string_view id) const { return attack_ids.contains(std::string(id)); }
  std::size_t size() const noexcept { return attack_ids.size(); }
  bool empty() const noexcept { return attack_ids.empty(); }
};

struct GroundTruthLoad {
  GroundTruth truth;
  std::vector<std::string> warnings;
};

struct DatasetStats {
  std::size_t num_rows = 0;
  std::size_t num_attrs = 0;
  std::size_t num_attacks = 0;
  double attack_ratio = 0.0;
  std::vector<double> frequencies;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_uint(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    const std::uint64_t next = v * 10 + static_cast<std::uint64_t>(c - '0');
    if (next / 10 != v) return false;
    v = next;
  }
  out = v;
  return true;
}

[[noreturn]] inline void fail_at(ErrorKind kind, std::size_t line, const std::string& what) {
  throw Error(kind, "line " + std::to_string(line) + ": " + what);
}

}  // namespace detail

// Reads the `FVS v1 <num_attrs>` sparse text format. Lines starting with '#'
// are comments; a comment of the form `#attr <index> <name>` names an
// attribute.
inline BooleanDataset parse_fvs(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) detail::fail_at(ErrorKind::format, 1, "missing 'FVS v1 <num_attrs>' header");
  ++lineno;
  const auto header = detail::split_ws(detail::trim(line));
  std::uint64_t num_attrs = 0;
  if (header.size() != 3 || header[0] != "FVS" || header[1] != "v1" || !detail::parse_uint(header[2], num_attrs))
    detail::fail_at(ErrorKind::format, lineno, "bad header, expected 'FVS v1 <num_attrs>'");

  BooleanDataset ds(num_attrs);
  std::vector<std::string> names;
  bool any_name = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      if (body.starts_with("#attr ")) {
        const auto rest = detail::trim(body.substr(6));
        const auto sp = rest.find_first_of(" \t");
        std::uint64_t idx = 0;
        if (sp == std::string_view::npos || !detail::parse_uint(rest.substr(0, sp), idx))
          detail::fail_at(ErrorKind::format, lineno, "bad '#attr <index> <name>' line");
        if (idx >= num_attrs) detail::fail_at(ErrorKind::range, lineno, "attribute index " + std::to_string(idx) + " out of range");
        if (names.empty())
          for (std::size_t j = 0; j < num_attrs; ++j) names.push_back("attr_" + std::to_string(j));
        names[idx] = std::string(detail::trim(rest.substr(sp)));
        any_name = true;
      }
      continue;
    }
    const auto toks = detail::split_ws(body);
    std::vector<std::uint32_t> attrs;
    attrs.reserve(toks.size() - 1);
    for (std::size_t t = 1; t < toks.size(); ++t) {
      std::uint64_t v = 0;
      if (!detail::parse_uint(toks[t], v))
        detail::fail_at(ErrorKind::format, lineno, "bad attribute index '" + std::string(toks[t]) + "'");
      if (v >= num_attrs)
        detail::fail_at(ErrorKind::range, lineno,
                        "attribute index " + std::to_string(v) + " >= num_attrs " + std::to_string(num_attrs));
      attrs.push_back(static_cast<std::uint32_t>(v));
    }
    try {
      ds.add_row(std::string(toks[0]), std::move(attrs));
    } catch (const Error& e) {
      detail::fail_at(e.kind(), lineno, e.what());
    }
  }
  if (any_name) ds.set_attr_names(std::move(names));
  return ds;
}

inline void write_fvs(std::ostream& out, const BooleanDataset& ds) {
  out << "FVS v1 " << ds.num_attrs() << '\n';
  for (std::size_t j = 0; j < ds.attr_names().size(); ++j) out << "#attr " << j << ' ' << ds.attr_names()[j] << '\n';
  for (const auto& r : ds.rows()) {
    out << r.id;
    for (auto a : r.attrs) out << ' ' << a;
    out << '\n';
  }
}

// One process id per line. Ids absent from the dataset are kept and reported.
inline GroundTruthLoad load_ground_truth(std::istream& in, const BooleanDataset& ds) {
  GroundTruthLoad out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto id = detail::trim(line);
    if (id.empty() || id.front() == '#') continue;
    if (!ds.index_of(id))
      out.warnings.push_back("line " + std::to_string(lineno) + ": attack id '" + std::string(id) +
                             "' not present in dataset");
    out.truth.attack_ids.emplace(id);
  }
  return out;
}

inline void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
  for (const auto& id : truth.attack_ids) out << id << '\n';
}

struct SyntheticData {
  BooleanDataset dataset;
  GroundTruth truth;
};

// Number of reserved rare attributes for a given width.
inline std::size_t reserved_attr_count(std::size_t num_attrs) { return (num_attrs + 9) / 10; }

// Planted-anomaly generator. Normal rows follow a per-attribute Bernoulli
// profile; the last ceil(num_attrs/10) attributes are nearly never active for
// normals and always active for attacks.
inline SyntheticData synth_planted(std::size_t n_normal, std::size_t n_attack, std::size_t num_attrs,
                                   std::uint64_t seed) {
  require(num_attrs >= 4, ErrorKind::precondition, "synth_planted: num_attrs must be >= 4");
  const std::size_t reserved = reserved_attr_count(num_attrs);
  const std::size_t first_reserved = num_attrs - reserved;

  Rng profile_rng(derive_seed(seed, "synth.profile"));
  std::vector<double> freq(num_attrs);
  for (std::size_t j = 0; j < num_attrs; ++j)
    freq[j] = j < first_reserved ? profile_rng.uniform(0.02, 0.6) : profile_rng.uniform(0.0, 0.005);

  const std::size_t n = n_normal + n_attack;
  std::vector<bool> is_attack(n, false);
  for (std::size_t i = 0; i < n_attack; ++i) is_attack[i] = true;
  Rng layout_rng(derive_seed(seed, "synth.layout"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  layout_rng.shuffle(order);

  std::vector<std::string> names(num_attrs);
  for (std::size_t j = 0; j < num_attrs; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, j < first_reserved ? "attr_%03zu" : "rare_%03zu", j);
    names[j] = buf;
  }

  SyntheticData out{BooleanDataset(num_attrs, std::move(names)), {}};
  Rng row_rng(derive_seed(seed, "synth.rows"));
  for (std::size_t r = 0; r < n; ++r) {
    const bool attack = is_attack[order[r]];
    std::vector<std::uint32_t> attrs;
    for (std::size_t j = 0; j < num_attrs; ++j) {
      const bool on = row_rng.bernoulli(freq[j]);
      if (on || (attack && j >= first_reserved)) attrs.push_back(static_cast<std::uint32_t>(j));
    }
    char id[32];
    std::snprintf(id, sizeof id, "p%06zu", r);
    if (attack) out.truth.attack_ids.emplace(id);
    out.dataset.add_row(id, std::move(attrs));
  }
  return out;
}

inline DatasetStats stats(const BooleanDataset& ds, const GroundTruth& truth) {
  DatasetStats s;
  s.num_rows = ds.size();
  s.num_attrs = ds.num_attrs();
  for (const auto& id : truth.attack_ids)
    if (ds.index_of(id)) ++s.num_attacks;
  s.attack_ratio = s.num_rows == 0 ? 0.0 : static_cast<double>(s.num_attacks) / static_cast<double>(s.num_rows);
  if (s.num_rows == 0) return s;
  s.frequencies.assign(ds.num_attrs(), 0.0);
  for (const auto& r : ds.rows())
    for (auto a : r.attrs) s.frequencies[a] += 1.0;
  for (double& f : s.frequencies) f /= static_cast<double>(s.num_rows);
  return s;
}

// Attack percentage truncated (not rounded) to `decimals` places, the way the
// dataset tables of the TC traces are reported: 46/282104 = 0.0163% -> "0.01".
inline std::string format_attack_percent(const DatasetStats& s, int decimals = 2) {
  const double pct = s.attack_ratio * 100.0;
  const double scale = std::pow(10.0, decimals);
  // The small nudge keeps exact decimal ratios (e.g. 0.07) from truncating one step low.
  const double truncated = std::floor(pct * scale + 1e-9) / scale;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, truncated);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) fail_at(ErrorKind::format, lineno, "unterminated quoted field");
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

// Dense CSV (header `process_id,<attr names...>`, cells 0/1) to a sparse dataset.
inline BooleanDataset convert_dense_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) detail::fail_at(ErrorKind::format, 1, "empty CSV, expected header row");
  auto header = detail::split_csv_line(line, lineno);
  if (header.size() < 1 || detail::trim(header[0]) != "process_id")
    detail::fail_at(ErrorKind::format, 1, "first header column must be 'process_id'");
  std::vector<std::string> names;
  for (std::size_t j = 1; j < header.size(); ++j) names.emplace_back(detail::trim(header[j]));
  BooleanDataset ds(names.size(), names);
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line, lineno);
    if (cells.size() != header.size())
      detail::fail_at(ErrorKind::format, lineno,
                      "expected " + std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    std::vector<std::uint32_t> attrs;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const auto v = detail::trim(cells[j]);
      if (v == "1")
        attrs.push_back(static_cast<std::uint32_t>(j - 1));
      else if (v != "0")
        detail::fail_at(ErrorKind::format, lineno, "cell " + std::to_string(j + 1) + " is not 0/1: '" + std::string(v) + "'");
    }
    try {
      ds.add_row(std::string(detail::trim(cells[0])), std::move(attrs));
    } catch (const Error& e) {
      detail::fail_at(e.kind(), lineno, e.what());
    }
  }
  return ds;
}

}  // namespace flagrank
