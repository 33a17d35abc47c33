#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "esdid/common.hpp"

namespace esdid {

struct RawRow {
  std::string group;
  long long period = 0;
  std::optional<double> outcome;
  std::optional<double> treatment;
  double weight = 1.0;
  std::vector<std::optional<double>> controls;
  std::vector<std::optional<double>> predictors;
  std::optional<std::string> cluster;
  std::optional<std::string> supergroup;
  std::optional<std::string> by;
  std::size_t line = 0;
};

struct PanelCell {
  std::string group;
  long long period = 0;
  std::optional<double> y;
  std::optional<double> d;
  double n = 0.0;
  std::vector<std::optional<double>> x;
  std::vector<std::optional<double>> predictors;
  std::optional<std::string> cluster;
  std::optional<std::string> supergroup;
  std::optional<std::string> by;
};

// Dense per-group view, periods rebased to 1..T.
struct GroupSeries {
  std::string id;
  Series y, d;
  std::vector<double> n;
  std::vector<Series> x;  // [control][period]
  std::vector<std::optional<double>> predictors;
  std::optional<std::string> cluster;
  std::optional<std::string> supergroup;
  std::optional<std::string> by;

  void drop_cell(int t) {
    y[t].reset();
    d[t].reset();
    n[t] = 0.0;
    for (auto& xs : x) xs[t].reset();
  }
  void drop_outcome(int t) {
    y[t].reset();
    n[t] = 0.0;
  }
};

struct Panel {
  int T = 0;
  std::vector<long long> period_labels;  // period_labels[t-1] is the label of rank t
  std::vector<std::string> control_names;
  std::vector<std::string> predictor_names;
  std::vector<GroupSeries> groups;

  GroupSeries make_group(std::string id) const {
    GroupSeries g;
    g.id = std::move(id);
    g.y.assign(T + 1, std::nullopt);
    g.d.assign(T + 1, std::nullopt);
    g.n.assign(T + 1, 0.0);
    g.x.assign(control_names.size(), Series(T + 1));
    g.predictors.assign(predictor_names.size(), std::nullopt);
    return g;
  }
  long long label(int t) const {
    return t >= 1 && t <= static_cast<int>(period_labels.size()) ? period_labels[t - 1] : t;
  }
};

// Numeric ids order numerically, everything else lexicographically.
inline bool group_id_less(const std::string& a, const std::string& b) {
  auto as_int = [](const std::string& s, long long& v) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
  };
  long long va = 0, vb = 0;
  bool ia = as_int(a, va), ib = as_int(b, vb);
  if (ia && ib) return va < vb;
  if (ia != ib) return ia;
  return a < b;
}

// ---------------------------------------------------------------------------
// Collapse rows to (group, period) cells.

inline std::vector<PanelCell> collapse(const std::vector<RawRow>& rows) {
  if (rows.empty()) throw InputError("input has no rows");
  std::map<std::pair<std::string, long long>, std::vector<const RawRow*>> by_cell;
  for (const auto& r : rows) {
    if (!(r.weight >= 0.0))
      throw InputError("negative or invalid weight on line " + std::to_string(r.line));
    by_cell[{r.group, r.period}].push_back(&r);
  }

  std::vector<PanelCell> cells;
  cells.reserve(by_cell.size());
  for (const auto& [key, members] : by_cell) {
    PanelCell c;
    c.group = key.first;
    c.period = key.second;
    const std::size_t k = members.front()->controls.size();
    const std::size_t p = members.front()->predictors.size();

    CompensatedSum wsum, ysum;
    for (const auto* r : members)
      if (r->outcome) {
        wsum += r->weight;
        ysum += r->weight * *r->outcome;
      }
    c.n = wsum.value();
    if (c.n > 0.0) c.y = ysum.value() / c.n;

    // Treatment averages over rows with an outcome. A cell without any outcome
    // still carries its treatment, which the missing-treatment rules need.
    auto mean_of = [&](auto get, bool need_outcome) -> std::optional<double> {
      CompensatedSum w, s;
      std::size_t cnt = 0;
      CompensatedSum plain;
      for (const auto* r : members) {
        if (need_outcome && !r->outcome) continue;
        auto v = get(*r);
        if (!v) continue;
        w += r->weight;
        s += r->weight * *v;
        plain += *v;
        ++cnt;
      }
      if (cnt == 0) return std::nullopt;
      if (w.value() > 0.0) return s.value() / w.value();
      return plain.value() / static_cast<double>(cnt);
    };
    auto get_d = [](const RawRow& r) { return r.treatment; };
    c.d = c.y ? mean_of(get_d, true) : mean_of(get_d, false);

    c.x.resize(k);
    for (std::size_t j = 0; j < k; ++j)
      c.x[j] = mean_of([j](const RawRow& r) { return j < r.controls.size() ? r.controls[j] : std::nullopt; },
                       static_cast<bool>(c.y));
    c.predictors.resize(p);
    for (std::size_t j = 0; j < p; ++j)
      for (const auto* r : members)
        if (j < r->predictors.size() && r->predictors[j]) {
          c.predictors[j] = r->predictors[j];
          break;
        }
    for (const auto* r : members) {
      if (!c.cluster && r->cluster) c.cluster = r->cluster;
      if (!c.supergroup && r->supergroup) c.supergroup = r->supergroup;
      if (!c.by && r->by) c.by = r->by;
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

// Order-preserving relabel of the union of periods to 1..T.
inline std::vector<PanelCell> rebase_periods(std::vector<PanelCell> cells,
                                             std::vector<long long>* labels = nullptr) {
  std::vector<long long> ps;
  ps.reserve(cells.size());
  for (const auto& c : cells) ps.push_back(c.period);
  std::sort(ps.begin(), ps.end());
  ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
  for (auto& c : cells)
    c.period = std::lower_bound(ps.begin(), ps.end(), c.period) - ps.begin() + 1;
  if (labels) *labels = std::move(ps);
  return cells;
}

inline Panel build_panel(const std::vector<PanelCell>& raw_cells,
                         std::vector<std::string> control_names = {},
                         std::vector<std::string> predictor_names = {}) {
  Panel panel;
  panel.control_names = std::move(control_names);
  panel.predictor_names = std::move(predictor_names);
  auto cells = rebase_periods(raw_cells, &panel.period_labels);
  panel.T = static_cast<int>(panel.period_labels.size());

  std::vector<std::string> ids;
  for (const auto& c : cells) ids.push_back(c.group);
  std::sort(ids.begin(), ids.end(), group_id_less);
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    index[ids[i]] = i;
    panel.groups.push_back(panel.make_group(ids[i]));
  }

  auto merge_key = [](std::optional<std::string>& slot, const std::optional<std::string>& v,
                      const std::string& gid, const char* what) {
    if (!v) return;
    if (slot && *slot != *v)
      throw InputError(std::string(what) + " varies within group " + gid);
    slot = v;
  };
  for (const auto& c : cells) {
    auto& g = panel.groups[index[c.group]];
    const int t = static_cast<int>(c.period);
    g.y[t] = c.y;
    g.d[t] = c.d;
    g.n[t] = c.y ? c.n : 0.0;
    for (std::size_t j = 0; j < c.x.size() && j < g.x.size(); ++j) g.x[j][t] = c.x[j];
    for (std::size_t j = 0; j < c.predictors.size() && j < g.predictors.size(); ++j) {
      if (!c.predictors[j]) continue;
      if (g.predictors[j] && *g.predictors[j] != *c.predictors[j])
        throw InputError("predictor " + panel.predictor_names[j] + " varies within group " + g.id);
      g.predictors[j] = c.predictors[j];
    }
    merge_key(g.cluster, c.cluster, g.id, "cluster");
    merge_key(g.supergroup, c.supergroup, g.id, "supergroup variable");
    merge_key(g.by, c.by, g.id, "by variable");
  }
  return panel;
}

// ---------------------------------------------------------------------------
// CSV input.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable tab;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false;
  std::size_t line = 1, rec_line = 1;
  auto end_record = [&] {
    rec.push_back(field);
    field.clear();
    if (tab.header.empty())
      tab.header = rec;
    else if (!(rec.size() == 1 && rec[0].empty())) {
      tab.rows.push_back(rec);
      tab.lines.push_back(rec_line);
    }
    rec.clear();
    any = false;
  };
  char ch;
  while (in.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get(ch);
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    if (!any) rec_line = line;
    any = true;
    if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      rec.push_back(field);
      field.clear();
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_record();
      ++line;
    } else {
      field += ch;
    }
  }
  if (any || !field.empty() || !rec.empty()) end_record();
  if (!tab.header.empty() && !tab.header[0].empty() &&
      tab.header[0].rfind("\xEF\xBB\xBF", 0) == 0)
    tab.header[0].erase(0, 3);
  return tab;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return read_csv(in);
}

struct ColumnBindings {
  std::string outcome = "Y", group = "G", time = "T", treatment = "D";
  std::optional<std::string> weight, cluster, supergroup, by;
  std::vector<std::string> controls;
  std::vector<std::string> predictors;
};

inline std::optional<double> parse_number(const std::string& s, std::size_t line, const std::string& col) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  if (b == e) return std::nullopt;
  std::string_view v(s.data() + b, e - b);
  if (v == "NA" || v == "." || v == "NaN" || v == "nan") return std::nullopt;
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw InputError("non-numeric value '" + std::string(v) + "' in column " + col + " on line " +
                     std::to_string(line));
  return out;
}

inline std::vector<RawRow> rows_from_csv(const CsvTable& tab, const ColumnBindings& b) {
  auto col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(tab.header.begin(), tab.header.end(), name);
    if (it == tab.header.end()) throw InputError("column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - tab.header.begin());
  };
  const auto cy = col(b.outcome), cg = col(b.group), ct = col(b.time), cd = col(b.treatment);
  std::optional<std::size_t> cw, cc, cs, cb;
  if (b.weight) cw = col(*b.weight);
  if (b.cluster) cc = col(*b.cluster);
  if (b.supergroup) cs = col(*b.supergroup);
  if (b.by) cb = col(*b.by);
  std::vector<std::size_t> cx, cp;
  for (const auto& c : b.controls) cx.push_back(col(c));
  for (const auto& c : b.predictors) cp.push_back(col(c));

  std::vector<RawRow> rows;
  rows.reserve(tab.rows.size());
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    const auto& rec = tab.rows[i];
    const std::size_t line = tab.lines[i];
    auto field = [&](std::size_t c) -> const std::string& {
      static const std::string empty;
      return c < rec.size() ? rec[c] : empty;
    };
    RawRow r;
    r.line = line;
    r.group = field(cg);
    if (r.group.empty()) throw InputError("missing group id on line " + std::to_string(line));
    auto per = parse_number(field(ct), line, b.time);
    if (!per || std::floor(*per) != *per)
      throw InputError("period must be an integer on line " + std::to_string(line));
    r.period = static_cast<long long>(*per);
    r.outcome = parse_number(field(cy), line, b.outcome);
    r.treatment = parse_number(field(cd), line, b.treatment);
    if (cw) {
      auto w = parse_number(field(*cw), line, *b.weight);
      r.weight = w.value_or(0.0);
      if (r.weight < 0.0) throw InputError("negative weight on line " + std::to_string(line));
    }
    auto key = [&](std::optional<std::size_t> c) -> std::optional<std::string> {
      if (!c || field(*c).empty()) return std::nullopt;
      return field(*c);
    };
    r.cluster = key(cc);
    r.supergroup = key(cs);
    r.by = key(cb);
    for (std::size_t j = 0; j < cx.size(); ++j) r.controls.push_back(parse_number(field(cx[j]), line, b.controls[j]));
    for (std::size_t j = 0; j < cp.size(); ++j)
      r.predictors.push_back(parse_number(field(cp[j]), line, b.predictors[j]));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Panel load_panel_csv(const std::string& path, const ColumnBindings& b) {
  auto tab = read_csv_file(path);
  return build_panel(collapse(rows_from_csv(tab, b)), b.controls, b.predictors);
}

// ---------------------------------------------------------------------------
// Missing-treatment conventions.

enum class MissingPolicy { liberal, conservative };

struct AuditEntry {
  std::string group;
  long long period = 0;
  std::string rule;
  std::string action;
};

struct AuditLog {
  std::vector<AuditEntry> entries;

  void add(std::string group, long long period, std::string rule, std::string action) {
    entries.push_back({std::move(group), period, std::move(rule), std::move(action)});
  }
  void append(const AuditLog& o) { entries.insert(entries.end(), o.entries.begin(), o.entries.end()); }
  bool empty() const { return entries.empty(); }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& e : entries) os << e.group << '\t' << e.period << '\t' << e.rule << '\t' << e.action << '\n';
    return os.str();
  }
  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
      arr.push_back({{"group", e.group}, {"period", e.period}, {"rule", e.rule}, {"action", e.action}});
    return arr;
  }
};

namespace rule {
inline constexpr const char* sw_impute_baseline = "switcher: missing treatment before first change set to baseline";
inline constexpr const char* sw_outcome_before_fd = "switcher: outcome before first observed treatment set missing";
inline constexpr const char* sw_unknown_switch_date = "switcher: outcome after unknown switch window set missing";
inline constexpr const char* sw_impute_after_switch = "switcher: missing treatment after first change set to treatment at change";
inline constexpr const char* ns_impute_baseline = "never-switcher: missing treatment inside observed window set to baseline";
inline constexpr const char* ns_outcome_before_fd = "never-switcher: outcome before first observed treatment set missing";
inline constexpr const char* ns_outcome_after_ld = "never-switcher: outcome after last observed treatment set missing";
inline constexpr const char* conservative_drop = "conservative: cell dropped after missing pre-switch treatment";
}  // namespace rule

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

inline Panel apply_missing_treatment_rules(Panel panel, MissingPolicy policy, AuditLog& log,
                                           double tol = 0.0) {
  const int T = panel.T;
  for (auto& g : panel.groups) {
    int FD = 0, LD = 0;
    for (int t = 1; t <= T; ++t)
      if (g.d[t]) {
        if (!FD) FD = t;
        LD = t;
      }
    if (!FD) continue;  // no treatment information at all; classification drops it
    const double d1 = *g.d[FD];
    int F = 0;
    for (int t = FD + 1; t <= T; ++t)
      if (g.d[t] && !same_value(*g.d[t], d1, tol)) {
        F = t;
        break;
      }
    int LDBF = FD;
    if (F)
      for (int t = F - 1; t >= FD; --t)
        if (g.d[t]) {
          LDBF = t;
          break;
        }

    if (policy == MissingPolicy::conservative) {
      const int change = F ? F : T + 1;
      bool outcome_seen = false;
      int t0 = 0;
      for (int t = 1; t <= T && t < change; ++t) {
        if (g.y[t]) outcome_seen = true;
        if (!g.d[t] && outcome_seen) {
          t0 = t;
          break;
        }
      }
      if (t0)
        for (int t = t0; t <= T; ++t) {
          bool had = g.y[t] || g.d[t];
          g.drop_cell(t);
          if (had) log.add(g.id, panel.label(t), rule::conservative_drop, "dropped");
        }
      continue;
    }

    auto drop_y = [&](int t, const char* why) {
      if (g.y[t]) {
        g.drop_outcome(t);
        log.add(g.id, panel.label(t), why, "outcome set missing");
      }
    };
    auto fill_d = [&](int t, double v, const char* why) {
      if (!g.d[t]) {
        g.d[t] = v;
        log.add(g.id, panel.label(t), why, "treatment set to " + fmt_num(v));
      }
    };
    if (F) {
      for (int t = 1; t < FD; ++t) drop_y(t, rule::sw_outcome_before_fd);
      for (int t = FD + 1; t < LDBF; ++t) fill_d(t, d1, rule::sw_impute_baseline);
      if (LDBF < F - 1)
        for (int t = LDBF + 1; t <= T; ++t) drop_y(t, rule::sw_unknown_switch_date);
      for (int t = F + 1; t <= T; ++t) fill_d(t, *g.d[F], rule::sw_impute_after_switch);
    } else {
      for (int t = 1; t < FD; ++t) drop_y(t, rule::ns_outcome_before_fd);
      for (int t = FD + 1; t < LD; ++t) fill_d(t, d1, rule::ns_impute_baseline);
      for (int t = LD + 1; t <= T; ++t) drop_y(t, rule::ns_outcome_after_ld);
    }
  }
  return panel;
}

}  // namespace esdid
