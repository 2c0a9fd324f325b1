#pragma once

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dexnet/experiment.hpp"

namespace dexnet {

#ifdef DEXNET_DATA_DIR
inline const fs::path kDefaultPublishedResults = fs::path(DEXNET_DATA_DIR) / "published_results.json";
#else
inline const fs::path kDefaultPublishedResults = "data/published_results.json";
#endif

/// Published reference numbers keyed by (table, row, column), in percent.
class PublishedResults {
 public:
  PublishedResults() = default;
  explicit PublishedResults(json data) : data_(std::move(data)) {}

  static PublishedResults load(const fs::path& path = kDefaultPublishedResults) {
    try {
      return PublishedResults(json::parse(read_text_file(path)));
    } catch (const json::exception& e) {
      throw ConfigError("bad published results file " + path.string() + ": " + e.what());
    }
  }

  struct Cell {
    double mean = 0;
    double std = 0;
  };

  std::optional<Cell> cell(int table, const std::string& row, const std::string& column) const {
    const auto t = data_.find("tables");
    if (t == data_.end()) return std::nullopt;
    const auto tab = t->find(std::to_string(table));
    if (tab == t->end()) return std::nullopt;
    const auto cells = tab->find("cells");
    if (cells == tab->end()) return std::nullopt;
    const auto r = cells->find(row);
    if (r == cells->end()) return std::nullopt;
    const auto c = r->find(column);
    if (c == r->end()) return std::nullopt;
    return Cell{c->at("mean").get<double>(), c->value("std", 0.0)};
  }

  std::optional<std::size_t> count(const std::string& key) const {
    const auto c = data_.find("counts");
    if (c == data_.end() || !c->contains(key)) return std::nullopt;
    return c->at(key).get<std::size_t>();
  }

  std::string title(int table) const {
    if (!data_.contains("tables") || !data_["tables"].contains(std::to_string(table))) return {};
    return data_["tables"][std::to_string(table)].value("title", std::string{});
  }

 private:
  json data_ = json::object();
};

struct GridCell {
  std::string row;
  std::string column;
  ExperimentConfig config;
};

struct GridSpec {
  int table = 0;
  std::string title;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<GridCell> cells;  // row-major
};

/// Knobs for running a table's layout at a different scale. Unset fields keep
/// the table's own settings.
struct GridOptions {
  std::optional<CustomProtocol> protocol;  // replaces every cell's protocol
  std::optional<std::size_t> task_count;
  std::optional<std::optional<std::size_t>> queries_per_class;  // inner nullopt = full pool
  std::optional<std::size_t> n_ways;
  std::optional<std::vector<std::size_t>> shots;
  std::optional<int> hidden_units;
  std::optional<AdaptationConfig> adaptation;
  std::optional<HeadTrainConfig> train;
  std::uint64_t campaign_seed = 0;
  std::uint64_t split_seed = 0;
};

namespace detail {

inline std::string shot_label(std::size_t k) { return "k=" + std::to_string(k); }

inline std::vector<std::size_t> shots_or(const GridOptions& o, std::vector<std::size_t> fallback) {
  return o.shots ? *o.shots : fallback;
}

inline ExperimentConfig base_config(ProtocolId protocol, bool adapted, FusionMode fusion, HeadKind head,
                                    std::size_t n_ways, std::size_t k, std::optional<std::size_t> q,
                                    std::size_t tasks, const GridOptions& o) {
  ExperimentConfig c;
  c.protocol = protocol;
  c.adapted = adapted;
  c.fusion = fusion;
  c.head = head;
  c.hidden_units = 1024;
  c.episode.n_ways = n_ways;
  c.episode.k_shots = k;
  c.episode.queries_per_class = q;
  c.episode.task_count = tasks;
  c.episode.campaign_seed = o.campaign_seed;
  c.split_seed = o.split_seed;
  if (o.protocol) {
    c.protocol = ProtocolId::custom;
    c.custom = *o.protocol;
  }
  if (o.task_count) c.episode.task_count = *o.task_count;
  if (o.queries_per_class) c.episode.queries_per_class = *o.queries_per_class;
  if (o.n_ways) c.episode.n_ways = *o.n_ways;
  if (o.hidden_units) c.hidden_units = *o.hidden_units;
  if (o.adaptation) c.adaptation = *o.adaptation;
  if (o.train) c.train = *o.train;
  return c;
}

}  // namespace detail

/// Row/column layout and per-cell configuration of a published table.
inline GridSpec table_grid(int table, const GridOptions& o = {}) {
  using detail::base_config;
  using detail::shot_label;
  GridSpec g;
  g.table = table;
  auto add = [&](const std::string& row, const std::string& col, ExperimentConfig c) {
    g.cells.push_back({row, col, std::move(c)});
  };
  auto shot_columns = [&](const std::vector<std::size_t>& ks) {
    for (auto k : ks) g.columns.push_back(shot_label(k));
  };
  constexpr auto pv = ProtocolId::pv_tomato10;
  constexpr auto concat = FusionMode::concatenated;

  switch (table) {
    case 1: {
      g.title = "Single vs ensemble feature extractors";
      const auto ks = detail::shots_or(o, {1, 5, 10, 15});
      shot_columns(ks);
      std::vector<std::pair<std::string, std::vector<CriticId>>> sets;
      for (CriticId id : kCanonicalCritics) sets.push_back({std::string(to_string(id)), {id}});
      sets.push_back({"resnets", resnet_critics()});
      sets.push_back({"densenets", densenet_critics()});
      sets.push_back({"all", all_critics()});
      for (const auto& [name, critics] : sets) {
        g.rows.push_back(name);
        for (auto k : ks) {
          auto c = base_config(pv, false, concat, HeadKind::dense, 10, k, 50, 100, o);
          c.critics = critics;
          add(name, shot_label(k), c);
        }
      }
      break;
    }
    case 2: {
      g.title = "Parallel vs concatenated observations, classifier, adaptation";
      const auto ks = detail::shots_or(o, {1, 5, 10, 15});
      shot_columns(ks);
      for (auto fusion : {FusionMode::parallel, FusionMode::concatenated}) {
        for (auto head : {HeadKind::dense, HeadKind::bilstm}) {
          for (bool adapted : {false, true}) {
            const std::string row = std::string(to_string(fusion)) + "/" + std::string(to_string(head)) + "/" +
                                    (adapted ? "adapted" : "generic");
            g.rows.push_back(row);
            for (auto k : ks) add(row, shot_label(k), base_config(pv, adapted, fusion, head, 10, k, 50, 100, o));
          }
        }
      }
      break;
    }
    case 3: {
      g.title = "Classifier heads";
      const auto ks = detail::shots_or(o, {1, 5, 10, 15});
      shot_columns(ks);
      for (HeadKind h : kAllHeads) {
        const std::string row(to_string(h));
        g.rows.push_back(row);
        for (auto k : ks) add(row, shot_label(k), base_config(pv, false, concat, h, 10, k, std::nullopt, 100, o));
      }
      break;
    }
    case 4: {
      g.title = "Impact of domain adaptation";
      const auto ks = detail::shots_or(o, {1, 5, 10, 15, 20, 40, 80});
      g.columns = {"generic", "adapted"};
      for (auto k : ks) {
        g.rows.push_back(shot_label(k));
        for (bool adapted : {false, true}) {
          add(shot_label(k), adapted ? "adapted" : "generic",
              base_config(pv, adapted, concat, HeadKind::bilstm, 10, k, std::nullopt, 100, o));
        }
      }
      break;
    }
    case 5: {
      g.title = "PlantVillage six-class benchmark";
      const auto ks = detail::shots_or(o, {1, 10, 15, 80});
      shot_columns(ks);
      g.rows = {"dexnet"};
      for (auto k : ks) {
        add("dexnet", shot_label(k),
            base_config(ProtocolId::pv_argueso6, true, concat, HeadKind::bilstm, 6, k, 50, 20, o));
      }
      break;
    }
    case 6: {
      g.title = "Single-mixed and cross-domain";
      const auto ks = detail::shots_or(o, {1, 5, 10});
      g.columns = {"pnp_mixed", "pnp_cross1", "pnp_cross2"};
      for (auto k : ks) {
        g.rows.push_back(shot_label(k));
        for (auto p : {ProtocolId::pnp_mixed, ProtocolId::pnp_cross1, ProtocolId::pnp_cross2}) {
          add(shot_label(k), std::string(to_string(p)), base_config(p, true, concat, HeadKind::bilstm, 5, k, 50, 100, o));
        }
      }
      break;
    }
    case 7: {
      g.title = "Field conditions";
      const auto ks = detail::shots_or(o, {1, 5, 10, 15});
      g.columns = {"potato_field", "cotton_field"};
      for (auto k : ks) {
        g.rows.push_back(shot_label(k));
        for (auto p : {ProtocolId::potato_field, ProtocolId::cotton_field}) {
          add(shot_label(k), std::string(to_string(p)),
              base_config(p, true, concat, HeadKind::bilstm, 0, k, std::nullopt, 100, o));
        }
      }
      break;
    }
    default:
      throw ConfigError("no table " + std::to_string(table) + " (expected 1..7)");
  }
  return g;
}

struct CellResult {
  std::string row;
  std::string column;
  std::optional<AggregateResult> result;
  std::string error;  // set when the campaign did not produce a result
  std::optional<PublishedResults::Cell> published;

  /// Reproduced minus published mean, in percentage points.
  std::optional<double> delta() const {
    if (!result || !published) return std::nullopt;
    return result->mean * 100.0 - published->mean;
  }
};

struct GridReport {
  int table = 0;
  std::string title;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<CellResult> cells;
  std::vector<std::string> notes;

  const CellResult* find(const std::string& row, const std::string& column) const {
    for (const auto& c : cells) {
      if (c.row == row && c.column == column) return &c;
    }
    return nullptr;
  }

  json to_json() const {
    json cj = json::array();
    for (const auto& c : cells) {
      json j = {{"row", c.row}, {"column", c.column}};
      j["reproduced"] = c.result ? c.result->to_json() : json(nullptr);
      if (!c.error.empty()) j["error"] = c.error;
      j["published"] = c.published ? json{{"mean", c.published->mean}, {"std", c.published->std}} : json(nullptr);
      j["delta"] = c.delta() ? json(*c.delta()) : json(nullptr);
      cj.push_back(std::move(j));
    }
    return {{"table", table}, {"title", title}, {"rows", rows}, {"columns", columns},
            {"cells", std::move(cj)}, {"notes", notes},
            {"units", "published values and deltas in percent; reproduced mean and dispersion are fractions"}};
  }

  static GridReport from_json(const json& j) {
    GridReport r;
    r.table = j.at("table").get<int>();
    r.title = j.value("title", std::string{});
    r.rows = j.at("rows").get<std::vector<std::string>>();
    r.columns = j.at("columns").get<std::vector<std::string>>();
    r.notes = j.value("notes", std::vector<std::string>{});
    for (const auto& c : j.at("cells")) {
      CellResult cell;
      cell.row = c.at("row").get<std::string>();
      cell.column = c.at("column").get<std::string>();
      if (!c.at("reproduced").is_null()) cell.result = AggregateResult::from_json(c.at("reproduced"));
      cell.error = c.value("error", std::string{});
      if (!c.at("published").is_null()) {
        cell.published = PublishedResults::Cell{c["published"].at("mean").get<double>(),
                                                c["published"].value("std", 0.0)};
      }
      r.cells.push_back(std::move(cell));
    }
    return r;
  }
};

/// Runs every cell; a failing cell is reported and the rest still run.
/// Adaptation and embedding are shared across cells through the workspace.
inline GridReport run_grid(Workspace& ws, const GridSpec& grid, const PublishedResults& published,
                           const std::function<void(const std::string&)>& progress = {}) {
  GridReport report;
  report.table = grid.table;
  report.title = grid.title;
  report.rows = grid.rows;
  report.columns = grid.columns;
  report.notes.push_back("dispersion is the population standard deviation of per-task accuracy");

  bool tomato_full_query = false;
  std::optional<std::size_t> tomato_query_pool;
  for (const auto& cell : grid.cells) {
    if (progress) progress("table " + std::to_string(grid.table) + " [" + cell.row + ", " + cell.column + "]");
    CellResult out;
    out.row = cell.row;
    out.column = cell.column;
    out.published = published.cell(grid.table, cell.row, cell.column);
    try {
      out.result = run_campaign(ws, cell.config, progress);
      if (cell.config.protocol == ProtocolId::pv_tomato10 && cell.config.episode.full_query()) {
        tomato_full_query = true;
        tomato_query_pool = out.result->fingerprint.at("query_pool_size").get<std::size_t>();
      }
    } catch (const Error& e) {
      out.error = e.what();
    }
    report.cells.push_back(std::move(out));
  }
  if (tomato_full_query && tomato_query_pool) {
    if (const auto expected = published.count("tomato_query_pool")) {
      const long long d = static_cast<long long>(*tomato_query_pool) - static_cast<long long>(*expected);
      report.notes.push_back("query pool holds " + std::to_string(*tomato_query_pool) + " images against " +
                             std::to_string(*expected) + " published (" + (d >= 0 ? "+" : "") + std::to_string(d) +
                             "); per-class rounding of the 80:20 support/query split");
    }
  }
  return report;
}

enum class ReportFormat { json, csv, md };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "md" || s == "markdown") return ReportFormat::md;
  throw ConfigError("unknown report format '" + std::string(s) + "' (json, csv, md)");
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string md_cell(std::string s) {
  for (auto& c : s) {
    if (c == '|' || c == '\n') c = ' ';
  }
  return s;
}

inline std::string percent(double mean, double dispersion) {
  return fixed(mean * 100.0, 2) + " ± " + fixed(dispersion * 100.0, 2);
}

}  // namespace detail

inline std::string render_report(const AggregateResult& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::json:
      return r.to_json().dump(2) + "\n";
    case ReportFormat::csv: {
      std::string out = "task_index,accuracy,error\n";
      for (const auto& t : r.tasks) {
        out += std::to_string(t.task_index) + "," + (t.accuracy ? detail::fixed(*t.accuracy, 6) : "") + "," +
               detail::csv_field(t.error) + "\n";
      }
      return out;
    }
    case ReportFormat::md: {
      const auto failed = r.failed_tasks();
      std::ostringstream out;
      out << "# Campaign result\n\n";
      out << "| field | value |\n|---|---|\n";
      const auto& c = r.config;
      auto field = [&](const char* key) { return c.contains(key) ? detail::md_cell(c.at(key).dump()) : std::string("-"); };
      out << "| protocol | " << field("protocol") << " |\n";
      out << "| critics | " << field("critics") << " |\n";
      out << "| adapted | " << field("adapted") << " |\n";
      out << "| fusion | " << field("fusion") << " |\n";
      out << "| head | " << field("head") << " |\n";
      out << "| episode | " << field("episode") << " |\n";
      out << "| accuracy (%) | " << detail::percent(r.mean, r.dispersion) << " |\n";
      out << "| tasks | " << r.tasks.size() << " |\n";
      out << "| failed tasks | " << failed.size() << " |\n\n";
      if (!failed.empty()) {
        out << "Failed task indices:";
        for (auto i : failed) out << " " << i;
        out << "\n\n";
      }
      out << "Dispersion is the population standard deviation across tasks.\n";
      return out.str();
    }
  }
  return {};
}

inline std::string render_report(const GridReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::json:
      return r.to_json().dump(2) + "\n";
    case ReportFormat::csv: {
      std::string out =
          "table,row,column,published_mean,published_std,reproduced_mean,reproduced_dispersion,delta,failed_tasks,error\n";
      for (const auto& c : r.cells) {
        out += std::to_string(r.table) + "," + detail::csv_field(c.row) + "," + detail::csv_field(c.column) + ",";
        out += c.published ? detail::fixed(c.published->mean, 2) + "," + detail::fixed(c.published->std, 2) : ",";
        out += ",";
        out += c.result ? detail::fixed(c.result->mean * 100.0, 2) + "," + detail::fixed(c.result->dispersion * 100.0, 2)
                        : ",";
        out += ",";
        out += c.delta() ? detail::fixed(*c.delta(), 2) : "";
        out += ",";
        out += c.result ? std::to_string(c.result->failed_tasks().size()) : "";
        out += "," + detail::csv_field(c.error) + "\n";
      }
      return out;
    }
    case ReportFormat::md: {
      std::ostringstream out;
      out << "# Table " << r.table;
      if (!r.title.empty()) out << ": " << r.title;
      out << "\n\n| |";
      for (const auto& col : r.columns) out << " " << col << " published | " << col << " reproduced | " << col << " delta |";
      out << "\n|---|";
      for (std::size_t i = 0; i < r.columns.size(); ++i) out << "---|---|---|";
      out << "\n";
      for (const auto& row : r.rows) {
        out << "| " << row << " |";
        for (const auto& col : r.columns) {
          const CellResult* c = r.find(row, col);
          const std::string pub =
              c && c->published ? detail::fixed(c->published->mean, 2) + " ± " + detail::fixed(c->published->std, 2) : "-";
          std::string rep = "-";
          if (c && c->result) {
            rep = detail::percent(c->result->mean, c->result->dispersion);
            if (const auto f = c->result->failed_tasks().size()) rep += " (" + std::to_string(f) + " failed)";
          } else if (c && !c->error.empty()) {
            rep = "error";
          }
          const std::string delta = c && c->delta() ? (*c->delta() >= 0 ? "+" : "") + detail::fixed(*c->delta(), 2) : "-";
          out << " " << pub << " | " << rep << " | " << delta << " |";
        }
        out << "\n";
      }
      std::vector<std::string> errors;
      for (const auto& c : r.cells) {
        if (!c.error.empty()) errors.push_back(c.row + " / " + c.column + ": " + detail::md_cell(c.error));
      }
      if (!errors.empty() || !r.notes.empty()) out << "\n";
      for (const auto& e : errors) out << "- error in " << e << "\n";
      for (const auto& n : r.notes) out << "- " << n << "\n";
      return out.str();
    }
  }
  return {};
}

/// Writes a rendering to `path`, creating parent directories.
template <typename Result>
void emit_report(const Result& result, ReportFormat format, const fs::path& path) {
  const std::string text = render_report(result, format);
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

}  // namespace dexnet
