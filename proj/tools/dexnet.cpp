// Command-line front end: dataset scanning, adaptation, embedding,
// campaigns, table grids and report rendering over one workspace directory.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dexnet/grid.hpp"

using namespace dexnet;

namespace {

struct Globals {
  std::string workspace = "dexnet-workspace";
  std::string scale = "full";
  std::uint64_t generic_seed = 0;
  bool quiet = false;
};

CriticScale scale_from(const std::string& s) {
  if (s == "full") return kFullScale;
  if (s == "toy") return kToyScale;
  throw ConfigError("unknown scale '" + s + "' (full, toy)");
}

std::function<void(const std::string&)> progress_printer(const Globals& g) {
  if (g.quiet) return {};
  return [](const std::string& msg) { std::fprintf(stderr, "[dexnet] %s\n", msg.c_str()); };
}

CustomProtocol read_protocol_file(const std::string& path) {
  try {
    const json j = json::parse(read_text_file(path));
    CustomProtocol p;
    p.meta_train = j.at("meta_train").get<std::vector<std::string>>();
    p.meta_test = j.at("meta_test").get<std::vector<std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError("bad protocol file " + path + ": " + e.what());
  }
}

std::optional<std::size_t> parse_queries(const std::string& q) {
  if (q == "full") return std::nullopt;
  try {
    std::size_t used = 0;
    const long v = std::stol(q, &used);
    if (used != q.size() || v <= 0) throw ConfigError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("--q expects a positive integer or 'full', got '" + q + "'");
  }
}

/// Flags shared by the campaign-shaped commands. Empty strings mean "keep the
/// value from the config file or the default".
struct CampaignFlags {
  std::string config_file;
  std::string protocol;
  std::string protocol_file;
  std::string critics;
  bool adapted = false;
  std::string fusion;
  std::string head;
  std::optional<int> hidden;
  std::optional<std::size_t> k;
  std::string q;
  std::optional<std::size_t> n_ways;
  std::optional<std::size_t> tasks;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;

  void attach(CLI::App* cmd, bool episode_flags) {
    cmd->add_option("--config", config_file, "JSON experiment config; flags override it");
    cmd->add_option("--protocol", protocol, "pv_tomato10, pv_argueso6, pnp_mixed, pnp_cross1, pnp_cross2, potato_field, cotton_field, custom");
    cmd->add_option("--protocol-file", protocol_file, "JSON {meta_train, meta_test} for --protocol custom");
    cmd->add_option("--critics", critics, "all, resnets, densenets or a comma list");
    cmd->add_flag("--adapted", adapted, "use domain-adapted critics");
    if (!episode_flags) return;
    cmd->add_option("--fusion", fusion, "concat or parallel");
    cmd->add_option("--head", head, "dense, lstm, gru, bigru, bilstm");
    cmd->add_option("--hidden", hidden, "head hidden units");
    cmd->add_option("--k", k, "shots per class");
    cmd->add_option("--q", q, "queries per class, or 'full'");
    cmd->add_option("--n", n_ways, "ways per task (0 = every meta-test class)");
    cmd->add_option("--tasks", tasks, "number of tasks");
    cmd->add_option("--seed", seed, "campaign seed");
    cmd->add_option("--epochs", epochs, "head training epochs");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_file.empty()) {
      try {
        c = ExperimentConfig::from_json(json::parse(read_text_file(config_file)));
      } catch (const json::exception& e) {
        throw ConfigError("bad config file " + config_file + ": " + e.what());
      }
    }
    if (!protocol.empty()) c.protocol = protocol_from_string(protocol);
    if (!protocol_file.empty()) {
      c.custom = read_protocol_file(protocol_file);
      if (protocol.empty()) c.protocol = ProtocolId::custom;
    }
    if (!critics.empty()) c.critics = critics_from_string(critics);
    if (adapted) c.adapted = true;
    if (!fusion.empty()) c.fusion = fusion_from_string(fusion);
    if (!head.empty()) c.head = head_from_string(head);
    if (hidden) c.hidden_units = *hidden;
    if (k) c.episode.k_shots = *k;
    if (!q.empty()) c.episode.queries_per_class = parse_queries(q);
    if (n_ways) c.episode.n_ways = *n_ways;
    if (tasks) c.episode.task_count = *tasks;
    if (seed) c.episode.campaign_seed = *seed;
    if (epochs) c.train.epochs = *epochs;
    return c;
  }
};

void write_or_print(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::error_code ec;
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write " + out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot leaf disease classification with fused critic embeddings"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--workspace,-w", g.workspace, "workspace directory")->capture_default_str();
  app.add_option("--scale", g.scale, "critic scale: full or toy")->capture_default_str();
  app.add_option("--generic-seed", g.generic_seed, "seed for freshly initialized generic critics")->capture_default_str();
  app.add_flag("--quiet,-q", g.quiet, "no progress output");

  // scan
  auto* scan = app.add_subcommand("scan", "index a class-per-directory image tree");
  std::string scan_root, scan_id;
  scan->add_option("--root", scan_root, "dataset root")->required();
  scan->add_option("--dataset", scan_id, "dataset id")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "render the synthetic desk benchmark and register it");
  std::string synth_root, synth_protocol_out;
  std::uint64_t synth_seed = 7;
  std::size_t synth_train = 40, synth_test = 100;
  synth->add_option("--root", synth_root, "output directory")->required();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--train-images", synth_train, "images per meta-train class")->capture_default_str();
  synth->add_option("--test-images", synth_test, "images per meta-test class")->capture_default_str();
  synth->add_option("--protocol-out", synth_protocol_out, "where to write the custom protocol JSON");

  // init-weights
  auto* init = app.add_subcommand("init-weights", "create seeded generic weights for critics");
  std::string init_critics = "all";
  init->add_option("--critics", init_critics)->capture_default_str();

  // adapt / embed / eval
  auto* adapt = app.add_subcommand("adapt", "domain-adapt critics on the meta-train classes");
  CampaignFlags adapt_flags;
  adapt_flags.attach(adapt, false);
  std::optional<std::size_t> adapt_epochs;
  std::optional<double> adapt_lr;
  adapt->add_option("--adapt-epochs", adapt_epochs);
  adapt->add_option("--adapt-lr", adapt_lr);

  auto* embed = app.add_subcommand("embed", "embed every meta-test sample into the feature cache");
  CampaignFlags embed_flags;
  embed_flags.attach(embed, false);

  auto* eval = app.add_subcommand("eval", "run one campaign of few-shot tasks");
  CampaignFlags eval_flags;
  eval_flags.attach(eval, true);
  std::string eval_out, eval_format = "md";
  eval->add_option("--out", eval_out, "write the JSON result here");
  eval->add_option("--format", eval_format, "summary format on stdout: json, csv, md")->capture_default_str();

  // grid
  auto* grid = app.add_subcommand("grid", "run a published table's experiment grid");
  int grid_table = 0;
  std::string grid_out, grid_format = "md", grid_protocol_file, grid_q;
  std::optional<std::size_t> grid_tasks, grid_n;
  std::optional<int> grid_hidden;
  std::vector<std::size_t> grid_shots;
  std::uint64_t grid_seed = 0;
  grid->add_option("--table", grid_table, "table number 1..7")->required()->check(CLI::Range(1, 7));
  grid->add_option("--out", grid_out, "write the JSON report here");
  grid->add_option("--format", grid_format, "summary format on stdout: json, csv, md")->capture_default_str();
  grid->add_option("--protocol-file", grid_protocol_file, "run every cell on this custom protocol instead");
  grid->add_option("--tasks", grid_tasks, "override task count");
  grid->add_option("--q", grid_q, "override queries per class (or 'full')");
  grid->add_option("--n", grid_n, "override ways per task (0 = all)");
  grid->add_option("--hidden", grid_hidden, "override head hidden units");
  grid->add_option("--shots", grid_shots, "override the shot list")->delimiter(',');
  grid->add_option("--seed", grid_seed, "campaign seed")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "render a saved result or grid report");
  std::string report_in, report_format = "md", report_out;
  report->add_option("--in", report_in, "result JSON")->required();
  report->add_option("--format", report_format, "json, csv, md")->capture_default_str();
  report->add_option("--out", report_out, "output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto progress = progress_printer(g);
    auto workspace = [&] { return Workspace(g.workspace, scale_from(g.scale), g.generic_seed); };

    if (*scan) {
      Workspace ws = workspace();
      const auto result = scan_dataset(scan_root, scan_id);
      ws.add_manifest(result.manifest);
      std::cout << scan_id << ": " << result.manifest.classes().size() << " classes, "
                << result.manifest.sample_count() << " images";
      if (!result.skipped.empty()) std::cout << ", " << result.skipped.size() << " files skipped";
      std::cout << "\n";
      for (const auto& c : result.manifest.classes()) {
        std::cout << "  " << c << " " << result.manifest.samples(c).size() << "\n";
      }
    } else if (*synth) {
      Workspace ws = workspace();
      const auto bench = make_desk_benchmark(synth_root, synth_seed, synth_train, synth_test);
      ws.add_manifest(bench.manifest);
      const json proto = {{"meta_train", bench.protocol.meta_train}, {"meta_test", bench.protocol.meta_test}};
      const std::string out = synth_protocol_out.empty() ? (fs::path(synth_root) / "protocol.json").string()
                                                         : synth_protocol_out;
      write_text_file(out, proto.dump(2) + "\n");
      std::cout << "synthetic_leaves: " << bench.manifest.sample_count() << " images, protocol written to " << out
                << "\n";
    } else if (*init) {
      Workspace ws = workspace();
      for (CriticId id : critics_from_string(init_critics)) {
        std::cout << to_string(id) << " generic " << ws.ensure_generic(id) << "\n";
      }
    } else if (*adapt) {
      Workspace ws = workspace();
      ExperimentConfig c = adapt_flags.resolve();
      if (adapt_epochs) c.adaptation.epochs = *adapt_epochs;
      if (adapt_lr) c.adaptation.learning_rate = *adapt_lr;
      MetaSplit split = build_meta_split(ws.manifests(), c.protocol, c.split_seed, c.custom);
      for (CriticId id : c.critics) {
        std::cout << to_string(id) << " adapted " << ws.ensure_adapted(id, split, c.adaptation, progress) << "\n";
      }
    } else if (*embed) {
      Workspace ws = workspace();
      const ExperimentConfig c = embed_flags.resolve();
      const auto p = prepare_campaign(ws, c, progress);
      for (const auto& [id, hash] : p.generation) std::cout << to_string(id) << " " << hash << "\n";
      std::cout << p.features.size() << " samples fused, dim " << p.layout.total_dim() << "\n";
    } else if (*eval) {
      Workspace ws = workspace();
      const ExperimentConfig c = eval_flags.resolve();
      const auto result = run_campaign(ws, c, progress);
      if (!eval_out.empty()) emit_report(result, ReportFormat::json, eval_out);
      std::cout << render_report(result, report_format_from_string(eval_format));
    } else if (*grid) {
      Workspace ws = workspace();
      GridOptions o;
      if (!grid_protocol_file.empty()) o.protocol = read_protocol_file(grid_protocol_file);
      o.task_count = grid_tasks;
      if (!grid_q.empty()) o.queries_per_class = parse_queries(grid_q);
      o.n_ways = grid_n;
      o.hidden_units = grid_hidden;
      if (!grid_shots.empty()) o.shots = grid_shots;
      o.campaign_seed = grid_seed;
      const auto published = PublishedResults::load();
      const auto r = run_grid(ws, table_grid(grid_table, o), published, progress);
      if (!grid_out.empty()) emit_report(r, ReportFormat::json, grid_out);
      std::cout << render_report(r, report_format_from_string(grid_format));
    } else if (*report) {
      const auto format = report_format_from_string(report_format);
      json j;
      try {
        j = json::parse(read_text_file(report_in));
      } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + report_in + ": " + e.what());
      }
      try {
        const std::string text = j.contains("table") ? render_report(GridReport::from_json(j), format)
                                                     : render_report(AggregateResult::from_json(j), format);
        write_or_print(text, report_out);
      } catch (const json::exception& e) {
        throw ConfigError(report_in + " is neither a campaign result nor a grid report: " + e.what());
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
