#include "ted/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "ted/error.hpp"
#include "ted/hetgraph.hpp"
#include "ted/model.hpp"
#include "ted/rpt.hpp"
#include "ted/sweep.hpp"
#include "ted/synth.hpp"
#include "ted/train.hpp"

namespace fs = std::filesystem;

namespace ted {
namespace {

struct GraphArgs {
  std::string dir;
  std::string schema;
  std::string nodes;
  std::string edges;
  std::string labels;
  std::string patterns = "default";
};

struct MatchArgs {
  std::string mode = "homomorphism";
  std::size_t cap = 64;
  std::string cap_mode = "truncate";
  std::size_t threads = 0;
};

struct TrainArgs {
  double psr = 0.5;
  double lr = 0.005;
  double weight_decay = 0.0005;
  double test_fraction = 0.2;
  std::size_t epochs = 100;
  std::size_t batch = 256;
  std::size_t heads = 8;
  std::size_t head_dim = 4;
  std::size_t proj_dim = 16;
  std::size_t dim = 32;
  std::size_t train_size = 0;  // 0: largest size the labels allow at this PSR
  std::uint64_t seed = 1;
  std::string ablation = "none";
  std::string eval_mode = "direct";
};

struct Loaded {
  HetGraph graph;
  LabelSet labels;
  bool has_labels = false;
  std::vector<RptPattern> patterns;
};

void add_graph_options(CLI::App* cmd, GraphArgs& g, bool patterns) {
  auto* dir = cmd->add_option("--graph", g.dir, "Directory holding schema.json, nodes.csv, edges.csv[, labels.csv]")
                  ->envname("TED_GRAPH");
  auto* schema = cmd->add_option("--schema", g.schema, "Schema file (JSON)");
  auto* nodes = cmd->add_option("--nodes", g.nodes, "Node table (CSV)");
  auto* edges = cmd->add_option("--edges", g.edges, "Edge table (CSV)");
  dir->excludes(nodes)->excludes(edges)->excludes(schema);
  nodes->needs(edges);
  edges->needs(nodes);
  cmd->add_option("--labels", g.labels, "Label table (CSV)")->envname("TED_LABELS");
  if (patterns)
    cmd->add_option("--patterns", g.patterns, "Pattern file (JSON) or 'default'")
        ->envname("TED_PATTERNS")
        ->capture_default_str();
}

void add_match_options(CLI::App* cmd, MatchArgs& m) {
  cmd->add_option("--match-mode", m.mode, "homomorphism or injective")
      ->check(CLI::IsMember({"homomorphism", "injective"}))
      ->capture_default_str();
  cmd->add_option("--cap", m.cap, "Per-anchor instance cap (0 = none)")->envname("TED_CAP")->capture_default_str();
  cmd->add_option("--cap-mode", m.cap_mode, "truncate or error")
      ->check(CLI::IsMember({"truncate", "error"}))
      ->capture_default_str();
  cmd->add_option("--threads", m.threads, "Matcher threads (0 = all cores)")->envname("TED_THREADS");
}

void add_train_options(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--psr", t.psr, "Positive fraction of the training set")->envname("TED_PSR")->capture_default_str();
  cmd->add_option("--epochs", t.epochs, "Training epochs")->envname("TED_EPOCHS")->capture_default_str();
  cmd->add_option("--heads", t.heads, "Instance-encoding heads")->envname("TED_HEADS")->capture_default_str();
  cmd->add_option("--head-dim", t.head_dim, "Output width per head")->capture_default_str();
  cmd->add_option("--proj-dim", t.proj_dim, "Common projection width")->capture_default_str();
  cmd->add_option("--dim", t.dim, "Embedding width")->envname("TED_DIM")->capture_default_str();
  cmd->add_option("--seed", t.seed, "Root seed")->envname("TED_SEED")->capture_default_str();
  cmd->add_option("--ablation", t.ablation, "Component removal")
      ->check(CLI::IsMember({"none", "hete", "att", "inner", "cross"}))
      ->envname("TED_ABLATION")
      ->capture_default_str();
  cmd->add_option("--lr", t.lr, "Adam learning rate")->envname("TED_LR")->capture_default_str();
  cmd->add_option("--weight-decay", t.weight_decay, "L2 weight decay")->capture_default_str();
  cmd->add_option("--batch-size", t.batch, "Batch size")->envname("TED_BATCH_SIZE")->capture_default_str();
  cmd->add_option("--test-fraction", t.test_fraction, "Held-out fraction")->capture_default_str();
  cmd->add_option("--train-size", t.train_size, "Training-set size (0 = largest size the PSR allows)")
      ->capture_default_str();
  cmd->add_option("--eval-mode", t.eval_mode, "direct or downstream")
      ->check(CLI::IsMember({"direct", "downstream"}))
      ->capture_default_str();
}

MatchOptions match_options(const MatchArgs& m) {
  MatchOptions o;
  o.mode = m.mode == "injective" ? MatchMode::Injective : MatchMode::Homomorphism;
  o.cap = m.cap;
  o.cap_mode = m.cap_mode == "error" ? CapMode::Error : CapMode::Truncate;
  o.threads = m.threads;
  return o;
}

TrainConfig train_config(const TrainArgs& t, const LabelSet& labels) {
  TrainConfig c;
  c.psr = t.psr;
  c.learning_rate = t.lr;
  c.weight_decay = t.weight_decay;
  c.test_fraction = t.test_fraction;
  c.epochs = t.epochs;
  c.batch_size = t.batch;
  c.dims = {t.proj_dim, t.heads, t.head_dim, t.dim};
  c.seed = t.seed;
  c.ablation = Ablation::parse(t.ablation);
  c.validate();
  c.train_size = t.train_size > 0 ? t.train_size : feasible_train_size(labels, c.psr, c.test_fraction);
  return c;
}

Loaded load_inputs(const GraphArgs& g, bool need_labels, std::ostream& err) {
  Loaded in;
  fs::path labels_path = g.labels;
  if (!g.dir.empty()) {
    const fs::path dir = g.dir;
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, "graph directory " + dir.string() + " not found");
    in.graph = load_graph_dir(dir);
    if (labels_path.empty() && fs::exists(dir / "labels.csv")) labels_path = dir / "labels.csv";
  } else if (!g.nodes.empty()) {
    for (const auto& p : {g.nodes, g.edges})
      if (!fs::exists(p)) throw Error(ErrorCode::IoFailure, p + " not found");
    if (!g.schema.empty()) {
      in.graph = load_graph(g.schema, g.nodes, g.edges);
    } else {
      in.graph = load_graph(default_tax_schema(), g.nodes, g.edges);
    }
  } else {
    throw Error(ErrorCode::UsageError, "no graph given: use --graph DIR or --nodes/--edges [--schema]");
  }
  if (!labels_path.empty()) {
    if (!fs::exists(labels_path)) throw Error(ErrorCode::IoFailure, labels_path.string() + " not found");
    in.labels = load_labels(labels_path);
    in.has_labels = true;
    const auto bad = validate_labels(in.graph, in.labels);
    if (!bad.empty())
      throw Error(ErrorCode::ParseError, "label for '" + bad.front().id + "': " + bad.front().reason + " (" +
                                             std::to_string(bad.size()) + " invalid rows)");
  } else if (need_labels) {
    throw Error(ErrorCode::UsageError, "labels required: use --labels FILE or a --graph directory with labels.csv");
  }
  const auto all = g.patterns == "default" ? default_patterns() : load_patterns(g.patterns);
  in.patterns = applicable_patterns(in.graph.schema(), all);
  for (const auto& p : all)
    if (!p.applicable_to(in.graph.schema())) err << "note: pattern " << p.id() << " skipped (types absent)\n";
  return in;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw Error(ErrorCode::UsageError, "--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out + ": " + ec.message());
  return out;
}

std::string serialize_split(const DatasetSplit& split) {
  std::string s = "id,set\n";
  for (const auto& id : split.train) s += id + ",train\n";
  for (const auto& id : split.test) s += id + ",test\n";
  return s;
}

DatasetSplit parse_split(const fs::path& file) {
  std::istringstream in(read_text_file(file));
  std::string line;
  DatasetSplit split;
  if (!std::getline(in, line) || line != "id,set") throw Error(ErrorCode::ParseError, file.string() + ": bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw Error(ErrorCode::ParseError, file.string() + ": malformed row");
    const auto set = line.substr(comma + 1);
    if (set == "train") split.train.push_back(line.substr(0, comma));
    else if (set == "test") split.test.push_back(line.substr(0, comma));
    else throw Error(ErrorCode::ParseError, file.string() + ": unknown set '" + set + "'");
  }
  return split;
}

std::map<std::string, std::string> checkpoint_metadata(const TrainConfig& c, const MatchArgs& m) {
  return {{"psr", format_double(c.psr)},
          {"seed", std::to_string(c.seed)},
          {"test_fraction", format_double(c.test_fraction)},
          {"train_size", c.train_size ? std::to_string(*c.train_size) : "0"},
          {"ablation", c.ablation.name()},
          {"epochs", std::to_string(c.epochs)},
          {"learning_rate", format_double(c.learning_rate)},
          {"weight_decay", format_double(c.weight_decay)},
          {"batch_size", std::to_string(c.batch_size)},
          {"match_mode", m.mode},
          {"cap", std::to_string(m.cap)},
          {"cap_mode", m.cap_mode}};
}

std::string meta(const std::map<std::string, std::string>& md, const std::string& key) {
  const auto it = md.find(key);
  if (it == md.end()) throw Error(ErrorCode::ParseError, "checkpoint metadata lacks '" + key + "'");
  return it->second;
}

// Restores the matcher settings recorded in a checkpoint unless overridden.
MatchArgs match_from_metadata(const std::map<std::string, std::string>& md, const MatchArgs& given,
                              const CLI::App* cmd) {
  MatchArgs m = given;
  if (cmd->count("--match-mode") == 0 && md.count("match_mode")) m.mode = md.at("match_mode");
  if (cmd->count("--cap") == 0 && md.count("cap")) m.cap = std::stoul(md.at("cap"));
  if (cmd->count("--cap-mode") == 0 && md.count("cap_mode")) m.cap_mode = md.at("cap_mode");
  return m;
}

void check_index_patterns(const NeighborIndex& index, const TedParams& params) {
  if (index.num_patterns() != params.num_patterns())
    throw Error(ErrorCode::ShapeMismatch, "checkpoint was trained with " + std::to_string(params.num_patterns()) +
                                              " patterns, " + std::to_string(index.num_patterns()) + " loaded");
}

std::vector<NodeIndex> company_nodes(const HetGraph& graph) {
  return graph.nodes_of_type(graph.schema().company_type());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tax-evasion detection over related-party transaction patterns", "ted"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--manifest", "", "TOML/INI run manifest; flags given on the command line take precedence");

  GraphArgs graph_args;
  MatchArgs match_args;
  TrainArgs train_args;
  std::string out_dir;

  // generate
  GenConfig gen;
  auto* generate_cmd = app.add_subcommand("generate", "Write a synthetic graph with planted communities");
  generate_cmd->add_option("--companies", gen.companies)->capture_default_str();
  generate_cmd->add_option("--persons", gen.persons)->capture_default_str();
  generate_cmd->add_option("--items", gen.items)->capture_default_str();
  generate_cmd->add_option("--events", gen.events)->capture_default_str();
  generate_cmd->add_option("--communities", gen.communities)->capture_default_str();
  generate_cmd->add_option("--community-size", gen.community_size)->capture_default_str();
  generate_cmd->add_option("--transaction-density", gen.transaction_density)->capture_default_str();
  generate_cmd->add_option("--holds-density", gen.holds_density)->capture_default_str();
  generate_cmd->add_option("--sells-density", gen.sells_density)->capture_default_str();
  generate_cmd->add_option("--buys-density", gen.buys_density)->capture_default_str();
  generate_cmd->add_option("--belongs-density", gen.belongs_density)->capture_default_str();
  generate_cmd->add_option("--category-density", gen.category_density)->capture_default_str();
  generate_cmd->add_option("--power-exponent", gen.power_exponent)->capture_default_str();
  generate_cmd->add_option("--p-rpt", gen.p_rpt, "Evasion probability inside communities")->capture_default_str();
  generate_cmd->add_option("--p-bg", gen.p_bg, "Evasion probability elsewhere")->capture_default_str();
  generate_cmd->add_option("--coverage", gen.label_coverage, "Fraction of companies labelled")->capture_default_str();
  generate_cmd->add_option("--delta", gen.delta, "Class-conditional feature shift")->capture_default_str();
  generate_cmd->add_option("--company-dim", gen.company_dim)->capture_default_str();
  generate_cmd->add_option("--other-dim", gen.other_dim)->capture_default_str();
  generate_cmd->add_option("--seed", gen.seed)->envname("TED_SEED")->capture_default_str();
  generate_cmd->add_option("--out", out_dir, "Output directory")->envname("TED_OUT")->required();

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a graph and report its degree distribution");
  add_graph_options(ingest_cmd, graph_args, false);
  ingest_cmd->add_option("--out", out_dir, "Directory for degree.csv")->envname("TED_OUT");

  // match
  std::string instances_file;
  auto* match_cmd = app.add_subcommand("match", "Count pattern instances per pattern");
  add_graph_options(match_cmd, graph_args, true);
  add_match_options(match_cmd, match_args);
  match_cmd->add_option("--out", out_dir, "Directory for match.csv")->envname("TED_OUT");
  match_cmd->add_option("--dump", instances_file, "Write every instance to this CSV file");

  // stats
  std::vector<std::size_t> k_orders{1, 2};
  std::vector<std::string> extra_metapaths;
  std::string communities_file;
  auto* stats_cmd = app.add_subcommand("stats", "Evasion probability among neighbours per neighbour definition");
  add_graph_options(stats_cmd, graph_args, true);
  add_match_options(stats_cmd, match_args);
  stats_cmd->add_option("--k", k_orders, "k-order neighbourhoods")->delimiter(',')->capture_default_str();
  stats_cmd->add_option("--metapath", extra_metapaths, "Extra metapath NAME=type-edge-type-...");
  stats_cmd->add_option("--communities", communities_file,
                        "communities.csv; companies outside it form the background row");
  stats_cmd->add_option("--out", out_dir, "Directory for stats.csv")->envname("TED_OUT");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoint, metrics, loss curve and trend");
  add_graph_options(train_cmd, graph_args, true);
  add_match_options(train_cmd, match_args);
  add_train_options(train_cmd, train_args);
  train_cmd->add_option("--out", out_dir, "Output directory")->envname("TED_OUT")->required();

  // eval
  std::string checkpoint_file, split_file;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on its test split");
  add_graph_options(eval_cmd, graph_args, true);
  add_match_options(eval_cmd, match_args);
  eval_cmd->add_option("--checkpoint", checkpoint_file)->required();
  eval_cmd->add_option("--split", split_file, "split.csv (default: next to the checkpoint)");
  eval_cmd->add_option("--eval-mode", train_args.eval_mode)
      ->check(CLI::IsMember({"direct", "downstream"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", out_dir, "Directory for metrics.csv")->envname("TED_OUT");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the full model and each component removal");
  add_graph_options(ablate_cmd, graph_args, true);
  add_match_options(ablate_cmd, match_args);
  add_train_options(ablate_cmd, train_args);
  ablate_cmd->add_option("--out", out_dir, "Output directory")->envname("TED_OUT")->required();

  // sweep
  std::vector<double> psr_values{0.5, 0.4, 0.3, 0.2, 0.1};
  std::vector<std::size_t> sizes;
  bool psr_sweep = false;
  double threshold = 0.2;
  auto* sweep_cmd = app.add_subcommand("sweep", "PSR grid on a labelled graph and/or convergence time over sizes");
  add_graph_options(sweep_cmd, graph_args, true);
  add_match_options(sweep_cmd, match_args);
  add_train_options(sweep_cmd, train_args);
  sweep_cmd->add_flag("--psr-grid", psr_sweep, "Run the PSR grid (needs a labelled graph)");
  sweep_cmd->add_option("--psr-values", psr_values, "PSR values of the grid")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--sizes", sizes, "Total node counts for the timing sweep")->delimiter(',');
  sweep_cmd->add_option("--threshold", threshold, "Loss threshold for the timing sweep")->capture_default_str();
  sweep_cmd->add_option("--out", out_dir, "Output directory")->envname("TED_OUT")->required();

  // export
  auto* export_cmd = app.add_subcommand("export", "Write embeddings and pattern weights from a checkpoint");
  add_graph_options(export_cmd, graph_args, true);
  add_match_options(export_cmd, match_args);
  export_cmd->add_option("--checkpoint", checkpoint_file)->required();
  export_cmd->add_option("--out", out_dir, "Output directory")->envname("TED_OUT")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      throw Error(ErrorCode::UsageError, e.what());
    }

    if (generate_cmd->parsed()) {
      const auto data = generate(gen);
      const auto dir = prepare_out(out_dir);
      export_synth(data, dir);
      out << "nodes=" << data.graph.num_nodes() << " edges=" << data.graph.num_edges()
          << " labels=" << data.labels.size() << " communities=" << data.communities.size() << "\n";
      return 0;
    }

    if (ingest_cmd->parsed()) {
      const auto in = load_inputs(graph_args, false, err);
      const auto hist = degree_histogram(in.graph);
      std::string table = "degree,count\n";
      for (const auto& b : hist) table += std::to_string(b.degree) + "," + std::to_string(b.count) + "\n";
      if (!out_dir.empty()) write_text_file(prepare_out(out_dir) / "degree.csv", table);
      out << "nodes=" << in.graph.num_nodes() << " edges=" << in.graph.num_edges();
      for (const auto& t : in.graph.schema().node_types())
        out << " " << t.name << "=" << in.graph.nodes_of_type(in.graph.schema().node_type(t.name)).size();
      if (in.has_labels) out << " labels=" << in.labels.size();
      out << "\n";
      if (out_dir.empty()) out << table;
      return 0;
    }

    if (match_cmd->parsed()) {
      const auto in = load_inputs(graph_args, false, err);
      const auto opts = match_options(match_args);
      std::string table = "pattern,instances,anchors,truncated_anchors\n";
      std::string dump = "pattern,anchor,nodes\n";
      for (const auto& p : in.patterns) {
        MatchReport report;
        const auto inst = enumerate_instances(in.graph, p, opts, &report);
        std::set<NodeIndex> anchors;
        for (const auto& i : inst) {
          anchors.insert(i.anchor);
          if (!instances_file.empty()) {
            dump += p.id() + "," + in.graph.id(i.anchor) + ",";
            for (std::size_t k = 0; k < i.nodes.size(); ++k) dump += (k ? ";" : "") + in.graph.id(i.nodes[k]);
            dump += "\n";
          }
        }
        table += p.id() + "," + std::to_string(inst.size()) + "," + std::to_string(anchors.size()) + "," +
                 std::to_string(report.truncated_anchors) + "\n";
      }
      if (!out_dir.empty()) write_text_file(prepare_out(out_dir) / "match.csv", table);
      if (!instances_file.empty()) write_text_file(instances_file, dump);
      out << table;
      return 0;
    }

    if (stats_cmd->parsed()) {
      const auto in = load_inputs(graph_args, true, err);
      const auto index = build_neighbor_index(in.graph, in.patterns, match_options(match_args));
      EvasionStatsInput input;
      input.index = &index;
      auto metapaths = default_metapaths();
      for (const auto& spec : extra_metapaths) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::UsageError, "--metapath expects NAME=spec");
        metapaths.push_back(parse_metapath(spec.substr(0, eq), spec.substr(eq + 1)));
      }
      for (const auto& mp : metapaths) input.metapaths.emplace_back(mp.name, metapath_neighbors(in.graph, mp));
      for (const auto k : k_orders) input.k_orders.emplace_back(k, k_order_neighbors(in.graph, k));
      if (!communities_file.empty()) {
        std::istringstream rows(read_text_file(communities_file));
        std::string line;
        std::getline(rows, line);
        std::set<std::string> inside;
        while (std::getline(rows, line)) {
          std::stringstream cells(line);
          std::string community, id, role;
          std::getline(cells, community, ',');
          std::getline(cells, id, ',');
          std::getline(cells, role, ',');
          if (role == "company") inside.insert(id);
        }
        std::set<NodeIndex> background;
        for (const auto v : company_nodes(in.graph))
          if (!inside.count(in.graph.id(v))) background.insert(v);
        input.background = std::move(background);
      }
      const auto table = format_stats_table(evasion_ratio_stats(in.graph, input, in.labels));
      if (!out_dir.empty()) write_text_file(prepare_out(out_dir) / "stats.csv", table);
      out << table;
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto in = load_inputs(graph_args, true, err);
      const auto config = train_config(train_args, in.labels);
      const auto dir = prepare_out(out_dir);
      MatchReport report;
      const auto index = build_neighbor_index(in.graph, in.patterns, match_options(match_args), &report);
      const auto run = train(in.graph, index, in.labels, config);
      const auto mode = parse_eval_mode(train_args.eval_mode);
      auto metrics = evaluate_model(in.graph, index, run.result.params, config.ablation, in.labels, run.split, mode,
                                    config.seed);
      metrics.loss_history = run.result.metrics.loss_history;
      write_text_file(dir / "checkpoint.json",
                      serialize_checkpoint(run.result.params, checkpoint_metadata(config, match_args)));
      write_text_file(dir / "metrics.csv", format_metrics(metrics, train_args.eval_mode));
      write_text_file(dir / "loss.csv", format_loss_curve(run.result.metrics));
      write_text_file(dir / "trend.csv", format_trend(run.result));
      write_text_file(dir / "timing.csv", format_epoch_timing(run.result.metrics));
      write_text_file(dir / "split.csv", serialize_split(run.split));
      std::vector<NodeIndex> labelled;
      std::vector<int> unused;
      std::vector<std::string> ids;
      for (const auto& [id, y] : in.labels) ids.push_back(id);
      resolve_labelled(in.graph, in.labels, ids, labelled, unused);
      write_text_file(dir / "embeddings.csv",
                      format_embeddings(in.graph, infer(in.graph, index, labelled, run.result.params, config.ablation)));
      out << "f1=" << format_double(metrics.f1) << " accuracy=" << format_double(metrics.accuracy)
          << " epochs=" << run.result.metrics.loss_history.size() << " truncated_anchors=" << report.truncated_anchors
          << "\n";
      return 0;
    }

    if (eval_cmd->parsed() || export_cmd->parsed()) {
      const auto* cmd = eval_cmd->parsed() ? eval_cmd : export_cmd;
      const auto in = load_inputs(graph_args, eval_cmd->parsed(), err);
      std::map<std::string, std::string> md;
      const auto params = parse_checkpoint(read_text_file(checkpoint_file), &md);
      const auto index =
          build_neighbor_index(in.graph, in.patterns, match_options(match_from_metadata(md, match_args, cmd)));
      check_index_patterns(index, params);
      const auto ablation = Ablation::parse(md.count("ablation") ? md.at("ablation") : "none");
      if (eval_cmd->parsed()) {
        DatasetSplit split;
        fs::path sf = split_file.empty() ? fs::path(checkpoint_file).parent_path() / "split.csv" : fs::path(split_file);
        if (fs::exists(sf)) {
          split = parse_split(sf);
        } else {
          const auto ts = std::stoul(meta(md, "train_size"));
          split = split_dataset(in.labels, std::stod(meta(md, "psr")), std::stod(meta(md, "test_fraction")),
                                std::stoull(meta(md, "seed")), ts ? std::optional<std::size_t>(ts) : std::nullopt);
        }
        const auto metrics = evaluate_model(in.graph, index, params, ablation, in.labels, split,
                                            parse_eval_mode(train_args.eval_mode),
                                            md.count("seed") ? std::stoull(md.at("seed")) : 1);
        const auto table = format_metrics(metrics, train_args.eval_mode);
        if (!out_dir.empty()) write_text_file(prepare_out(out_dir) / "metrics.csv", table);
        out << table;
        return 0;
      }
      const auto dir = prepare_out(out_dir);
      const auto nodes = company_nodes(in.graph);
      const auto output = infer(in.graph, index, nodes, params, ablation);
      write_text_file(dir / "embeddings.csv", format_embeddings(in.graph, output));
      std::string attention = "id,pattern,beta\n";
      for (std::size_t r = 0; r < output.nodes.size(); ++r)
        for (std::size_t m = 0; m < params.num_patterns(); ++m)
          attention += in.graph.id(output.nodes[r]) + "," + params.pattern_ids[m] + "," +
                       format_double(output.beta(r, m)) + "\n";
      write_text_file(dir / "attention.csv", attention);
      out << "exported " << output.nodes.size() << " company embeddings\n";
      return 0;
    }

    if (ablate_cmd->parsed()) {
      const auto in = load_inputs(graph_args, true, err);
      const auto config = train_config(train_args, in.labels);
      const auto index = build_neighbor_index(in.graph, in.patterns, match_options(match_args));
      const auto rows = ablation_grid(in.graph, index, in.labels, config, parse_eval_mode(train_args.eval_mode));
      const auto table = format_grid(rows, "variant");
      write_text_file(prepare_out(out_dir) / "ablation.csv", table);
      out << table;
      return 0;
    }

    if (sweep_cmd->parsed()) {
      const bool have_graph = !graph_args.dir.empty() || !graph_args.nodes.empty();
      if (!psr_sweep && sizes.empty())
        throw Error(ErrorCode::UsageError, "sweep needs --psr-grid and/or --sizes");
      if (psr_sweep && !have_graph) throw Error(ErrorCode::UsageError, "--psr-grid needs a labelled graph");
      const auto dir = prepare_out(out_dir);
      if (psr_sweep) {
        const auto in = load_inputs(graph_args, true, err);
        auto config = train_config(train_args, in.labels);
        if (train_args.train_size == 0) config.train_size.reset();
        const auto index = build_neighbor_index(in.graph, in.patterns, match_options(match_args));
        const auto table = format_grid(
            psr_grid(in.graph, index, in.labels, config, psr_values, parse_eval_mode(train_args.eval_mode)), "psr");
        write_text_file(dir / "psr.csv", table);
        out << table;
      }
      if (!sizes.empty()) {
        auto tc = default_timing_config();
        tc.base.seed = train_args.seed;
        tc.train.seed = train_args.seed;
        if (sweep_cmd->count("--epochs")) tc.train.epochs = train_args.epochs;
        tc.loss_threshold = threshold;
        tc.match = match_options(match_args);
        if (sweep_cmd->count("--cap") == 0) tc.match.cap = default_timing_config().match.cap;
        const auto table = format_timing_table(timing_sweep(sizes, tc));
        write_text_file(dir / "timing.csv", table);
        out << table;
      }
      return 0;
    }
    throw Error(ErrorCode::UsageError, "no subcommand");
  } catch (const Error& e) {
    std::string msg = e.what();
    const auto prefix = std::string(to_string(e.code())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    for (auto& ch : msg)
      if (ch == '"' || ch == '\n') ch = ch == '"' ? '\'' : ' ';
    err << "error: code=" << to_string(e.code()) << " message=\"" << msg << "\"\n";
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '"' || ch == '\n') ch = ch == '"' ? '\'' : ' ';
    const bool bad_value = dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e);
    err << "error: code=" << (bad_value ? "ParseError" : "IoFailure") << " message=\"" << msg << "\"\n";
    return 1;
  }
}

}  // namespace ted
