#include "fedsim/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/format.hpp"
#include "fedsim/oracle.hpp"

namespace fedsim {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double mean_ignoring_nan(const std::vector<double>& values) {
  double sum = 0.0;
  int count = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      sum += v;
      ++count;
    }
  }
  return count > 0 ? sum / count : kNaN;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::string summary_json(const std::vector<SeedRun>& runs) {
  Json doc;
  doc["schema_version"] = kRoundsSchemaVersion;
  Json per_seed = Json::array();
  std::vector<double> last5, best5, recall;
  for (const SeedRun& r : runs) {
    const auto& reports = r.result.reports;
    const double rec = mean_contested_recall(reports);
    Json item;
    item["seed"] = r.seed;
    item["last5_accuracy"] = r.result.summary.last5_accuracy;
    item["best5_accuracy"] = r.result.summary.best5_accuracy;
    item["final_global_accuracy"] = reports.back().global_accuracy;
    item["final_clean_accuracy"] = reports.back().clean_accuracy;
    item["mean_detection_recall"] = number_or_null(rec);
    per_seed.push_back(item);
    last5.push_back(r.result.summary.last5_accuracy);
    best5.push_back(r.result.summary.best5_accuracy);
    recall.push_back(rec);
  }
  doc["seeds"] = per_seed;
  Json mean;
  mean["last5_accuracy"] = mean_ignoring_nan(last5);
  mean["best5_accuracy"] = mean_ignoring_nan(best5);
  mean["mean_detection_recall"] = number_or_null(mean_ignoring_nan(recall));
  doc["seed_mean"] = mean;
  return doc.dump(2) + "\n";
}

struct SeedMeans {
  double last5 = 0.0;
  double best5 = 0.0;
  double recall = 0.0;
};

SeedMeans seed_means(const std::vector<SeedRun>& runs) {
  std::vector<double> last5, best5, recall;
  for (const SeedRun& r : runs) {
    last5.push_back(r.result.summary.last5_accuracy);
    best5.push_back(r.result.summary.best5_accuracy);
    recall.push_back(mean_contested_recall(r.result.reports));
  }
  return {mean_ignoring_nan(last5), mean_ignoring_nan(best5), mean_ignoring_nan(recall)};
}

std::string sweep_key(const std::string& axis) {
  if (axis == "num_clients" || axis == "attacker_ratio" || axis == "beta") return axis;
  if (axis == "aggregator") return "aggregator.kind";
  if (axis == "attack") return "attack.kind";
  if (axis == "defense_enabled") return "defender.enabled";
  throw ConfigError("unsupported sweep axis '" + axis +
                    "' (expected num_clients, attacker_ratio, beta, aggregator, attack or "
                    "defense_enabled)");
}

struct Options {
  std::string config;
  std::string out;
  std::string seeds;
  std::string axis;
  std::string values;
  std::string kind;
};

ExperimentConfig load_experiment(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_config(opt.config);
  if (!opt.seeds.empty()) {
    cfg.seeds = parse_seed_list(opt.seeds);
    cfg.sim.seed = cfg.seeds.front();
  }
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  cfg.validate();
  return cfg;
}

void execute_run(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& out) {
  const std::vector<SeedRun> runs = run_experiment(cfg, threads_from_env());
  write_run_outputs(cfg, runs, dir);
  const SeedMeans m = seed_means(runs);
  out << "wrote " << (dir / "rounds.csv").string() << " (" << runs.size()
      << " seeds), last5 " << format_double(m.last5) << ", best5 " << format_double(m.best5)
      << "\n";
}

int cmd_run(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(opt);
  execute_run(cfg, cfg.output_dir, out);
  return kExitOk;
}

int cmd_sweep(const Options& opt, std::ostream& out) {
  if (opt.axis.empty()) throw ConfigError("--axis is required");
  const std::string key = sweep_key(opt.axis);
  std::vector<std::string> values;
  for (const std::string& v : split(opt.values, ',')) {
    std::string t = v;
    t.erase(0, t.find_first_not_of(" \t"));
    t.erase(t.find_last_not_of(" \t") + 1);
    if (t.empty()) throw ConfigError("--values contains an empty entry");
    values.push_back(t);
  }
  if (values.empty()) throw ConfigError("--values must list at least one value");

  const ExperimentConfig base = load_experiment(opt);
  // Validate every point before spending time on any of them.
  std::vector<ExperimentConfig> points;
  for (const std::string& v : values) {
    ExperimentConfig cfg = base;
    apply_setting(cfg, key, v);
    cfg.validate();
    points.push_back(cfg);
  }

  const fs::path root = base.output_dir;
  ensure_dir(root);
  std::ostringstream csv;
  csv << "axis,value,dir,last5_mean,best5_mean,detection_recall_mean\n";
  const int threads = threads_from_env();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string sub = opt.axis + "_" + values[i];
    const std::vector<SeedRun> runs = run_experiment(points[i], threads);
    write_run_outputs(points[i], runs, root / sub);
    const SeedMeans m = seed_means(runs);
    csv << opt.axis << ',' << values[i] << ',' << sub << ',' << format_double(m.last5) << ','
        << format_double(m.best5) << ',' << format_double(m.recall) << '\n';
    out << opt.axis << "=" << values[i] << ": last5 " << format_double(m.last5) << "\n";
  }
  write_file(root / "sweep_summary.csv", csv.str());
  return kExitOk;
}

int num_classes_in(const CsvTable& table) {
  int classes = 0;
  while (true) {
    bool found = false;
    for (const std::string& h : table.header) {
      found = found || h == "sim_clean_c" + std::to_string(classes);
    }
    if (!found) return classes;
    ++classes;
  }
}

void analyze_surface(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& out) {
  if (cfg.seeds.size() > 1) {
    log_warning("surface analysis uses the first seed only");
  }
  const SimConfig sim = cfg.for_seed(cfg.seeds.front());
  const RunResult result = run(sim, RunOptions{threads_from_env(), false});
  const SyntheticData data = generate_synthetic(sim.resolved().data);
  const Matrix grid = accuracy_surface(result.final_global, data.test, cfg.surface_radius,
                                       cfg.surface_steps, sim.seed);
  std::ostringstream csv;
  csv << "a,b,accuracy\n";
  for (int i = 0; i < cfg.surface_steps; ++i) {
    for (int j = 0; j < cfg.surface_steps; ++j) {
      csv << format_double(surface_coordinate(cfg.surface_radius, cfg.surface_steps, i)) << ','
          << format_double(surface_coordinate(cfg.surface_radius, cfg.surface_steps, j)) << ','
          << format_double(grid(i, j)) << '\n';
    }
  }
  ensure_dir(dir);
  write_file(dir / "surface.csv", csv.str());
  out << "wrote " << (dir / "surface.csv").string() << "\n";
}

void analyze_similarity(const fs::path& dir, std::ostream& out) {
  const CsvTable table = read_csv(dir / "rounds.csv");
  const int classes = num_classes_in(table);
  std::ostringstream csv;
  csv << "seed,round,clean_sim,corrupted_sim";
  for (int c = 0; c < classes; ++c) csv << ",clean_sim_c" << c;
  for (int c = 0; c < classes; ++c) csv << ",corrupted_sim_c" << c;
  csv << '\n';
  const std::size_t seed = table.column("seed");
  const std::size_t round = table.column("round");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    csv << table.rows[r][seed] << ',' << table.rows[r][round] << ','
        << table.rows[r][table.column("similarity_clean")] << ','
        << table.rows[r][table.column("similarity_corrupted")];
    for (int c = 0; c < classes; ++c) {
      csv << ',' << table.rows[r][table.column("sim_clean_c" + std::to_string(c))];
    }
    for (int c = 0; c < classes; ++c) {
      csv << ',' << table.rows[r][table.column("sim_corrupted_c" + std::to_string(c))];
    }
    csv << '\n';
  }
  write_file(dir / "similarity.csv", csv.str());
  out << "wrote " << (dir / "similarity.csv").string() << "\n";
}

// Seed mean of the per-seed contested-round recall, as in summary.json.
double contested_recall(const CsvTable& table) {
  std::map<std::string, std::vector<double>> by_seed;
  std::vector<std::string> order;
  const std::size_t seed = table.column("seed");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& key = table.rows[r][seed];
    if (!by_seed.count(key)) order.push_back(key);
    auto& values = by_seed[key];
    if (table.number(r, "malicious_sampled") > 0) {
      values.push_back(table.number(r, "detection_recall"));
    }
  }
  std::vector<double> per_seed;
  for (const std::string& key : order) per_seed.push_back(mean_ignoring_nan(by_seed[key]));
  return mean_ignoring_nan(per_seed);
}

void analyze_recall(const fs::path& dir, std::ostream& out) {
  const fs::path sweep = dir / "sweep_summary.csv";
  std::ostringstream csv;
  if (fs::exists(sweep)) {
    const CsvTable summary = read_csv(sweep);
    std::ostringstream by_value;
    const std::string axis = summary.rows.empty() ? "value"
                                                  : summary.rows[0][summary.column("axis")];
    by_value << axis << ",mean_recall\n";
    csv << axis << ",seed,round,recall\n";
    for (const auto& row : summary.rows) {
      const std::string& value = row[summary.column("value")];
      const CsvTable table = read_csv(dir / row[summary.column("dir")] / "rounds.csv");
      for (const auto& r : table.rows) {
        csv << value << ',' << r[table.column("seed")] << ',' << r[table.column("round")] << ','
            << r[table.column("detection_recall")] << '\n';
      }
      by_value << value << ',' << format_double(contested_recall(table)) << '\n';
    }
    write_file(dir / "recall_by_value.csv", by_value.str());
    out << "wrote " << (dir / "recall_by_value.csv").string() << "\n";
  } else {
    const CsvTable table = read_csv(dir / "rounds.csv");
    csv << "seed,round,recall\n";
    for (const auto& r : table.rows) {
      csv << r[table.column("seed")] << ',' << r[table.column("round")] << ','
          << r[table.column("detection_recall")] << '\n';
    }
  }
  write_file(dir / "recall.csv", csv.str());
  out << "wrote " << (dir / "recall.csv").string() << "\n";
}

int cmd_analyze(const Options& opt, std::ostream& out) {
  if (opt.kind != "surface" && opt.kind != "similarity" && opt.kind != "recall") {
    throw ConfigError("--kind must be surface, similarity or recall");
  }
  if (opt.kind == "surface") {
    const ExperimentConfig cfg = load_experiment(opt);
    analyze_surface(cfg, cfg.output_dir, out);
    return kExitOk;
  }
  // With a config the run happens first; otherwise --out names a finished
  // run (or sweep) directory.
  fs::path dir = opt.out;
  if (!opt.config.empty()) {
    const ExperimentConfig cfg = load_experiment(opt);
    dir = cfg.output_dir;
    execute_run(cfg, dir, out);
  }
  if (dir.empty()) throw ConfigError("--out (a run directory) or --config is required");
  if (opt.kind == "similarity") {
    analyze_similarity(dir, out);
  } else {
    analyze_recall(dir, out);
  }
  return kExitOk;
}

int cmd_oracle(const std::string& suite, std::ostream& out) {
  const OracleReport report = run_oracle_suite(suite);
  for (const OracleCheck& c : report.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << report.suite << ": " << c.name << " (" << c.detail
        << ")\n";
  }
  out << report.suite << ": " << (report.passed() ? "all checks passed" : "FAILED") << "\n";
  return report.passed() ? kExitOk : kExitOracle;
}

}  // namespace

int threads_from_env() {
  const char* raw = std::getenv("FEDSIM_THREADS");
  if (!raw || !*raw) return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int value = 0;
  const std::string text(raw);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value < 0) {
    throw ConfigError("FEDSIM_THREADS must be a non-negative integer, got '" + text + "'");
  }
  return value;
}

std::vector<SeedRun> run_experiment(const ExperimentConfig& cfg, int threads) {
  std::vector<SeedRun> runs;
  for (const std::uint64_t seed : cfg.seeds) {
    runs.push_back(SeedRun{seed, run(cfg.for_seed(seed), RunOptions{threads, false})});
  }
  return runs;
}

double mean_contested_recall(const std::vector<RoundReport>& reports) {
  std::vector<double> values;
  for (const RoundReport& r : reports) {
    if (r.malicious_sampled > 0) values.push_back(r.detection_recall);
  }
  return mean_ignoring_nan(values);
}

void write_rounds_csv(std::ostream& out, const std::vector<SeedRun>& runs, int num_classes) {
  out << "seed,round,global_accuracy,clean_accuracy,detection_recall,similarity_corrupted,"
         "similarity_clean,malicious_sampled,sampled";
  for (int c = 0; c < num_classes; ++c) out << ",sim_corrupted_c" << c;
  for (int c = 0; c < num_classes; ++c) out << ",sim_clean_c" << c;
  out << '\n';
  for (const SeedRun& run : runs) {
    for (const RoundReport& r : run.result.reports) {
      out << run.seed << ',' << r.round << ',' << format_double(r.global_accuracy) << ','
          << format_double(r.clean_accuracy) << ',' << format_double(r.detection_recall) << ','
          << format_double(r.similarity_corrupted) << ',' << format_double(r.similarity_clean)
          << ',' << r.malicious_sampled << ',' << join_ids(r.sampled);
      for (int c = 0; c < num_classes; ++c) {
        out << ',' << format_double(r.similarity_corrupted_by_class[c]);
      }
      for (int c = 0; c < num_classes; ++c) {
        out << ',' << format_double(r.similarity_clean_by_class[c]);
      }
      out << '\n';
    }
  }
}

void write_run_outputs(const ExperimentConfig& cfg, const std::vector<SeedRun>& runs,
                       const fs::path& dir) {
  ensure_dir(dir);
  std::ostringstream rounds;
  write_rounds_csv(rounds, runs, cfg.sim.data.num_classes);
  write_file(dir / "rounds.csv", rounds.str());
  write_file(dir / "summary.json", summary_json(runs));
  ExperimentConfig resolved = cfg;
  resolved.output_dir = dir.string();
  write_file(dir / "config_resolved.json", to_json(resolved));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("CSV column '" + name + "' not found");
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& text = rows.at(row).at(column(name));
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IoError("CSV value '" + text + "' in column '" + name + "' is not a number");
  }
  return value;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  table.header = split(line, ',');
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line, ',');
    if (row.size() != table.header.size()) {
      throw IoError("'" + path.string() + "': row width differs from header");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deterministic federated-learning simulator with FedDefender clients"};
  app.name("fedsim");
  app.require_subcommand(1);
  Options opt;
  std::string suite;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config, "Experiment file (key = value or JSON)");
    cmd->add_option("--out", opt.out, "Output directory (overrides output.dir)");
    cmd->add_option("--seeds", opt.seeds, "Comma-separated repeat seeds");
  };
  CLI::App* run_cmd = app.add_subcommand("run", "Run every seed of one experiment");
  add_common(run_cmd);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per axis value");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--axis", opt.axis, "Swept key")->required();
  sweep_cmd->add_option("--values", opt.values, "Comma-separated values")->required();
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Surface, similarity or recall tables");
  add_common(analyze_cmd);
  analyze_cmd->add_option("--kind", opt.kind, "surface, similarity or recall")->required();
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "Brute-force oracle suites");
  oracle_cmd->add_option("suite", suite, "gradcheck, aggregators or attacks");
  oracle_cmd->add_option("--kind", opt.kind, "Suite name (alternative to the positional)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(opt, out);
    if (sweep_cmd->parsed()) return cmd_sweep(opt, out);
    if (analyze_cmd->parsed()) return cmd_analyze(opt, out);
    if (suite.empty()) suite = opt.kind;
    if (suite.empty()) throw ConfigError("oracle needs a suite name");
    return cmd_oracle(suite, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace fedsim
