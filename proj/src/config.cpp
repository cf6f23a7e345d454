#include "fedsim/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

using Json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& text, const char* what) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(std::string("expected ") + what + ", got '" + text + "'");
  }
  return value;
}

int parse_int(const std::string& text) { return parse_number<int>(text, "an integer"); }

double parse_double(const std::string& text) {
  const double v = parse_number<double>(text, "a number");
  if (!std::isfinite(v)) throw ConfigError("expected a finite number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

std::optional<int> parse_auto_int(const std::string& text) {
  if (text == "auto") return std::nullopt;
  return parse_int(text);
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<Json(const ExperimentConfig&)> get;
};

template <typename Access>
Field int_field(std::string key, Access access) {
  return {std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = parse_int(v); },
          [access](const ExperimentConfig& c) {
            return Json(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field double_field(std::string key, Access access) {
  return {std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = parse_double(v); },
          [access](const ExperimentConfig& c) {
            return Json(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field bool_field(std::string key, Access access) {
  return {std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = parse_bool(v); },
          [access](const ExperimentConfig& c) {
            return Json(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Access>
Field auto_int_field(std::string key, Access access) {
  return {std::move(key),
          [access](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_auto_int(v);
          },
          [access](const ExperimentConfig& c) {
            const std::optional<int>& v = access(const_cast<ExperimentConfig&>(c));
            return v ? Json(*v) : Json("auto");
          }};
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  f.push_back({"seeds",
               [](ExperimentConfig& c, const std::string& v) {
                 c.seeds = parse_seed_list(v);
                 c.sim.seed = c.seeds.front();
               },
               [](const ExperimentConfig& c) { return Json(c.seeds); }});
  f.push_back(int_field("rounds", [](ExperimentConfig& c) -> int& { return c.sim.rounds; }));
  f.push_back(int_field("num_clients",
                        [](ExperimentConfig& c) -> int& { return c.sim.num_clients; }));
  f.push_back(double_field("sample_fraction",
                           [](ExperimentConfig& c) -> double& { return c.sim.sample_fraction; }));
  f.push_back(double_field("attacker_ratio",
                           [](ExperimentConfig& c) -> double& { return c.sim.attacker_ratio; }));
  f.push_back(double_field("beta", [](ExperimentConfig& c) -> double& { return c.sim.beta; }));

  f.push_back(int_field("model.hidden1",
                        [](ExperimentConfig& c) -> int& { return c.sim.model.hidden1; }));
  f.push_back(int_field("model.hidden2",
                        [](ExperimentConfig& c) -> int& { return c.sim.model.hidden2; }));

  f.push_back(int_field("data.num_classes",
                        [](ExperimentConfig& c) -> int& { return c.sim.data.num_classes; }));
  f.push_back(int_field("data.input_dim",
                        [](ExperimentConfig& c) -> int& { return c.sim.data.input_dim; }));
  f.push_back(int_field("data.train_per_class",
                        [](ExperimentConfig& c) -> int& { return c.sim.data.train_per_class; }));
  f.push_back(int_field("data.test_per_class",
                        [](ExperimentConfig& c) -> int& { return c.sim.data.test_per_class; }));
  f.push_back(double_field("data.class_separation", [](ExperimentConfig& c) -> double& {
    return c.sim.data.class_separation;
  }));
  f.push_back(double_field("data.noise_std",
                           [](ExperimentConfig& c) -> double& { return c.sim.data.noise_std; }));

  f.push_back(bool_field("defender.enabled", [](ExperimentConfig& c) -> bool& {
    return c.sim.defender.defense_enabled;
  }));
  f.push_back(int_field("defender.k_neighbors",
                        [](ExperimentConfig& c) -> int& { return c.sim.defender.k_neighbors; }));
  f.push_back(double_field("defender.tau",
                           [](ExperimentConfig& c) -> double& { return c.sim.defender.tau; }));
  f.push_back(double_field("defender.learning_rate", [](ExperimentConfig& c) -> double& {
    return c.sim.defender.learning_rate;
  }));
  f.push_back(double_field("defender.momentum",
                           [](ExperimentConfig& c) -> double& { return c.sim.defender.momentum; }));
  f.push_back(double_field("defender.weight_decay", [](ExperimentConfig& c) -> double& {
    return c.sim.defender.weight_decay;
  }));
  f.push_back(int_field("defender.batch_size",
                        [](ExperimentConfig& c) -> int& { return c.sim.defender.batch_size; }));
  f.push_back(int_field("defender.local_epochs",
                        [](ExperimentConfig& c) -> int& { return c.sim.defender.local_epochs; }));

  f.push_back({"attack.kind",
               [](ExperimentConfig& c, const std::string& v) { c.sim.attack.kind = parse_attack(v); },
               [](const ExperimentConfig& c) { return Json(attack_name(c.sim.attack.kind)); }});
  f.push_back(double_field("attack.lie_z",
                           [](ExperimentConfig& c) -> double& { return c.sim.attack.lie_z; }));
  f.push_back(double_field("attack.stat_gamma",
                           [](ExperimentConfig& c) -> double& { return c.sim.attack.stat_gamma; }));
  f.push_back(double_field("attack.dyn_gamma_init", [](ExperimentConfig& c) -> double& {
    return c.sim.attack.dyn_gamma_init;
  }));
  f.push_back(double_field("attack.dyn_threshold", [](ExperimentConfig& c) -> double& {
    return c.sim.attack.dyn_threshold;
  }));

  f.push_back({"aggregator.kind",
               [](ExperimentConfig& c, const std::string& v) {
                 c.sim.aggregator.kind = parse_aggregator(v);
               },
               [](const ExperimentConfig& c) {
                 return Json(aggregator_name(c.sim.aggregator.kind));
               }});
  f.push_back(auto_int_field("aggregator.f_expected",
                             [](ExperimentConfig& c) -> std::optional<int>& {
                               return c.sim.aggregator.f_expected;
                             }));
  f.push_back(auto_int_field("aggregator.multikrum_c",
                             [](ExperimentConfig& c) -> std::optional<int>& {
                               return c.sim.aggregator.multikrum_c;
                             }));
  f.push_back(double_field("aggregator.residual_ci", [](ExperimentConfig& c) -> double& {
    return c.sim.aggregator.residual_ci;
  }));
  f.push_back(double_field("aggregator.residual_clip", [](ExperimentConfig& c) -> double& {
    return c.sim.aggregator.residual_clip;
  }));
  f.push_back(bool_field("aggregator.fedavg_weighted", [](ExperimentConfig& c) -> bool& {
    return c.sim.aggregator.fedavg_weighted;
  }));

  f.push_back({"output.dir",
               [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
               [](const ExperimentConfig& c) { return Json(c.output_dir); }});
  f.push_back(double_field("analysis.grid_radius",
                           [](ExperimentConfig& c) -> double& { return c.surface_radius; }));
  f.push_back(int_field("analysis.grid_steps",
                        [](ExperimentConfig& c) -> int& { return c.surface_steps; }));
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = build_fields();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string scalar_text(const Json& value, const std::string& key) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_number()) return value.dump();
  if (value.is_array() && key == "seeds") {
    std::string out;
    for (const Json& item : value) {
      if (!item.is_number_unsigned()) {
        throw ConfigError("key 'seeds': expected non-negative integers");
      }
      if (!out.empty()) out += ',';
      out += item.dump();
    }
    return out;
  }
  throw ConfigError("key '" + key + "': unsupported value " + value.dump());
}

void flatten(const Json& node, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  for (const auto& [name, value] : node.items()) {
    const std::string key = prefix.empty() ? name : prefix + "." + name;
    if (value.is_object()) {
      flatten(value, key, out);
    } else {
      out.emplace_back(key, scalar_text(value, key));
    }
  }
}

ExperimentConfig parse_json(const std::string& text, const std::string& source) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ": top level must be an object");
  std::vector<std::pair<std::string, std::string>> entries;
  try {
    flatten(doc, "", entries);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [key, value] : entries) {
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace

SimConfig ExperimentConfig::for_seed(std::uint64_t seed) const {
  SimConfig s = sim;
  s.seed = seed;
  return s;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(surface_radius >= 0.0)) throw ConfigError("analysis.grid_radius must be >= 0");
  if (surface_steps < 2) throw ConfigError("analysis.grid_steps must be >= 2");
  sim.validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    out.push_back("seed");
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key,
                   const std::string& value) {
  // `seed` is shorthand for a one-element seed list.
  const std::string canonical = key == "seed" ? "seeds" : key;
  const Field* field = find_field(canonical);
  if (!field) throw ConfigError("unknown key '" + key + "'");
  try {
    field->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    seeds.push_back(parse_number<std::uint64_t>(trim(item), "a non-negative integer seed"));
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  const std::string head = trim(text);
  if (!head.empty() && head.front() == '{') return parse_json(text, source);

  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::stringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string canonical = key == "seed" ? "seeds" : key;
    if (const auto it = seen.find(canonical); it != seen.end()) {
      throw ConfigError(where + ": key '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    seen[canonical] = line_no;
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("failed reading config '" + path.string() + "'");
  return parse_config(buffer.str(), path.string());
}

std::string to_json(const ExperimentConfig& cfg) {
  Json doc = Json::object();
  for (const Field& f : fields()) {
    Json* node = &doc;
    std::string_view rest = f.key;
    for (auto dot = rest.find('.'); dot != std::string_view::npos; dot = rest.find('.')) {
      node = &(*node)[std::string(rest.substr(0, dot))];
      rest.remove_prefix(dot + 1);
    }
    (*node)[std::string(rest)] = f.get(cfg);
  }
  return doc.dump(2) + "\n";
}

}  // namespace fedsim
