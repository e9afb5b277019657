#include "glnbias/config.hpp"

#include "glnbias/data.hpp"
#include "glnbias/format.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace glnbias {

namespace {

template <class T, class Parse>
std::vector<T> parse_list(const std::string& value, Parse parse) {
  std::vector<T> out;
  for (const auto& cell : split_csv(value)) {
    if (!cell.empty()) out.push_back(static_cast<T>(parse(cell)));
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

}  // namespace

IniFile parse_ini(std::istream& in) {
  IniFile ini;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#' || t.front() == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw FormatError("line " + std::to_string(lineno) + ": unterminated section header");
      section = std::string(trim(t.substr(1, t.size() - 2)));
      ini[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw FormatError("line " + std::to_string(lineno) + ": key outside any section");
    const std::string key(trim(t.substr(0, eq)));
    auto value = trim(t.substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = trim(value.substr(0, hash));
    if (!ini[section].emplace(key, std::string(value)).second) {
      throw FormatError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return ini;
}

std::string variant_family(const std::string& variant) {
  if (std::find(kGlnVariants.begin(), kGlnVariants.end(), variant) != kGlnVariants.end()) return "gln";
  if (std::find(kReluVariants.begin(), kReluVariants.end(), variant) != kReluVariants.end()) return "relu";
  throw std::invalid_argument("unknown variant '" + variant + "'");
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw std::invalid_argument("no variants requested");
  std::set<std::string> seen;
  for (const auto& v : variants) {
    variant_family(v);
    if (!seen.insert(v).second) throw std::invalid_argument("variant '" + v + "' listed twice");
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed required");
  if (n_train.empty() || hidden.empty() || contexts.empty()) throw std::invalid_argument("empty experiment grid");
  for (int n : n_train) {
    if (n < 1) throw std::invalid_argument("n_train must be positive");
  }
  if (n_val < 1) throw std::invalid_argument("n_val must be positive");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden units must be positive");
  }
  for (int c : contexts) {
    if (c < 2 || (c & (c - 1)) != 0) throw std::invalid_argument("contexts per unit must be a power of two >= 2");
  }
  train.validate();
  if (!(relu_momentum >= 0.0 && relu_momentum < 1.0)) throw std::invalid_argument("relu_momentum must lie in [0, 1)");
  if (!(solver.tol > 0) || solver.max_iter < 1) throw std::invalid_argument("solver tol and max_iter must be positive");
  if (!(margin_tol > 0)) throw std::invalid_argument("margin_tol must be positive");
}

ExperimentConfig load_config(std::istream& in) {
  const IniFile ini = parse_ini(in);
  ExperimentConfig cfg;
  std::vector<int> steps;
  std::vector<double> rates;
  bool have_seed_count = false;
  bool have_seed_list = false;

  for (const auto& [section, entries] : ini) {
    for (const auto& [key, value] : entries) {
      const auto where = "[" + section + "] " + key;
      try {
        if (section == "experiment") {
          if (key == "figure") cfg.figure = value;
          else if (key == "task") {
            if (value == "mnist-binary") cfg.task = Task::MnistBinary;
            else if (value == "synthetic") cfg.task = Task::Synthetic;
            else throw std::invalid_argument("unknown task '" + value + "'");
          } else if (key == "mnist_dir") cfg.mnist_dir = value;
          else if (key == "n_train") cfg.n_train = parse_list<int>(value, parse_int);
          else if (key == "n_val") cfg.n_val = static_cast<int>(parse_int(value));
          else if (key == "hidden") cfg.hidden = parse_list<int>(value, parse_int);
          else if (key == "contexts") cfg.contexts = parse_list<int>(value, parse_int);
          else if (key == "seeds") {
            const auto count = parse_int(value);
            if (count < 1) throw std::invalid_argument("seeds must be >= 1");
            cfg.seeds.clear();
            for (long long s = 0; s < count; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
            have_seed_count = true;
          } else if (key == "seed_list") {
            cfg.seeds = parse_list<std::uint64_t>(value, parse_int);
            have_seed_list = true;
          } else if (key == "data_seed") cfg.data_seed = static_cast<std::uint64_t>(parse_int(value));
          else if (key == "median") cfg.median = parse_bool(value);
          else if (key == "loss") cfg.train.loss = parse_loss_kind(value);
          else if (key == "variants") cfg.variants = parse_list<std::string>(value, [](const std::string& s) { return s; });
          else if (key == "output") cfg.output_dir = value;
          else if (key == "trajectories") cfg.write_trajectories = parse_bool(value);
          else throw std::invalid_argument("unknown key");
        } else if (section == "train") {
          if (key == "steps") steps = parse_list<int>(value, parse_int);
          else if (key == "rates") rates = parse_list<double>(value, parse_double);
          else if (key == "momentum") cfg.train.momentum = parse_double(value);
          else if (key == "relu_momentum") cfg.relu_momentum = parse_double(value);
          else if (key == "snapshot_every") cfg.train.snapshot_every = static_cast<int>(parse_int(value));
          else throw std::invalid_argument("unknown key");
        } else if (section == "solver") {
          if (key == "tol") cfg.solver.tol = parse_double(value);
          else if (key == "max_iter") cfg.solver.max_iter = static_cast<int>(parse_int(value));
          else if (key == "margin_tol") cfg.margin_tol = parse_double(value);
          else throw std::invalid_argument("unknown key");
        } else if (section == "synthetic") {
          if (key == "dim") cfg.synthetic_dim = static_cast<std::size_t>(parse_int(value));
          else if (key == "margin") cfg.synthetic_margin = parse_double(value);
          else throw std::invalid_argument("unknown key");
        } else {
          throw std::invalid_argument("unknown section");
        }
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where + ": " + e.what());
      }
    }
  }
  if (have_seed_count && have_seed_list) throw std::invalid_argument("give either seeds or seed_list, not both");
  if (!steps.empty() || !rates.empty()) {
    if (steps.size() != rates.size()) throw std::invalid_argument("[train] steps and rates must have the same length");
    cfg.train.schedule.clear();
    for (std::size_t i = 0; i < steps.size(); ++i) cfg.train.schedule.push_back({steps[i], rates[i]});
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  std::vector<int> steps;
  std::vector<std::string> rates;
  for (const auto& st : cfg.train.schedule) {
    steps.push_back(st.steps);
    rates.push_back(fmt_double(st.lr));
  }
  out << "[experiment]\n"
      << "figure = " << cfg.figure << '\n'
      << "task = " << (cfg.task == Task::MnistBinary ? "mnist-binary" : "synthetic") << '\n';
  if (!cfg.mnist_dir.empty()) out << "mnist_dir = " << cfg.mnist_dir.string() << '\n';
  out << "n_train = " << join(cfg.n_train) << '\n'
      << "n_val = " << cfg.n_val << '\n'
      << "hidden = " << join(cfg.hidden) << '\n'
      << "contexts = " << join(cfg.contexts) << '\n'
      << "seed_list = " << join(cfg.seeds) << '\n'
      << "data_seed = " << cfg.data_seed << '\n'
      << "median = " << (cfg.median ? "true" : "false") << '\n'
      << "loss = " << to_string(cfg.train.loss) << '\n'
      << "variants = " << join(cfg.variants) << '\n'
      << "output = " << cfg.output_dir.string() << '\n'
      << "trajectories = " << (cfg.write_trajectories ? "true" : "false") << '\n'
      << "\n[train]\n"
      << "steps = " << join(steps) << '\n'
      << "rates = " << join(rates) << '\n'
      << "momentum = " << fmt_double(cfg.train.momentum) << '\n'
      << "relu_momentum = " << fmt_double(cfg.relu_momentum) << '\n'
      << "snapshot_every = " << cfg.train.snapshot_every << '\n'
      << "\n[solver]\n"
      << "tol = " << fmt_double(cfg.solver.tol) << '\n'
      << "max_iter = " << cfg.solver.max_iter << '\n'
      << "margin_tol = " << fmt_double(cfg.margin_tol) << '\n'
      << "\n[synthetic]\n"
      << "dim = " << cfg.synthetic_dim << '\n'
      << "margin = " << fmt_double(cfg.synthetic_margin) << '\n';
}

}  // namespace glnbias
