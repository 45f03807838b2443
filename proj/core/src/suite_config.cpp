#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "obf/error.hpp"
#include "obf/suite.hpp"

namespace obf::bench {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct Entry {
  std::string key;
  std::string value;
  std::size_t line;
};

std::vector<Entry> split_entries(std::string_view text) {
  std::vector<Entry> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    out.push_back({std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

[[noreturn]] void bad_value(const Entry& e, std::string_view what) {
  throw ConfigError("line " + std::to_string(e.line) + ": " + e.key + " must be " + std::string(what) + ", got '" +
                    e.value + "'");
}

std::uint64_t to_uint(const Entry& e) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc{} || p != e.value.data() + e.value.size()) bad_value(e, "a non-negative integer");
  return v;
}

double to_real(const Entry& e) {
  double v = 0;
  auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc{} || p != e.value.data() + e.value.size() || !std::isfinite(v)) bad_value(e, "a finite number");
  return v;
}

bool to_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  bad_value(e, "true or false");
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (true) {
    std::size_t comma = s.find(',');
    auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s = s.substr(comma + 1);
  }
  return out;
}

/// Applies one entry; false when the key is not a suite key.
bool apply(SuiteConfig& c, const Entry& e) {
  const std::string& k = e.key;
  if (k == "nmt_checkpoint") c.nmt_checkpoint = e.value;
  else if (k == "lm_checkpoint") c.lm_checkpoint = e.value;
  else if (k == "corpus") c.corpus = e.value;
  else if (k == "source_vocab") c.source_vocab = e.value;
  else if (k == "target_vocab") c.target_vocab = e.value;
  else if (k == "synthetic.vocab_size") c.synthetic.vocab_size = to_uint(e);
  else if (k == "synthetic.min_len") c.synthetic.min_len = to_uint(e);
  else if (k == "synthetic.max_len") c.synthetic.max_len = to_uint(e);
  else if (k == "synthetic.reorder") c.synthetic.reorder_rule = parse_reorder_rule(e.value);
  else if (k == "synthetic.seed") c.synthetic.seed = to_uint(e);
  else if (k == "synthetic.pairs") c.synthetic_pairs = to_uint(e);
  else if (k == "suite.size") c.suite_size = to_uint(e);
  else if (k == "suite.heldout_fraction") c.heldout_fraction = to_real(e);
  else if (k == "target") c.targets.push_back(e.value);
  else if (k == "methods") {
    c.methods.clear();
    for (const auto& m : split_list(e.value)) c.methods.push_back(attack::parse_method(m));
  } else if (k == "gamma") c.attack.gamma = to_real(e);
  else if (k == "iterations") c.attack.iterations = to_uint(e);
  else if (k == "k") c.attack.k = to_uint(e);
  else if (k == "alpha") c.attack.alpha = to_uint(e);
  else if (k == "beta") {
    if (e.value == "none" || e.value.empty()) c.attack.beta.reset();
    else c.attack.beta = to_real(e);
  } else if (k == "optimizer") c.attack.optimizer = attack::parse_optimizer(e.value);
  else if (k == "seed") c.attack.seed = to_uint(e);
  else if (k == "exclude_special") c.attack.exclude_special = to_bool(e);
  else if (k == "out_dir") c.out_dir = e.value;
  else if (k == "parallelism") c.parallelism = to_uint(e);
  else if (k == "trace") c.write_trace = to_bool(e);
  else return false;
  return true;
}

bool is_sweep_key(const std::string& k) { return k.rfind("sweep.", 0) == 0; }

SuiteConfig parse_entries(const std::vector<Entry>& entries, SweepSpec* sweep) {
  SuiteConfig c;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.key != "target" && !seen.insert(e.key).second) {
      throw ConfigError("line " + std::to_string(e.line) + ": duplicate key " + e.key);
    }
    if (is_sweep_key(e.key)) {
      if (!sweep) continue;
      if (e.key == "sweep.kind") sweep->kind = parse_sweep_kind(e.value);
      else if (e.key == "sweep.grid") {
        sweep->grid.clear();
        for (const auto& v : split_list(e.value)) sweep->grid.push_back(to_uint({e.key, v, e.line}));
      } else if (e.key == "sweep.base_target") sweep->base_target = e.value;
      else throw ConfigError("line " + std::to_string(e.line) + ": unknown key " + e.key);
      continue;
    }
    if (!apply(c, e)) throw ConfigError("line " + std::to_string(e.line) + ": unknown key " + e.key);
  }
  return c;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SuiteConfig::validate() const {
  if (nmt_checkpoint.empty()) throw ConfigError("nmt_checkpoint is required");
  if (lm_checkpoint.empty()) throw ConfigError("lm_checkpoint is required");
  if (targets.empty()) throw ConfigError("at least one target sentence is required");
  if (methods.empty()) throw ConfigError("at least one method is required");
  if (suite_size == 0) throw ConfigError("suite.size must be >= 1");
  if (parallelism == 0) throw ConfigError("parallelism must be >= 1");
  if (!(heldout_fraction > 0 && heldout_fraction < 1)) throw ConfigError("suite.heldout_fraction must be in (0,1)");
  if (corpus.empty()) {
    synthetic.validate();
    if (synthetic_pairs == 0) throw ConfigError("synthetic.pairs must be >= 1");
  } else if (source_vocab.empty() || target_vocab.empty()) {
    throw ConfigError("a corpus file needs source_vocab and target_vocab");
  }
  std::set<attack::Method> distinct(methods.begin(), methods.end());
  if (distinct.size() != methods.size()) throw ConfigError("methods lists a method twice");
}

SuiteConfig parse_suite_config(std::string_view text) { return parse_entries(split_entries(text), nullptr); }

SuiteConfig load_suite_config(const std::filesystem::path& path) { return parse_suite_config(read_text(path)); }

std::string render_suite_config(const SuiteConfig& c) {
  std::ostringstream o;
  o << "nmt_checkpoint = " << c.nmt_checkpoint.string() << '\n';
  o << "lm_checkpoint = " << c.lm_checkpoint.string() << '\n';
  if (!c.corpus.empty()) {
    o << "corpus = " << c.corpus.string() << '\n';
    o << "source_vocab = " << c.source_vocab.string() << '\n';
    o << "target_vocab = " << c.target_vocab.string() << '\n';
  } else {
    o << "synthetic.vocab_size = " << c.synthetic.vocab_size << '\n';
    o << "synthetic.min_len = " << c.synthetic.min_len << '\n';
    o << "synthetic.max_len = " << c.synthetic.max_len << '\n';
    o << "synthetic.reorder = " << to_string(c.synthetic.reorder_rule) << '\n';
    o << "synthetic.seed = " << c.synthetic.seed << '\n';
    o << "synthetic.pairs = " << c.synthetic_pairs << '\n';
  }
  o << "suite.size = " << c.suite_size << '\n';
  o << "suite.heldout_fraction = " << real_text(c.heldout_fraction) << '\n';
  for (const auto& t : c.targets) o << "target = " << t << '\n';
  o << "methods = ";
  for (std::size_t i = 0; i < c.methods.size(); ++i) o << (i ? "," : "") << attack::to_string(c.methods[i]);
  o << '\n';
  o << "gamma = " << real_text(c.attack.gamma) << '\n';
  o << "iterations = " << c.attack.iterations << '\n';
  o << "k = " << c.attack.k << '\n';
  o << "alpha = " << c.attack.alpha << '\n';
  o << "beta = " << (c.attack.beta ? real_text(*c.attack.beta) : "none") << '\n';
  o << "optimizer = " << attack::to_string(c.attack.optimizer) << '\n';
  o << "seed = " << c.attack.seed << '\n';
  o << "exclude_special = " << (c.attack.exclude_special ? "true" : "false") << '\n';
  o << "out_dir = " << c.out_dir.string() << '\n';
  o << "parallelism = " << c.parallelism << '\n';
  o << "trace = " << (c.write_trace ? "true" : "false") << '\n';
  return o.str();
}

std::string_view to_string(SweepKind k) { return k == SweepKind::kTargetLength ? "target_length" : "iterations"; }

SweepKind parse_sweep_kind(std::string_view text) {
  if (text == "target_length") return SweepKind::kTargetLength;
  if (text == "iterations" || text == "iteration_budget") return SweepKind::kIterationBudget;
  throw ConfigError("unknown sweep kind: " + std::string(text));
}

void SweepSpec::validate() const {
  if (grid.empty()) throw ConfigError("sweep.grid must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] == 0) throw ConfigError("sweep.grid values must be >= 1");
    if (i > 0 && grid[i] <= grid[i - 1]) throw ConfigError("sweep.grid must be strictly increasing");
  }
  if (kind == SweepKind::kTargetLength && base_target.empty() && base.targets.empty()) {
    throw ConfigError("target_length sweep needs sweep.base_target or a target");
  }
}

SweepSpec parse_sweep_spec(std::string_view text) {
  SweepSpec s;
  s.base = parse_entries(split_entries(text), &s);
  return s;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) { return parse_sweep_spec(read_text(path)); }

}  // namespace obf::bench
