#include "obf/suite.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <stdexcept>
#include <thread>

#include "obf/error.hpp"

namespace obf::bench {

using attack::AttackResult;
using attack::Method;
using Json = nlohmann::ordered_json;

ParallelCorpus load_suite_corpus(const SuiteConfig& cfg) {
  if (!cfg.corpus.empty()) return read_corpus(cfg.corpus, read_vocab(cfg.source_vocab), read_vocab(cfg.target_vocab));
  return gen_synthetic_corpus(cfg.synthetic, cfg.synthetic_pairs);
}

Workspace load_workspace(const SuiteConfig& cfg) {
  ParallelCorpus corpus = load_suite_corpus(cfg);
  models::Seq2SeqModel nmt = models::load_seq2seq(cfg.nmt_checkpoint);
  models::CausalLMModel lm = models::load_causal_lm(cfg.lm_checkpoint);
  const auto& na = nmt.arch();
  if (na.src_vocab != corpus.source_vocab.size() || na.src_fingerprint != corpus.source_vocab.fingerprint()) {
    throw DataError("translation checkpoint does not match the source vocabulary");
  }
  if (na.tgt_vocab != corpus.target_vocab.size() || na.tgt_fingerprint != corpus.target_vocab.fingerprint()) {
    throw DataError("translation checkpoint does not match the target vocabulary");
  }
  const auto& la = lm.arch();
  if (la.src_vocab != corpus.source_vocab.size() || la.src_fingerprint != corpus.source_vocab.fingerprint()) {
    throw DataError("language model checkpoint does not match the source vocabulary");
  }
  return {std::move(corpus), std::move(nmt), std::move(lm)};
}

std::uint64_t example_seed(std::uint64_t base, std::size_t id) {
  // splitmix64 finaliser over the pair.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(id) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

TokenSeq parse_target(const std::string& text, const Vocabulary& vocab) {
  TokenSeq t = tokenize(text, vocab);
  if (t.empty()) throw ConfigError("target sentence is empty");
  for (TokenId id : t.ids) {
    if (is_special(id)) throw DataError("target '" + text + "' has a token outside the source vocabulary");
  }
  return t;
}

}  // namespace

std::vector<Example> build_examples(const SuiteConfig& cfg, const ParallelCorpus& corpus) {
  std::size_t begin = models::heldout_begin(corpus.size(), cfg.heldout_fraction);
  if (begin + cfg.suite_size > corpus.size()) {
    throw DataError("held-out split has " + std::to_string(corpus.size() - begin) + " sentences, suite needs " +
                    std::to_string(cfg.suite_size));
  }
  std::vector<TokenSeq> targets;
  for (const auto& t : cfg.targets) targets.push_back(parse_target(t, corpus.source_vocab));

  std::vector<Example> out;
  for (std::size_t s = 0; s < cfg.suite_size; ++s) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      std::size_t id = s * targets.size() + j;
      out.push_back({id, corpus.pairs[begin + s].source, targets[j], example_seed(cfg.attack.seed, id)});
    }
  }
  return out;
}

namespace {

AttackResult run_method(Method m, const Example& ex, const Workspace& ws, attack::AttackConfig cfg) {
  cfg.seed = ex.seed;
  switch (m) {
    case Method::kObfuscator:
      return attack::attack(ex.x, ex.t, ws.nmt, ws.lm, cfg);
    case Method::kSuffixDropper:
      return attack::suffix_dropper(ex.x, ex.t, ws.nmt, ws.lm, cfg);
    case Method::kRandomControl:
      return attack::random_control(ex.x, ex.t, ws.nmt, ws.lm, cfg);
  }
  throw std::logic_error("unhandled method");
}

}  // namespace

SuiteRun execute_suite(const SuiteConfig& cfg, const Workspace& ws) {
  cfg.validate();
  cfg.attack.validate(ws.nmt.arch().src_vocab);
  SuiteRun run;
  run.examples = build_examples(cfg, ws.corpus);
  const std::size_t n = run.examples.size();
  for (Method m : cfg.methods) run.methods.push_back({m, std::vector<AttackResult>(n), {}});

  const std::size_t workers = std::min(cfg.parallelism, n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        for (auto& mr : run.methods) mr.results[i] = run_method(mr.method, run.examples[i], ws, cfg.attack);
      } catch (...) {
        errors[i] = std::current_exception();
        return;
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (auto& mr : run.methods) {
    std::vector<metrics::LabelledResult> labelled;
    for (std::size_t i = 0; i < n; ++i) labelled.push_back({run.examples[i].id, &mr.results[i]});
    mr.report = metrics::aggregate(labelled, cfg.attack.alpha, ws.corpus.source_vocab,
                                   std::string(attack::to_string(mr.method)));
  }
  return run;
}

namespace {

Json config_json(const attack::AttackConfig& c) {
  Json j;
  j["gamma"] = c.gamma;
  j["iterations"] = c.iterations;
  j["k"] = c.k;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta ? Json(*c.beta) : Json(nullptr);
  j["optimizer"] = attack::to_string(c.optimizer);
  j["seed"] = c.seed;
  j["exclude_special"] = c.exclude_special;
  return j;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string timestamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace

std::string result_record(const SuiteConfig& cfg, const Workspace& ws, const Example& ex, const AttackResult& r) {
  const Vocabulary& sv = ws.corpus.source_vocab;
  const Vocabulary& tv = ws.corpus.target_vocab;
  Json j;
  j["id"] = ex.id;
  j["method"] = attack::to_string(r.method);
  j["x"] = detokenize(ex.x, sv);
  j["t"] = detokenize(ex.t, sv);
  j["omega"] = r.omega ? Json(sv.token(*r.omega)) : Json(nullptr);
  j["success"] = r.success;
  j["iterations_used"] = r.iterations_used;
  j["edit_distance"] = r.edit_distance;
  j["bleu"] = r.original_translation.empty() ? 0.0 : metrics::bleu(r.adversarial_translation, r.original_translation);
  j["lm_loss"] = r.lm_loss_value;
  j["perplexity"] = metrics::perplexity_from_loss(r.lm_loss_value);
  j["translations"] = {{"original", detokenize(r.original_translation, tv)},
                       {"adversarial", detokenize(r.adversarial_translation, tv)}};
  j["adversarial_input"] = detokenize(r.adversarial_input, sv);
  j["best_attempt"] = r.best_attempt.token >= 0 ? Json(sv.token(r.best_attempt.token)) : Json(nullptr);
  if (r.best_attempt.token >= 0) j["best_attempt_distance"] = r.best_attempt.distance;
  j["stagnated"] = r.stagnated;
  j["floor_baseline"] = r.method == Method::kRandomControl;
  j["config"] = config_json(r.config);
  if (cfg.write_trace) {
    Json trace = Json::array();
    for (const auto& e : r.trace) {
      trace.push_back({{"iteration", e.iteration},
                       {"candidate", sv.token(e.candidate)},
                       {"adv_loss", e.adv_loss},
                       {"lm_loss", e.lm_loss},
                       {"distance", e.distance}});
    }
    j["trace"] = std::move(trace);
  }
  return j.dump();
}

ParsedRecord parse_result_record(std::string_view line, const Vocabulary& sv, const Vocabulary& tv) {
  try {
    Json j = Json::parse(line);
    ParsedRecord p;
    p.id = j.at("id").get<std::size_t>();
    AttackResult& r = p.result;
    r.method = attack::parse_method(j.at("method").get<std::string>());
    const Json& c = j.at("config");
    r.config.gamma = c.at("gamma").get<double>();
    r.config.iterations = c.at("iterations").get<std::size_t>();
    r.config.k = c.at("k").get<std::size_t>();
    r.config.alpha = c.at("alpha").get<std::size_t>();
    if (!c.at("beta").is_null()) r.config.beta = c.at("beta").get<double>();
    r.config.optimizer = attack::parse_optimizer(c.at("optimizer").get<std::string>());
    r.config.seed = c.at("seed").get<std::uint64_t>();
    r.config.exclude_special = c.at("exclude_special").get<bool>();
    r.success = j.at("success").get<bool>();
    if (!j.at("omega").is_null()) r.omega = sv.id(j.at("omega").get<std::string>());
    r.iterations_used = j.at("iterations_used").get<std::size_t>();
    r.adversarial_input = tokenize(j.at("adversarial_input").get<std::string>(), sv);
    r.original_translation = tokenize(j.at("translations").at("original").get<std::string>(), tv);
    r.adversarial_translation = tokenize(j.at("translations").at("adversarial").get<std::string>(), tv);
    r.edit_distance = j.at("edit_distance").get<std::size_t>();
    r.lm_loss_value = j.at("lm_loss").get<double>();
    r.stagnated = j.at("stagnated").get<bool>();
    if (!j.at("best_attempt").is_null()) {
      r.best_attempt.token = sv.id(j.at("best_attempt").get<std::string>());
      r.best_attempt.distance = j.at("best_attempt_distance").get<std::size_t>();
    }
    if (j.contains("trace")) {
      for (const auto& e : j.at("trace")) {
        r.trace.push_back({e.at("iteration").get<std::size_t>(), sv.id(e.at("candidate").get<std::string>()),
                           e.at("adv_loss").get<double>(), e.at("lm_loss").get<double>(),
                           e.at("distance").get<std::size_t>()});
      }
    }
    return p;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed result record: ") + e.what());
  }
}

void write_suite_outputs(const SuiteConfig& cfg, const Workspace& ws, const SuiteRun& run) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec || !std::filesystem::is_directory(cfg.out_dir)) throw DataError("cannot create output dir " + cfg.out_dir.string());

  std::string jsonl;
  for (const auto& mr : run.methods) {
    for (std::size_t i = 0; i < run.examples.size(); ++i) {
      jsonl += result_record(cfg, ws, run.examples[i], mr.results[i]);
      jsonl += '\n';
    }
  }
  write_file(cfg.out_dir / "results.jsonl", jsonl);

  Json report;
  report["bleu_smoothing"] = metrics::kBleuSmoothingName;
  report["bertscore"] = nullptr;
  report["examples"] = run.examples.size();
  report["suite_size"] = cfg.suite_size;
  report["targets"] = cfg.targets;
  report["config"] = config_json(cfg.attack);
  Json methods = Json::array();
  for (const auto& mr : run.methods) {
    write_file(cfg.out_dir / ("summary_" + mr.report.method + ".csv"), metrics::report_csv(mr.report));
    methods.push_back({{"method", mr.report.method},
                       {"floor_baseline", mr.method == Method::kRandomControl},
                       {"asr", mr.report.asr},
                       {"successes", mr.report.successes},
                       {"total", mr.report.total},
                       {"mean_bleu", mr.report.mean_bleu},
                       {"mean_lm_loss", mr.report.mean_lm_loss},
                       {"mean_perplexity", mr.report.mean_perplexity}});
  }
  report["methods"] = std::move(methods);
  write_file(cfg.out_dir / "report.json", report.dump(2) + "\n");

  std::ofstream log(cfg.out_dir / "run.log", std::ios::app);
  log << timestamp() << " suite finished: " << run.examples.size() << " examples, " << run.methods.size()
      << " methods, out_dir=" << cfg.out_dir.string() << '\n';
}

SuiteRun run_suite(const SuiteConfig& cfg) {
  cfg.validate();
  Workspace ws = load_workspace(cfg);
  SuiteRun run = execute_suite(cfg, ws);
  write_suite_outputs(cfg, ws, run);
  return run;
}

// ---------------------------------------------------------------------------

std::vector<CurvePoint> sweep_target_length(const SweepSpec& spec, const Workspace& ws) {
  spec.validate();
  const std::string& base_text = spec.base_target.empty() ? spec.base.targets.front() : spec.base_target;
  TokenSeq base = parse_target(base_text, ws.corpus.source_vocab);
  if (spec.grid.back() > base.length()) {
    throw ConfigError("sweep.grid value " + std::to_string(spec.grid.back()) + " exceeds the base target length " +
                      std::to_string(base.length()));
  }
  std::vector<CurvePoint> curve;
  for (std::size_t len : spec.grid) {
    SuiteConfig cfg = spec.base;
    cfg.targets = {detokenize(TokenSeq(std::vector<TokenId>(base.ids.begin(), base.ids.begin() + len)),
                              ws.corpus.source_vocab)};
    cfg.methods = {spec.base.methods.front()};
    SuiteRun run = execute_suite(cfg, ws);
    const auto& mr = run.methods.front();
    double dist = 0;
    for (const auto& r : mr.results) dist += static_cast<double>(r.edit_distance);
    curve.push_back({len, mr.report.asr, dist / static_cast<double>(mr.results.size())});
  }
  return curve;
}

std::vector<CurvePoint> sweep_iterations(const SweepSpec& spec, const Workspace& ws) {
  spec.validate();
  SuiteConfig cfg = spec.base;
  cfg.attack.iterations = spec.grid.back();
  cfg.methods = {spec.base.methods.front()};
  SuiteRun run = execute_suite(cfg, ws);
  const auto& results = run.methods.front().results;
  const auto n = static_cast<double>(results.size());

  std::vector<CurvePoint> curve;
  for (std::size_t budget : spec.grid) {
    double successes = 0, dist = 0;
    for (const auto& r : results) {
      if (r.success && r.iterations_used <= budget) successes += 1;
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (const auto& e : r.trace) {
        if (e.iteration <= budget) best = std::min(best, e.distance);
      }
      dist += static_cast<double>(best);
    }
    curve.push_back({budget, successes / n, dist / n});
  }
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].asr < curve[i - 1].asr) throw std::logic_error("iteration sweep is not monotone");
  }
  return curve;
}

std::string curve_csv(SweepKind kind, std::span<const CurvePoint> curve) {
  std::string out = kind == SweepKind::kTargetLength ? "length,asr,mean_distance\n" : "iterations,asr,mean_distance\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", p.value, p.asr, p.mean_distance);
    out += buf;
  }
  return out;
}

}  // namespace obf::bench
