#include "uocl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

namespace uocl::experiment {

namespace {

model::CeNormalization parse_ce(const std::string& s) {
  if (s == "per_token") return model::CeNormalization::per_token;
  if (s == "per_utterance") return model::CeNormalization::per_utterance;
  throw ConfigError("model.ce_normalization must be per_token or per_utterance, got '" + s + "'");
}

std::string ce_name(model::CeNormalization n) {
  return n == model::CeNormalization::per_token ? "per_token" : "per_utterance";
}

ocl::PlSource parse_source(const std::string& s) {
  if (s == "adapted") return ocl::PlSource::adapted;
  if (s == "final") return ocl::PlSource::final_model;
  throw ConfigError("aosu.pl_source must be adapted or final, got '" + s + "'");
}

// Default stream: two channel shifts and one combined text+channel shift.
struct DefaultTask {
  const char* id;
  const char* shift;
  double magnitude;
};
constexpr DefaultTask kDefaultTasks[] = {{"T1", "channel", 0.3}, {"T2", "channel", 0.3}, {"T3", "both", 0.3}};

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const Config& c) {
  ExperimentConfig x;
  x.name = c.get("name", x.name);

  auto& m = x.model;
  m.feature_dim = c.get_size("model.feature_dim", m.feature_dim);
  m.encoder_hidden = c.get_size("model.encoder_hidden", m.encoder_hidden);
  m.encoder_blocks = c.get_size("model.encoder_blocks", m.encoder_blocks);
  m.conv_width = c.get_size("model.conv_width", m.conv_width);
  m.decoder_hidden = c.get_size("model.decoder_hidden", m.decoder_hidden);
  m.vocab = c.get_size("model.vocab", m.vocab);
  m.max_label_len = c.get_size("model.max_label_len", m.max_label_len);
  m.dropout = c.get_double("model.dropout", m.dropout);
  m.ctc_weight = c.get_double("model.ctc_weight", m.ctc_weight);
  m.max_time_mask = c.get_size("model.max_time_mask", m.max_time_mask);
  m.max_feature_mask = c.get_size("model.max_feature_mask", m.max_feature_mask);
  m.masks_per_utterance = c.get_size("model.masks_per_utterance", m.masks_per_utterance);
  m.ce_normalization = parse_ce(c.get("model.ce_normalization", ce_name(m.ce_normalization)));
  wrap("model", [&] { m.validate(); });

  x.decode.beam = static_cast<int>(c.get_int("decode.beam", x.decode.beam));
  x.decode.ctc_weight = c.get_double("decode.ctc_weight", m.ctc_weight);
  x.decode.max_len = static_cast<int>(c.get_int("decode.max_len", static_cast<int>(m.max_label_len)));
  if (x.decode.beam < 1) throw ConfigError("decode.beam must be >= 1");

  auto& d = x.data;
  d.seed = c.get_u64("data.seed", d.seed);
  d.symbols = c.get_size("data.symbols", m.symbol_count());
  if (d.symbols != m.symbol_count()) throw ConfigError("data.symbols must equal model.vocab - 3");
  d.noise = c.get_double("data.noise", d.noise);
  d.pretrain_count = c.get_size("data.pretrain_count", d.pretrain_count);
  d.dev_count = c.get_size("data.dev_count", d.dev_count);
  d.test_count = c.get_size("data.test_count", d.test_count);
  std::string default_ids;
  for (const auto& t : kDefaultTasks) default_ids += std::string(default_ids.empty() ? "" : ",") + t.id;
  std::uint64_t k = 0;
  for (const auto& id : c.get_list("stream.tasks", default_ids)) {
    if (id == "T0") throw ConfigError("stream.tasks: T0 is the pretraining task");
    const DefaultTask* def = nullptr;
    for (const auto& t : kDefaultTasks)
      if (id == t.id) def = &t;
    TaskDef t;
    t.id = id;
    const std::string p = "task." + id + ".";
    t.shift = wrap(p + "shift", [&] { return data::parse_shift(c.get(p + "shift", def ? def->shift : "channel")); });
    t.magnitude = c.get_double(p + "magnitude", def ? def->magnitude : 0.5);
    t.seed = c.get_u64(p + "seed", 100 + (++k));
    t.min_length = c.get_size(p + "min_length", 0);
    t.max_length = c.get_size(p + "max_length", 0);
    d.tasks.push_back(t);
  }
  std::set<std::string> ids;
  for (const auto& t : d.tasks)
    if (!ids.insert(t.id).second) throw ConfigError("stream.tasks lists '" + t.id + "' twice");

  auto& p = x.pretrain;
  p.epochs = c.get_size("pretrain.epochs", p.epochs);
  p.lr = c.get_double("pretrain.lr", p.lr);
  p.batch_size = c.get_size("pretrain.batch_size", p.batch_size);
  p.patience = c.get_size("pretrain.patience", p.patience);
  p.seed = c.get_u64("pretrain.seed", p.seed);
  if (p.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");

  auto& l = x.learner;
  l.method = wrap("method", [&] { return ocl::parse_method(c.get("method", "ft")); });
  l.mode = wrap("mode", [&] { return ocl::parse_mode(c.get("mode", "unsupervised")); });
  l.lr = c.get_double("lr", l.lr);
  l.memory = c.get_size("er.memory", l.memory);
  l.replay = c.get_size("er.replay", l.replay);
  l.tau = c.get_double("aos.tau", l.tau);
  l.tau2 = c.get_double("aos.tau2", l.tau2);
  l.kd.weight = c.get_double("kd.weight", l.kd.weight);
  l.kd.temperature = c.get_double("kd.temperature", l.kd.temperature);
  l.aosu.passes = c.get_size("aosu.passes", l.aosu.passes);
  l.aosu.source = parse_source(c.get("aosu.pl_source", "adapted"));
  l.aosu.kd = c.get_bool("aosu.kd", l.aosu.kd);
  l.aosu.sequential = c.get_bool("aosu.sequential", l.aosu.sequential);
  l.random_effects = c.get_bool("random_effects", l.random_effects);
  // Supervised runs never read the ST settings' effect, but they are still
  // echoed so that every run records the full configuration.
  l.st.method = wrap("st", [&] { return selftrain::parse_method(c.get("st", "ctc")); });
  l.st.decode = x.decode;
  l.st.lm_weight = c.get_double("lm.weight", l.st.lm_weight);
  l.st.filter.enabled = c.get_bool("pl_filter.enabled", l.st.filter.enabled);
  l.st.filter.min_ratio = c.get_double("pl_filter.min_ratio", 0.05);
  l.st.filter.max_ratio = c.get_double("pl_filter.max_ratio", 0.5);
  x.lm_order = c.get_size("lm.order", x.lm_order);
  x.lm_smoothing = c.get_double("lm.smoothing", x.lm_smoothing);
  if (l.lr < 0.0) throw ConfigError("lr must be >= 0");
  if (l.aosu.passes < 1) throw ConfigError("aosu.passes must be >= 1");
  if (l.kd.weight < 0.0) throw ConfigError("kd.weight must be >= 0");
  if (l.method == ocl::Method::aosu && l.mode == ocl::Mode::supervised) {
    throw ConfigError("method=aosu requires mode=unsupervised");
  }

  x.batch_size = c.get_size("stream.batch_size", x.batch_size);
  x.batches_per_task = c.get_size("stream.batches_per_task", x.batches_per_task);
  x.interleaved = c.get_bool("stream.interleaved", x.interleaved);
  if (x.batch_size < 1) throw ConfigError("stream.batch_size must be >= 1");
  x.seeds.clear();
  for (const auto& s : c.get_list("seeds", "1,2,3,4,5")) {
    x.seeds.push_back(wrap("seeds", [&] { return static_cast<std::uint64_t>(std::stoull(s)); }));
  }
  if (x.seeds.empty()) throw ConfigError("seeds must list at least one seed");

  c.check_unused();
  x.echo = c.echo();
  return x;
}

Config ExperimentConfig::as_config() const { return Config::parse(echo, "<echo>"); }

World build_world(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  World w;
  auto base = data::base_task("T0", d.symbols, cfg.model.feature_dim, d.seed);
  base.noise = d.noise;
  w.specs.push_back(base);
  for (const auto& t : d.tasks) {
    auto spec = data::make_task(base, t.shift, t.magnitude, t.seed, t.id);
    if (t.min_length) spec.min_length = t.min_length;
    if (t.max_length) spec.max_length = t.max_length;
    spec.validate();
    w.specs.push_back(std::move(spec));
  }
  constexpr std::uint64_t kTaskStride = 10'000'000, kSplitStride = 1'000'000;
  auto ids = [&](std::size_t task, data::Split s) {
    return task * kTaskStride + static_cast<std::uint64_t>(s) * kSplitStride;
  };
  w.pretrain = data::generate(base, data::Split::pretrain, d.pretrain_count, derive_seed(d.seed, 1),
                              ids(0, data::Split::pretrain));
  w.dev = data::generate(base, data::Split::dev, d.dev_count, derive_seed(d.seed, 2), ids(0, data::Split::dev));
  const std::size_t pool = cfg.batches_per_task * cfg.batch_size;
  for (std::size_t k = 0; k < w.specs.size(); ++k) {
    const auto& spec = w.specs[k];
    w.tests.push_back(data::generate(spec, data::Split::test, d.test_count, derive_seed(d.seed, 100 + k),
                                     ids(k, data::Split::test)));
    if (k > 0) {
      w.stream_pools[spec.id] = data::generate(spec, data::Split::stream, pool, derive_seed(d.seed, 200 + k),
                                               ids(k, data::Split::stream));
    }
  }
  w.lm = selftrain::NgramLM(cfg.lm_order, cfg.model.vocab, cfg.lm_smoothing);
  for (const auto& u : w.pretrain.utterances) w.lm.add_sentence(u.transcript);
  return w;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const World& world) {
  const auto& p = cfg.pretrain;
  PretrainResult r;
  r.theta0 = model::init_checkpoint(cfg.model, p.seed);
  r.initial_dev_wer = metrics::evaluate_task(world.dev, cfg.model, r.theta0, cfg.decode).wer;
  Checkpoint theta = r.theta0;
  double best = r.initial_dev_wer;
  std::size_t since_best = 0, step = 0;
  const auto& utts = world.pretrain.utterances;
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= p.epochs; ++epoch) {
    Rng rng(derive_seed(p.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < order.size(); i += p.batch_size) {
      std::vector<model::Example> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + p.batch_size); ++j) {
        const auto& u = utts[order[j]];
        batch.push_back({&u.features, u.transcript, u.transcript});
      }
      const auto lg =
          model::hybrid_loss_grad(batch, cfg.model, theta, model::RandomEffects::training(derive_seed(p.seed, 1000 + step++)));
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("pretraining diverged: loss " + std::to_string(lg.loss) + " at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step) + " (lr " +
                              std::to_string(p.lr) + "); lower pretrain.lr");
      }
      ocl::apply_gradient(theta, lg.grad, p.lr);
      theta.clear_grad();
      loss_sum += lg.loss;
      ++nb;
    }
    r.train_loss.push_back(nb ? loss_sum / static_cast<double>(nb) : 0.0);
    const double wer = metrics::evaluate_task(world.dev, cfg.model, theta, cfg.decode).wer;
    r.dev_wer.push_back(wer);
    if (wer < best) {
      best = wer;
      r.best_epoch = epoch;
      r.theta0 = theta;
      since_best = 0;
    } else if (++since_best >= p.patience) {
      break;
    }
  }
  r.theta0.clear_grad();
  return r;
}

SeedRun run_seed(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto layout = model::zero_checkpoint(cfg.model);
  if (!layout.compatible(theta0)) throw MismatchError("checkpoint layout does not match the model configuration");

  stream::StreamSchedule sched;
  if (cfg.batches_per_task > 0)
    for (const auto& t : cfg.data.tasks) sched.segments.push_back({t.id, cfg.batches_per_task});
  sched.batch_size = cfg.batch_size;
  sched.seed = derive_seed(seed, 0x57);
  sched.supervised = cfg.learner.mode == ocl::Mode::supervised;
  sched.interleaved = cfg.interleaved;

  SeedRun run;
  run.seed = seed;
  selftrain::NgramLM lm = world.lm;
  auto lcfg = cfg.learner;
  lcfg.seed = derive_seed(seed, 0x1ea);
  lcfg.st.lm = &lm;
  ocl::Learner learner(cfg.model, lcfg, theta0);
  if (!sched.segments.empty()) {
    stream::Stream s(sched, world.stream_pools);
    while (auto b = s.next()) learner.observe(*b);
    run.audit = s.audit();
  }
  run.steps = learner.steps();
  run.batches = learner.batches();
  std::set<std::uint64_t> seen;
  for (const auto& e : run.audit.entries)
    for (auto id : e.utterance_ids) run.unique_utterances &= seen.insert(id).second;

  const std::string method = ocl::to_string(cfg.learner.method);
  const std::string st = cfg.learner.mode == ocl::Mode::supervised ? "-" : selftrain::to_string(cfg.learner.st.method);
  run.report = metrics::evaluate_all_tasks(world.tests, cfg.model, learner.model(), cfg.decode);
  run.report.method = method;
  run.report.st = st;
  if (const auto* a = learner.adapted()) {
    run.adapted = metrics::evaluate_all_tasks(world.tests, cfg.model, *a, cfg.decode);
    run.adapted->method = method + "/adapted";
    run.adapted->st = st;
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

double RunArtifact::mean_average_wer() const {
  if (runs.empty()) return initial.average_wer;
  double s = 0.0;
  for (const auto& r : runs) s += r.report.average_wer;
  return s / static_cast<double>(runs.size());
}

std::vector<std::uint32_t> RunArtifact::pooled_errors() const {
  std::vector<std::uint32_t> out;
  for (const auto& r : runs) {
    const auto e = r.report.all_errors();
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

metrics::EvalReport RunArtifact::mean_report() const {
  if (runs.empty()) return initial;
  metrics::EvalReport m = runs.front().report;
  m.checkpoint_id = "mean";
  for (std::size_t t = 0; t < m.tasks.size(); ++t) {
    double s = 0.0;
    for (const auto& r : runs) s += r.report.tasks.at(t).wer;
    m.tasks[t].wer = s / static_cast<double>(runs.size());
  }
  double a = 0.0, p = 0.0;
  for (const auto& r : runs) {
    a += r.report.average_wer;
    p += r.report.pooled_wer;
  }
  m.average_wer = a / static_cast<double>(runs.size());
  m.pooled_wer = p / static_cast<double>(runs.size());
  return m;
}

RunArtifact RunArtifact::from_json(const nlohmann::json& j) {
  try {
    RunArtifact a;
    a.run_id = j.at("run_id").get<std::string>();
    a.config_echo = j.at("config").get<std::string>();
    a.initial = metrics::report_from_json(j.at("initial"));
    for (const auto& rj : j.at("runs")) {
      SeedRun r;
      r.seed = rj.at("seed").get<std::uint64_t>();
      r.steps = rj.at("steps").get<std::size_t>();
      r.batches = rj.at("batches").get<std::size_t>();
      r.unique_utterances = rj.at("unique_utterances").get<bool>();
      r.report = metrics::report_from_json(rj.at("report"));
      if (rj.contains("adapted_report")) r.adapted = metrics::report_from_json(rj.at("adapted_report"));
      for (const auto& e : rj.at("audit")) {
        stream::AuditEntry ae;
        ae.batch = e.at("batch").get<std::size_t>();
        ae.task_id = e.at("task").get<std::string>();
        ae.utterance_ids = e.at("utterances").get<std::vector<std::uint64_t>>();
        r.audit.entries.push_back(std::move(ae));
      }
      r.seconds = rj.value("seconds", 0.0);
      a.runs.push_back(std::move(r));
    }
    a.seconds = j.value("seconds", 0.0);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run artifact: ") + e.what());
  }
}

nlohmann::ordered_json RunArtifact::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config"] = config_echo;
  j["initial"] = metrics::to_json(initial);
  auto& rs = j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json rj;
    rj["seed"] = r.seed;
    rj["steps"] = r.steps;
    rj["batches"] = r.batches;
    rj["one_step_per_batch"] = r.steps == r.batches;
    rj["unique_utterances"] = r.unique_utterances;
    rj["report"] = metrics::to_json(r.report);
    if (r.adapted) rj["adapted_report"] = metrics::to_json(*r.adapted);
    auto& audit = rj["audit"] = nlohmann::ordered_json::array();
    for (const auto& e : r.audit.entries) audit.push_back({{"batch", e.batch}, {"task", e.task_id}, {"utterances", e.utterance_ids}});
    rj["seconds"] = r.seconds;
    rs.push_back(std::move(rj));
  }
  j["mean_average_wer"] = mean_average_wer();
  if (!runs.empty()) {
    // Each seed is paired with θ₀ on the same test utterances.
    std::vector<std::uint32_t> base;
    const auto e0 = initial.all_errors();
    for (std::size_t k = 0; k < runs.size(); ++k) base.insert(base.end(), e0.begin(), e0.end());
    const auto t = metrics::wilcoxon_signed_rank(pooled_errors(), base);
    j["significance_vs_initial"] = {{"n", t.n},
                                    {"statistic", t.statistic},
                                    {"p_value", t.p_value},
                                    {"exact", t.exact},
                                    {"stars", metrics::to_string(t.stars)}};
  }
  j["seconds"] = seconds;
  return j;
}

std::string run_id(const std::string& config_echo, const Checkpoint& theta0) {
  auto bytes = theta0.serialize();
  bytes.insert(bytes.end(), config_echo.begin(), config_echo.end());
  return bytes::hex64(bytes::fnv1a(bytes)).substr(0, 12);
}

std::string theta0_key(const ExperimentConfig& cfg) {
  std::string key;
  const Config c = cfg.as_config();
  for (const auto& [k, v] : c.raw()) {
    for (const char* prefix : {"data.", "model.", "decode.", "pretrain."}) {
      if (k.rfind(prefix, 0) == 0) key += k + "=" + v + "\n";
    }
  }
  return bytes::hex64(bytes::fnv1a(key)).substr(0, 12);
}

RunArtifact run_stream(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0) {
  const auto t0 = std::chrono::steady_clock::now();
  RunArtifact a;
  a.config_echo = cfg.echo;
  a.run_id = run_id(cfg.echo, theta0);
  a.initial = metrics::evaluate_all_tasks(world.tests, cfg.model, theta0, cfg.decode);
  a.initial.method = "initial";
  a.initial.st = "-";
  for (auto seed : cfg.seeds) a.runs.push_back(run_seed(cfg, world, theta0, seed));
  a.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return a;
}

std::vector<Variant> ablation_variants(std::size_t passes) {
  using ocl::PlSource;
  return {
      {"AOS (unsupervised)", {1, PlSource::final_model, false, false}},
      {"+ (1) + (2)", {1, PlSource::adapted, false, false}},
      {"+ (1) + (2) + (3)", {passes, PlSource::adapted, false, false}},
      {"+ (1) + (3)", {passes, PlSource::adapted, true, false}},
  };
}

AblationResult run_ablation(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0) {
  AblationResult res;
  for (const auto& v : ablation_variants(std::max<std::size_t>(cfg.learner.aosu.passes, 2))) {
    ExperimentConfig vc = cfg;
    vc.learner.method = ocl::Method::aosu;
    vc.learner.mode = ocl::Mode::unsupervised;
    vc.learner.aosu = v.aosu;
    // Keep the echo truthful about what each variant ran.
    Config c = cfg.as_config();
    c.set("method", "aosu");
    c.set("mode", "unsupervised");
    c.set("aosu.passes", std::to_string(v.aosu.passes));
    c.set("aosu.pl_source", v.aosu.source == ocl::PlSource::adapted ? "adapted" : "final");
    c.set("aosu.kd", v.aosu.kd ? "true" : "false");
    c.set("aosu.sequential", "false");
    vc.echo = ExperimentConfig::from(c).echo;
    res.variants.push_back(v.name);
    res.runs.push_back(run_stream(vc, world, theta0));
  }
  return res;
}

Comparison compare(const std::vector<std::string>& names, const std::vector<std::vector<std::uint32_t>>& errors,
                   const std::vector<double>& average_wer) {
  if (names.size() != errors.size() || names.size() != average_wer.size()) {
    throw std::invalid_argument("compare: names, errors and WERs differ in count");
  }
  for (const auto& e : errors)
    if (e.size() != errors.front().size()) throw MismatchError("compare: reports are not paired (different utterance counts)");
  Comparison c;
  c.names = names;
  c.average_wer = average_wer;
  const std::size_t n = names.size();
  c.tests.assign(n, std::vector<metrics::SignificanceResult>(n));
  c.better.assign(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c.tests[i][j] = metrics::wilcoxon_signed_rank(errors[i], errors[j]);
      const auto ei = std::accumulate(errors[i].begin(), errors[i].end(), std::uint64_t{0});
      const auto ej = std::accumulate(errors[j].begin(), errors[j].end(), std::uint64_t{0});
      c.better[i][j] = ei < ej ? 1 : (ei > ej ? -1 : 0);
    }
  }
  return c;
}

nlohmann::ordered_json Comparison::to_json() const {
  nlohmann::ordered_json j;
  j["names"] = names;
  j["average_wer"] = average_wer;
  auto& m = j["pairs"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (i == k) continue;
      const auto& t = tests[i][k];
      m.push_back({{"a", names[i]},
                   {"b", names[k]},
                   {"better", better[i][k]},
                   {"n", t.n},
                   {"statistic", t.statistic},
                   {"p_value", t.p_value},
                   {"exact", t.exact},
                   {"stars", metrics::to_string(t.stars)}});
    }
  }
  return j;
}

TuneResult tune(const Config& base, const std::map<std::string, std::vector<std::string>>& grid) {
  TuneResult res;
  std::vector<std::map<std::string, std::string>> points{{}};
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw ConfigError("tune: no candidate values for '" + key + "'");
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& pt : points)
      for (const auto& v : values) {
        auto q = pt;
        q[key] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  // θ0 and the world depend only on the data/model/pretrain sections, which
  // a sweep over method hyper-parameters leaves unchanged; cache by echo.
  std::map<std::string, std::pair<World, Checkpoint>> cache;
  for (const auto& pt : points) {
    Config c = base;
    for (const auto& [k, v] : pt) c.set(k, v);
    const auto cfg = ExperimentConfig::from(c);
    std::string key;
    for (const auto& line : {std::string("data."), std::string("model."), std::string("pretrain."), std::string("stream."), std::string("task.")})
      for (const auto& [k, v] : c.raw())
        if (k.rfind(line, 0) == 0) key += k + "=" + v + ";";
    auto it = cache.find(key);
    if (it == cache.end()) {
      World w = build_world(cfg);
      auto theta0 = pretrain(cfg, w).theta0;
      it = cache.emplace(key, std::make_pair(std::move(w), std::move(theta0))).first;
    }
    const auto art = run_stream(cfg, it->second.first, it->second.second);
    res.points.push_back(pt);
    res.scores.push_back(art.mean_average_wer());
  }
  res.best = static_cast<std::size_t>(std::min_element(res.scores.begin(), res.scores.end()) - res.scores.begin());
  return res;
}

}  // namespace uocl::experiment
