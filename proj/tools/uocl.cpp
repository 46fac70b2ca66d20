// uocl: command-line front end for pretraining, stream runs, ablations,
// tuning sweeps, comparisons and checkpoint evaluation.
//
// Every subcommand takes a config file (-c) plus key=value overrides and
// writes under $UOCL_OUTPUT_ROOT (default ./uocl_runs).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uocl/experiment.hpp"

namespace fs = std::filesystem;
using namespace uocl;
using namespace uocl::experiment;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDivergence = 4, kMismatch = 5 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv("UOCL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("uocl_runs");
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Config load_config(const std::string& file, const std::vector<std::string>& overrides) {
  Config c = file.empty() ? Config{} : Config::load(file);
  for (const auto& o : overrides) c.apply(o);
  return c;
}

// Pretrained θ₀ is cached by the digest of the keys it depends on.
Checkpoint obtain_theta0(const ExperimentConfig& cfg, const World& world, const std::string& explicit_path) {
  if (!explicit_path.empty()) return Checkpoint::load(explicit_path);
  const fs::path cached = output_root() / "cache" / ("theta0-" + theta0_key(cfg) + ".ckpt");
  if (fs::exists(cached)) {
    std::cerr << "using cached theta0 " << cached.string() << "\n";
    return Checkpoint::load(cached);
  }
  std::cerr << "pretraining theta0 (" << cfg.data.pretrain_count << " utterances)\n";
  auto r = pretrain(cfg, world);
  fs::create_directories(cached.parent_path());
  r.theta0.save(cached);
  return r.theta0;
}

std::string results_csv(const RunArtifact& a) {
  std::string s = metrics::csv_header(a.initial) + "\n" + metrics::csv_row(a.initial, "initial") + "\n";
  for (const auto& r : a.runs) s += metrics::csv_row(r.report, "seed-" + std::to_string(r.seed)) + "\n";
  const auto m = a.mean_report();
  return s + metrics::csv_row(m, m.method + (m.st == "-" ? "" : "/" + m.st)) + "\n";
}

// config.txt, theta0.ckpt, one report per seed, results.csv, artifact.json.
fs::path write_run(const fs::path& dir, const RunArtifact& a, const Checkpoint& theta0) {
  write_text(dir / "config.txt", a.config_echo);
  theta0.save(dir / "theta0.ckpt");
  for (const auto& r : a.runs) {
    write_text(dir / ("seed-" + std::to_string(r.seed) + ".json"), metrics::to_json(r.report).dump(2) + "\n");
  }
  write_text(dir / "results.csv", results_csv(a));
  write_text(dir / "artifact.json", a.to_json().dump(2) + "\n");
  return dir;
}

std::string run_label(const ExperimentConfig& cfg) {
  std::string s = ocl::to_string(cfg.learner.method);
  if (cfg.learner.mode == ocl::Mode::unsupervised) s += "-" + selftrain::to_string(cfg.learner.st.method);
  else s += "-sup";
  return s;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---------------------------------------------------------------- commands

int cmd_pretrain(const std::string& file, const std::vector<std::string>& overrides) {
  const auto cfg = ExperimentConfig::from(load_config(file, overrides));
  const auto world = build_world(cfg);
  const auto r = pretrain(cfg, world);
  const fs::path dir = output_root() / cfg.name / ("pretrain-" + theta0_key(cfg));
  write_text(dir / "config.txt", cfg.echo);
  r.theta0.save(dir / "theta0.ckpt");
  nlohmann::ordered_json j;
  j["config"] = cfg.echo;
  j["initial_dev_wer"] = r.initial_dev_wer;
  j["train_loss"] = r.train_loss;
  j["dev_wer"] = r.dev_wer;
  j["best_epoch"] = r.best_epoch;
  j["checkpoint_id"] = bytes::hex64(bytes::fnv1a(r.theta0.serialize()));
  write_text(dir / "pretrain.json", j.dump(2) + "\n");
  const fs::path cached = output_root() / "cache" / ("theta0-" + theta0_key(cfg) + ".ckpt");
  fs::create_directories(cached.parent_path());
  r.theta0.save(cached);
  for (std::size_t e = 0; e < r.dev_wer.size(); ++e) {
    std::cout << "epoch " << e + 1 << "  loss " << fixed(r.train_loss[e], 4) << "  dev WER " << fixed(r.dev_wer[e])
              << "\n";
  }
  std::cout << "best epoch " << r.best_epoch << "; theta0 -> " << (dir / "theta0.ckpt").string() << "\n";
  return kOk;
}

int cmd_run(const std::string& file, const std::vector<std::string>& overrides, const std::string& theta0_path) {
  const auto cfg = ExperimentConfig::from(load_config(file, overrides));
  const auto world = build_world(cfg);
  const auto theta0 = obtain_theta0(cfg, world, theta0_path);
  const auto a = run_stream(cfg, world, theta0);
  const auto dir = write_run(output_root() / cfg.name / (run_label(cfg) + "-" + a.run_id), a, theta0);
  std::cout << results_csv(a);
  for (const auto& r : a.runs) {
    if (r.steps != r.batches || !r.unique_utterances) {
      std::cerr << "seed " << r.seed << ": single-pass audit failed (steps " << r.steps << ", batches " << r.batches
                << ")\n";
    }
  }
  std::cout << "-> " << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& file, const std::vector<std::string>& overrides, const std::string& ckpt_path) {
  const auto cfg = ExperimentConfig::from(load_config(file, overrides));
  const auto world = build_world(cfg);
  const auto ckpt = Checkpoint::load(ckpt_path);
  if (!model::zero_checkpoint(cfg.model).compatible(ckpt)) {
    throw MismatchError(ckpt_path + " does not match the model configuration");
  }
  auto rep = metrics::evaluate_all_tasks(world.tests, cfg.model, ckpt, cfg.decode);
  rep.method = "eval";
  rep.st = "-";
  const fs::path dir = output_root() / cfg.name / ("eval-" + rep.checkpoint_id.substr(0, 12));
  write_text(dir / "config.txt", cfg.echo);
  write_text(dir / "report.json", metrics::to_json(rep).dump(2) + "\n");
  const std::string csv = metrics::csv_header(rep) + "\n" + metrics::csv_row(rep, fs::path(ckpt_path).stem().string()) + "\n";
  write_text(dir / "report.csv", csv);
  std::cout << csv << "-> " << dir.string() << "\n";
  return kOk;
}

int cmd_ablate(const std::vector<std::string>& files, const std::vector<std::string>& overrides,
               const std::string& theta0_path) {
  if (files.empty()) throw ConfigError("ablate: give at least one config (-c)");
  struct Column {
    std::string name;
    AblationResult res;
  };
  std::vector<Column> cols;
  for (const auto& f : files) {
    auto c = load_config(f, overrides);
    c.set("method", "aosu");
    c.set("mode", "unsupervised");
    const auto cfg = ExperimentConfig::from(c);
    const auto world = build_world(cfg);
    const auto theta0 = obtain_theta0(cfg, world, theta0_path);
    std::cerr << "ablation on " << cfg.name << "\n";
    auto res = run_ablation(cfg, world, theta0);
    const fs::path base = output_root() / cfg.name / "ablation";
    for (std::size_t v = 0; v < res.runs.size(); ++v) {
      write_run(base / ("variant-" + std::to_string(v) + "-" + res.runs[v].run_id), res.runs[v], theta0);
    }
    cols.push_back({cfg.name, std::move(res)});
  }
  // Rows: variants. Columns: experiments. Stars: Wilcoxon against row 0.
  nlohmann::ordered_json j;
  j["columns"] = nlohmann::ordered_json::array();
  std::string csv = "variant";
  for (const auto& c : cols) csv += "," + c.name + "," + c.name + " sig";
  csv += "\n";
  const auto& variants = cols.front().res.variants;
  std::vector<std::vector<std::string>> cells(variants.size());
  for (const auto& c : cols) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["rows"] = nlohmann::ordered_json::array();
    const auto base_err = c.res.runs.front().pooled_errors();
    for (std::size_t v = 0; v < c.res.runs.size(); ++v) {
      const auto& run = c.res.runs[v];
      const auto t = metrics::wilcoxon_signed_rank(run.pooled_errors(), base_err);
      const std::string sig = v == 0 ? "" : metrics::to_string(t.stars);
      cells[v].push_back(fixed(run.mean_average_wer()));
      cells[v].push_back(sig);
      nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
      for (const auto& r : run.runs) seeds.push_back(r.seed);
      cj["rows"].push_back({{"variant", c.res.variants[v]},
                            {"run_id", run.run_id},
                            {"seeds", seeds},
                            {"average_wer", run.mean_average_wer()},
                            {"p_vs_baseline", t.p_value},
                            {"stars", metrics::to_string(t.stars)},
                            {"config", run.config_echo}});
    }
    j["columns"].push_back(std::move(cj));
  }
  for (std::size_t v = 0; v < variants.size(); ++v) {
    csv += "\"" + variants[v] + "\"";
    for (const auto& x : cells[v]) csv += "," + x;
    csv += "\n";
  }
  std::string tag;
  for (const auto& c : cols) tag += (tag.empty() ? "" : "+") + c.name;
  const fs::path dir = output_root() / ("ablation-" + tag);
  write_text(dir / "ablation.csv", csv);
  write_text(dir / "ablation.json", j.dump(2) + "\n");
  std::cout << csv << "-> " << dir.string() << "\n";
  return kOk;
}

int cmd_tune(const std::string& file, const std::vector<std::string>& overrides, const std::vector<std::string>& grid_args) {
  std::map<std::string, std::vector<std::string>> grid;
  for (const auto& g : grid_args) {
    const auto eq = g.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--grid expects key=v1,v2,..., got '" + g + "'");
    const auto key = g.substr(0, eq);
    std::stringstream ss(g.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) grid[key].push_back(v);
  }
  if (grid.empty()) throw ConfigError("tune: give at least one --grid key=v1,v2");
  const Config base = load_config(file, overrides);
  const auto res = tune(base, grid);
  nlohmann::ordered_json j;
  j["config"] = ExperimentConfig::from(base).echo;
  j["points"] = nlohmann::ordered_json::array();
  std::string csv;
  for (const auto& [k, v] : grid) csv += k + ",";
  csv += "avg_wer\n";
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    nlohmann::ordered_json pj(res.points[i]);
    j["points"].push_back({{"values", pj}, {"average_wer", res.scores[i]}});
    for (const auto& [k, v] : res.points[i]) csv += v + ",";
    csv += fixed(res.scores[i]) + "\n";
  }
  j["best"] = res.points[res.best];
  const auto cfg_name = ExperimentConfig::from(base).name;
  const fs::path dir = output_root() / cfg_name / "tune";
  write_text(dir / "tune.json", j.dump(2) + "\n");
  write_text(dir / "tune.csv", csv);
  std::cout << csv << "best:";
  for (const auto& [k, v] : res.points[res.best]) std::cout << " " << k << "=" << v;
  std::cout << "\n-> " << dir.string() << "\n";
  return kOk;
}

int cmd_compare(const std::vector<std::string>& inputs, const std::string& baseline, const std::string& out) {
  if (inputs.size() < 2) throw ConfigError("compare: give at least two run artifacts");
  std::vector<std::string> names;
  std::vector<RunArtifact> arts;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "artifact.json";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(p));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
    arts.push_back(RunArtifact::from_json(j));
    names.push_back(fs::is_directory(in) ? fs::path(in).filename().string() : p.parent_path().filename().string());
  }
  // Pairing needs the same seeds over the same test utterances.
  const auto& ref = arts.front();
  for (std::size_t i = 1; i < arts.size(); ++i) {
    const auto& a = arts[i];
    if (a.runs.size() != ref.runs.size()) throw MismatchError(names[i] + ": different number of seeds");
    for (std::size_t k = 0; k < a.runs.size(); ++k) {
      if (a.runs[k].seed != ref.runs[k].seed) throw MismatchError(names[i] + ": seed lists differ");
      const auto& x = a.runs[k].report.tasks;
      const auto& y = ref.runs[k].report.tasks;
      bool same = x.size() == y.size();
      for (std::size_t t = 0; same && t < x.size(); ++t) same = x[t].utterance_ids == y[t].utterance_ids;
      if (!same) throw MismatchError(names[i] + ": test utterances differ, reports are not paired");
    }
  }
  std::vector<std::vector<std::uint32_t>> errors;
  std::vector<double> wers;
  for (const auto& a : arts) {
    errors.push_back(a.pooled_errors());
    wers.push_back(a.mean_average_wer());
  }
  const auto c = compare(names, errors, wers);
  std::size_t b = 0;
  if (!baseline.empty()) {
    const auto it = std::find(names.begin(), names.end(), baseline);
    if (it == names.end()) throw ConfigError("compare: no input named '" + baseline + "'");
    b = static_cast<std::size_t>(it - names.begin());
  }
  auto j = c.to_json();
  j["baseline"] = names[b];
  std::cout << "run,avg_wer,vs " << names[b] << "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string vs = "-";
    if (i != b) {
      vs = c.better[i][b] > 0 ? "better " : (c.better[i][b] < 0 ? "worse " : "equal ");
      vs += metrics::to_string(c.tests[i][b].stars) + " (p=" + fixed(c.tests[i][b].p_value, 4) + ")";
    }
    std::cout << names[i] << "," << fixed(wers[i]) << "," << vs << "\n";
  }
  const fs::path path = out.empty() ? output_root() / "comparisons" / ("compare-" + ref.run_id + ".json") : fs::path(out);
  write_text(path, j.dump(2) + "\n");
  std::cout << "-> " << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised online continual learning experiments on synthetic speech-like streams"};
  app.require_subcommand(1);

  std::string config_file, theta0_path, ckpt_path, baseline, out;
  std::vector<std::string> overrides, configs, grid, inputs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("overrides", overrides, "key=value overrides applied after the file");
  };

  auto* pre = app.add_subcommand("pretrain", "train theta0 on T0 and cache it");
  add_common(pre);
  auto* run = app.add_subcommand("run", "run one method over the stream for every seed");
  add_common(run);
  run->add_option("--theta0", theta0_path, "use this checkpoint instead of the cached pretrained one")
      ->check(CLI::ExistingFile);
  auto* abl = app.add_subcommand("ablate", "the four AOS-U ablation variants, one column per config");
  abl->add_option("-c,--config", configs, "config file; repeat for more columns")->check(CLI::ExistingFile)->required();
  abl->add_option("overrides", overrides, "key=value overrides applied to every config");
  abl->add_option("--theta0", theta0_path, "checkpoint to start from")->check(CLI::ExistingFile);
  auto* tun = app.add_subcommand("tune", "grid search on held-out tasks");
  add_common(tun);
  tun->add_option("--grid", grid, "key=v1,v2,... (repeatable)")->required();
  auto* cmp = app.add_subcommand("compare", "pairwise Wilcoxon tests between run artifacts");
  cmp->add_option("inputs", inputs, "run directories or artifact.json files")->required();
  cmp->add_option("--baseline", baseline, "name (directory) of the reference run");
  cmp->add_option("-o,--out", out, "where to write the comparison JSON");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every task's test set");
  add_common(ev);
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->check(CLI::ExistingFile)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*pre) return cmd_pretrain(config_file, overrides);
    if (*run) return cmd_run(config_file, overrides, theta0_path);
    if (*abl) return cmd_ablate(configs, overrides, theta0_path);
    if (*tun) return cmd_tune(config_file, overrides, grid);
    if (*cmp) return cmd_compare(inputs, baseline, out);
    if (*ev) return cmd_eval(config_file, overrides, ckpt_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const MismatchError& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
