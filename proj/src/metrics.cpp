#include "uocl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace uocl::metrics {

EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]), at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts c;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1])) {
      c.substitutions += ref[i - 1] != hyp[j - 1];
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

double wer(std::span<const Tokens> refs, std::span<const Tokens> hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("wer: reference and hypothesis counts differ");
  std::size_t errors = 0, words = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    errors += edit_distance(refs[k], hyps[k]).total();
    words += refs[k].size();
  }
  if (words == 0) {
    if (errors == 0) return 0.0;
    throw std::invalid_argument("wer: empty references with nonempty hypotheses");
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(words);
}

void EvalReport::finalize() {
  double sum = 0.0;
  std::size_t errors = 0, words = 0;
  for (auto& t : tasks) {
    const std::size_t e = std::accumulate(t.errors.begin(), t.errors.end(), std::size_t{0});
    const std::size_t w = std::accumulate(t.ref_lengths.begin(), t.ref_lengths.end(), std::size_t{0});
    t.wer = w ? 100.0 * static_cast<double>(e) / static_cast<double>(w) : 0.0;
    sum += t.wer;
    errors += e;
    words += w;
  }
  average_wer = tasks.empty() ? 0.0 : sum / static_cast<double>(tasks.size());
  pooled_wer = words ? 100.0 * static_cast<double>(errors) / static_cast<double>(words) : 0.0;
}

const TaskResult& EvalReport::task(const std::string& id) const {
  for (const auto& t : tasks)
    if (t.task_id == id) return t;
  throw std::out_of_range("report has no task '" + id + "'");
}

std::vector<std::uint32_t> EvalReport::all_errors() const {
  std::vector<std::uint32_t> out;
  for (const auto& t : tasks) out.insert(out.end(), t.errors.begin(), t.errors.end());
  return out;
}

TaskResult evaluate_task(const data::Dataset& test, const model::ModelConfig& cfg, const Checkpoint& ckpt,
                         const ctc::DecodeConfig& dcfg) {
  TaskResult r;
  r.task_id = test.task_id;
  for (const auto& u : test.utterances) {
    const auto hyp = model::recognize(u.features, dcfg, cfg, ckpt);
    r.errors.push_back(static_cast<std::uint32_t>(edit_distance(u.transcript, hyp.tokens).total()));
    r.ref_lengths.push_back(static_cast<std::uint32_t>(u.transcript.size()));
    r.utterance_ids.push_back(u.id);
    r.truncated += hyp.truncated;
  }
  const auto e = std::accumulate(r.errors.begin(), r.errors.end(), std::size_t{0});
  const auto w = std::accumulate(r.ref_lengths.begin(), r.ref_lengths.end(), std::size_t{0});
  r.wer = w ? 100.0 * static_cast<double>(e) / static_cast<double>(w) : 0.0;
  return r;
}

EvalReport evaluate_all_tasks(std::span<const data::Dataset> tests, const model::ModelConfig& cfg,
                              const Checkpoint& ckpt, const ctc::DecodeConfig& dcfg) {
  EvalReport rep;
  rep.checkpoint_id = bytes::hex64(bytes::fnv1a(ckpt.serialize()));
  for (const auto& t : tests) rep.tasks.push_back(evaluate_task(t, cfg, ckpt, dcfg));
  rep.finalize();
  return rep;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["checkpoint_id"] = r.checkpoint_id;
  j["method"] = r.method;
  j["st"] = r.st;
  j["average_convention"] = "task-mean";
  j["average_wer"] = r.average_wer;
  j["pooled_wer"] = r.pooled_wer;
  auto& tasks = j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tasks) {
    nlohmann::ordered_json tj;
    tj["task"] = t.task_id;
    tj["wer"] = t.wer;
    tj["truncated"] = t.truncated;
    tj["utterance_ids"] = t.utterance_ids;
    tj["errors"] = t.errors;
    tj["ref_lengths"] = t.ref_lengths;
    tasks.push_back(std::move(tj));
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.method = j.value("method", "");
  r.st = j.value("st", "");
  for (const auto& tj : j.at("tasks")) {
    TaskResult t;
    t.task_id = tj.at("task").get<std::string>();
    t.truncated = tj.value("truncated", std::size_t{0});
    t.utterance_ids = tj.at("utterance_ids").get<std::vector<std::uint64_t>>();
    t.errors = tj.at("errors").get<std::vector<std::uint32_t>>();
    t.ref_lengths = tj.at("ref_lengths").get<std::vector<std::uint32_t>>();
    if (t.errors.size() != t.ref_lengths.size()) throw std::invalid_argument("report: ragged task '" + t.task_id + "'");
    r.tasks.push_back(std::move(t));
  }
  r.finalize();
  return r;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string csv_header(const EvalReport& r) {
  std::string s = "name";
  for (const auto& t : r.tasks) s += "," + t.task_id;
  return s + ",Avg.";
}

std::string csv_row(const EvalReport& r, const std::string& name) {
  std::string s = name;
  for (const auto& t : r.tasks) s += "," + fixed2(t.wer);
  return s + "," + fixed2(r.average_wer);
}

std::string to_string(Stars s) {
  switch (s) {
    case Stars::ns: return "ns";
    case Stars::one: return "*";
    case Stars::two: return "**";
    case Stars::three: return "***";
  }
  return "?";
}

Stars stars_for(double p) {
  if (p < 0.001) return Stars::three;
  if (p < 0.01) return Stars::two;
  if (p < 0.05) return Stars::one;
  return Stars::ns;
}

SignificanceResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples are not paired (lengths differ)");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) diff.push_back(a[i] - b[i]);
  SignificanceResult res;
  res.n = diff.size();
  if (diff.empty()) return res;

  // Average ranks of |d|, kept doubled so that tied ranks stay integral.
  const std::size_t n = diff.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return std::abs(diff[x]) < std::abs(diff[y]); });
  std::vector<std::size_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(diff[order[j]]) == std::abs(diff[order[i]])) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = i + j + 1;  // 2 × mean of ranks i+1..j
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  std::size_t w2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diff[i] > 0) w2 += rank2[i];
  }
  res.statistic = static_cast<double>(w2) / 2.0;

  if (n <= kExactWilcoxonLimit) {
    // Null: each rank carries an independent fair sign.
    std::vector<double> count(total2 + 1, 0.0);
    count[0] = 1.0;
    std::size_t reach = 0;
    for (auto r : rank2) {
      for (std::size_t s = reach + 1; s-- > 0;)
        if (count[s] != 0.0) count[s + r] += count[s];
      reach += r;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double lo = 0.0, hi = 0.0;
    for (std::size_t s = 0; s <= total2; ++s) {
      if (s <= w2) lo += count[s];
      if (s >= w2) hi += count[s];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(lo, hi) / all);
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(res.statistic - mean) - 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    res.exact = false;
  }
  res.stars = stars_for(res.p_value);
  return res;
}

SignificanceResult wilcoxon_signed_rank(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  return wilcoxon_signed_rank(x, y);
}

}  // namespace uocl::metrics
