#include "uocl/ctc.hpp"

#include <algorithm>
#include <cmath>

namespace uocl::ctc {

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

LabelTooLong::LabelTooLong(std::size_t label_len, std::size_t needed, std::size_t frames)
    : std::invalid_argument("ctc: label of length " + std::to_string(label_len) + " needs " +
                            std::to_string(needed) + " frames, only " + std::to_string(frames) +
                            " available") {}

std::size_t min_frames(std::span<const int> label) {
  std::size_t n = label.size();
  for (std::size_t i = 1; i < label.size(); ++i) n += label[i] == label[i - 1];
  return n;
}

namespace {

void check_inputs(const ad::Array& lp, std::span<const int> label) {
  if (lp.rank() != 2) throw ad::ShapeError("ctc: log_probs must be F×C, got " + ad::to_string(lp.shape()));
  const auto C = static_cast<int>(lp.cols());
  for (int k : label) {
    if (k == kBlank || k < 0 || k >= C) {
      throw std::invalid_argument("ctc: label token " + std::to_string(k) + " is blank or outside vocab of " +
                                  std::to_string(C));
    }
  }
  const auto need = min_frames(label);
  if (need > lp.rows()) throw LabelTooLong(label.size(), need, lp.rows());
}

// Blank-interleaved label: blank, l1, blank, l2, ..., blank.
std::vector<int> extend_label(std::span<const int> label) {
  std::vector<int> ext(2 * label.size() + 1, kBlank);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  return ext;
}

struct Lattice {
  std::vector<double> alpha, beta;  // T × S
  std::size_t T = 0, S = 0;
  double log_likelihood = kLogZero;
};

Lattice forward_backward(const ad::Array& lp, std::span<const int> label, bool with_beta) {
  const auto ext = extend_label(label);
  Lattice L;
  L.T = lp.rows();
  L.S = ext.size();
  const std::size_t T = L.T, S = L.S;
  L.alpha.assign(T * S, kLogZero);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return L.alpha[t * S + s]; };
  A(0, 0) = lp.at(0, ext[0]);
  if (S > 1) A(0, 1) = lp.at(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = A(t - 1, s);
      if (s >= 1) a = log_add(a, A(t - 1, s - 1));
      if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) a = log_add(a, A(t - 1, s - 2));
      A(t, s) = a <= kLogZero ? kLogZero : a + lp.at(t, ext[s]);
    }
  }
  double ll = A(T - 1, S - 1);
  if (S > 1) ll = log_add(ll, A(T - 1, S - 2));
  L.log_likelihood = ll;
  if (!with_beta) return L;

  L.beta.assign(T * S, kLogZero);
  auto B = [&](std::size_t t, std::size_t s) -> double& { return L.beta[t * S + s]; };
  B(T - 1, S - 1) = lp.at(T - 1, ext[S - 1]);
  if (S > 1) B(T - 1, S - 2) = lp.at(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = B(t + 1, s);
      if (s + 1 < S) b = log_add(b, B(t + 1, s + 1));
      if (s + 2 < S && ext[s] != kBlank && ext[s] != ext[s + 2]) b = log_add(b, B(t + 1, s + 2));
      B(t, s) = b <= kLogZero ? kLogZero : b + lp.at(t, ext[s]);
    }
  }
  return L;
}

}  // namespace

double ctc_loss(const ad::Array& log_probs, std::span<const int> label) {
  check_inputs(log_probs, label);
  return -forward_backward(log_probs, label, false).log_likelihood;
}

ad::Array ctc_grad(const ad::Array& log_probs, std::span<const int> label) {
  check_inputs(log_probs, label);
  const auto L = forward_backward(log_probs, label, true);
  const auto ext = extend_label(label);
  ad::Array g(log_probs.shape());
  // alpha and beta both include the emission at t, so divide it out once.
  for (std::size_t t = 0; t < L.T; ++t) {
    for (std::size_t s = 0; s < L.S; ++s) {
      const double ab = L.alpha[t * L.S + s] + L.beta[t * L.S + s];
      if (ab <= kLogZero / 2) continue;
      const int k = ext[s];
      g.at(t, k) -= std::exp(ab - log_probs.at(t, k) - L.log_likelihood);
    }
  }
  return g;
}

ad::Var ctc_loss(ad::Var log_probs, std::span<const int> label) {
  const ad::Array& lp = log_probs.value();
  const double loss = ctc_loss(lp, label);
  const auto id = log_probs.id();
  Tokens lab(label.begin(), label.end());
  return log_probs.tape()->record("ctc_loss", ad::Array::scalar(loss), {id},
                                  [id, lab = std::move(lab)](ad::Tape& tp, std::size_t self) {
                                    const double g = tp.node(self).data.grad()[0];
                                    const ad::Array dg = ctc_grad(tp.node(id).data, lab);
                                    auto gi = tp.grad_of(id);
                                    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g * dg[i];
                                  });
}

double brute_force_ctc(const ad::Array& log_probs, std::span<const int> label) {
  if (log_probs.rank() != 2) throw ad::ShapeError("brute_force_ctc: log_probs must be F×C");
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  double paths = std::pow(static_cast<double>(C), static_cast<double>(T));
  if (paths > static_cast<double>(1 << 20)) {
    throw InfeasibleEnumeration("brute_force_ctc: " + std::to_string(C) + "^" + std::to_string(T) +
                                " paths exceed the enumeration budget");
  }
  std::vector<int> path(T, 0);
  double total = 0.0;
  bool any = false;
  const Tokens target(label.begin(), label.end());
  while (true) {
    if (collapse(path) == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs.at(t, path[t]);
      total += std::exp(lp);
      any = true;
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(C)) path[t++] = 0;
    if (t == T) break;
  }
  if (!any || total <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

Tokens collapse(std::span<const int> alignment) {
  Tokens out;
  int prev = -1;
  for (int k : alignment) {
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

Tokens greedy_ctc_decode(const ad::Array& log_probs) {
  std::vector<int> best(log_probs.rows());
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < log_probs.cols(); ++k) {
      if (log_probs.at(t, k) > log_probs.at(t, arg)) arg = k;
    }
    best[t] = static_cast<int>(arg);
  }
  return collapse(best);
}

// ---- prefix scoring -----------------------------------------------------------

PrefixScorer::PrefixScorer(const ad::Array& log_probs) : lp_(&log_probs), frames_(log_probs.rows()) {}

PrefixScorer::State PrefixScorer::initial() const {
  State s;
  s.r_nonblank.assign(frames_, kLogZero);
  s.r_blank.assign(frames_, kLogZero);
  double acc = 0.0;
  for (std::size_t t = 0; t < frames_; ++t) {
    acc += lp_->at(t, kBlank);
    s.r_blank[t] = acc;
  }
  s.score = 0.0;
  return s;
}

double PrefixScorer::extension_score(const State& g, int c) const {
  const auto& lp = *lp_;
  const std::size_t T = frames_;
  if (c == kEos) return log_add(g.r_nonblank[T - 1], g.r_blank[T - 1]);
  const bool repeat = !g.prefix.empty() && g.prefix.back() == c;
  double r_n = g.prefix.empty() ? lp.at(0, c) : kLogZero;
  double psi = r_n;
  for (std::size_t t = 1; t < T; ++t) {
    const double phi = repeat ? g.r_blank[t - 1] : log_add(g.r_blank[t - 1], g.r_nonblank[t - 1]);
    const double emit = lp.at(t, c);
    r_n = log_add(r_n, phi) + emit;
    psi = log_add(psi, phi + emit);
  }
  return std::max(psi, kLogZero);
}

PrefixScorer::State PrefixScorer::extend(const State& g, int c) const {
  const auto& lp = *lp_;
  const std::size_t T = frames_;
  State h;
  h.prefix = g.prefix;
  h.prefix.push_back(c);
  if (c == kEos) {
    h.score = extension_score(g, c);
    return h;
  }
  const bool repeat = !g.prefix.empty() && g.prefix.back() == c;
  h.r_nonblank.assign(T, kLogZero);
  h.r_blank.assign(T, kLogZero);
  h.r_nonblank[0] = g.prefix.empty() ? lp.at(0, c) : kLogZero;
  double psi = h.r_nonblank[0];
  for (std::size_t t = 1; t < T; ++t) {
    const double phi = repeat ? g.r_blank[t - 1] : log_add(g.r_blank[t - 1], g.r_nonblank[t - 1]);
    h.r_nonblank[t] = std::max(log_add(h.r_nonblank[t - 1], phi) + lp.at(t, c), kLogZero);
    h.r_blank[t] = std::max(log_add(h.r_blank[t - 1], h.r_nonblank[t - 1]) + lp.at(t, kBlank), kLogZero);
    psi = log_add(psi, phi + lp.at(t, c));
  }
  h.score = std::max(psi, kLogZero);
  return h;
}

// ---- beam search ------------------------------------------------------------------

Hypothesis prefix_beam_search(const ad::Array& log_probs, TokenScorer* scorer, double ctc_weight,
                              double token_weight, int beam, int max_len) {
  if (beam < 1) throw std::invalid_argument("beam size must be >= 1");
  if (max_len < 0) throw std::invalid_argument("max_len must be >= 0");
  const bool use_scorer = scorer != nullptr && token_weight != 0.0;
  const int C = static_cast<int>(log_probs.cols());
  PrefixScorer ctc(log_probs);

  struct Running {
    PrefixScorer::State state;
    double score;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double score;
  };

  std::vector<Running> running{{ctc.initial(), 0.0}};
  std::vector<Hypothesis> ended;

  auto token_scores = [&](const Running& h) {
    std::vector<double> d;
    if (use_scorer) {
      Tokens prefix{kBos};
      prefix.insert(prefix.end(), h.state.prefix.begin(), h.state.prefix.end());
      d = scorer->next_log_probs(prefix);
    }
    return d;
  };

  for (int step = 0; step < max_len && !running.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < running.size(); ++i) {
      const auto& h = running[i];
      const auto dec = token_scores(h);
      auto push = [&](int c) {
        double s = h.score + ctc_weight * (ctc.extension_score(h.state, c) - h.state.score);
        if (use_scorer) s += token_weight * dec[c];
        cands.push_back({i, c, s});
      };
      push(kEos);
      for (int c = kFirstSymbol; c < C; ++c) push(c);
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (cands.size() > static_cast<std::size_t>(beam)) cands.resize(beam);
    std::vector<Running> next;
    for (const auto& c : cands) {
      const auto& parent = running[c.parent].state;
      if (c.token == kEos) {
        ended.push_back({parent.prefix, c.score, false});
      } else {
        next.push_back({ctc.extend(parent, c.token), c.score});
      }
    }
    running = std::move(next);
  }
  for (const auto& h : running) {
    double s = h.score + ctc_weight * (ctc.extension_score(h.state, kEos) - h.state.score);
    if (use_scorer) s += token_weight * token_scores(h)[kEos];
    ended.push_back({h.state.prefix, s, true});
  }
  auto best = std::max_element(ended.begin(), ended.end(),
                               [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
  return *best;
}

Hypothesis monotone_beam_search(const ad::Array& log_probs, TokenScorer* scorer, double ctc_weight,
                                double token_weight, int beam, int max_len) {
  Hypothesis best = prefix_beam_search(log_probs, scorer, ctc_weight, token_weight, 1, max_len);
  for (int b = 2; b <= beam; ++b) {
    Hypothesis h = prefix_beam_search(log_probs, scorer, ctc_weight, token_weight, b, max_len);
    if (h.score > best.score) best = std::move(h);
  }
  return best;
}

}  // namespace uocl::ctc
