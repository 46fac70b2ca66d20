#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "uocl/metrics.hpp"

using namespace uocl;
using namespace uocl::metrics;

namespace {

// Plain recursive Levenshtein over (S, D, I) triples, minimal total; used as
// an oracle for the DP's distance.
std::size_t lev(std::span<const int> a, std::span<const int> b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::size_t sub = lev(a.subspan(1), b.subspan(1)) + (a[0] != b[0]);
  return std::min({sub, lev(a.subspan(1), b) + 1, lev(a, b.subspan(1)) + 1});
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(3, 2 + alphabet);
  Tokens t(len(rng));
  for (auto& k : t) k = sym(rng);
  return t;
}

// Two-sided p by enumerating all 2^n sign assignments of the (average) ranks.
double brute_wilcoxon(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double w = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) w += rank[i];
  }
  double lo = 0, hi = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    lo += s <= w + 1e-9;
    hi += s >= w - 1e-9;
  }
  (void)total;
  return std::min(1.0, 2.0 * std::min(lo, hi) / std::ldexp(1.0, static_cast<int>(n)));
}

}  // namespace

TEST_CASE("edit distance classics") {
  // kitten -> sitting: 2 substitutions and 1 insertion.
  const Tokens kitten{10, 8, 19, 19, 4, 13}, sitting{18, 8, 19, 19, 8, 13, 6};
  const auto c = edit_distance(kitten, sitting);
  CHECK(c.total() == 3);
  CHECK(c.substitutions == 2);
  CHECK(c.insertions == 1);
  CHECK(c.deletions == 0);
  CHECK(edit_distance(Tokens{}, Tokens{3, 4}) == EditCounts{0, 0, 2});
  CHECK(edit_distance(Tokens{3, 4}, Tokens{}) == EditCounts{0, 2, 0});
  CHECK(edit_distance(Tokens{3, 4, 5}, Tokens{3, 4, 5}).total() == 0);
}

TEST_CASE("edit distance matches recursive oracle on random pairs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_tokens(rng, 7, 3), b = random_tokens(rng, 7, 3);
    const auto c = edit_distance(a, b);
    REQUIRE(c.total() == lev(a, b));
    // Any script: |hyp| = |ref| − D + I.
    CHECK(b.size() + c.deletions == a.size() + c.insertions);
    // Swapping roles swaps deletions and insertions in total count.
    const auto r = edit_distance(b, a);
    CHECK(r.total() == c.total());
    CHECK(r.deletions + r.substitutions + r.insertions == c.total());
    CHECK(static_cast<long>(r.insertions) - static_cast<long>(r.deletions) ==
          static_cast<long>(c.deletions) - static_cast<long>(c.insertions));
  }
}

TEST_CASE("wer formula") {
  const std::vector<Tokens> refs{{3, 4, 5, 6}, {7, 8}}, hyps{{3, 4, 6}, {7, 9, 9}};
  // 1 deletion; 1 substitution + 1 insertion -> 3 / 6.
  CHECK(wer(refs, hyps) == doctest::Approx(50.0));
  CHECK(wer(std::vector<Tokens>{{}}, std::vector<Tokens>{{}}) == 0.0);
  CHECK_THROWS_AS(wer(std::vector<Tokens>{{}}, std::vector<Tokens>{{3}}), std::invalid_argument);
  CHECK_THROWS_AS(wer(refs, std::vector<Tokens>{{3}}), std::invalid_argument);
}

TEST_CASE("report averages and CSV") {
  EvalReport r;
  r.tasks.push_back({"T0", 0, {1, 0}, {5, 5}, {1, 2}, 0});
  r.tasks.push_back({"T1", 0, {3}, {10}, {3}, 0});
  r.finalize();
  CHECK(r.tasks[0].wer == doctest::Approx(10.0));
  CHECK(r.tasks[1].wer == doctest::Approx(30.0));
  CHECK(r.average_wer == doctest::Approx(20.0));
  CHECK(r.pooled_wer == doctest::Approx(20.0));
  CHECK(csv_header(r) == "name,T0,T1,Avg.");
  CHECK(csv_row(r, "ft") == "ft,10.00,30.00,20.00");
  CHECK(r.all_errors() == std::vector<std::uint32_t>{1, 0, 3});
  const auto back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.average_wer == r.average_wer);
  CHECK(back.tasks[1].utterance_ids == r.tasks[1].utterance_ids);
  CHECK_THROWS_AS(r.task("T9"), std::out_of_range);
}

TEST_CASE("wilcoxon exact p matches 2^n enumeration") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> small(0, 4);
  std::uniform_int_distribution<std::size_t> len(1, 10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = small(rng);  // small integers force ties and zeros
      b[i] = small(rng);
    }
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.p_value == doctest::Approx(brute_wilcoxon(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon known case") {
  // Six positive differences: W+ = 21, two-sided p = 2/64.
  const std::vector<double> a{2, 3, 4, 5, 6, 7}, b{1, 1, 1, 1, 1, 1};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.statistic == 21.0);
  CHECK(r.n == 6);
  CHECK(r.p_value == doctest::Approx(0.03125));
  CHECK(r.stars == Stars::one);
  // Symmetry.
  CHECK(wilcoxon_signed_rank(b, a).p_value == doctest::Approx(r.p_value));
  // All ties: nothing to test.
  CHECK(wilcoxon_signed_rank(a, a).p_value == 1.0);
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("wilcoxon normal approximation tracks the exact null") {
  // Distinct |d| = 1..n with random signs; exact tail by subset-sum counting.
  std::mt19937_64 rng(3);
  std::bernoulli_distribution pos(0.62);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30;
    std::vector<double> a(n), b(n, 0.0);
    int w = 0;
    for (int i = 0; i < n; ++i) {
      a[i] = pos(rng) ? i + 1 : -(i + 1);
      if (a[i] > 0) w += i + 1;
    }
    const int total = n * (n + 1) / 2;
    std::vector<double> ways(total + 1, 0.0);
    ways[0] = 1.0;
    for (int r = 1; r <= n; ++r)
      for (int s = total; s >= r; --s) ways[s] += ways[s - r];
    double lo = 0, hi = 0;
    for (int s = 0; s <= total; ++s) {
      if (s <= w) lo += ways[s];
      if (s >= w) hi += ways[s];
    }
    const double exact = std::min(1.0, 2.0 * std::min(lo, hi) / std::ldexp(1.0, n));
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK_FALSE(r.exact);
    CHECK(r.statistic == w);
    CHECK(std::abs(r.p_value - exact) < 0.01);
  }
}

TEST_CASE("star mapping") {
  CHECK(stars_for(0.2) == Stars::ns);
  CHECK(stars_for(0.05) == Stars::ns);
  CHECK(stars_for(0.049) == Stars::one);
  CHECK(stars_for(0.0099) == Stars::two);
  CHECK(stars_for(0.0009) == Stars::three);
  CHECK(to_string(Stars::three) == "***");
}
