#pragma once

// Pairwise-preference tournaments over task outputs. A win is worth 2
// points and a tie 1 point to each side.
//
// Non-cleaned mode plays every pair among the non-cleaned candidates
// (reference output plus each noise level). Cleaned mode plays every cleaned
// candidate against every non-cleaned one; only those cross pairs are judged.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "endow/corpus.hpp"
#include "endow/error.hpp"
#include "endow/random.hpp"

namespace endow {

enum class Verdict { kFirst, kSecond, kTie };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kFirst: return "1";
    case Verdict::kSecond: return "2";
    case Verdict::kTie: return "tie";
  }
  return "?";
}

inline Verdict parse_verdict(std::string_view s) {
  if (s == "1") return Verdict::kFirst;
  if (s == "2") return Verdict::kSecond;
  if (s == "tie") return Verdict::kTie;
  throw FormatError("invalid verdict '" + std::string(s) + "' (expected 1, 2 or tie)");
}

struct JudgeQuery {
  std::string reference;
  std::string candidate_1;
  std::string candidate_2;
  std::optional<std::string> query;
};

/// Throws on failure; the pair is then left unresolved.
using Judge = std::function<Verdict(const JudgeQuery&)>;

enum class TournamentMode { kNonCleaned, kCleaned };

struct Candidate {
  VariantKey variant;
  std::string output;
};

struct PairResult {
  std::size_t a = 0;  // participant indices
  std::size_t b = 0;
  bool swapped = false;  // true when b was presented as candidate 1
  std::optional<Verdict> verdict;  // as returned for the presented order
  std::string error;
};

struct Tournament {
  std::string instance_id;
  TournamentMode mode = TournamentMode::kNonCleaned;
  std::vector<Candidate> participants;
  std::vector<PairResult> pairs;
  std::vector<double> points;  // parallel to participants
  std::vector<std::string> warnings;

  double total_points() const {
    double t = 0.0;
    for (double p : points) t += p;
    return t;
  }
  std::size_t resolved_pairs() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.verdict.has_value();
    return n;
  }
  double points_of(const VariantKey& v) const {
    for (std::size_t i = 0; i < participants.size(); ++i)
      if (participants[i].variant == v) return points[i];
    throw NotFoundError("variant " + v.to_string() + " not in tournament " + instance_id);
  }
};

struct TournamentInput {
  std::string instance_id;
  std::string reference;
  std::optional<std::string> query;
  std::vector<Candidate> non_cleaned;
  std::vector<Candidate> cleaned;  // cleaned mode only
};

/// Presentation order per pair comes from a sub-seed of `seed` labelled with
/// the instance and both variant keys, so it does not depend on scheduling.
inline Tournament run_tournament(TournamentMode mode, const TournamentInput& in, const Judge& judge,
                                 std::uint64_t seed) {
  Tournament t;
  t.instance_id = in.instance_id;
  t.mode = mode;
  if (in.non_cleaned.size() < (mode == TournamentMode::kNonCleaned ? 2u : 1u))
    throw Error("tournament " + in.instance_id + ": too few non-cleaned candidates");
  if (mode == TournamentMode::kCleaned && in.cleaned.empty())
    throw Error("tournament " + in.instance_id + ": cleaned mode needs at least one cleaned candidate");

  std::vector<std::pair<std::size_t, std::size_t>> schedule;
  if (mode == TournamentMode::kNonCleaned) {
    t.participants = in.non_cleaned;
    for (std::size_t a = 0; a < t.participants.size(); ++a)
      for (std::size_t b = a + 1; b < t.participants.size(); ++b) schedule.emplace_back(a, b);
  } else {
    t.participants = in.cleaned;
    t.participants.insert(t.participants.end(), in.non_cleaned.begin(), in.non_cleaned.end());
    for (std::size_t a = 0; a < in.cleaned.size(); ++a)
      for (std::size_t b = 0; b < in.non_cleaned.size(); ++b) schedule.emplace_back(a, in.cleaned.size() + b);
  }
  t.points.assign(t.participants.size(), 0.0);

  for (auto [a, b] : schedule) {
    PairResult pr{a, b, false, std::nullopt, {}};
    Rng rng(sub_seed(seed, "judge/" + in.instance_id + "/" + t.participants[a].variant.to_string() + "/" +
                               t.participants[b].variant.to_string()));
    pr.swapped = unit_uniform(rng) < 0.5;
    const auto& first = t.participants[pr.swapped ? b : a];
    const auto& second = t.participants[pr.swapped ? a : b];
    try {
      pr.verdict = judge(JudgeQuery{in.reference, first.output, second.output, in.query});
    } catch (const std::exception& e) {
      pr.error = e.what();
      t.warnings.push_back("instance " + in.instance_id + ": pair " + t.participants[a].variant.to_string() + " vs " +
                           t.participants[b].variant.to_string() + " unresolved: " + e.what());
    }
    if (pr.verdict) {
      if (*pr.verdict == Verdict::kTie) {
        t.points[a] += 1;
        t.points[b] += 1;
      } else {
        const bool first_won = *pr.verdict == Verdict::kFirst;
        t.points[(first_won != pr.swapped) ? a : b] += 2;
      }
    }
    t.pairs.push_back(std::move(pr));
  }
  return t;
}

/// Adds the self-tie point each non-cleaned candidate would earn if it were
/// also compared against itself, putting non-cleaned means on the cleaned
/// tournament's scale.
inline std::map<VariantKey, double> shift_noncleaned_baseline(const std::map<VariantKey, double>& means) {
  auto out = means;
  for (auto& [k, v] : out) v += 1.0;
  return out;
}

}  // namespace endow
