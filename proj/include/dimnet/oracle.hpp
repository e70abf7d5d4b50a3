#pragma once

// Closed-form error rates for covariate-only matching and verification with
// a balanced binary covariate (fixed 0.5 prior), plus Monte Carlo simulators
// that play the corresponding strategies trial by trial. Classifier errors
// are independent symmetric flips with rates e_f (gallery side) and e_v
// (probe side). Simulators split work into fixed-size chunks with derived
// seeds; results are combined in chunk order, so any thread count produces
// bit-identical output.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "dimnet/rng.hpp"

namespace dimnet {

struct GenderErrorRates {
  double e_f = 0.0;
  double e_v = 0.0;

  void validate() const {
    if (e_f < 0.0 || e_f > 1.0 || e_v < 0.0 || e_v > 1.0)
      throw std::invalid_argument("GenderErrorRates: rates must lie in [0,1]");
  }
};

struct StrategyParams {
  double P = 0.0;
  double Q = 0.0;  // verification only
};

struct OracleResult {
  StrategyParams optimal_strategy;
  double error = 0.0;
  double alpha = 0.0;
};

// --- 1:2 matching ----------------------------------------------------------

inline double match2_error_perfect() { return 0.25; }

// Error of the 1:2 strategy at an arbitrary P: when the two gallery items
// are perceived as different genders, pick the perceived-probe-gender one
// with probability P; when perceived equal, pick uniformly.
inline double match2_error_at(GenderErrorRates e, double P) {
  e.validate();
  if (P < 0.0 || P > 1.0) throw std::invalid_argument("match2_error_at: P outside [0,1]");
  const double constant = 2.0 * e.e_f * e.e_v - e.e_v - e.e_f + 1.0;
  const double p_coef = 2.0 * e.e_f + 2.0 * e.e_v - 4.0 * e.e_f * e.e_v - 1.0;
  return 0.25 + 0.5 * (constant + P * p_coef);
}

inline OracleResult match2_error_imperfect(GenderErrorRates e) {
  e.validate();
  OracleResult out;
  out.optimal_strategy.P = (e.e_f + e.e_v < 2.0 * e.e_f * e.e_v + 0.5) ? 1.0 : 0.0;
  out.error = match2_error_at(e, out.optimal_strategy.P);
  out.alpha = e.e_v * e.e_f + (1.0 - e.e_v) * (1.0 - e.e_f);
  return out;
}

// --- 1:N matching ----------------------------------------------------------

inline double matchN_error_perfect(int n) {
  if (n < 2) throw std::invalid_argument("matchN_error_perfect: N must be >= 2");
  return 1.0 - (2.0 - std::pow(0.5, n - 1)) / static_cast<double>(n);
}

// Probability that the probe-side and matched-gallery-side classifiers
// assign the same gender.
inline double alpha(GenderErrorRates e) {
  e.validate();
  return e.e_v * e.e_f + (1.0 - e.e_v) * (1.0 - e.e_f);
}

inline double matchN_error_at(GenderErrorRates e, double P, int n) {
  if (n < 2) throw std::invalid_argument("matchN_error_at: N must be >= 2");
  if (P < 0.0 || P > 1.0) throw std::invalid_argument("matchN_error_at: P outside [0,1]");
  const double a = alpha(e);
  const double correct_gender = P * a + (1.0 - P) * (1.0 - a);
  return 1.0 - correct_gender * (2.0 - std::pow(0.5, n - 1)) / static_cast<double>(n);
}

// Optimal stochastic policy: target the perceived probe gender always when
// alpha > 0.5, never otherwise. At alpha = 0.5 both choices coincide; P = 1
// by convention.
inline OracleResult matchN_error_imperfect(GenderErrorRates e, int n) {
  OracleResult out;
  out.alpha = alpha(e);
  out.optimal_strategy.P = out.alpha >= 0.5 ? 1.0 : 0.0;
  out.error = matchN_error_at(e, out.optimal_strategy.P, n);
  return out;
}

// --- verification -----------------------------------------------------------

struct VerifyRates {
  double f_a = 0.0;
  double f_r = 0.0;
};

// Closed-form rates of the (P, Q) accept policy: accept perceived
// gender-matched pairs with probability P, perceived mismatched ones with
// probability Q. Negatives are gender-matched half the time.
inline VerifyRates verify_rates_at(GenderErrorRates e, double P, double Q) {
  e.validate();
  if (P < 0.0 || P > 1.0 || Q < 0.0 || Q > 1.0)
    throw std::invalid_argument("verify_rates_at: P, Q must lie in [0,1]");
  const double a = alpha(e);
  VerifyRates r;
  r.f_r = 1.0 - a * P - (1.0 - a) * Q;
  r.f_a = 0.5 * (P + Q);
  return r;
}

inline OracleResult verify_eer_perfect() {
  OracleResult out;
  out.optimal_strategy = {2.0 / 3.0, 0.0};
  out.error = 1.0 / 3.0;
  out.alpha = 1.0;
  return out;
}

inline OracleResult verify_eer_imperfect(GenderErrorRates e) {
  OracleResult out;
  out.alpha = alpha(e);
  if (out.alpha >= 0.5) {  // alpha = 0.5 reported on this branch; both agree
    out.optimal_strategy = {2.0 / (1.0 + 2.0 * out.alpha), 0.0};
    out.error = 1.0 / (1.0 + 2.0 * out.alpha);
  } else {
    out.optimal_strategy = {0.0, 2.0 / (3.0 - 2.0 * out.alpha)};
    out.error = 1.0 / (3.0 - 2.0 * out.alpha);
  }
  return out;
}

// --- Monte Carlo simulators --------------------------------------------------

namespace detail {

constexpr std::uint64_t kChunkTrials = 1 << 16;

// Runs per_chunk(chunk_seed, n_trials) over ceil(trials / kChunkTrials)
// chunks, optionally on several threads, and returns per-chunk results in
// chunk order.
template <typename Result, typename PerChunk>
std::vector<Result> run_chunked(std::uint64_t trials, std::uint64_t seed, int threads,
                                PerChunk per_chunk) {
  const std::uint64_t n_chunks = (trials + kChunkTrials - 1) / kChunkTrials;
  std::vector<Result> results(n_chunks);
  auto worker = [&](std::uint64_t first, std::uint64_t step) {
    for (std::uint64_t c = first; c < n_chunks; c += step) {
      const std::uint64_t begin = c * kChunkTrials;
      const std::uint64_t count = std::min<std::uint64_t>(kChunkTrials, trials - begin);
      results[c] = per_chunk(derive_seed(seed, c), count);
    }
  };
  if (threads <= 1 || n_chunks <= 1) {
    worker(0, 1);
  } else {
    const int n_workers = static_cast<int>(
        std::min<std::uint64_t>(static_cast<std::uint64_t>(threads), n_chunks));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w)
      pool.emplace_back(worker, static_cast<std::uint64_t>(w),
                        static_cast<std::uint64_t>(n_workers));
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace detail

inline double simulate_match2(GenderErrorRates e, double P, std::uint64_t trials,
                              std::uint64_t seed, int threads = 1) {
  e.validate();
  if (trials < 1) throw std::invalid_argument("simulate_match2: trials must be >= 1");
  auto chunk = [&](std::uint64_t chunk_seed, std::uint64_t count) -> std::uint64_t {
    Rng rng(chunk_seed);
    std::uint64_t errors = 0;
    for (std::uint64_t t = 0; t < count; ++t) {
      const bool probe_true = rng.bernoulli(0.5);
      const bool imposter_true = rng.bernoulli(0.5);
      const bool probe_seen = probe_true ^ rng.bernoulli(e.e_v);
      const bool match_seen = probe_true ^ rng.bernoulli(e.e_f);
      const bool imposter_seen = imposter_true ^ rng.bernoulli(e.e_f);
      bool picked_match;
      if (match_seen != imposter_seen) {
        const bool pick_same = rng.bernoulli(P);
        const bool chosen_gender = pick_same ? probe_seen : !probe_seen;
        picked_match = (match_seen == chosen_gender);
      } else {
        picked_match = rng.bernoulli(0.5);
      }
      if (!picked_match) ++errors;
    }
    return errors;
  };
  const auto counts = detail::run_chunked<std::uint64_t>(trials, seed, threads, chunk);
  std::uint64_t errors = 0;
  for (std::uint64_t c : counts) errors += c;
  return static_cast<double>(errors) / static_cast<double>(trials);
}

// Imposter genders stay fair coins regardless of classifier error. If no
// gallery entry carries the targeted perceived gender, or the match is not
// among them, the trial is an error (picking the wrong gender is never
// correct).
inline double simulate_matchN(GenderErrorRates e, double P, int n, std::uint64_t trials,
                              std::uint64_t seed, int threads = 1) {
  e.validate();
  if (n < 2) throw std::invalid_argument("simulate_matchN: N must be >= 2");
  if (trials < 1) throw std::invalid_argument("simulate_matchN: trials must be >= 1");
  auto chunk = [&](std::uint64_t chunk_seed, std::uint64_t count) -> std::uint64_t {
    Rng rng(chunk_seed);
    std::uint64_t errors = 0;
    for (std::uint64_t t = 0; t < count; ++t) {
      const bool probe_true = rng.bernoulli(0.5);
      const bool probe_seen = probe_true ^ rng.bernoulli(e.e_v);
      const bool match_seen = probe_true ^ rng.bernoulli(e.e_f);
      std::uint64_t same_as_target = 0;
      const bool target = rng.bernoulli(P) ? probe_seen : !probe_seen;
      if (match_seen == target) ++same_as_target;
      for (int k = 0; k < n - 1; ++k) {
        const bool imposter_true = rng.bernoulli(0.5);
        const bool imposter_seen = imposter_true ^ rng.bernoulli(e.e_f);
        if (imposter_seen == target) ++same_as_target;
      }
      bool correct = false;
      if (match_seen == target && same_as_target > 0)
        correct = rng.below(same_as_target) == 0;  // match occupies slot 0
      if (!correct) ++errors;
    }
    return errors;
  };
  const auto counts = detail::run_chunked<std::uint64_t>(trials, seed, threads, chunk);
  std::uint64_t errors = 0;
  for (std::uint64_t c : counts) errors += c;
  return static_cast<double>(errors) / static_cast<double>(trials);
}

struct VerifySimResult {
  double f_a = 0.0;
  double f_r = 0.0;
  double balanced_error = 0.0;
};

// pairs_per_class positive pairs and the same number of negatives; negatives
// draw both genders independently, so half are gender-matched on average.
inline VerifySimResult simulate_verification(GenderErrorRates e, double P, double Q,
                                             std::uint64_t pairs_per_class, std::uint64_t seed,
                                             int threads = 1) {
  e.validate();
  if (pairs_per_class < 1)
    throw std::invalid_argument("simulate_verification: need at least one pair per class");
  struct Counts {
    std::uint64_t false_accepts = 0;
    std::uint64_t false_rejects = 0;
  };
  auto chunk = [&](std::uint64_t chunk_seed, std::uint64_t count) -> Counts {
    Rng rng(chunk_seed);
    Counts c;
    for (std::uint64_t t = 0; t < count; ++t) {
      {  // positive pair: genders equal by construction
        const bool voice_true = rng.bernoulli(0.5);
        const bool voice_seen = voice_true ^ rng.bernoulli(e.e_v);
        const bool face_seen = voice_true ^ rng.bernoulli(e.e_f);
        const bool accept = rng.bernoulli(voice_seen == face_seen ? P : Q);
        if (!accept) ++c.false_rejects;
      }
      {  // negative pair: independent genders
        const bool voice_true = rng.bernoulli(0.5);
        const bool face_true = rng.bernoulli(0.5);
        const bool voice_seen = voice_true ^ rng.bernoulli(e.e_v);
        const bool face_seen = face_true ^ rng.bernoulli(e.e_f);
        const bool accept = rng.bernoulli(voice_seen == face_seen ? P : Q);
        if (accept) ++c.false_accepts;
      }
    }
    return c;
  };
  const auto counts = detail::run_chunked<Counts>(pairs_per_class, seed, threads, chunk);
  std::uint64_t fa = 0, fr = 0;
  for (const auto& c : counts) {
    fa += c.false_accepts;
    fr += c.false_rejects;
  }
  VerifySimResult out;
  out.f_a = static_cast<double>(fa) / static_cast<double>(pairs_per_class);
  out.f_r = static_cast<double>(fr) / static_cast<double>(pairs_per_class);
  out.balanced_error = 0.5 * (out.f_a + out.f_r);
  return out;
}

}  // namespace dimnet
