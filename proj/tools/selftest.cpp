#include "selftest.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <vector>

#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/selection.hpp"
#include "ouroboros/telemetry.hpp"
#include "selftest_fixture.hpp"

using namespace ouroboros;

namespace {

struct Suite {
  const char* name;
  std::function<std::string()> run;  // empty string = pass
};

std::string genome_fuzz(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> lr(Genome::kLrMicrosMin, Genome::kLrMicrosMax);
  std::uniform_int_distribution<int> hid(Genome::kHidMin, Genome::kHidMax);
  std::uniform_int_distribution<int> small(0, 64);
  std::uniform_int_distribution<int> pos(0, static_cast<int>(Genome::kTextLength) - 1);
  for (int i = 0; i < 2000; ++i) {
    Genome g{lr(rng), hid(rng), small(rng), small(rng)};
    const std::string text = serialize_genome(g);
    if (text.size() != Genome::kTextLength) return "serialized length " + std::to_string(text.size());
    if (!(parse_genome(text) == g)) return "round trip changed " + text;
    Genome child = mutate_genome(g, rng, MutationScales{});
    if (!child.legal() || serialize_genome(child).size() != Genome::kTextLength) return "mutant not legal";

    std::string bad = text;
    bad[static_cast<std::size_t>(pos(rng))] = 'X';
    try {
      parse_genome(bad);
      return "accepted corrupted text";
    } catch (const ParseError&) {
    }
  }
  return {};
}

std::string adam_scalar() {
  std::vector<double> theta{1.0};
  std::vector<double> grad{2.0};
  AdamState state = AdamState::fresh(1);
  adam_step(theta, grad, state, 0.001);
  if (std::abs(theta[0] - 0.999) > 1e-9) return "first step gave " + std::to_string(theta[0]);

  theta = {1.0};
  state = AdamState::fresh(1);
  for (int i = 0; i < 200; ++i) {
    grad[0] = 2.0 * theta[0];
    adam_step(theta, grad, state, 0.1);
  }
  if (!(std::abs(theta[0]) < 0.05)) return "quadratic ended at " + std::to_string(theta[0]);
  return {};
}

std::string admit_table() {
  const std::size_t k = 4;
  for (auto policy : {EvictionPolicy::KillOldest, EvictionPolicy::RejectNew}) {
    for (std::size_t live = 0; live <= k; ++live) {
      for (bool closing : {false, true}) {
        AdmitDecision want = closing          ? AdmitDecision::Rejected
                             : live < k       ? AdmitDecision::Admitted
                             : policy == EvictionPolicy::KillOldest ? AdmitDecision::AdmittedWithEviction
                                                                    : AdmitDecision::Rejected;
        if (admit_decision(live, k, closing, policy) != want)
          return "live " + std::to_string(live) + " closing " + std::to_string(closing);
      }
    }
  }
  Registry reg;
  for (OrganismId id = 1; id <= 2; ++id) reg.admit(id, -1, 2, false, EvictionPolicy::KillOldest);
  auto r = reg.admit(3, -1, 2, false, EvictionPolicy::KillOldest);
  if (r.decision != AdmitDecision::AdmittedWithEviction || !r.evicted || r.evicted->organism != 1)
    return "registry did not evict the oldest";
  return {};
}

std::string fixture_replay(const SelftestArgs& args) {
  const std::string text = args.fixture.empty() ? std::string(fixture::kSelftestLog) : read_text_file(args.fixture);
  std::vector<Event> events;
  try {
    events = parse_events(text);
  } catch (const std::exception& err) {
    return std::string("unparseable: ") + err.what();
  }
  if (events.empty()) return "empty log";
  auto report = replay_validate(events, args.capacity);
  if (!report.valid())
    return "seq " + std::to_string(report.violation->seq) + " " + std::string(to_string(report.violation->kind)) +
           ": " + report.violation->detail;
  if (!report.ended) return "log has no extinction or shutdown";
  return {};
}

}  // namespace

int run_selftest(const SelftestArgs& args) {
  std::cout << "config: selftest --capacity " << args.capacity << " --seed " << args.seed;
  if (!args.fixture.empty()) std::cout << " --fixture " << args.fixture;
  std::cout << std::endl;

  const std::vector<Suite> suites{
      {"genome-roundtrip-fuzz", [&] { return genome_fuzz(args.seed); }},
      {"adam-scalar", adam_scalar},
      {"admit-policy-table", admit_table},
      {"fixture-log-replay", [&] { return fixture_replay(args); }},
  };
  int failures = 0;
  for (const auto& suite : suites) {
    const auto start = std::chrono::steady_clock::now();
    std::string problem;
    try {
      problem = suite.run();
    } catch (const std::exception& err) {
      problem = std::string("exception: ") + err.what();
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    std::cout << (problem.empty() ? "PASS " : "FAIL ") << suite.name << " (" << static_cast<long>(ms) << " ms)";
    if (!problem.empty()) std::cout << ": " << problem;
    std::cout << "\n";
    if (!problem.empty()) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
