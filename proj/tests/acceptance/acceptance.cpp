// End-to-end acceptance run. One line per criterion; exit status is nonzero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.
// Lines are also written to acceptance_runs/summary.txt.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/replicator.hpp"
#include "ouroboros/selection.hpp"
#include "ouroboros/telemetry.hpp"

using namespace ouroboros;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// tolerances
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 5.0;
constexpr std::uint64_t kMaturityEpochs = 200000;
constexpr double kMaturitySeconds = 15 * 60.0;
constexpr int kMaturityNeeded = 4;
constexpr double kTrendRatio = 0.7;
constexpr int kTrendNeeded = 4;
constexpr double kTrendSeconds = 30 * 60.0;
constexpr std::size_t kDriftWindow = 16;
constexpr double kAncestorLr = 0.001;
constexpr int kDriftNeeded = 3;
constexpr int kSafetyRuns = 20;
constexpr std::uint64_t kProcessSpawns = 12;
constexpr double kProcessSeconds = 20 * 60.0;

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

fs::path work_dir() {
  static const fs::path dir = fs::current_path() / "acceptance_runs";
  return dir;
}

fs::path fresh(const std::string& name) {
  const auto dir = work_dir() / name;
  fs::remove_all(dir);
  return dir;
}

NetDims small_net() {
  NetDims d;
  d.np = 5;
  d.hid = 4;
  d.aux = 1;
  d.noi = 1;
  return d;
}

// fast-maturing ancestor for the many-run checks
PopulationConfig cheap_population(std::uint64_t seed) {
  PopulationConfig cfg;
  cfg.capacity = 4;
  cfg.budget = 12;
  cfg.seed = seed;
  cfg.ancestor = Genome::from_values(0.02, 8, 2, 2);
  cfg.training.max_epochs = 5000;
  return cfg;
}

PopulationConfig trend_population(std::uint64_t seed) {
  PopulationConfig cfg;
  cfg.capacity = 8;
  cfg.budget = 120;
  cfg.seed = seed;
  cfg.mutation = MutationScales{0.002, 5};
  cfg.eviction = EvictionPolicy::KillOldest;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  std::ostringstream os;
  double worst = 0.0, slowest = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto start = Clock::now();
    const auto report = gradient_check(small_net(), 6, seed, kGradStep);
    slowest = std::max(slowest, seconds_since(start));
    worst = std::max(worst, report.max_rel_error);
    if (seed == 1) os << report.parameters << " params; ";
  }
  os << "max rel error " << num(worst) << " over seeds 1-10 (< " << kGradTolerance << "), slowest check "
     << num(slowest, 3) << " s (< " << kGradSeconds << ")";
  return {worst < kGradTolerance && slowest < kGradSeconds, os.str()};
}

Outcome quine_maturity() {
  int matured = 0;
  bool in_time = true;
  std::ostringstream os;
  for (std::uint64_t seed : kSeeds) {
    OrganismConfig cfg = OrganismConfig::for_genome(Genome::ancestor(), seed);
    cfg.training.max_epochs = kMaturityEpochs;
    const auto start = Clock::now();
    std::string result;
    try {
      const Maturity m = run_to_maturity(cfg);
      if (m.generated == serialize_genome(Genome::ancestor())) {
        ++matured;
        result = std::to_string(m.epochs) + " epochs";
      } else {
        result = "wrong text";
      }
    } catch (const Sterile& s) {
      result = "sterile at " + std::to_string(s.epochs());
    }
    const double secs = seconds_since(start);
    in_time = in_time && secs < kMaturitySeconds;
    os << "seed " << seed << ": " << result << " (" << num(secs, 3) << " s); ";
  }
  os << matured << "/5 matured (need " << kMaturityNeeded << ")";
  return {matured >= kMaturityNeeded && in_time, os.str()};
}

struct TrendRuns {
  std::map<std::uint64_t, RunResult> runs;
  double seconds = 0.0;
};

const TrendRuns& trend_runs() {
  static const TrendRuns cached = [] {
    TrendRuns t;
    const auto start = Clock::now();
    for (std::uint64_t seed : kSeeds) {
      auto cfg = trend_population(seed);
      cfg.arena = fresh("trend_seed" + std::to_string(seed));
      t.runs[seed] = sim_run(cfg);
      std::cerr << "  trend seed " << seed << " done at " << num(seconds_since(start), 4) << " s\n";
    }
    t.seconds = seconds_since(start);
    return t;
  }();
  return cached;
}

Outcome evolutionary_trend() {
  const TrendRuns& t = trend_runs();
  int declining = 0;
  std::ostringstream os;
  for (const auto& [seed, run] : t.runs) {
    os << "seed " << seed << ": ";
    try {
      const SummaryStats s = summarize(run.events);
      os << "ratio " << num(s.quartile_ratio, 3) << " over " << s.matured.size() << " matured";
      if (s.quartile_ratio < kTrendRatio) ++declining;
    } catch (const InsufficientData&) {
      os << "too few matured";
    }
    os << "; ";
  }
  os << declining << "/5 below " << kTrendRatio << " (need " << kTrendNeeded << "), " << num(t.seconds, 4)
     << " s total (< " << kTrendSeconds << ")";
  return {declining >= kTrendNeeded && t.seconds < kTrendSeconds, os.str()};
}

Outcome learning_rate_drift() {
  int drifted = 0;
  std::ostringstream os;
  for (const auto& [seed, run] : trend_runs().runs) {
    std::vector<double> lrs;
    for (const Event& e : run.events)
      if (e.kind == EventKind::Maturity) lrs.push_back(e.genome->lr());
    os << "seed " << seed << ": ";
    if (lrs.size() < kDriftWindow) {
      os << "only " << lrs.size() << " matured; ";
      continue;
    }
    std::vector<double> last(lrs.end() - static_cast<std::ptrdiff_t>(kDriftWindow), lrs.end());
    std::sort(last.begin(), last.end());
    const double median = (last[kDriftWindow / 2 - 1] + last[kDriftWindow / 2]) / 2.0;
    os << "median lr " << num(median) << "; ";
    if (median > kAncestorLr) ++drifted;
  }
  os << drifted << "/5 above " << kAncestorLr << " (need " << kDriftNeeded << ")";
  return {drifted >= kDriftNeeded, os.str()};
}

// the admission policy may only see counts and flags
static_assert(std::is_same_v<decltype(&admit_decision),
                             AdmitDecision (*)(std::size_t, std::size_t, bool, EvictionPolicy)>);
static_assert(std::is_same_v<decltype(&Registry::admit),
                             Registry::AdmitResult (Registry::*)(OrganismId, pid_t, std::size_t, bool, EvictionPolicy)>);

Outcome selection_blindness() {
  const std::size_t k = 4;
  int rows = 0, wrong = 0;
  for (std::size_t live = 0; live <= k; ++live)
    for (bool closing : {false, true})
      for (EvictionPolicy policy : {EvictionPolicy::KillOldest, EvictionPolicy::RejectNew}) {
        AdmitDecision expect = AdmitDecision::Admitted;
        if (closing) expect = AdmitDecision::Rejected;
        else if (live == k) expect = policy == EvictionPolicy::KillOldest ? AdmitDecision::AdmittedWithEviction
                                                                          : AdmitDecision::Rejected;
        ++rows;
        if (admit_decision(live, k, closing, policy) != expect) ++wrong;

        // the registry applies the same table and always evicts its oldest entry,
        // whatever ids and pids it holds
        for (OrganismId base : {1u, 1000u}) {
          Registry reg;
          for (std::size_t i = 0; i < live; ++i)
            reg.admit(base + i, static_cast<pid_t>(7 * i + 3), k, false, EvictionPolicy::KillOldest);
          const auto r = reg.admit(base + live, 99, k, closing, policy);
          if (r.decision != expect) ++wrong;
          const bool evicts = expect == AdmitDecision::AdmittedWithEviction;
          if (evicts != r.evicted.has_value() || (evicts && r.evicted->organism != base)) ++wrong;
        }
      }
  return {wrong == 0, std::to_string(rows) + " table rows for sizes 0.." + std::to_string(k) + ", " +
                          std::to_string(wrong) + " mismatches; signature carries no loss or genome"};
}

// Tampered copies of a clean log. Each must be rejected.
std::vector<std::pair<std::string, std::vector<Event>>> tampered_copies(const std::vector<Event>& clean) {
  std::vector<std::pair<std::string, std::vector<Event>>> out;
  const auto find = [&](EventKind kind) {
    return std::find_if(clean.begin(), clean.end(), [&](const Event& e) { return e.kind == kind; });
  };
  const auto renumber = [](std::vector<Event>& ev) {
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i].seq = i + 1;
  };

  if (auto it = find(EventKind::Eviction); it != clean.end()) {
    auto ev = clean;
    ev.erase(ev.begin() + (it - clean.begin()));
    renumber(ev);
    out.emplace_back("capacity exceeded", ev);
  }
  if (auto it = find(EventKind::Replication); it != clean.end()) {
    auto ev = clean;
    ev.erase(ev.begin() + (it - clean.begin()));
    renumber(ev);
    out.emplace_back("replication dropped", ev);
  }
  for (std::size_t i = clean.size(); i-- > 0;)
    if (clean[i].kind == EventKind::Spawn && clean[i].parent) {
      auto ev = clean;
      ev[i].parent = 999999;
      out.emplace_back("orphan child", ev);
      auto dup = clean;
      dup.insert(dup.begin() + static_cast<std::ptrdiff_t>(i) + 1, clean[i]);
      renumber(dup);
      out.emplace_back("spawned twice", dup);
      break;
    }
  if (clean.size() >= 3) {
    auto ev = clean;
    std::swap(ev[1].seq, ev[2].seq);
    out.emplace_back("seq out of order", ev);
  }
  if (!clean.empty()) {
    auto ev = clean;
    Event extra = clean.front();
    extra.seq = clean.back().seq + 1;
    ev.push_back(extra);
    out.emplace_back("event after end", ev);
    if (clean.back().kind == EventKind::Shutdown) {
      auto off = clean;
      *off.back().alive += 1;
      out.emplace_back("alive miscounted", off);
    }
  }
  return out;
}

Outcome supervisor_safety() {
  int valid = 0, tampered = 0, caught = 0;
  std::set<std::string> kinds;
  for (int seed = 1; seed <= kSafetyRuns; ++seed) {
    const auto cfg = cheap_population(static_cast<std::uint64_t>(seed));
    const RunResult run = sim_run(cfg);
    const auto report = replay_validate(run.events, cfg.capacity);
    if (report.valid() && report.ended && report.max_population <= cfg.capacity &&
        report.replicated + report.evicted + report.sterile + report.alive == report.spawned)
      ++valid;
    for (const auto& [name, events] : tampered_copies(run.events)) {
      ++tampered;
      kinds.insert(name);
      if (!replay_validate(events, cfg.capacity).valid()) ++caught;
    }
  }
  std::ostringstream os;
  os << valid << "/" << kSafetyRuns << " sim logs valid; " << caught << "/" << tampered << " tampered logs caught ("
     << kinds.size() << " kinds)";
  return {valid == kSafetyRuns && caught == tampered && kinds.size() >= 6, os.str()};
}

Outcome determinism() {
  bool same = true;
  std::ostringstream os;
  for (std::uint64_t seed : {2u, 3u}) {
    auto cfg = cheap_population(seed);
    cfg.arena = fresh("determinism_a" + std::to_string(seed));
    sim_run(cfg);
    const auto a = read_text_file(cfg.arena / "events.log");
    cfg.arena = fresh("determinism_b" + std::to_string(seed));
    sim_run(cfg);
    const auto b = read_text_file(cfg.arena / "events.log");
    same = same && a == b && !a.empty();
    os << "seed " << seed << ": " << a.size() << " bytes " << (a == b ? "identical" : "DIFFER") << (seed == 2 ? "; " : "");
  }
  return {same, os.str()};
}

Outcome process_smoke() {
  PopulationConfig cfg;
  cfg.mode = ExecutionMode::Process;
  cfg.capacity = 4;
  cfg.budget = kProcessSpawns;
  cfg.seed = 1;
  cfg.poll_interval = std::chrono::milliseconds(50);
  cfg.host = OUROBOROS_HOST;
  cfg.arena = fresh("process");
  const auto start = Clock::now();
  RunResult run;
  try {
    run = supervisor_run(cfg);
  } catch (const std::exception& err) {
    return {false, std::string("supervisor failed: ") + err.what()};
  }
  const double secs = seconds_since(start);

  std::uint64_t spawns = 0;
  std::set<OrganismId> evicted, allowed{1};
  std::map<OrganismId, OrganismId> parent_of;
  for (const Event& e : run.events) {
    if (e.kind == EventKind::Spawn) ++spawns;
    if (e.kind == EventKind::Eviction) evicted.insert(*e.organism);
  }
  int stray = 0;
  for (const Event& e : run.events)
    if (e.kind == EventKind::Replication) {
      if (evicted.count(*e.organism)) ++stray;
      for (OrganismId c : e.children) allowed.insert(c);
    }
  for (const auto& entry : fs::directory_iterator(cfg.arena)) {
    const auto id = Arena::id_from_genome_path(entry.path());
    if (id && !allowed.count(*id)) ++stray;
  }
  const auto report = replay_validate(EventLog::read_file(cfg.arena / "events.log"), cfg.capacity);
  std::ostringstream os;
  os << "log " << (report.valid() ? "valid" : "INVALID") << (report.ended ? "" : " (no end)") << ", " << spawns
     << " spawns (need " << kProcessSpawns << "), " << evicted.size() << " evicted, " << stray
     << " offspring files from evicted organisms, " << num(secs, 4) << " s (< " << kProcessSeconds << ")";
  const bool ok = report.valid() && report.ended && spawns == kProcessSpawns && stray == 0 && secs < kProcessSeconds;
  return {ok, os.str()};
}

Outcome zero_mutation() {
  PopulationConfig cfg;
  cfg.capacity = 4;
  cfg.budget = 20;
  cfg.seed = 1;
  cfg.mutation = MutationScales{0.0, 0};
  cfg.arena = fresh("zero_mutation");
  const RunResult run = sim_run(cfg);
  const std::string ancestor = serialize_genome(Genome::ancestor());
  int texts = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(cfg.arena))
    if (Arena::id_from_genome_path(entry.path())) {
      ++texts;
      if (read_text_file(entry.path()) != ancestor) ++differ;
    }
  for (const Event& e : run.events)
    if (e.genome && serialize_genome(*e.genome) != ancestor) ++differ;
  std::ostringstream os;
  os << texts << " genome files, " << run.validation.spawned << " spawned, " << differ << " differ from the ancestor";
  return {run.validation.valid() && texts >= 20 && differ == 0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"quine maturity", quine_maturity},
      {"evolutionary trend", evolutionary_trend},
      {"learning-rate drift", learning_rate_drift},
      {"selection blindness", selection_blindness},
      {"supervisor safety", supervisor_safety},
      {"determinism", determinism},
      {"process-mode smoke", process_smoke},
      {"zero-mutation fidelity", zero_mutation},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  fs::create_directories(work_dir());
  std::ofstream summary(work_dir() / "summary.txt");
  int failed = 0;
  for (std::size_t n = 1; n <= criteria.size(); ++n) {
    if (!only.empty() && !only.count(n)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[n - 1].second();
    } catch (const std::exception& err) {
      o = {false, std::string("threw: ") + err.what()};
    }
    if (!o.pass) ++failed;
    std::ostringstream line;
    line << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[n - 1].first << ": " << o.detail
         << " [" << num(seconds_since(start), 4) << " s]";
    std::cout << line.str() << std::endl;
    summary << line.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
