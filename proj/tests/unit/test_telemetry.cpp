#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <numeric>
#include <regex>

#include "log_builder.hpp"
#include "ouroboros/telemetry.hpp"

using namespace ouroboros;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ouroboros_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// K=2 clean history: ancestor breeds, child 2 breeds with one eviction,
// budget ends at 6 spawns.
LogBuilder clean_log() {
  LogBuilder b;
  b.spawn(1).breed(1, 2, 3, 9.0);
  b.maturity(2, 7.0).replication(2, 4, 5);
  b.spawn(4, 2);
  b.eviction(3, 5).spawn(5, 2);
  b.maturity(4, 5.0).replication(4, 6, 7).spawn(6, 4).rejected(7, 4);
  b.shutdown(2);
  return b;
}

ViolationKind violation_of(const std::vector<Event>& events, std::size_t capacity, std::uint64_t* seq = nullptr) {
  auto report = replay_validate(events, capacity);
  REQUIRE_FALSE(report.valid());
  if (seq) *seq = report.violation->seq;
  return report.violation->kind;
}

// Minimal XML well-formedness: every tag closes in order.
bool balanced_xml(const std::string& doc) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  while ((pos = doc.find('<', pos)) != std::string::npos) {
    const auto end = doc.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = doc.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    const bool closing = tag[0] == '/';
    std::string name = tag.substr(closing ? 1 : 0);
    name = name.substr(0, name.find_first_of(" \t\n"));
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("event lines round trip and omit absent fields") {
  const auto events = clean_log().events;
  for (const Event& e : events) {
    const std::string line = event_to_line(e);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(event_from_line(line) == e);
  }
  const std::string ancestor = event_to_line(events.front());
  const auto j = nlohmann::json::parse(ancestor);
  CHECK(j.at("kind") == "spawn");
  CHECK_FALSE(j.contains("parent"));
  CHECK(j.at("lr") == 0.001);
  CHECK(j.at("hid") == 16);

  Event full;
  full.seq = 9;
  full.kind = EventKind::Sterile;
  full.organism = 4;
  full.wall = 1700000000.25;
  full.epochs = 200000;
  full.wall_seconds = 3.5;
  full.exit_code = 2;
  full.pid = 4242;
  full.reason = "exited without a record";
  CHECK(event_from_line(event_to_line(full)) == full);
}

TEST_CASE("malformed lines are rejected") {
  CHECK_THROWS_AS(event_from_line("not json"), std::invalid_argument);
  CHECK_THROWS_AS(event_from_line(R"({"seq":1})"), std::invalid_argument);
  CHECK_THROWS_AS(event_from_line(R"({"seq":1,"kind":"hatch"})"), std::invalid_argument);
}

TEST_CASE("event log assigns seq and refuses gaps") {
  const auto dir = fresh_dir("seq");
  EventLog log(dir / "events.log");
  Event e;
  e.kind = EventKind::Spawn;
  e.organism = 1;
  e.genome = Genome::ancestor();
  CHECK(log.append(e).seq == 1);
  CHECK(log.append(e).seq == 2);
  e.seq = 7;
  CHECK_THROWS_AS(log.append_exact(e), SeqViolation);
  e.seq = 2;
  CHECK_THROWS_AS(log.append_exact(e), SeqViolation);
  e.seq = 3;
  log.append_exact(e);
  const auto back = EventLog::read_file(dir / "events.log");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].seq == i + 1);
  fs::remove_all(dir);
}

TEST_CASE("concurrent writers never interleave lines") {
  const auto dir = fresh_dir("concurrent");
  const auto path = dir / "events.log";
  const int writers = 6, per_writer = 150;
  std::vector<pid_t> kids;
  for (int w = 0; w < writers; ++w) {
    pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      EventLog log(path);
      Event e;
      e.kind = EventKind::Sterile;
      e.organism = static_cast<OrganismId>(w + 1);
      e.reason = std::string(5000, static_cast<char>('a' + w));  // lines far beyond PIPE_BUF
      for (int i = 0; i < per_writer; ++i) log.append(e);
      ::_exit(0);
    }
    kids.push_back(pid);
  }
  for (pid_t pid : kids) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
  }
  const auto events = EventLog::read_file(path);
  REQUIRE(events.size() == static_cast<std::size_t>(writers * per_writer));
  std::vector<int> per(writers, 0);
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].seq == i + 1);
    const auto w = static_cast<int>(*events[i].organism) - 1;
    CHECK(events[i].reason == std::string(5000, static_cast<char>('a' + w)));
    ++per[static_cast<std::size_t>(w)];
  }
  for (int n : per) CHECK(n == per_writer);
  fs::remove_all(dir);
}

TEST_CASE("replay accepts a clean log and counts outcomes") {
  const auto report = replay_validate(clean_log().events, 2);
  CHECK(report.valid());
  CHECK(report.spawned == 6);
  CHECK(report.matured == 3);
  CHECK(report.replicated == 3);
  CHECK(report.evicted == 1);
  CHECK(report.rejected == 1);
  CHECK(report.alive == 2);
  CHECK(report.max_population == 2);
  CHECK(report.ended);
  CHECK(report.replicated + report.evicted + report.sterile + report.alive == report.spawned);
}

TEST_CASE("replay catches injected violations") {
  SUBCASE("population K+1") {
    LogBuilder b;
    b.spawn(1).breed(1, 2, 3).maturity(2).replication(2, 4, 5).spawn(4, 2).spawn(5, 2);
    std::uint64_t seq = 0;
    CHECK(violation_of(b.events, 2, &seq) == ViolationKind::Capacity);
    CHECK(seq == b.events.back().seq);
    CHECK(replay_validate(b.events, 3).valid());
  }
  SUBCASE("orphan child") {
    LogBuilder b;
    b.spawn(1).spawn(9, 4);
    CHECK(violation_of(b.events, 4) == ViolationKind::Lineage);
  }
  SUBCASE("child claimed by the wrong parent") {
    LogBuilder b;
    b.spawn(1).breed(1, 2, 3).maturity(2).replication(2, 4, 5).spawn(4, 3);
    CHECK(violation_of(b.events, 8) == ViolationKind::Lineage);
  }
  SUBCASE("second parentless organism") {
    LogBuilder b;
    b.spawn(1).spawn(2);
    CHECK(violation_of(b.events, 4) == ViolationKind::Lineage);
  }
  SUBCASE("organism spawned twice") {
    LogBuilder b;
    b.spawn(1).breed(1, 2, 3).spawn(2, 1);
    CHECK(violation_of(b.events, 8) == ViolationKind::Lineage);
  }
  SUBCASE("replication before maturity") {
    LogBuilder b;
    b.spawn(1).replication(1, 2, 3);
    CHECK(violation_of(b.events, 4) == ViolationKind::Ordering);
  }
  SUBCASE("event after eviction") {
    LogBuilder b;
    b.spawn(1).breed(1, 2, 3).maturity(2).replication(2, 4, 5).spawn(4, 2).eviction(3, 5).spawn(5, 2).maturity(3);
    CHECK(violation_of(b.events, 2) == ViolationKind::Ordering);
  }
  SUBCASE("eviction rules") {
    // live {3, 4} at K = 2; 3 is the oldest
    const auto full = [] {
      LogBuilder b;
      b.spawn(1).breed(1, 2, 3).maturity(2).replication(2, 4, 5).spawn(4, 2);
      return b;
    };
    LogBuilder ok = full();
    ok.eviction(3, 5).spawn(5, 2);
    CHECK(replay_validate(ok.events, 2).valid());

    LogBuilder young = full();
    young.eviction(4, 5).spawn(5, 2);
    CHECK(violation_of(young.events, 2) == ViolationKind::Ordering);

    LogBuilder early = full();
    early.eviction(3, 5).spawn(5, 2);
    CHECK(violation_of(early.events, 3) == ViolationKind::Capacity);

    LogBuilder nobody = full();
    nobody.eviction(3, 5).sterile(4);
    CHECK(violation_of(nobody.events, 2) == ViolationKind::Ordering);

    LogBuilder unnamed = full();
    unnamed.eviction(3, 5).spawn(5, 2);
    unnamed.events[unnamed.events.size() - 2].by.reset();
    CHECK(violation_of(unnamed.events, 2) == ViolationKind::Schema);
  }
  SUBCASE("event after shutdown") {
    LogBuilder b;
    b.spawn(1).shutdown(1).sterile(1);
    CHECK(violation_of(b.events, 4) == ViolationKind::Ordering);
  }
  SUBCASE("shutdown alive count mismatch") {
    LogBuilder b;
    b.spawn(1).breed(1, 2, 3).shutdown(1);
    CHECK(violation_of(b.events, 4) == ViolationKind::Conservation);
  }
  SUBCASE("extinction with live organisms") {
    LogBuilder b;
    b.spawn(1).extinction();
    CHECK(violation_of(b.events, 4) == ViolationKind::Conservation);
  }
  SUBCASE("seq not increasing") {
    LogBuilder b;
    b.spawn(1).sterile(1);
    b.events[1].seq = 1;
    CHECK(violation_of(b.events, 4) == ViolationKind::Sequence);
  }
  SUBCASE("missing required fields") {
    LogBuilder b;
    b.spawn(1);
    b.events[0].genome.reset();
    CHECK(violation_of(b.events, 4) == ViolationKind::Schema);
    LogBuilder c;
    c.spawn(1).maturity(1);
    c.events[1].cost.reset();
    CHECK(violation_of(c.events, 4) == ViolationKind::Schema);
  }
  SUBCASE("maturity genome differs from spawn genome") {
    LogBuilder b;
    b.spawn(1).maturity(1, 1.0, Genome{2000, 16, 8, 8});
    CHECK(violation_of(b.events, 4) == ViolationKind::Schema);
  }
}

TEST_CASE("summarize: constant costs") {
  LogBuilder b;
  b.spawn(1);
  OrganismId next = 2;
  OrganismId parent = 1;
  for (int i = 0; i < 20; ++i) {
    b.breed(parent, next, next + 1, 42.0).sterile(next + 1);
    parent = next;
    next += 2;
  }
  const auto stats = summarize(b.events, 5);
  CHECK(stats.matured.size() == 20);
  CHECK(stats.moving_avg.size() == 20 - 5 + 1);
  for (double v : stats.moving_avg) CHECK(v == doctest::Approx(42.0));
  CHECK(stats.quartile_ratio == doctest::Approx(1.0));
}

TEST_CASE("summarize: linearly decreasing costs against brute force") {
  std::vector<double> costs;
  for (int i = 0; i < 50; ++i) costs.push_back(100.0 - 50.0 * i / 49.0);
  LogBuilder b;
  b.spawn(1);
  OrganismId next = 2, parent = 1;
  for (double c : costs) {
    b.breed(parent, next, next + 1, c).sterile(next + 1);
    parent = next;
    next += 2;
  }
  const auto stats = summarize(b.events, 16);
  // ceil(50/4) = 13 at each end
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 13; ++i) {
    first += costs[static_cast<std::size_t>(i)];
    last += costs[static_cast<std::size_t>(49 - i)];
  }
  first /= 13.0;
  last /= 13.0;
  CHECK(stats.first_quartile_mean == doctest::Approx(first).epsilon(1e-12));
  CHECK(stats.last_quartile_mean == doctest::Approx(last).epsilon(1e-12));
  CHECK(stats.quartile_ratio == doctest::Approx(last / first).epsilon(1e-12));
  REQUIRE(stats.moving_avg.size() == 35);
  for (std::size_t i = 0; i < stats.moving_avg.size(); ++i) {
    const double brute = std::accumulate(costs.begin() + static_cast<long>(i), costs.begin() + static_cast<long>(i + 16), 0.0) / 16.0;
    CHECK(stats.moving_avg[i] == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("summarize: ordering, purity and insufficient data") {
  // organism 3 (spawned after 2) matures first
  LogBuilder b;
  b.spawn(1).breed(1, 2, 3, 10.0).maturity(3, 30.0).maturity(2, 20.0);
  const auto by_maturity = summarize(b.events, 1, IndexOrder::Maturity);
  REQUIRE(by_maturity.matured.size() == 3);
  CHECK(by_maturity.matured[1].organism == 3);
  const auto by_spawn = summarize(b.events, 1, IndexOrder::Spawn);
  CHECK(by_spawn.matured[1].organism == 2);

  const auto again = summarize(b.events, 1, IndexOrder::Maturity);
  CHECK(again.moving_avg == by_maturity.moving_avg);
  CHECK(again.quartile_ratio == by_maturity.quartile_ratio);

  LogBuilder one;
  one.spawn(1).maturity(1);
  CHECK_THROWS_AS(summarize(one.events), InsufficientData);
  CHECK_THROWS_AS(summarize(one.events, 1, IndexOrder::Maturity, CostMetric::Wall), InsufficientData);
}

TEST_CASE("CSV export and round trip") {
  LogBuilder b;
  b.spawn(1).breed(1, 2, 3, 1234.5678901234).maturity(2, 1.0 / 3.0).maturity(3, 2e9 + 0.125);
  const auto stats = summarize(b.events, 2);
  const std::string csv = stats_to_csv(stats);
  CHECK(csv.rfind("index,maturity_cost,moving_avg,lr,hid,noi,aux\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const auto back = stats_from_csv(csv);
  REQUIRE(back.matured.size() == 3);
  CHECK(back.window == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(back.matured[i].maturity_cost - stats.matured[i].maturity_cost) <=
          1e-9 * std::abs(stats.matured[i].maturity_cost));
    CHECK(back.matured[i].genome == stats.matured[i].genome);
  }
  REQUIRE(back.moving_avg.size() == stats.moving_avg.size());
  for (std::size_t i = 0; i < back.moving_avg.size(); ++i)
    CHECK(std::abs(back.moving_avg[i] - stats.moving_avg[i]) <= 1e-9 * std::abs(stats.moving_avg[i]));
}

TEST_CASE("SVG is well-formed with one polyline per series") {
  LogBuilder b;
  b.spawn(1);
  OrganismId next = 2, parent = 1;
  for (int i = 0; i < 12; ++i) {
    b.breed(parent, next, next + 1, 100.0 - i).sterile(next + 1);
    parent = next;
    next += 2;
  }
  const std::string svg = stats_to_svg(summarize(b.events, 4));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(balanced_xml(svg));
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(std::regex_search(svg, std::regex(R"(points="[0-9. ,-]+")")));
}

TEST_CASE("read_text_file reports missing files") {
  CHECK_THROWS(read_text_file("/nonexistent/ouroboros/file"));
}
