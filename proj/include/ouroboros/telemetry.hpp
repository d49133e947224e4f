#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ouroboros/genome.hpp"

namespace ouroboros {

using OrganismId = std::uint64_t;

enum class EventKind { Spawn, Maturity, Replication, Eviction, Sterile, Rejected, Extinction, Shutdown };

std::string_view to_string(EventKind kind);
std::optional<EventKind> event_kind_from_string(std::string_view name);

/// One record of the arena log.
///
/// `vtime` is the simulated clock in multiply-accumulate units (sim mode);
/// `wall` is unix time in seconds (process mode). Fields not relevant to a
/// kind stay empty and are omitted from the serialized line.
struct Event {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Spawn;
  std::optional<OrganismId> organism;
  std::optional<OrganismId> parent;
  std::optional<Genome> genome;
  std::optional<double> vtime;
  std::optional<double> wall;
  std::optional<std::uint64_t> epochs;
  std::optional<double> cost;          // virtual maturity cost
  std::optional<double> wall_seconds;  // training duration
  std::optional<int> exit_code;
  std::optional<long> pid;
  std::optional<std::uint64_t> seed;
  std::optional<OrganismId> by;  // eviction: the newcomer that displaced it
  std::optional<std::uint64_t> alive;
  std::vector<OrganismId> children;
  std::string reason;

  friend bool operator==(const Event&, const Event&) = default;
};

class SeqViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-line JSON rendering, no trailing newline.
std::string event_to_line(const Event& e);
/// Throws std::invalid_argument on malformed lines.
Event event_from_line(std::string_view line);

std::vector<Event> parse_events(std::string_view text);

/// Append-only event file shared by many writers.
///
/// Every append takes an exclusive advisory lock on the file, reads the
/// last record's seq, and writes one complete line with a single write().
/// `transact` holds that lock across a caller-supplied critical section.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  const std::filesystem::path& path() const { return path_; }

  class Txn {
   public:
    std::vector<Event> read_all() const;
    std::uint64_t last_seq() const;
    /// Assigns seq = last + 1 and appends. Returns the stored event.
    Event append(Event e);
    /// Appends `e` as-is; throws SeqViolation unless e.seq == last + 1.
    void append_exact(const Event& e);

   private:
    friend class EventLog;
    explicit Txn(const EventLog& log) : log_(log) {}
    const EventLog& log_;
  };

  template <class F>
  auto transact(F&& fn) {
    Lock lock(fd_);
    Txn txn(*this);
    return fn(txn);
  }

  Event append(Event e) {
    return transact([&](Txn& t) { return t.append(std::move(e)); });
  }
  void append_exact(const Event& e) {
    transact([&](Txn& t) { t.append_exact(e); });
  }
  std::vector<Event> read_all() const;

  static std::vector<Event> read_file(const std::filesystem::path& path);

 private:
  struct Lock {
    explicit Lock(int fd);
    ~Lock();
    int fd;
  };

  std::filesystem::path path_;
  int fd_ = -1;
};

enum class ViolationKind { Sequence, Schema, Capacity, Lineage, Ordering, Conservation };
std::string_view to_string(ViolationKind kind);

struct Violation {
  std::uint64_t seq = 0;
  ViolationKind kind = ViolationKind::Schema;
  std::string detail;
};

struct ValidationReport {
  std::optional<Violation> violation;  // first one found
  std::uint64_t spawned = 0;
  std::uint64_t matured = 0;
  std::uint64_t replicated = 0;
  std::uint64_t evicted = 0;
  std::uint64_t sterile = 0;
  std::uint64_t rejected = 0;
  std::uint64_t alive = 0;
  std::uint64_t max_population = 0;
  bool ended = false;  // extinction or shutdown seen

  bool valid() const { return !violation.has_value(); }
};

/// Replays the log and checks capacity safety, kill-oldest eviction, the lineage tree, lifecycle
/// ordering and terminal-state accounting. Never mutates its input.
ValidationReport replay_validate(const std::vector<Event>& events, std::size_t capacity);

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IndexOrder { Maturity, Spawn };
enum class CostMetric { Virtual, Wall };

struct MaturedRecord {
  OrganismId organism = 0;
  double maturity_cost = 0.0;
  Genome genome;
};

struct SummaryStats {
  std::size_t window = 16;
  std::vector<MaturedRecord> matured;  // in index order
  std::vector<double> moving_avg;      // length max(0, N - window + 1)
  double first_quartile_mean = 0.0;
  double last_quartile_mean = 0.0;
  double quartile_ratio = 0.0;  // last / first
};

/// Matured organisms indexed by completion (or spawn) order with their
/// moving-average maturity cost and quartile aggregates. Pure function of
/// the log. Throws InsufficientData below two matured organisms.
SummaryStats summarize(const std::vector<Event>& events, std::size_t window = 16,
                       IndexOrder order = IndexOrder::Maturity, CostMetric metric = CostMetric::Virtual);

/// Mean of the first / last ceil(n/4) values.
double leading_quartile_mean(const std::vector<double>& values);
double trailing_quartile_mean(const std::vector<double>& values);

std::string stats_to_csv(const SummaryStats& stats);
/// Parses the CSV form back. Window is inferred from the first filled
/// moving-average row.
SummaryStats stats_from_csv(std::string_view csv);
std::string stats_to_svg(const SummaryStats& stats);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ouroboros
