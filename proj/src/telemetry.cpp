#include "ouroboros/telemetry.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ouroboros {

using nlohmann::json;

namespace {

constexpr std::pair<EventKind, std::string_view> kKindNames[] = {
    {EventKind::Spawn, "spawn"},           {EventKind::Maturity, "maturity"}, {EventKind::Replication, "replication"},
    {EventKind::Eviction, "eviction"},     {EventKind::Sterile, "sterile"},   {EventKind::Rejected, "rejected"},
    {EventKind::Extinction, "extinction"}, {EventKind::Shutdown, "shutdown"},
};

std::string errno_message(const std::string& what) { return what + ": " + std::strerror(errno); }

}  // namespace

std::string_view to_string(EventKind kind) {
  for (auto [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<EventKind> event_kind_from_string(std::string_view name) {
  for (auto [k, n] : kKindNames)
    if (n == name) return k;
  return std::nullopt;
}

std::string event_to_line(const Event& e) {
  json j;
  j["seq"] = e.seq;
  j["kind"] = to_string(e.kind);
  if (e.organism) j["id"] = *e.organism;
  if (e.parent) j["parent"] = *e.parent;
  if (e.genome) {
    j["lr"] = e.genome->lr();
    j["hid"] = e.genome->hid;
    j["noi"] = e.genome->noi;
    j["aux"] = e.genome->aux;
  }
  if (e.vtime) j["vtime"] = *e.vtime;
  if (e.wall) j["wall"] = *e.wall;
  if (e.epochs) j["epochs"] = *e.epochs;
  if (e.cost) j["cost"] = *e.cost;
  if (e.wall_seconds) j["wall_seconds"] = *e.wall_seconds;
  if (e.exit_code) j["exit"] = *e.exit_code;
  if (e.pid) j["pid"] = *e.pid;
  if (e.seed) j["seed"] = *e.seed;
  if (e.by) j["by"] = *e.by;
  if (e.alive) j["alive"] = *e.alive;
  if (!e.children.empty()) j["children"] = e.children;
  if (!e.reason.empty()) j["reason"] = e.reason;
  return j.dump();
}

Event event_from_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument(std::string("malformed event line: ") + err.what());
  }
  if (!j.is_object() || !j.contains("seq") || !j.contains("kind")) throw std::invalid_argument("event line lacks seq/kind");
  try {
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    auto kind = event_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw std::invalid_argument("unknown event kind");
    e.kind = *kind;
    auto opt = [&](const char* key, auto& field) {
      using T = typename std::remove_reference_t<decltype(field)>::value_type;
      if (j.contains(key)) field = j.at(key).get<T>();
    };
    opt("id", e.organism);
    opt("parent", e.parent);
    opt("vtime", e.vtime);
    opt("wall", e.wall);
    opt("epochs", e.epochs);
    opt("cost", e.cost);
    opt("wall_seconds", e.wall_seconds);
    opt("exit", e.exit_code);
    opt("pid", e.pid);
    opt("seed", e.seed);
    opt("by", e.by);
    opt("alive", e.alive);
    if (j.contains("children")) e.children = j.at("children").get<std::vector<OrganismId>>();
    if (j.contains("reason")) e.reason = j.at("reason").get<std::string>();
    if (j.contains("lr") || j.contains("hid") || j.contains("noi") || j.contains("aux")) {
      e.genome = Genome::from_values(j.at("lr").get<double>(), j.at("hid").get<int>(), j.at("noi").get<int>(),
                                     j.at("aux").get<int>());
    }
    return e;
  } catch (const json::exception& err) {
    throw std::invalid_argument(std::string("bad event field: ") + err.what());
  }
}

std::vector<Event> parse_events(std::string_view text) {
  std::vector<Event> events;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty()) events.push_back(event_from_line(line));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return events;
}

// ---------------------------------------------------------------------------
// EventLog

EventLog::Lock::Lock(int fd_in) : fd(fd_in) {
  while (::flock(fd, LOCK_EX) != 0) {
    if (errno != EINTR) throw IoError(errno_message("flock"));
  }
}

EventLog::Lock::~Lock() { ::flock(fd, LOCK_UN); }

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError(errno_message("open " + path_.string()));
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<Event> EventLog::read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return parse_events(read_text_file(path));
}

std::vector<Event> EventLog::read_all() const { return read_file(path_); }

std::vector<Event> EventLog::Txn::read_all() const { return read_file(log_.path_); }

std::uint64_t EventLog::Txn::last_seq() const {
  const int fd = log_.fd_;
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw IoError(errno_message("fstat"));
  if (st.st_size == 0) return 0;
  // Walk back from the end to the start of the last complete line.
  std::string tail;
  off_t end = st.st_size;
  const off_t chunk = 512;
  while (true) {
    off_t begin = std::max<off_t>(0, end - chunk);
    std::string buf(static_cast<std::size_t>(end - begin), '\0');
    ssize_t n = ::pread(fd, buf.data(), buf.size(), begin);
    if (n < 0) throw IoError(errno_message("pread"));
    tail.insert(0, buf.data(), static_cast<std::size_t>(n));
    auto trimmed = std::string_view(tail);
    while (!trimmed.empty() && trimmed.back() == '\n') trimmed.remove_suffix(1);
    auto nl = trimmed.rfind('\n');
    if (nl != std::string_view::npos || begin == 0) {
      auto line = nl == std::string_view::npos ? trimmed : trimmed.substr(nl + 1);
      if (line.empty()) return 0;
      return event_from_line(line).seq;
    }
    end = begin;
  }
}

Event EventLog::Txn::append(Event e) {
  e.seq = last_seq() + 1;
  append_exact(e);
  return e;
}

void EventLog::Txn::append_exact(const Event& e) {
  const auto last = last_seq();
  if (e.seq != last + 1)
    throw SeqViolation("event seq " + std::to_string(e.seq) + " does not follow " + std::to_string(last));
  std::string line = event_to_line(e);
  line.push_back('\n');
  ssize_t n = ::write(log_.fd_, line.data(), line.size());
  if (n != static_cast<ssize_t>(line.size())) throw IoError(errno_message("append to " + log_.path_.string()));
}

// ---------------------------------------------------------------------------
// Replay validation

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Sequence: return "sequence";
    case ViolationKind::Schema: return "schema";
    case ViolationKind::Capacity: return "capacity";
    case ViolationKind::Lineage: return "lineage";
    case ViolationKind::Ordering: return "ordering";
    case ViolationKind::Conservation: return "conservation";
  }
  return "unknown";
}

namespace {

enum class Stage { Live, Matured, Replicated, Evicted, Sterile };

struct Tracked {
  Stage stage = Stage::Live;
  Genome genome;
};

class Replayer {
 public:
  explicit Replayer(std::size_t capacity) : capacity_(capacity) {}

  ValidationReport run(const std::vector<Event>& events) {
    std::uint64_t prev_seq = 0;
    for (const Event& e : events) {
      if (report_.ended) {
        fail(e, ViolationKind::Ordering, "event after extinction/shutdown");
        return report_;
      }
      if (e.seq <= prev_seq) {
        fail(e, ViolationKind::Sequence, "seq not strictly increasing");
        return report_;
      }
      prev_seq = e.seq;
      if (incoming_ && (e.kind != EventKind::Spawn || e.organism != incoming_)) {
        fail(e, ViolationKind::Ordering, "eviction not followed by the newcomer's spawn");
        return report_;
      }
      incoming_.reset();
      if (!apply(e)) return report_;
    }
    const std::uint64_t terminal = report_.replicated + report_.evicted + report_.sterile;
    if (terminal + report_.alive != report_.spawned) {
      Event last = events.empty() ? Event{} : events.back();
      fail(last, ViolationKind::Conservation, "terminal + alive != spawned");
    }
    return report_;
  }

 private:
  bool apply(const Event& e) {
    const bool needs_id = e.kind != EventKind::Extinction && e.kind != EventKind::Shutdown;
    if (needs_id && !e.organism) return fail(e, ViolationKind::Schema, "missing organism id");
    switch (e.kind) {
      case EventKind::Spawn: return on_spawn(e);
      case EventKind::Maturity: return on_maturity(e);
      case EventKind::Replication: return on_replication(e);
      case EventKind::Eviction: return on_eviction(e);
      case EventKind::Sterile: return on_terminal(e, Stage::Sterile, report_.sterile);
      case EventKind::Rejected: return on_rejected(e);
      case EventKind::Extinction:
        if (report_.alive != 0) return fail(e, ViolationKind::Conservation, "extinction with live organisms");
        report_.ended = true;
        return true;
      case EventKind::Shutdown:
        if (!e.alive) return fail(e, ViolationKind::Schema, "shutdown without alive count");
        if (*e.alive != report_.alive) return fail(e, ViolationKind::Conservation, "shutdown alive count mismatch");
        report_.ended = true;
        return true;
    }
    return fail(e, ViolationKind::Schema, "unknown kind");
  }

  bool on_spawn(const Event& e) {
    const OrganismId id = *e.organism;
    if (!e.genome) return fail(e, ViolationKind::Schema, "spawn without genome");
    if (organisms_.count(id) || rejected_.count(id)) return fail(e, ViolationKind::Lineage, "organism spawned twice");
    if (!e.parent) {
      if (report_.spawned != 0) return fail(e, ViolationKind::Lineage, "second parentless organism");
    } else {
      auto it = announced_.find(id);
      if (it == announced_.end() || it->second != *e.parent)
        return fail(e, ViolationKind::Lineage, "child not announced by a prior replication of its parent");
    }
    organisms_[id] = Tracked{Stage::Live, *e.genome};
    live_order_.push_back(id);
    ++report_.spawned;
    ++report_.alive;
    report_.max_population = std::max(report_.max_population, report_.alive);
    if (report_.alive > capacity_) return fail(e, ViolationKind::Capacity, "live population exceeds capacity");
    return true;
  }

  Tracked* live(const Event& e) {
    auto it = organisms_.find(*e.organism);
    if (it == organisms_.end()) {
      fail(e, ViolationKind::Ordering, "event for organism that was never spawned");
      return nullptr;
    }
    if (it->second.stage != Stage::Live && it->second.stage != Stage::Matured) {
      fail(e, ViolationKind::Ordering, "event for organism after its terminal event");
      return nullptr;
    }
    return &it->second;
  }

  bool on_maturity(const Event& e) {
    Tracked* t = live(e);
    if (!t) return false;
    if (!e.genome || !e.epochs || !e.cost) return fail(e, ViolationKind::Schema, "maturity lacks genome/epochs/cost");
    if (t->stage == Stage::Matured) return fail(e, ViolationKind::Ordering, "organism matured twice");
    if (!(*e.genome == t->genome)) return fail(e, ViolationKind::Schema, "maturity genome differs from spawn genome");
    t->stage = Stage::Matured;
    ++report_.matured;
    return true;
  }

  bool on_replication(const Event& e) {
    Tracked* t = live(e);
    if (!t) return false;
    if (t->stage != Stage::Matured) return fail(e, ViolationKind::Ordering, "replication before maturity");
    if (e.children.size() != 2 || e.children[0] == e.children[1])
      return fail(e, ViolationKind::Schema, "replication must name two distinct children");
    for (OrganismId c : e.children) {
      if (announced_.count(c) || organisms_.count(c)) return fail(e, ViolationKind::Lineage, "child id reused");
      announced_[c] = *e.organism;
    }
    std::erase(live_order_, *e.organism);
    t->stage = Stage::Replicated;
    ++report_.replicated;
    --report_.alive;
    return true;
  }

  bool on_eviction(const Event& e) {
    if (!e.by) return fail(e, ViolationKind::Schema, "eviction without newcomer");
    if (report_.alive < capacity_) return fail(e, ViolationKind::Capacity, "eviction below capacity");
    if (!live(e)) return false;
    if (live_order_.front() != *e.organism) return fail(e, ViolationKind::Ordering, "evicted organism is not the oldest");
    incoming_ = *e.by;
    return on_terminal(e, Stage::Evicted, report_.evicted);
  }

  bool on_terminal(const Event& e, Stage stage, std::uint64_t& counter) {
    Tracked* t = live(e);
    if (!t) return false;
    std::erase(live_order_, *e.organism);
    t->stage = stage;
    ++counter;
    --report_.alive;
    return true;
  }

  bool on_rejected(const Event& e) {
    const OrganismId id = *e.organism;
    if (organisms_.count(id) || rejected_.count(id)) return fail(e, ViolationKind::Lineage, "rejected id already seen");
    rejected_.insert(id);
    ++report_.rejected;
    return true;
  }

  bool fail(const Event& e, ViolationKind kind, std::string detail) {
    if (!report_.violation) report_.violation = Violation{e.seq, kind, std::move(detail)};
    return false;
  }

  std::size_t capacity_;
  ValidationReport report_;
  std::map<OrganismId, Tracked> organisms_;
  std::map<OrganismId, OrganismId> announced_;  // child -> parent
  std::set<OrganismId> rejected_;
  std::vector<OrganismId> live_order_;  // spawn order
  std::optional<OrganismId> incoming_;
};

}  // namespace

ValidationReport replay_validate(const std::vector<Event>& events, std::size_t capacity) {
  return Replayer(capacity).run(events);
}

// ---------------------------------------------------------------------------
// Summaries

namespace {

std::size_t quartile_count(std::size_t n) { return (n + 3) / 4; }

double mean_of(std::vector<double>::const_iterator first, std::vector<double>::const_iterator last) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto it = first; it != last; ++it, ++n) sum += *it;
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

double leading_quartile_mean(const std::vector<double>& values) {
  return mean_of(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(quartile_count(values.size())));
}

double trailing_quartile_mean(const std::vector<double>& values) {
  return mean_of(values.end() - static_cast<std::ptrdiff_t>(quartile_count(values.size())), values.end());
}

SummaryStats summarize(const std::vector<Event>& events, std::size_t window, IndexOrder order, CostMetric metric) {
  if (window == 0) throw std::invalid_argument("moving-average window must be positive");
  std::map<OrganismId, std::uint64_t> spawn_seq;
  struct Row {
    std::uint64_t key;
    MaturedRecord record;
  };
  std::vector<Row> rows;
  for (const Event& e : events) {
    if (!e.organism) continue;
    if (e.kind == EventKind::Spawn) spawn_seq.emplace(*e.organism, e.seq);
    if (e.kind != EventKind::Maturity || !e.genome) continue;
    std::optional<double> cost = metric == CostMetric::Virtual ? e.cost : e.wall_seconds;
    if (!cost) throw InsufficientData("maturity event without the requested cost metric");
    std::uint64_t key = e.seq;
    if (order == IndexOrder::Spawn) {
      auto it = spawn_seq.find(*e.organism);
      key = it == spawn_seq.end() ? e.seq : it->second;
    }
    rows.push_back(Row{key, MaturedRecord{*e.organism, *cost, *e.genome}});
  }
  if (rows.size() < 2) throw InsufficientData("need at least two matured organisms");
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.key < b.key; });

  SummaryStats stats;
  stats.window = window;
  std::vector<double> costs;
  for (const Row& r : rows) {
    stats.matured.push_back(r.record);
    costs.push_back(r.record.maturity_cost);
  }
  if (costs.size() >= window) {
    for (std::size_t i = 0; i + window <= costs.size(); ++i)
      stats.moving_avg.push_back(mean_of(costs.begin() + static_cast<std::ptrdiff_t>(i),
                                         costs.begin() + static_cast<std::ptrdiff_t>(i + window)));
  }
  stats.first_quartile_mean = leading_quartile_mean(costs);
  stats.last_quartile_mean = trailing_quartile_mean(costs);
  stats.quartile_ratio = stats.last_quartile_mean / stats.first_quartile_mean;
  return stats;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string stats_to_csv(const SummaryStats& stats) {
  std::ostringstream out;
  out << "index,maturity_cost,moving_avg,lr,hid,noi,aux\n";
  for (std::size_t i = 0; i < stats.matured.size(); ++i) {
    const auto& r = stats.matured[i];
    out << i << ',' << format_double(r.maturity_cost) << ',';
    // moving average row i covers organisms [i-window+1, i]
    if (i + 1 >= stats.window && i + 1 - stats.window < stats.moving_avg.size())
      out << format_double(stats.moving_avg[i + 1 - stats.window]);
    out << ',' << format_double(r.genome.lr()) << ',' << r.genome.hid << ',' << r.genome.noi << ',' << r.genome.aux
        << '\n';
  }
  return out.str();
}

SummaryStats stats_from_csv(std::string_view csv) {
  auto lines = split(csv, '\n');
  if (lines.empty() || lines[0] != "index,maturity_cost,moving_avg,lr,hid,noi,aux")
    throw std::invalid_argument("unexpected stats CSV header");
  SummaryStats stats;
  std::optional<std::size_t> first_avg_row;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto f = split(lines[li], ',');
    if (f.size() != 7) throw std::invalid_argument("stats CSV row needs 7 fields");
    MaturedRecord r;
    r.maturity_cost = std::stod(f[1]);
    r.genome = Genome::from_values(std::stod(f[3]), std::stoi(f[4]), std::stoi(f[5]), std::stoi(f[6]));
    if (!f[2].empty()) {
      if (!first_avg_row) first_avg_row = stats.matured.size();
      stats.moving_avg.push_back(std::stod(f[2]));
    }
    stats.matured.push_back(r);
  }
  stats.window = first_avg_row ? *first_avg_row + 1 : stats.matured.size() + 1;
  std::vector<double> costs;
  for (const auto& r : stats.matured) costs.push_back(r.maturity_cost);
  if (!costs.empty()) {
    stats.first_quartile_mean = leading_quartile_mean(costs);
    stats.last_quartile_mean = trailing_quartile_mean(costs);
    stats.quartile_ratio = stats.last_quartile_mean / stats.first_quartile_mean;
  }
  return stats;
}

std::string stats_to_svg(const SummaryStats& stats) {
  const double width = 800, height = 400, margin = 50;
  const std::size_t n = stats.matured.size();
  double ymax = 0.0;
  for (const auto& r : stats.matured) ymax = std::max(ymax, r.maturity_cost);
  if (ymax <= 0.0) ymax = 1.0;
  auto x_of = [&](std::size_t i) {
    return margin + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0) * (width - 2 * margin);
  };
  auto y_of = [&](double v) { return height - margin - v / ymax * (height - 2 * margin); };
  auto polyline = [&](const std::vector<std::pair<std::size_t, double>>& pts, const char* color, const char* id) {
    std::ostringstream s;
    s << "  <polyline id=\"" << id << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) s << ' ';
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", x_of(pts[k].first), y_of(pts[k].second));
      s << buf;
    }
    s << "\"/>\n";
    return s.str();
  };

  std::vector<std::pair<std::size_t, double>> raw, avg;
  for (std::size_t i = 0; i < n; ++i) raw.emplace_back(i, stats.matured[i].maturity_cost);
  for (std::size_t i = 0; i < stats.moving_avg.size(); ++i) avg.emplace_back(i + stats.window - 1, stats.moving_avg[i]);

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "  <line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n"
      << "  <text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">organism index</text>\n"
      << "  <text x=\"15\" y=\"" << height / 2 << "\" transform=\"rotate(-90 15 " << height / 2
      << ")\" text-anchor=\"middle\">maturity cost</text>\n";
  svg << polyline(raw, "#bbbbbb", "maturity_cost");
  if (!avg.empty()) svg << polyline(avg, "#c0392b", "moving_avg");
  svg << "</svg>\n";
  return svg.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace ouroboros
