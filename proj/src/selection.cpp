#include "ouroboros/selection.hpp"

#include <signal.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <map>
#include <memory>
#include <set>
#include <thread>

#include "ouroboros/replicator.hpp"

namespace ouroboros {

std::string_view to_string(EvictionPolicy policy) {
  return policy == EvictionPolicy::KillOldest ? "kill-oldest" : "reject-new";
}

EvictionPolicy eviction_policy_from_string(std::string_view name) {
  if (name == "kill-oldest") return EvictionPolicy::KillOldest;
  if (name == "reject-new") return EvictionPolicy::RejectNew;
  throw std::invalid_argument("unknown eviction policy: " + std::string(name));
}

std::string_view to_string(AdmitDecision decision) {
  switch (decision) {
    case AdmitDecision::Admitted: return "admitted";
    case AdmitDecision::AdmittedWithEviction: return "admitted-with-eviction";
    case AdmitDecision::Rejected: return "rejected";
  }
  return "unknown";
}

AdmitDecision admit_decision(std::size_t live, std::size_t capacity, bool shutting_down, EvictionPolicy policy) {
  if (shutting_down) return AdmitDecision::Rejected;
  if (live < capacity) return AdmitDecision::Admitted;
  return policy == EvictionPolicy::KillOldest ? AdmitDecision::AdmittedWithEviction : AdmitDecision::Rejected;
}

Registry::AdmitResult Registry::admit(OrganismId organism, pid_t pid, std::size_t capacity, bool shutting_down,
                                      EvictionPolicy policy) {
  if (contains(organism)) throw std::logic_error("organism already live");
  AdmitResult result;
  result.decision = admit_decision(entries_.size(), capacity, shutting_down, policy);
  if (result.decision == AdmitDecision::Rejected) return result;
  if (result.decision == AdmitDecision::AdmittedWithEviction) {
    // capacity 0 is rejected by PopulationConfig::valid, so front() exists
    result.evicted = entries_.front();
    entries_.pop_front();
  }
  entries_.push_back(Entry{organism, next_stamp_++, pid});
  return result;
}

bool Registry::remove(OrganismId organism) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.organism == organism; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

bool Registry::contains(OrganismId organism) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.organism == organism; });
}

double cost_epoch(const NetDims& dims, int length) {
  const double hid = dims.hid;
  const double per_step = 8.0 * hid * (dims.in_dim() + hid) + 8.0 * hid * (2.0 * hid) + 2.0 * hid * dims.out_dim();
  return static_cast<double>(length) * per_step;
}

OrganismId next_to_run(std::span<const ScheduleSlot> slots) {
  if (slots.empty()) throw std::invalid_argument("nothing to schedule");
  const ScheduleSlot* best = &slots[0];
  for (const ScheduleSlot& s : slots) {
    const double finish = s.clock + s.epoch_cost;
    const double best_finish = best->clock + best->epoch_cost;
    if (finish < best_finish || (finish == best_finish && s.organism < best->organism)) best = &s;
  }
  return best->organism;
}

namespace {

ArenaSettings settings_from(const PopulationConfig& cfg) {
  ArenaSettings s;
  s.training = cfg.training;
  s.mutation = cfg.mutation;
  s.copy_host = cfg.copy_host;
  s.capacity = cfg.capacity;
  s.budget = cfg.budget;
  s.eviction = std::string(to_string(cfg.eviction));
  s.seed = cfg.seed;
  return s;
}

// ---------------------------------------------------------------------------
// Simulation

class Simulation {
 public:
  explicit Simulation(const PopulationConfig& cfg) : cfg_(cfg) {
    if (!cfg_.arena.empty()) {
      std::filesystem::create_directories(cfg_.arena);
      std::filesystem::remove(cfg_.arena / "events.log");
      arena_.emplace(cfg_.arena);
      arena_->save_settings(settings_from(cfg_));
    }
  }

  RunResult run() {
    ChildSpec ancestor{next_id_++, 0, cfg_.ancestor, cfg_.seed, {}};
    if (arena_) {
      ancestor.genome_path = arena_->genome_path(ancestor.organism);
      write_file_atomic(ancestor.genome_path, serialize_genome(ancestor.genome));
    }
    admit(ancestor, std::nullopt, 0.0);

    while (true) {
      if (closing_) {
        Event e = at(EventKind::Shutdown, now_);
        e.alive = registry_.size();
        emit(std::move(e));
        break;
      }
      if (live_.empty()) {
        emit(at(EventKind::Extinction, now_));
        break;
      }
      advance(pick_next());
    }
    return RunResult{events_, replay_validate(events_, cfg_.capacity)};
  }

 private:
  struct Task {
    OrganismConfig cfg;
    std::unique_ptr<Trainer> trainer;
    double clock = 0.0;
    double epoch_cost = 0.0;
  };

  class SimNursery : public Nursery {
   public:
    explicit SimNursery(Simulation& sim) : sim_(sim) {}

    std::array<ChildSpec, 2> commit(const OrganismConfig& parent, const std::array<Genome, 2>& genomes,
                                    const std::array<std::uint64_t, 2>& seeds) override {
      std::array<ChildSpec, 2> children;
      for (unsigned k = 0; k < 2; ++k) {
        children[k] = ChildSpec{sim_.next_id_++, parent.organism, genomes[k], seeds[k], {}};
        if (sim_.arena_) {
          children[k].genome_path = sim_.arena_->genome_path(children[k].organism);
          write_file_atomic(children[k].genome_path, serialize_genome(genomes[k]));
        }
      }
      Event e = sim_.at(EventKind::Replication, sim_.now_);
      e.organism = parent.organism;
      e.children = {children[0].organism, children[1].organism};
      sim_.emit(std::move(e));
      return children;
    }

    void spawn(const ChildSpec& child) override { queued.push_back(child); }

    std::vector<ChildSpec> queued;

   private:
    Simulation& sim_;
  };

  Event at(EventKind kind, double vtime) const {
    Event e;
    e.kind = kind;
    e.vtime = vtime;
    return e;
  }

  void emit(Event e) {
    e.seq = events_.size() + 1;
    if (arena_) arena_->log().append_exact(e);
    events_.push_back(std::move(e));
  }

  void admit(const ChildSpec& child, std::optional<OrganismId> parent, double clock) {
    if (spawned_ >= cfg_.budget) {
      reject(child, parent, "budget exhausted", clock);
      closing_ = true;
      return;
    }
    auto result = registry_.admit(child.organism, -1, cfg_.capacity, false, cfg_.eviction);
    if (result.decision == AdmitDecision::Rejected) {
      reject(child, parent, "arena full", clock);
      return;
    }
    if (result.evicted) {
      Event ev = at(EventKind::Eviction, clock);
      ev.organism = result.evicted->organism;
      ev.by = child.organism;
      emit(std::move(ev));
      live_.erase(result.evicted->organism);
    }
    Task task;
    task.cfg = OrganismConfig::for_genome(child.genome, child.seed);
    task.cfg.organism = child.organism;
    task.cfg.parent = parent;
    task.cfg.training = cfg_.training;
    task.cfg.mutation = cfg_.mutation;
    task.cfg.arena = cfg_.arena;
    task.trainer = std::make_unique<Trainer>(child.genome, child.seed, cfg_.training);
    task.clock = clock;
    task.epoch_cost = cost_epoch(NetDims::from_genome(child.genome), static_cast<int>(Genome::kTextLength));

    Event e = at(EventKind::Spawn, clock);
    e.organism = child.organism;
    e.parent = parent;
    e.genome = child.genome;
    e.seed = child.seed;
    emit(std::move(e));
    live_.emplace(child.organism, std::move(task));
    ++spawned_;
  }

  void reject(const ChildSpec& child, std::optional<OrganismId> parent, const char* reason, double clock) {
    Event e = at(EventKind::Rejected, clock);
    e.organism = child.organism;
    e.parent = parent;
    e.reason = reason;
    emit(std::move(e));
  }

  OrganismId pick_next() const {
    std::vector<ScheduleSlot> slots;
    slots.reserve(live_.size());
    for (const auto& [id, task] : live_) slots.push_back(ScheduleSlot{id, task.clock, task.epoch_cost});
    return next_to_run(slots);
  }

  void advance(OrganismId id) {
    Task& task = live_.at(id);
    task.trainer->step();
    task.clock += task.epoch_cost;
    now_ = task.clock;

    if (task.trainer->matured()) {
      Event m = at(EventKind::Maturity, now_);
      m.organism = id;
      m.genome = task.cfg.genome;
      m.epochs = task.trainer->epochs();
      m.cost = static_cast<double>(task.trainer->epochs()) * task.epoch_cost;
      emit(std::move(m));

      SimNursery nursery(*this);
      std::mt19937_64 rng(mutation_seed(task.cfg.seed, id));
      emit_offspring(task.cfg, task.trainer->generated(), rng, nursery);
      const double clock = task.clock;
      registry_.remove(id);
      live_.erase(id);
      for (const ChildSpec& child : nursery.queued) admit(child, id, clock);
    } else if (task.trainer->exhausted()) {
      Event s = at(EventKind::Sterile, now_);
      s.organism = id;
      s.epochs = task.trainer->epochs();
      emit(std::move(s));
      registry_.remove(id);
      live_.erase(id);
    }
  }

  const PopulationConfig& cfg_;
  std::optional<Arena> arena_;
  std::vector<Event> events_;
  Registry registry_;
  std::map<OrganismId, Task> live_;
  std::uint64_t spawned_ = 0;
  bool closing_ = false;
  OrganismId next_id_ = 1;
  double now_ = 0.0;
};

}  // namespace

RunResult sim_run(const PopulationConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("invalid population config");
  return Simulation(cfg).run();
}

// ---------------------------------------------------------------------------
// Process supervisor

namespace {

class Supervisor {
 public:
  explicit Supervisor(const PopulationConfig& cfg) : cfg_(cfg), arena_(cfg.arena) {}

  RunResult run() {
    if (!arena_.log().read_all().empty()) throw ArenaCorrupt("arena " + cfg_.arena.string() + " already has events");
    arena_.save_settings(settings_from(cfg_));
    write_file_atomic(arena_.genome_path(1), serialize_genome(cfg_.ancestor));
    write_file_atomic(arena_.supervisor_pid_path(), std::to_string(::getpid()) + "\n");
    ::prctl(PR_SET_CHILD_SUBREAPER, 1);

    std::filesystem::path host = cfg_.host.empty() ? current_executable() : cfg_.host;
    if (cfg_.copy_host) {
      std::filesystem::copy_file(host, arena_.host_copy_path(1), std::filesystem::copy_options::overwrite_existing);
      std::filesystem::permissions(arena_.host_copy_path(1), std::filesystem::perms::owner_all,
                                   std::filesystem::perm_options::add);
      host = arena_.host_copy_path(1);
    }
    try {
      group_ = launch_process(host, {"run-organism", "--genome", arena_.genome_path(1).string(), "--arena",
                                     arena_.root().string(), "--seed", std::to_string(cfg_.seed)},
                              0, arena_.root() / "organisms.out");
    } catch (const std::system_error& err) {
      throw SpawnFailure(err.what());
    }

    bool done = false;
    while (!done) {
      std::this_thread::sleep_for(cfg_.poll_interval);
      reap();
      done = arena_.log().transact([&](EventLog::Txn& txn) { return poll(txn); });
    }
    ::kill(-group_, SIGKILL);
    drain_children();
    std::filesystem::remove(arena_.supervisor_pid_path());

    auto events = arena_.log().read_all();
    auto report = replay_validate(events, cfg_.capacity);
    return RunResult{std::move(events), report};
  }

 private:
  void reap() {
    int status = 0;
    pid_t pid;
    while ((pid = ::waitpid(-1, &status, WNOHANG)) > 0) exited_[pid] = status;
  }

  bool has_children() {
    int status = 0;
    pid_t pid = ::waitpid(-1, &status, WNOHANG);
    if (pid > 0) exited_[pid] = status;
    return !(pid < 0 && errno == ECHILD);
  }

  void drain_children() {
    int status = 0;
    while (::waitpid(-1, &status, 0) > 0 || errno == EINTR) {
    }
  }

  Event now(EventKind kind) const {
    Event e;
    e.kind = kind;
    e.wall = unix_time();
    return e;
  }

  bool poll(EventLog::Txn& txn) {
    // Organisms that logged their own terminal event leave the registry.
    for (const Event& e : txn.read_all()) {
      if (e.seq <= synced_seq_) continue;
      synced_seq_ = e.seq;
      if ((e.kind == EventKind::Replication || e.kind == EventKind::Sterile) && e.organism)
        registry_.remove(*e.organism);
    }

    // Processes that vanished without a record.
    std::vector<Registry::Entry> vanished;
    for (const auto& entry : registry_.entries())
      if (exited_.count(entry.pid) || !process_alive(entry.pid)) vanished.push_back(entry);
    for (const auto& entry : vanished) {
      Event e = now(EventKind::Sterile);
      e.organism = entry.organism;
      auto it = exited_.find(entry.pid);
      if (it != exited_.end())
        e.exit_code = WIFEXITED(it->second) ? WEXITSTATUS(it->second) : 128 + WTERMSIG(it->second);
      e.reason = "exited without a record";
      synced_seq_ = txn.append(e).seq;
      registry_.remove(entry.organism);
    }

    for (const SpawnRequest& req : pending_requests(arena_)) {
      std::filesystem::remove(arena_.request_path(req.organism));
      const bool closing = spawned_ >= cfg_.budget;
      if (!closing && !process_alive(req.pid)) continue;
      auto result = registry_.admit(req.organism, req.pid, cfg_.capacity, closing, cfg_.eviction);
      if (result.decision == AdmitDecision::Rejected) {
        if (closing) closing_ = true;
        ::kill(req.pid, SIGKILL);
        Event e = now(EventKind::Rejected);
        e.organism = req.organism;
        e.parent = req.parent;
        e.pid = req.pid;
        e.reason = closing ? "budget exhausted" : "arena full";
        synced_seq_ = txn.append(e).seq;
        continue;
      }
      if (result.evicted) {
        ::kill(result.evicted->pid, SIGKILL);
        Event e = now(EventKind::Eviction);
        e.organism = result.evicted->organism;
        e.pid = result.evicted->pid;
        e.by = req.organism;
        synced_seq_ = txn.append(e).seq;
      }
      Event e = now(EventKind::Spawn);
      e.organism = req.organism;
      e.parent = req.parent;
      e.genome = req.genome;
      e.seed = req.seed;
      e.pid = req.pid;
      synced_seq_ = txn.append(e).seq;
      write_file_atomic(arena_.grant_path(req.organism), "ok\n");
      ++spawned_;
    }

    if (closing_) {
      ::kill(-group_, SIGKILL);
      Event e = now(EventKind::Shutdown);
      e.alive = registry_.size();
      txn.append(e);
      return true;
    }
    if (registry_.empty() && pending_requests(arena_).empty() && !has_children()) {
      txn.append(now(EventKind::Extinction));
      return true;
    }
    return false;
  }

  const PopulationConfig& cfg_;
  Arena arena_;
  Registry registry_;
  std::map<pid_t, int> exited_;
  std::uint64_t synced_seq_ = 0;
  std::uint64_t spawned_ = 0;
  bool closing_ = false;
  pid_t group_ = -1;
};

}  // namespace

RunResult supervisor_run(const PopulationConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("invalid population config");
  if (cfg.arena.empty()) throw std::invalid_argument("process mode needs an arena directory");
  return Supervisor(cfg).run();
}

}  // namespace ouroboros
