#include "ouroboros/arena.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <regex>
#include <system_error>

#include <nlohmann/json.hpp>

namespace ouroboros {

using nlohmann::json;

std::string_view to_string(FeedbackMode mode) { return mode == FeedbackMode::Continuous ? "continuous" : "onehot"; }

FeedbackMode feedback_mode_from_string(std::string_view name) {
  if (name == "continuous") return FeedbackMode::Continuous;
  if (name == "onehot") return FeedbackMode::OneHot;
  throw std::invalid_argument("unknown feedback mode: " + std::string(name));
}

Arena::Arena(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(requests_dir());
  log_ = std::make_unique<EventLog>(events_path());
}

std::filesystem::path Arena::genome_path(OrganismId id) const { return root_ / ("g" + std::to_string(id) + ".org"); }
std::filesystem::path Arena::host_copy_path(OrganismId id) const { return root_ / ("h" + std::to_string(id)); }
std::filesystem::path Arena::request_path(OrganismId id) const {
  return requests_dir() / (std::to_string(id) + ".req");
}
std::filesystem::path Arena::grant_path(OrganismId id) const { return requests_dir() / (std::to_string(id) + ".ok"); }

ArenaSettings Arena::load_settings() const {
  ArenaSettings s;
  if (!std::filesystem::exists(settings_path())) return s;
  json j = json::parse(read_text_file(settings_path()));
  s.training.max_epochs = j.value("max_epochs", s.training.max_epochs);
  s.training.eval_every = j.value("eval_every", s.training.eval_every);
  s.training.feedback = feedback_mode_from_string(j.value("feedback", std::string(to_string(s.training.feedback))));
  s.training.clip_norm = j.value("clip_norm", s.training.clip_norm);
  s.mutation.sigma_lr = j.value("sigma_lr", s.mutation.sigma_lr);
  s.mutation.int_delta_max = j.value("int_delta_max", s.mutation.int_delta_max);
  s.copy_host = j.value("copy_host", s.copy_host);
  s.capacity = j.value("capacity", s.capacity);
  s.budget = j.value("budget", s.budget);
  s.eviction = j.value("eviction", s.eviction);
  s.seed = j.value("seed", s.seed);
  return s;
}

void Arena::save_settings(const ArenaSettings& s) const {
  json j;
  j["max_epochs"] = s.training.max_epochs;
  j["eval_every"] = s.training.eval_every;
  j["feedback"] = to_string(s.training.feedback);
  j["clip_norm"] = s.training.clip_norm;
  j["sigma_lr"] = s.mutation.sigma_lr;
  j["int_delta_max"] = s.mutation.int_delta_max;
  j["copy_host"] = s.copy_host;
  j["capacity"] = s.capacity;
  j["budget"] = s.budget;
  j["eviction"] = s.eviction;
  j["seed"] = s.seed;
  write_file_atomic(settings_path(), j.dump(2) + "\n");
}

std::optional<pid_t> Arena::live_supervisor() const {
  if (!std::filesystem::exists(supervisor_pid_path())) return std::nullopt;
  try {
    auto pid = static_cast<pid_t>(std::stol(read_text_file(supervisor_pid_path())));
    if (pid > 0 && process_alive(pid)) return pid;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

std::optional<OrganismId> Arena::id_from_genome_path(const std::filesystem::path& path) {
  static const std::regex pattern(R"(g([0-9]{1,18})\.org)");
  std::smatch m;
  const std::string name = path.filename().string();
  if (!std::regex_match(name, m, pattern)) return std::nullopt;
  return std::stoull(m[1].str());
}

OrganismId next_organism_id(const std::vector<Event>& events) {
  OrganismId top = 0;
  for (const Event& e : events) {
    if (e.organism) top = std::max(top, *e.organism);
    for (OrganismId c : e.children) top = std::max(top, c);
  }
  return top + 1;
}

std::optional<OrganismId> announced_parent(const std::vector<Event>& events, OrganismId child) {
  for (const Event& e : events) {
    if (e.kind != EventKind::Replication || !e.organism) continue;
    if (std::find(e.children.begin(), e.children.end(), child) != e.children.end()) return e.organism;
  }
  return std::nullopt;
}

void write_request(const Arena& arena, const SpawnRequest& r) {
  json j;
  j["id"] = r.organism;
  if (r.parent) j["parent"] = *r.parent;
  j["pid"] = r.pid;
  j["seed"] = r.seed;
  j["genome"] = serialize_genome(r.genome);
  write_file_atomic(arena.request_path(r.organism), j.dump() + "\n");
}

std::vector<SpawnRequest> pending_requests(const Arena& arena) {
  std::vector<SpawnRequest> out;
  for (const auto& entry : std::filesystem::directory_iterator(arena.requests_dir())) {
    if (entry.path().extension() != ".req") continue;
    try {
      json j = json::parse(read_text_file(entry.path()));
      SpawnRequest r;
      r.organism = j.at("id").get<OrganismId>();
      if (j.contains("parent")) r.parent = j.at("parent").get<OrganismId>();
      r.pid = j.at("pid").get<pid_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.genome = parse_genome(j.at("genome").get<std::string>());
      out.push_back(r);
    } catch (const std::exception&) {
      // half-visible or foreign file; the rename protocol makes this rare
    }
  }
  std::sort(out.begin(), out.end(), [](const SpawnRequest& a, const SpawnRequest& b) { return a.organism < b.organism; });
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  write_text_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

std::filesystem::path current_executable() { return std::filesystem::read_symlink("/proc/self/exe"); }

pid_t launch_process(const std::filesystem::path& program, const std::vector<std::string>& args, pid_t pgid,
                     const std::filesystem::path& output) {
  std::vector<std::string> argv_store;
  argv_store.push_back(program.string());
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) throw std::system_error(errno, std::generic_category(), "fork");
  if (pid == 0) {
    if (pgid >= 0) ::setpgid(0, pgid);
    if (!output.empty()) {
      int fd = ::open(output.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
      if (fd >= 0) {
        ::dup2(fd, STDOUT_FILENO);
        ::dup2(fd, STDERR_FILENO);
        ::close(fd);
      }
    }
    ::execv(argv[0], argv.data());
    ::_exit(127);
  }
  if (pgid >= 0) ::setpgid(pid, pgid == 0 ? pid : pgid);  // both sides, avoids the exec race
  return pid;
}

bool process_alive(pid_t pid) { return pid > 0 && (::kill(pid, 0) == 0 || errno == EPERM); }

double unix_time() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

}  // namespace ouroboros
