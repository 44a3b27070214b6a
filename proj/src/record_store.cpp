#include "skd/errors.hpp"
#include "skd/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

namespace skd {

namespace fs = std::filesystem;
using nlohmann::json;

json ExperimentRecord::to_json() const {
  return {{"digest", digest},
          {"config", config},
          {"dataset", dataset},
          {"task", task},
          {"method", method},
          {"fraction", fraction},
          {"seed", seed},
          {"teacher_variant", teacher_variant},
          {"student_variant", student_variant},
          {"metric_name", metric_name},
          {"metric", metric},
          {"teacher_digest", teacher_digest},
          {"train_log", train_log},
          {"checkpoints", checkpoints},
          {"framework_version", framework_version},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"wall_seconds", wall_seconds}};
}

ExperimentRecord ExperimentRecord::from_json(const json& j) {
  try {
    ExperimentRecord r;
    r.digest = j.at("digest").get<std::string>();
    r.config = j.at("config");
    r.dataset = j.at("dataset").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.fraction = j.at("fraction").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    r.teacher_variant = j.at("teacher_variant").get<int>();
    r.student_variant = j.at("student_variant").get<int>();
    r.metric_name = j.at("metric_name").get<std::string>();
    r.metric = j.at("metric").get<double>();
    r.teacher_digest = j.at("teacher_digest").get<std::string>();
    r.train_log = j.at("train_log").get<std::string>();
    r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    r.framework_version = j.at("framework_version").get<std::string>();
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed experiment record: ") + e.what());
  }
}

bool ExperimentRecord::operator==(const ExperimentRecord& other) const { return to_json() == other.to_json(); }

namespace {

// Exclusive advisory lock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IntegrityError("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw IntegrityError("cannot lock " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw IntegrityError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<ExperimentRecord> parse_index(const std::string& text, const fs::path& path) {
  std::vector<ExperimentRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(ExperimentRecord::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

RecordStore::RecordStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path RecordStore::run_dir(const std::string& digest) const { return root_ / "runs" / digest; }

fs::path RecordStore::teacher_dir(const std::string& digest) const { return root_ / "teachers" / digest; }

fs::path RecordStore::index_path() const { return root_ / "index.jsonl"; }

std::optional<ExperimentRecord> RecordStore::find(const std::string& digest) const {
  const auto path = run_dir(digest) / "record.json";
  if (!fs::exists(path)) return std::nullopt;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
  auto record = ExperimentRecord::from_json(j);
  if (record.digest != digest) {
    throw IntegrityError(path.string() + " holds digest " + record.digest + ", expected " + digest);
  }
  return record;
}

void RecordStore::add(const ExperimentRecord& record) {
  FileLock lock(root_ / "index.lock");
  const auto existing = parse_index(fs::exists(index_path()) ? read_file(index_path()) : std::string(), index_path());
  for (const auto& r : existing) {
    if (r.digest != record.digest) continue;
    if (r.config != record.config) {
      throw IntegrityError("digest " + record.digest + " already recorded for a different config");
    }
    // An earlier identical run stays authoritative; the index is append-only.
    return;
  }
  const auto dir = run_dir(record.digest);
  fs::create_directories(dir);
  write_atomic(dir / "record.json", record.to_json().dump(2) + "\n");
  std::string text = fs::exists(index_path()) ? read_file(index_path()) : std::string();
  if (!text.empty() && text.back() != '\n') text += '\n';
  text += record.to_json().dump() + "\n";
  write_atomic(index_path(), text);
}

std::vector<ExperimentRecord> RecordStore::records() const {
  if (!fs::exists(index_path())) return {};
  return parse_index(read_file(index_path()), index_path());
}

fs::path runs_root_from_env() {
  if (const char* env = std::getenv("SKD_RUNS_DIR"); env && *env) return fs::path(env);
  return fs::path("runs");
}

}  // namespace skd
