// Stage orchestration behind the command-line tool: every stage reads and
// writes artifacts inside one run directory and records them in its manifest.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace slicetwin {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { exit_ok = 0, exit_usage = 1, exit_missing = 2, exit_failed = 3 };

class StageError : public std::runtime_error {
 public:
  StageError(int code, std::string stage, const std::string& what)
      : std::runtime_error(what), code_(code), stage_(std::move(stage)) {}
  int code() const { return code_; }
  const std::string& stage() const { return stage_; }

 private:
  int code_;
  std::string stage_;
};

struct RunManifest {
  struct Stage {
    std::string command;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, std::string> artifacts;  // name -> path relative to the run directory
    double wall_clock_s = 0;
  };

  std::uint64_t scenario_hash = 0;  // fnv1a of scenario.cfg
  std::string scenario_name;
  std::string version = kToolVersion;
  std::map<std::string, Stage> stages;

  static std::filesystem::path path_in(const std::filesystem::path& run_dir);
  // Throws StageError(exit_missing) when the directory has no manifest.
  static RunManifest load(const std::filesystem::path& run_dir);
  void save(const std::filesystem::path& run_dir) const;
  std::string to_json() const;
  static RunManifest from_json(const std::string& text);

  // Throws StageError(exit_missing, stage) unless the stage ran and every
  // artifact it names still exists.
  void require(const std::filesystem::path& run_dir, const std::string& stage) const;
};

// Parses and runs one command line (without the program name). Messages go
// to out/err; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slicetwin
