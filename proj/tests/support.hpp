#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "actgrad/cifar.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Synthetic batches in the official layout, written once per build tree.
inline fs::path synthetic_data_dir() {
  const fs::path dir = ACTGRAD_TEST_DATA_DIR;
  if (!actgrad::cifar_files_present(dir)) actgrad::write_synthetic_cifar_dir(dir, 0);
  return dir;
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("actgrad_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

/// Runs the CLI with the given arguments; returns its exit status.
inline int run_cli(const std::string& args, const fs::path& log = "/dev/null") {
  const std::string cmd = std::string("'") + ACTGRAD_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The CSV text with its last column dropped from every line.
inline std::string without_last_column(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace testsupport
