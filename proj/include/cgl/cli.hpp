#pragma once

// The `cgl` command-line tool: synth, pgt, train, eval, infer, report.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.
// Environment: CGL_SEED overrides the seed when --seed is absent;
// CGL_THREADS sets the worker count for pseudo-label generation;
// CGL_SIMD selects the kernel variant (scalar, avx2, auto).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CliInvocation {
  std::string subcommand;
  std::filesystem::path config;               // optional TrainConfig file
  std::filesystem::path data;                 // annotations.json
  std::filesystem::path model;                // checkpoint
  std::filesystem::path out;                  // output file or directory
  std::filesystem::path mask_out;             // infer: raw mask PNG
  std::filesystem::path resume;               // train: state to resume from
  std::filesystem::path per_image;            // eval: per-image CSV
  std::vector<std::filesystem::path> inputs;  // infer: image; report: histories
  std::vector<std::string> labels;            // report: run labels
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t count = 200;
  std::size_t families = 20;
  std::size_t size = 64;
  std::string split = "test";  // eval: train, test or all
  int verbosity = 1;           // 0 quiet, 1 normal, 2 verbose
  std::string help_text;       // set for subcommand "help"
};

/// Throws UsageError (with the usage text in what()) on bad arguments.
/// `--help` yields an invocation with subcommand "help".
CliInvocation parse_invocation(const std::vector<std::string>& args);

/// Full command: parse, validate paths, execute. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cgl::cli
