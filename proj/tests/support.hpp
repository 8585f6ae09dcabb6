#ifndef DPGRAD_TESTS_SUPPORT_HPP_
#define DPGRAD_TESTS_SUPPORT_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

// Standard normal CDF written directly against erf, kept separate from the
// library's erfc-based path so the two act as cross-checks.
inline double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Reference probability that one coordinate of the thresholded release
// reproduces `sym` given the noiseless vote sum f, threshold beta*N and
// noise sigma.
inline double outcome_factor(double f, int sym, double bn, double sigma) {
  const double hi = (bn - f) / sigma;   // noisy sum >= bn  <=>  n >= bn - f
  const double lo = (-bn - f) / sigma;  // noisy sum <= -bn <=>  n <= -bn - f
  if (sym > 0) return 1.0 - phi(hi);
  if (sym < 0) return phi(lo);
  return phi(hi) - phi(lo);
}

// Welford accumulator for Monte Carlo summaries.
struct RunningStats {
  uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void push(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_mean() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// Fresh scratch directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto p = base / (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path_ = p;
        return;
      }
    }
    std::abort();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs `cmd` with stdout/stderr captured to files inside `dir`; returns the
// exit status (or -1 when the shell failed outright).
struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::string& cmd, const std::filesystem::path& dir) {
  const auto out_path = dir / "stdout.txt";
  const auto err_path = dir / "stderr.txt";
  const std::string full = cmd + " > " + out_path.string() + " 2> " + err_path.string();
  const int rc = std::system(full.c_str());
  CliResult r;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  if (rc == -1) return r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return r;
}

}  // namespace testsupport

#endif  // DPGRAD_TESTS_SUPPORT_HPP_
