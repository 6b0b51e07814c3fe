#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "profuse/rng.hpp"
#include "profuse/types.hpp"

namespace testsupport {

struct Instance {
  profuse::Vector log_risks;
  std::vector<profuse::SurvivalLabel> labels;
};

/// Random survival instance with at least one event; times may tie (drawn
/// from a small integer grid) to exercise tie handling.
inline Instance random_instance(profuse::Rng& rng, int max_n) {
  const int n = static_cast<int>(rng.uniform_int(2, max_n));
  Instance inst;
  inst.log_risks = profuse::Vector(n);
  inst.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    inst.log_risks[i] = rng.normal();
    inst.labels[static_cast<std::size_t>(i)].time_months =
        static_cast<double>(rng.uniform_int(1, 8));
    inst.labels[static_cast<std::size_t>(i)].event = rng.uniform() < 0.7;
  }
  // Guarantee at least one observed event.
  inst.labels[static_cast<std::size_t>(rng.uniform_int(0, n - 1))].event = true;
  return inst;
}

/// Literal negative log partial likelihood: every event contributes its own
/// full risk-set sum, evaluated without any stabilization.
inline double naive_cox_loss(const profuse::Vector& h,
                             const std::vector<profuse::SurvivalLabel>& labels) {
  const int n = static_cast<int>(h.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!labels[static_cast<std::size_t>(i)].event) continue;
    double sum = 0.0;
    for (int j = 0; j < n; ++j)
      if (labels[static_cast<std::size_t>(j)].time_months >=
          labels[static_cast<std::size_t>(i)].time_months)
        sum += std::exp(h[j]);
    loss += -h[i] + std::log(sum);
  }
  return loss;
}

/// Pairwise Mann-Whitney statistic, ties counted half.
inline double naive_auc(const profuse::Vector& scores, const std::vector<char>& labels) {
  double num = 0.0, den = 0.0;
  const int n = static_cast<int>(scores.size());
  for (int i = 0; i < n; ++i) {
    if (!labels[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      if (labels[static_cast<std::size_t>(j)]) continue;
      den += 1.0;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  return num / den;
}

inline double rel_error(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

/// Self-cleaning scratch directory.
struct TempDir {
  std::string path;
  TempDir() {
    char tmpl[] = "/tmp/profuse_test_XXXXXX";
    char* p = ::mkdtemp(tmpl);
    if (!p) throw std::runtime_error("mkdtemp failed");
    path = p;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string file(const std::string& name) const { return path + "/" + name; }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path);
}

inline bool bit_equal(const profuse::Matrix& a, const profuse::Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace testsupport
