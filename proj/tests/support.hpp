#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/objective.hpp"
#include "ifa/params.hpp"

namespace ifa::test {

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ifa_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Plain-formula Pr(y = k | x), written independently of the library's
// log-space evaluation.
inline double naive_category_prob(const std::vector<double>& alpha, const std::vector<double>& beta,
                                  const std::vector<double>& x, int k, double D) {
  const int C = static_cast<int>(alpha.size()) + 1;
  double eta = 0.0;
  for (std::size_t p = 0; p < beta.size(); ++p) eta += beta[p] * x[p];
  auto ge = [&](int b) {
    if (b <= 0) return 1.0;
    if (b >= C) return 0.0;
    return 1.0 / (1.0 + std::exp(-D * (alpha[static_cast<std::size_t>(b - 1)] + eta)));
  };
  return ge(k) - ge(k + 1);
}

struct FdReport {
  std::string block;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central finite differences of the batch IW-ELBO over every parameter,
// grouped by block. Relative error is |a - f| / max(|a|, |f|, floor).
inline std::vector<FdReport> finite_difference_check(const ItemBank& bank, const EncoderParams& enc,
                                                     const Dataset& data,
                                                     const std::vector<std::size_t>& rows,
                                                     const NoiseBlock& noise, const ObjectiveSpec& spec,
                                                     const std::vector<double>& analytic, double h = 1e-5,
                                                     double floor = 1e-6) {
  const auto layout = make_layout(bank, enc);
  const auto xi = pack(bank, enc);
  std::vector<FdReport> out;
  ItemBank b = bank;
  EncoderParams e = enc;
  for (const auto& block : layout.blocks) {
    FdReport rep{block.name};
    for (std::size_t k = block.offset; k < block.offset + block.size; ++k) {
      auto xp = xi;
      xp[k] += h;
      unpack(xp, b, e);
      const double fp = iw_elbo(b, e, data, rows, noise, spec).iw_elbo;
      xp[k] = xi[k] - h;
      unpack(xp, b, e);
      const double fm = iw_elbo(b, e, data, rows, noise, spec).iw_elbo;
      const double fd = (fp - fm) / (2.0 * h);
      const double abs_err = std::abs(fd - analytic[k]);
      const double scale = std::max({std::abs(fd), std::abs(analytic[k]), floor});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      rep.max_rel_error = std::max(rep.max_rel_error, abs_err / scale);
    }
    out.push_back(rep);
  }
  return out;
}

// The J=4, P=2, C=3 instance used for gradient checks.
struct GradInstance {
  Dataset data;
  ItemBank bank;
  EncoderParams enc;
  std::vector<std::size_t> rows;
};

inline GradInstance small_grad_instance(std::uint64_t seed = 1) {
  GradInstance g;
  const auto gp = small_template(4, 2, 3, seed);
  g.data = simulate(gp, 12, derive_seed(seed, 100));
  g.bank = init_item_bank(4, 2, g.data.category_counts, derive_seed(seed, 101));
  // Larger loadings than the initializer so every term contributes.
  for (auto& l : g.bank.loadings) l *= 3.0;
  g.enc = init_encoder({item_offsets(g.data.category_counts).back(), {5}, 2}, derive_seed(seed, 102));
  g.rows = {1, 4, 7};
  return g;
}

}  // namespace ifa::test
