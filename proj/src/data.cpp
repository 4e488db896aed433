#include "ifa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include "ifa/errors.hpp"
#include "ifa/rng.hpp"

namespace ifa {

void Dataset::validate() const {
  if (category_counts.size() != n_items) {
    throw DataError("dataset has " + std::to_string(n_items) + " items but " +
                    std::to_string(category_counts.size()) + " category counts");
  }
  if (responses.size() != n_respondents * n_items) {
    throw DataError("response matrix size does not match N x J");
  }
  for (std::size_t j = 0; j < n_items; ++j) {
    if (category_counts[j] < 2) {
      throw DataError("item " + std::to_string(j) + " has fewer than 2 categories");
    }
  }
  for (std::size_t i = 0; i < n_respondents; ++i) {
    for (std::size_t j = 0; j < n_items; ++j) {
      const int y = at(i, j);
      if (y < 0 || y >= category_counts[j]) {
        throw DataError("response " + std::to_string(y) + " at row " + std::to_string(i) +
                        ", item " + std::to_string(j) + " outside 0.." +
                        std::to_string(category_counts[j] - 1));
      }
    }
  }
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  Dataset out;
  out.n_items = n_items;
  out.n_respondents = rows.size();
  out.category_counts = category_counts;
  out.responses.reserve(rows.size() * n_items);
  for (std::size_t r : rows) {
    auto src = row(r);
    out.responses.insert(out.responses.end(), src.begin(), src.end());
  }
  return out;
}

std::vector<std::size_t> item_offsets(std::span<const int> category_counts) {
  std::vector<std::size_t> off(category_counts.size() + 1, 0);
  for (std::size_t j = 0; j < category_counts.size(); ++j) {
    off[j + 1] = off[j] + static_cast<std::size_t>(category_counts[j]);
  }
  return off;
}

void active_columns(std::span<const int> y, std::span<const std::size_t> offsets,
                    std::span<std::size_t> out) {
  for (std::size_t j = 0; j < y.size(); ++j) out[j] = offsets[j] + static_cast<std::size_t>(y[j]);
}

EncodedMatrix one_hot(const Dataset& d) {
  EncodedMatrix m;
  auto off = item_offsets(d.category_counts);
  m.rows = d.n_respondents;
  m.cols = off.back();
  m.offsets.assign(off.begin(), off.end() - 1);
  m.values.assign(m.rows * m.cols, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m.rows); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < d.n_items; ++j) {
      m.values[ui * m.cols + off[j] + static_cast<std::size_t>(d.at(ui, j))] = 1.0;
    }
  }
  return m;
}

namespace {

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool looks_numeric(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    auto cells = split(view, options.delimiter);
    if (first) {
      first = false;
      // A header is a first line none of whose cells is a number.
      if (std::none_of(cells.begin(), cells.end(), [](auto c) { return looks_numeric(trim(c)); })) {
        continue;
      }
    }
    if (d.n_items == 0) {
      d.n_items = cells.size();
    } else if (cells.size() != d.n_items) {
      throw DataError("shape error: line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(d.n_items));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto cell = trim(cells[j]);
      int v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || p != cell.data() + cell.size() || v < 0) {
        throw DataError("parse error at line " + std::to_string(line_no) + ", column " +
                        std::to_string(j + 1) + ": '" + std::string(cell) +
                        "' is not a non-negative integer");
      }
      d.responses.push_back(v);
    }
    ++d.n_respondents;
  }
  if (d.n_respondents == 0) throw DataError(path.string() + " contains no responses");

  if (options.category_counts) {
    if (options.category_counts->size() != d.n_items) {
      throw DataError("category override has " + std::to_string(options.category_counts->size()) +
                      " entries for " + std::to_string(d.n_items) + " items");
    }
    d.category_counts = *options.category_counts;
  } else {
    d.category_counts.assign(d.n_items, 0);
    std::vector<int> min_code(d.n_items, std::numeric_limits<int>::max());
    for (std::size_t i = 0; i < d.n_respondents; ++i) {
      for (std::size_t j = 0; j < d.n_items; ++j) {
        d.category_counts[j] = std::max(d.category_counts[j], d.at(i, j) + 1);
        min_code[j] = std::min(min_code[j], d.at(i, j));
      }
    }
    for (std::size_t j = 0; j < d.n_items; ++j) {
      if (min_code[j] == d.category_counts[j] - 1) {
        throw DataError("validation error: column " + std::to_string(j + 1) +
                        " has a single observed category");
      }
    }
  }
  d.validate();
  return d;
}

void write_csv(const Dataset& d, const std::filesystem::path& path, char delimiter) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  std::string buf;
  for (std::size_t i = 0; i < d.n_respondents; ++i) {
    buf.clear();
    for (std::size_t j = 0; j < d.n_items; ++j) {
      if (j) buf.push_back(delimiter);
      buf += std::to_string(d.at(i, j));
    }
    buf.push_back('\n');
    out << buf;
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<int> GeneratingParams::category_counts() const {
  std::vector<int> c(intercepts.size());
  for (std::size_t j = 0; j < intercepts.size(); ++j) c[j] = static_cast<int>(intercepts[j].size()) + 1;
  return c;
}

void GeneratingParams::validate() const {
  const auto J = n_items();
  const auto P = latent_dim();
  if (J == 0 || P == 0) throw DataError("generating loadings must be non-empty");
  if (intercepts.size() != J) throw DataError("need one intercept vector per item");
  for (std::size_t j = 0; j < J; ++j) {
    if (intercepts[j].empty()) throw DataError("item " + std::to_string(j) + " has no intercepts");
    for (std::size_t k = 1; k < intercepts[j].size(); ++k) {
      if (!(intercepts[j][k] < intercepts[j][k - 1])) {
        throw DataError("intercepts of item " + std::to_string(j) + " are not strictly decreasing");
      }
    }
  }
  if (!loadings.allFinite()) throw DataError("generating loadings must be finite");
  if (factor_corr.rows() != static_cast<Eigen::Index>(P) || factor_corr.cols() != static_cast<Eigen::Index>(P)) {
    throw DataError("factor correlation matrix must be P x P");
  }
  for (Eigen::Index a = 0; a < factor_corr.rows(); ++a) {
    if (std::abs(factor_corr(a, a) - 1.0) > 1e-12) throw DataError("factor correlations need a unit diagonal");
    for (Eigen::Index b = 0; b < a; ++b) {
      if (std::abs(factor_corr(a, b) - factor_corr(b, a)) > 1e-12) {
        throw DataError("factor correlation matrix is not symmetric");
      }
    }
  }
  if (!(scaling > 0.0)) throw DataError("scaling constant D must be positive");
  Eigen::LLT<Eigen::MatrixXd> llt(factor_corr);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("factor correlation matrix is not positive definite");
  }
}

SimulatedData simulate_with_scores(const GeneratingParams& gp, std::size_t n, std::uint64_t seed) {
  gp.validate();
  const auto J = gp.n_items();
  const auto P = gp.latent_dim();
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(gp.factor_corr).matrixL();

  SimulatedData sim;
  sim.data.n_respondents = n;
  sim.data.n_items = J;
  sim.data.category_counts = gp.category_counts();
  sim.data.responses.resize(n * J);
  sim.scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(P));

  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  Eigen::VectorXd z(static_cast<Eigen::Index>(P));
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index p = 0; p < z.size(); ++p) z(p) = normal(rng);
    const Eigen::VectorXd x = chol * z;
    sim.scores.row(static_cast<Eigen::Index>(i)) = x.transpose();
    for (std::size_t j = 0; j < J; ++j) {
      const double eta = gp.loadings.row(static_cast<Eigen::Index>(j)).dot(x);
      // Inverse-CDF draw over the category probabilities. The cumulative
      // Pr(y >= k) falls with k, so y is the number of boundaries with
      // u < Pr(y >= k).
      const double u = unif(rng);
      int y = 0;
      for (double a : gp.intercepts[j]) {
        const double p_ge = 1.0 / (1.0 + std::exp(-gp.scaling * (a + eta)));
        if (u < p_ge) ++y; else break;
      }
      sim.data.responses[i * J + j] = y;
    }
  }
  return sim;
}

Dataset simulate(const GeneratingParams& gp, std::size_t n, std::uint64_t seed) {
  return simulate_with_scores(gp, n, seed).data;
}

namespace {

// Factor correlations of the five-factor personality solution (E, ES, A, C, O).
constexpr double kFiveFactorCorr[5][5] = {
    {1.00, -0.18, 0.16, 0.11, 0.17},
    {-0.18, 1.00, -0.01, -0.11, -0.08},
    {0.16, -0.01, 1.00, 0.06, 0.08},
    {0.11, -0.11, 0.06, 1.00, -0.01},
    {0.17, -0.08, 0.08, -0.01, 1.00},
};

// Loadings and intercept patterns for the ten items of a factor.
constexpr double kBlockLoadings[10] = {1.3, 0.9, 1.1, 0.7, 1.5, 1.0, 0.8, 1.2, 1.4, 0.6};
constexpr double kBlockShift[10] = {0.3, -0.2, 0.5, 0.0, -0.4, 0.2, -0.1, 0.4, -0.3, 0.1};
constexpr double kBaseIntercepts[4] = {2.0, 0.8, -0.4, -1.7};

}  // namespace

GeneratingParams simple_structure_template(int categories, std::uint64_t seed) {
  if (categories != 5 && categories != 2) {
    throw ConfigError("the built-in template supports 5 or 2 categories");
  }
  constexpr std::size_t P = 5;
  constexpr std::size_t per = 10;
  GeneratingParams gp;
  gp.loadings = Eigen::MatrixXd::Zero(P * per, P);
  gp.factor_corr.resize(P, P);
  for (std::size_t a = 0; a < P; ++a)
    for (std::size_t b = 0; b < P; ++b) gp.factor_corr(a, b) = kFiveFactorCorr[a][b];

  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, 3);
  for (std::size_t f = 0; f < P; ++f) {
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t j = f * per + k;
      gp.loadings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) = kBlockLoadings[k];
      std::vector<double> alpha(4);
      for (std::size_t c = 0; c < 4; ++c) alpha[c] = kBaseIntercepts[c] + kBlockShift[k];
      if (categories == 2) alpha = {alpha[static_cast<std::size_t>(pick(rng))]};
      gp.intercepts.push_back(std::move(alpha));
    }
  }
  return gp;
}

GeneratingParams small_template(std::size_t n_items, std::size_t latent_dim, int categories,
                                std::uint64_t seed) {
  if (latent_dim == 0 || n_items < latent_dim) throw ConfigError("small_template needs J >= P >= 1");
  if (categories < 2) throw ConfigError("small_template needs at least 2 categories");
  GeneratingParams gp;
  gp.loadings = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(latent_dim));
  gp.factor_corr = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(latent_dim));
  for (Eigen::Index a = 0; a < gp.factor_corr.rows(); ++a)
    for (Eigen::Index b = 0; b < a; ++b) gp.factor_corr(a, b) = gp.factor_corr(b, a) = 0.2;

  Rng rng(seed);
  std::uniform_real_distribution<double> load(0.8, 1.6);
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  const std::size_t per = n_items / latent_dim;
  for (std::size_t j = 0; j < n_items; ++j) {
    const std::size_t f = std::min(j / std::max<std::size_t>(per, 1), latent_dim - 1);
    gp.loadings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) = load(rng);
    std::vector<double> alpha(static_cast<std::size_t>(categories - 1));
    const double s = shift(rng);
    for (std::size_t k = 0; k < alpha.size(); ++k) {
      const double q = 1.0 - static_cast<double>(k + 1) / categories;
      alpha[k] = std::log(q / (1.0 - q)) / 1.702 * 1.5 + s;
    }
    gp.intercepts.push_back(std::move(alpha));
  }
  return gp;
}

}  // namespace ifa
