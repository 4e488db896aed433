#include "ifa/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "ifa/errors.hpp"

namespace ifa {

namespace {

// JSON has no NaN or infinity; they are written as null.
Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from(const Json& j, double if_null) {
  if (j.is_null()) return if_null;
  if (!j.is_number()) throw DataError("expected a number in JSON input");
  return j.get<double>();
}

template <class T>
T field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("JSON input lacks field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("JSON field '") + key + "' has the wrong type: " + e.what());
  }
}

Json doubles(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

std::vector<double> doubles_from(const Json& j, const char* key, double if_null) {
  if (!j.contains(key) || !j.at(key).is_array()) throw DataError(std::string("JSON input lacks array '") + key + "'");
  std::vector<double> out;
  out.reserve(j.at(key).size());
  for (const auto& e : j.at(key)) out.push_back(number_from(e, if_null));
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Json to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, std::string_view what) {
  if (!j.is_array()) throw DataError(std::string(what) + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw DataError(std::string(what) + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = number_from(row[static_cast<std::size_t>(c)], std::numeric_limits<double>::quiet_NaN());
    }
  }
  return m;
}

Json to_json(const ItemBank& bank) {
  Json j;
  j["n_items"] = bank.n_items;
  j["latent_dim"] = bank.latent_dim;
  j["scaling"] = bank.scaling;
  j["category_counts"] = bank.category_counts;
  Json rows = Json::array();
  for (std::size_t r = 0; r < bank.n_items; ++r) {
    const auto row = bank.loading_row(r);
    rows.push_back(doubles(std::vector<double>(row.begin(), row.end())));
  }
  j["loadings"] = std::move(rows);
  Json ints = Json::array();
  Json raws = Json::array();
  for (std::size_t r = 0; r < bank.n_items; ++r) {
    ints.push_back(doubles(bank.intercepts(r)));
    const auto raw = bank.raw(r);
    raws.push_back(doubles(std::vector<double>(raw.begin(), raw.end())));
  }
  j["intercepts"] = std::move(ints);
  // The unconstrained values are what the optimizer works on; they are kept
  // so that reloading is exact.
  j["raw_intercepts"] = std::move(raws);
  return j;
}

ItemBank item_bank_from_json(const Json& j) {
  const auto P = field<std::size_t>(j, "latent_dim");
  const Eigen::MatrixXd L = matrix_from_json(j.at("loadings"), "loadings");
  std::vector<double> loadings;
  for (Eigen::Index r = 0; r < L.rows(); ++r)
    for (Eigen::Index c = 0; c < L.cols(); ++c) loadings.push_back(L(r, c));
  std::vector<std::vector<double>> intercepts;
  for (const auto& item : field<Json>(j, "intercepts")) intercepts.push_back(item.get<std::vector<double>>());
  if (L.rows() != static_cast<Eigen::Index>(intercepts.size()) || (L.rows() > 0 && L.cols() != static_cast<Eigen::Index>(P))) {
    throw DataError("item bank loadings and intercepts disagree on J or P");
  }
  ItemBank bank = make_item_bank(P, loadings, intercepts, field<double>(j, "scaling"));
  if (j.contains("raw_intercepts")) {
    std::vector<double> raw;
    for (const auto& item : j.at("raw_intercepts"))
      for (const auto& v : item) raw.push_back(v.get<double>());
    if (raw.size() != bank.raw_intercepts.size()) throw DataError("raw_intercepts has the wrong length");
    bank.raw_intercepts = std::move(raw);
  }
  if (j.contains("category_counts") && j.at("category_counts").get<std::vector<int>>() != bank.category_counts) {
    throw DataError("category_counts disagree with the intercepts");
  }
  return bank;
}

Json to_json(const EncoderParams& enc) {
  Json j;
  j["input_dim"] = enc.input_dim;
  j["latent_dim"] = enc.latent_dim;
  Json layers = Json::array();
  for (const auto& l : enc.layers) {
    Json lj;
    lj["in"] = l.in;
    lj["out"] = l.out;
    lj["weights"] = doubles(l.weights);
    lj["bias"] = doubles(l.bias);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

EncoderParams encoder_from_json(const Json& j) {
  EncoderParams enc;
  enc.input_dim = field<std::size_t>(j, "input_dim");
  enc.latent_dim = field<std::size_t>(j, "latent_dim");
  std::size_t prev = enc.input_dim;
  for (const auto& lj : field<Json>(j, "layers")) {
    DenseLayer l;
    l.in = field<std::size_t>(lj, "in");
    l.out = field<std::size_t>(lj, "out");
    l.weights = doubles_from(lj, "weights", std::numeric_limits<double>::quiet_NaN());
    l.bias = doubles_from(lj, "bias", std::numeric_limits<double>::quiet_NaN());
    if (l.in != prev || l.weights.size() != l.in * l.out || l.bias.size() != l.out) {
      throw DataError("encoder layer shapes are inconsistent");
    }
    prev = l.out;
    enc.layers.push_back(std::move(l));
  }
  if (enc.layers.empty() || prev != 2 * enc.latent_dim) throw DataError("encoder output must have width 2P");
  return enc;
}

Json to_json(const FitConfig& cfg) {
  Json j;
  j["latent_dim"] = cfg.latent_dim;
  j["iw_samples"] = cfg.iw_samples;
  j["mc_samples"] = cfg.mc_samples;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.eta;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["denom_eps"] = cfg.denom_eps;
  j["anneal_iters"] = cfg.anneal_iters;
  j["window"] = cfg.window;
  j["patience"] = cfg.patience;
  j["max_iters"] = cfg.max_iters;
  j["seed"] = cfg.seed;
  j["weight_mode"] = std::string(to_string(cfg.weight_mode));
  j["hidden_size"] = cfg.hidden_size;
  j["hidden_layers"] = cfg.hidden_layers;
  j["scaling"] = cfg.scaling;
  j["category_counts"] = cfg.category_counts;
  return j;
}

void apply_config(const Json& j, FitConfig& cfg, const std::vector<std::string>& extra_keys) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "latent_dim") cfg.latent_dim = v.get<std::size_t>();
      else if (key == "iw_samples") cfg.iw_samples = v.get<std::size_t>();
      else if (key == "mc_samples") cfg.mc_samples = v.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
      else if (key == "learning_rate") cfg.eta = v.get<double>();
      else if (key == "beta1") cfg.beta1 = v.get<double>();
      else if (key == "beta2") cfg.beta2 = v.get<double>();
      else if (key == "denom_eps") cfg.denom_eps = v.get<double>();
      else if (key == "anneal_iters") cfg.anneal_iters = v.get<std::size_t>();
      else if (key == "window") cfg.window = v.get<std::size_t>();
      else if (key == "patience") cfg.patience = v.get<std::size_t>();
      else if (key == "max_iters") cfg.max_iters = v.get<std::size_t>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "weight_mode") cfg.weight_mode = parse_weight_mode(v.get<std::string>());
      else if (key == "hidden_size") cfg.hidden_size = v.get<std::size_t>();
      else if (key == "hidden_layers") cfg.hidden_layers = v.get<std::size_t>();
      else if (key == "scaling") cfg.scaling = v.get<double>();
      else if (key == "category_counts") cfg.category_counts = v.get<std::vector<int>>();
      else if (std::find(extra_keys.begin(), extra_keys.end(), key) == extra_keys.end()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + e.what());
    }
  }
}

Json to_json(const FittedModel& model, bool include_train_state) {
  Json j;
  j["format"] = "ifa-model";
  j["version"] = kModelFormatVersion;
  j["config"] = to_json(model.config);
  j["converged"] = model.converged;
  j["iterations_run"] = model.iterations_run;
  j["best_window_average"] = number(model.best_window_average);
  j["item_bank"] = to_json(model.item_bank);
  j["encoder"] = to_json(model.encoder);
  j["trace"] = doubles(model.trace);
  if (include_train_state && model.train_state) {
    const auto& ts = *model.train_state;
    Json t;
    t["optimizer"] = {{"step", ts.optimizer.t},
                      {"m", doubles(ts.optimizer.m)},
                      {"v", doubles(ts.optimizer.v)},
                      {"v_hat", doubles(ts.optimizer.v_hat)}};
    t["rng_state"] = ts.rng_state;
    t["monitor"] = {{"best", number(ts.monitor.best)},
                    {"has_best", ts.monitor.has_best},
                    {"stale", ts.monitor.stale},
                    {"comparisons", ts.monitor.comparisons},
                    {"window_sum", number(ts.monitor.window_sum)},
                    {"window_count", ts.monitor.window_count}};
    t["nonfinite_streak"] = ts.nonfinite_streak;
    j["train_state"] = std::move(t);
  }
  return j;
}

FittedModel model_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", std::string()) != "ifa-model") {
    throw DataError("not a fitted-model file (missing format \"ifa-model\")");
  }
  if (j.value("version", 0) != kModelFormatVersion) throw DataError("unsupported model file version");
  FittedModel m;
  apply_config(field<Json>(j, "config"), m.config);
  m.converged = field<bool>(j, "converged");
  m.iterations_run = field<std::size_t>(j, "iterations_run");
  m.best_window_average = number_from(field<Json>(j, "best_window_average"), -std::numeric_limits<double>::infinity());
  m.item_bank = item_bank_from_json(field<Json>(j, "item_bank"));
  m.encoder = encoder_from_json(field<Json>(j, "encoder"));
  m.trace = doubles_from(j, "trace", std::numeric_limits<double>::quiet_NaN());
  if (m.encoder.latent_dim != m.item_bank.latent_dim ||
      m.encoder.input_dim != item_offsets(m.item_bank.category_counts).back()) {
    throw DataError("encoder and item bank shapes do not match");
  }
  if (j.contains("train_state")) {
    const auto& t = j.at("train_state");
    TrainState ts;
    const auto& o = field<Json>(t, "optimizer");
    ts.optimizer.config = {m.config.eta, m.config.beta1, m.config.beta2, m.config.denom_eps};
    ts.optimizer.t = field<std::uint64_t>(o, "step");
    ts.optimizer.m = doubles_from(o, "m", 0.0);
    ts.optimizer.v = doubles_from(o, "v", 0.0);
    ts.optimizer.v_hat = doubles_from(o, "v_hat", 0.0);
    ts.rng_state = field<std::string>(t, "rng_state");
    const auto& mon = field<Json>(t, "monitor");
    ts.monitor.best = number_from(field<Json>(mon, "best"), -std::numeric_limits<double>::infinity());
    ts.monitor.has_best = field<bool>(mon, "has_best");
    ts.monitor.stale = field<std::size_t>(mon, "stale");
    ts.monitor.comparisons = field<std::size_t>(mon, "comparisons");
    ts.monitor.window_sum = number_from(field<Json>(mon, "window_sum"), 0.0);
    ts.monitor.window_count = field<std::size_t>(mon, "window_count");
    ts.nonfinite_streak = field<std::size_t>(t, "nonfinite_streak");
    m.train_state = std::move(ts);
  }
  return m;
}

Json to_json(const GeneratingParams& gp) {
  Json j;
  j["scaling"] = gp.scaling;
  j["loadings"] = to_json(gp.loadings);
  j["intercepts"] = gp.intercepts;
  j["factor_corr"] = to_json(gp.factor_corr);
  return j;
}

GeneratingParams generating_params_from_json(const Json& j) {
  GeneratingParams gp;
  gp.loadings = matrix_from_json(field<Json>(j, "loadings"), "loadings");
  gp.factor_corr = matrix_from_json(field<Json>(j, "factor_corr"), "factor_corr");
  gp.intercepts = field<std::vector<std::vector<double>>>(j, "intercepts");
  gp.scaling = j.contains("scaling") ? field<double>(j, "scaling") : kDefaultScaling;
  gp.validate();
  return gp;
}

Json to_json(const RotationSolution& s) {
  Json j;
  j["rotated_loadings"] = to_json(s.rotated_loadings);
  j["factor_corr"] = to_json(s.factor_corr);
  j["transform"] = to_json(s.transform);
  j["criterion_value"] = number(s.criterion_value);
  j["iterations"] = s.iterations;
  j["converged"] = s.converged;
  j["best_start"] = s.best_start;
  return j;
}

Json to_json(const AlignmentRecord& r) {
  Json j;
  j["permutation"] = r.permutation;
  j["signs"] = r.signs;
  j["mse"] = number(r.mse);
  j["congruence"] = doubles(r.congruence);
  j["mean_congruence"] = number(r.mean_congruence);
  return j;
}

Json to_json(const MetricReport& r) {
  Json j;
  j["replications"] = r.replications;
  Json blocks = Json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"name", b.name},
                      {"count", b.count},
                      {"rmse", number(b.rmse)},
                      {"mean_abs_bias", number(b.mean_abs_bias)},
                      {"median_abs_bias", number(b.median_abs_bias)},
                      {"median_mse", number(b.median_mse)},
                      {"replication_rmse_mean", number(b.replication_rmse_mean)},
                      {"replication_rmse_sd", number(b.replication_rmse_sd)}});
  }
  j["blocks"] = std::move(blocks);
  j["score_correlations"] = doubles(r.score_correlations);
  j["bias"] = doubles(r.bias);
  j["mse"] = doubles(r.mse);
  return j;
}

Json to_json(const StudyReport& r) {
  Json j;
  j["metrics"] = to_json(r.metrics);
  j["failed"] = r.failed;
  Json reps = Json::array();
  for (const auto& rep : r.replications) {
    Json e;
    e["index"] = rep.index;
    e["seed"] = rep.seed;
    e["ok"] = rep.ok;
    if (!rep.ok) e["error"] = rep.error;
    e["converged"] = rep.converged;
    e["iterations"] = rep.iterations;
    e["mean_congruence"] = number(rep.mean_congruence);
    e["loadings_mse"] = number(rep.loadings_mse);
    e["score_correlations"] = doubles(rep.score_correlations);
    reps.push_back(std::move(e));
  }
  j["replications"] = std::move(reps);
  return j;
}

Json to_json(const std::vector<ScreePoint>& points) {
  Json a = Json::array();
  for (const auto& p : points) {
    a.push_back({{"P", p.latent_dim},
                 {"neg_approx_loglik", number(p.neg_approx_loglik)},
                 {"holdout_fraction", p.holdout_fraction},
                 {"eval_samples", p.R_eval},
                 {"converged", p.converged},
                 {"iterations", p.iterations}});
  }
  return a;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + partial.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed for " + partial.string());
  }
  std::error_code ec;
  std::filesystem::rename(partial, path, ec);
  if (ec) throw DataError("cannot move " + partial.string() + " into place: " + ec.message());
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& header) {
  std::ostringstream os;
  if (!header.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << '\n';
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_double(m(r, c));
    os << '\n';
  }
  write_text(path, os.str());
}

FittedModel load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

void save_model(const std::filesystem::path& path, const FittedModel& model) { write_json(path, to_json(model)); }

}  // namespace ifa
