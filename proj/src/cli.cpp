#include "ifa/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ifa/errors.hpp"
#include "ifa/postfit.hpp"
#include "ifa/rng.hpp"
#include "ifa/rotation.hpp"
#include "ifa/serialize.hpp"
#include "ifa/study.hpp"
#include "ifa/trainer.hpp"

namespace fs = std::filesystem;

namespace ifa {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw NumericalError("cannot allocate a digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return os.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Keys a config file may carry besides FitConfig fields.
const std::vector<std::string> kRunKeys = {"holdout_fraction", "eval_samples", "jobs",   "replications",
                                           "n_respondents",    "min_dim",      "max_dim", "rotation_starts"};

struct FitFlags {
  std::string config;
  std::optional<std::size_t> latent_dim, iw_samples, mc_samples, batch_size, anneal_iters, max_iters, window,
      patience, hidden_size, hidden_layers;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> weight_mode;
  Json file;  // parsed config file, or empty object
};

void add_fit_flags(CLI::App* app, FitFlags& f) {
  app->add_option("--config", f.config, "JSON config with flat FitConfig keys; flags override it");
  app->add_option("--latent-dim", f.latent_dim, "number of latent factors P");
  app->add_option("--iw-samples", f.iw_samples, "importance-weighted samples R");
  app->add_option("--mc-samples", f.mc_samples, "Monte Carlo samples S");
  app->add_option("--batch-size", f.batch_size, "mini-batch size M");
  app->add_option("--learning-rate", f.learning_rate, "AMSGrad step size");
  app->add_option("--anneal-iters", f.anneal_iters, "KL annealing iterations (0 disables)");
  app->add_option("--max-iters", f.max_iters, "iteration cap");
  app->add_option("--window", f.window, "convergence window length");
  app->add_option("--patience", f.patience, "non-improving windows before stopping");
  app->add_option("--hidden-size", f.hidden_size, "encoder hidden width (0: default)");
  app->add_option("--hidden-layers", f.hidden_layers, "encoder hidden layers");
  app->add_option("--seed", f.seed, "root seed");
  app->add_option("--weight-mode", f.weight_mode, "importance weight form")
      ->check(CLI::IsMember({"algorithm1", "pointwise"}));
}

void load_config_file(FitFlags& f) {
  f.file = Json::object();
  if (f.config.empty()) return;
  if (!fs::exists(f.config)) throw ConfigError("config file not found: " + f.config);
  try {
    f.file = read_json(f.config);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (!f.file.is_object()) throw ConfigError("config must be a JSON object");
}

FitConfig resolve_fit_config(FitFlags& f) {
  load_config_file(f);
  FitConfig cfg;
  apply_config(f.file, cfg, kRunKeys);
  if (f.latent_dim) cfg.latent_dim = *f.latent_dim;
  if (f.iw_samples) cfg.iw_samples = *f.iw_samples;
  if (f.mc_samples) cfg.mc_samples = *f.mc_samples;
  if (f.batch_size) cfg.batch_size = *f.batch_size;
  if (f.learning_rate) cfg.eta = *f.learning_rate;
  if (f.anneal_iters) cfg.anneal_iters = *f.anneal_iters;
  if (f.max_iters) cfg.max_iters = *f.max_iters;
  if (f.window) cfg.window = *f.window;
  if (f.patience) cfg.patience = *f.patience;
  if (f.hidden_size) cfg.hidden_size = *f.hidden_size;
  if (f.hidden_layers) cfg.hidden_layers = *f.hidden_layers;
  if (f.seed) cfg.seed = *f.seed;
  if (f.weight_mode) cfg.weight_mode = parse_weight_mode(*f.weight_mode);
  return cfg;
}

template <class T>
T run_value(const FitFlags& f, const char* key, const std::optional<T>& flag, T fallback) {
  if (flag) return *flag;
  if (f.file.contains(key)) {
    try {
      return f.file.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }
  return fallback;
}

void set_threads(std::size_t jobs) {
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(effective_jobs(jobs)));
#else
  (void)jobs;
#endif
}

// Collects what a run read and wrote.
struct Manifest {
  std::string command;
  std::vector<std::string> args;
  Json config = Json::object();
  Json seeds = Json::object();
  Json inputs = Json::array();
  Json outputs = Json::array();
  Json timings = Json::object();
  Clock::time_point start = Clock::now();

  void input(const fs::path& p) { inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  void output(const fs::path& p) { outputs.push_back(p.string()); }

  void write(const fs::path& dir) {
    timings["total_seconds"] = seconds_since(start);
    const auto path = dir / "manifest.json";
    output(path);
    Json j;
    j["command"] = command;
    j["arguments"] = args;
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["timings"] = timings;
    write_json(path, j);
  }
};

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

Dataset read_data(const std::string& path, Manifest& m) {
  if (!fs::exists(path)) throw DataError("data file not found: " + path);
  m.input(path);
  return load_csv(path);
}

FittedModel read_model(const std::string& path, Manifest& m) {
  if (!fs::exists(path)) throw DataError("model file not found: " + path);
  m.input(path);
  return load_model(path);
}

std::vector<std::string> factor_header(std::size_t P, const char* prefix = "F") {
  std::vector<std::string> h;
  for (std::size_t p = 1; p <= P; ++p) h.push_back(prefix + std::to_string(p));
  return h;
}

void write_trace(const fs::path& path, const std::vector<double>& trace) {
  std::ostringstream os;
  os << "iteration,iw_elbo\n";
  for (std::size_t t = 0; t < trace.size(); ++t) os << (t + 1) << ',' << format_double(trace[t]) << '\n';
  write_text(path, os.str());
}

GeneratingParams generator_from(const std::string& generator, const std::string& tmpl, int categories,
                                std::size_t items, std::size_t latent_dim, std::uint64_t seed, Manifest& m) {
  if (!generator.empty()) {
    if (!fs::exists(generator)) throw DataError("generator file not found: " + generator);
    m.input(generator);
    return generating_params_from_json(read_json(generator));
  }
  if (categories < 2) throw ConfigError("--categories must be at least 2");
  if (tmpl == "five-factor") {
    if (categories != 5 && categories != 2) throw ConfigError("the five-factor template supports 5 or 2 categories");
    return simple_structure_template(categories, derive_seed(seed, streams::kSimulate, 1));
  }
  if (tmpl == "small") {
    if (latent_dim < 1 || items < latent_dim) throw ConfigError("small template needs 1 <= latent-dim <= items");
    return small_template(items, latent_dim, categories, derive_seed(seed, streams::kSimulate, 1));
  }
  throw ConfigError("unknown template '" + tmpl + "' (five-factor, small)");
}

struct GeneratorFlags {
  std::string generator;
  std::string tmpl = "five-factor";
  int categories = 5;
  std::size_t items = 10;
  std::size_t latent_dim = 2;
};

void add_generator_flags(CLI::App* app, GeneratorFlags& g, bool with_latent_dim) {
  app->add_option("--generator", g.generator, "generating parameters JSON (overrides --template)");
  app->add_option("--template", g.tmpl, "built-in design: five-factor or small")->capture_default_str();
  app->add_option("--categories", g.categories, "categories per item for the template")->capture_default_str();
  app->add_option("--items", g.items, "items of the small template")->capture_default_str();
  if (with_latent_dim) {
    app->add_option("--latent-dim", g.latent_dim, "factors of the small template")->capture_default_str();
  }
}

// ---- commands --------------------------------------------------------------

struct Common {
  std::string out_dir = ".";
  std::size_t jobs = 0;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
  app->add_option("--jobs", c.jobs, "worker threads (0: all cores; IFA_THREADS caps)")->capture_default_str();
  app->add_flag("--quiet", c.quiet, "no progress output");
}

int cmd_fit(const std::vector<std::string>& args, const Common& c, FitFlags& f, const std::string& data_path,
            const std::string& resume_path, std::ostream& out, std::ostream& err) {
  Manifest m{"fit", args};
  FitConfig cfg = resolve_fit_config(f);
  if (cfg.latent_dim == 0) throw ConfigError("missing --latent-dim (or latent_dim in --config)");
  set_threads(c.jobs);
  const auto dir = prepare_out_dir(c.out_dir);
  const Dataset data = read_data(data_path, m);
  std::optional<FittedModel> prev;
  FitOptions opts;
  if (!resume_path.empty()) {
    prev = read_model(resume_path, m);
    opts.resume = &*prev;
  }
  if (!c.quiet) opts.progress = &err;
  m.config = to_json(cfg);
  m.seeds = {{"root", cfg.seed},
             {"item_init", derive_seed(cfg.seed, streams::kItemInit)},
             {"encoder_init", derive_seed(cfg.seed, streams::kEncoderInit)},
             {"training", derive_seed(cfg.seed, streams::kTraining)}};
  const auto t0 = Clock::now();
  const FittedModel model = fit(data, cfg, opts);
  m.timings["fit_seconds"] = seconds_since(t0);
  m.timings["seconds_per_iteration"] =
      model.iterations_run ? seconds_since(t0) / static_cast<double>(model.iterations_run) : 0.0;

  save_model(dir / "model.json", model);
  m.output(dir / "model.json");
  write_trace(dir / "trace.csv", model.trace);
  m.output(dir / "trace.csv");
  m.write(dir);
  out << "fit: " << model.iterations_run << " iterations, " << (model.converged ? "converged" : "not converged")
      << ", best window average " << format_double(model.best_window_average) << "\n"
      << "model written to " << (dir / "model.json").string() << "\n";
  if (const double frac = collapsed_fraction(model, data); frac > 0.5) {
    err << "warning: " << static_cast<int>(100.0 * frac)
        << "% of posterior log sigma values sit at the lower clamp; refit with --learning-rate 0.005\n";
  }
  return kExitOk;
}

int cmd_simulate(const std::vector<std::string>& args, const Common& c, const GeneratorFlags& g, std::size_t n,
                 std::uint64_t seed, std::ostream& out) {
  Manifest m{"simulate", args};
  if (n < 1) throw ConfigError("--n must be at least 1");
  const auto gp = generator_from(g.generator, g.tmpl, g.categories, g.items, g.latent_dim, seed, m);
  const auto dir = prepare_out_dir(c.out_dir);
  m.config = {{"template", g.generator.empty() ? g.tmpl : "file"},
              {"categories", g.categories},
              {"n_respondents", n},
              {"seed", seed}};
  m.seeds = {{"root", seed}, {"responses", derive_seed(seed, streams::kSimulate)}};
  const auto sim = simulate_with_scores(gp, n, derive_seed(seed, streams::kSimulate));
  write_csv(sim.data, dir / "data.csv.partial");
  fs::rename(dir / "data.csv.partial", dir / "data.csv");
  m.output(dir / "data.csv");
  write_json(dir / "truth.json", to_json(gp));
  m.output(dir / "truth.json");
  write_matrix_csv(dir / "true_scores.csv", sim.scores, factor_header(gp.latent_dim()));
  m.output(dir / "true_scores.csv");
  m.write(dir);
  out << "simulate: " << n << " x " << gp.n_items() << " responses written to " << (dir / "data.csv").string()
      << "\n";
  return kExitOk;
}

int cmd_scree(const std::vector<std::string>& args, const Common& c, FitFlags& f, const std::string& data_path,
              std::optional<std::size_t> min_dim, std::optional<std::size_t> max_dim,
              std::optional<double> holdout, std::optional<std::size_t> eval_samples, std::ostream& out,
              std::ostream& err) {
  Manifest m{"scree", args};
  FitConfig cfg = resolve_fit_config(f);
  const std::size_t lo = run_value(f, "min_dim", min_dim, std::size_t{2});
  const std::size_t hi = run_value(f, "max_dim", max_dim, std::size_t{8});
  if (lo < 1 || hi < lo) throw ConfigError("need 1 <= --min-dim <= --max-dim");
  ScreeOptions so;
  so.holdout_fraction = run_value(f, "holdout_fraction", holdout, 0.2);
  so.R_eval = run_value(f, "eval_samples", eval_samples, kDefaultEvalSamples);
  so.seed = cfg.seed;
  so.jobs = effective_jobs(run_value(f, "jobs", c.jobs ? std::optional<std::size_t>(c.jobs) : std::nullopt,
                                     std::size_t{1}));
  set_threads(so.jobs > 1 ? 1 : c.jobs);
  const auto dir = prepare_out_dir(c.out_dir);
  const Dataset data = read_data(data_path, m);
  std::vector<std::size_t> dims;
  for (std::size_t P = lo; P <= hi; ++P) dims.push_back(P);
  Json cj = to_json(cfg);
  cj["min_dim"] = lo;
  cj["max_dim"] = hi;
  cj["holdout_fraction"] = so.holdout_fraction;
  cj["eval_samples"] = so.R_eval;
  m.config = cj;
  m.seeds = {{"root", cfg.seed}, {"holdout", derive_seed(cfg.seed, streams::kHoldout)}};
  if (!c.quiet) err << "scree: fitting P = " << lo << " .. " << hi << "\n";
  const auto t0 = Clock::now();
  const auto points = scree_curve(data, dims, cfg, so);
  m.timings["scree_seconds"] = seconds_since(t0);

  std::ostringstream os;
  os << "P,neg_approx_loglik\n";
  for (const auto& p : points) os << p.latent_dim << ',' << format_double(p.neg_approx_loglik) << '\n';
  write_text(dir / "scree.csv", os.str());
  m.output(dir / "scree.csv");
  Json sj;
  sj["points"] = to_json(points);
  const auto elbow = elbow_annotation(points);
  sj["elbow"] = elbow ? Json(*elbow) : Json(nullptr);
  write_json(dir / "scree.json", sj);
  m.output(dir / "scree.json");
  m.write(dir);
  for (const auto& p : points) out << "P=" << p.latent_dim << "  -l = " << format_double(p.neg_approx_loglik) << "\n";
  if (elbow) out << "largest bend at P = " << *elbow << "\n";
  return kExitOk;
}

GeominOptions rotation_options(std::size_t starts, std::uint64_t seed) {
  GeominOptions o;
  o.n_starts = starts;
  o.seed = derive_seed(seed, streams::kRotation);
  return o;
}

RotationSolution rotate_or_best(const Eigen::MatrixXd& loadings, const GeominOptions& o, std::ostream& err) {
  try {
    return geomin_rotate(loadings, o);
  } catch (const RotationError& e) {
    err << "warning: " << e.what() << "; using the best start\n";
    return e.best();
  }
}

int cmd_score(const std::vector<std::string>& args, const Common& c, const std::string& model_path,
              const std::string& data_path, bool rotated, std::size_t starts, std::uint64_t seed, std::ostream& out,
              std::ostream& err) {
  Manifest m{"score", args};
  set_threads(c.jobs);
  const auto dir = prepare_out_dir(c.out_dir);
  const auto model = read_model(model_path, m);
  const Dataset data = read_data(data_path, m);
  Eigen::MatrixXd scores = map_scores(model, data);
  m.config = {{"rotated", rotated}, {"rotation_starts", starts}, {"seed", seed}};
  if (rotated) {
    const auto rot = rotate_or_best(loading_matrix(model.item_bank), rotation_options(starts, seed), err);
    scores = rotate_scores(scores, rot);
  }
  write_matrix_csv(dir / "scores.csv", scores, factor_header(model.item_bank.latent_dim));
  m.output(dir / "scores.csv");
  m.write(dir);
  out << "score: " << scores.rows() << " x " << scores.cols() << " scores written to "
      << (dir / "scores.csv").string() << "\n";
  return kExitOk;
}

int cmd_rotate(const std::vector<std::string>& args, const Common& c, const std::string& model_path,
               std::size_t starts, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  Manifest m{"rotate", args};
  set_threads(c.jobs);
  const auto dir = prepare_out_dir(c.out_dir);
  const auto model = read_model(model_path, m);
  m.config = {{"rotation_starts", starts}, {"seed", seed}};
  const auto rot = rotate_or_best(loading_matrix(model.item_bank), rotation_options(starts, seed), err);
  write_json(dir / "rotation.json", to_json(rot));
  m.output(dir / "rotation.json");
  const auto P = model.item_bank.latent_dim;
  write_matrix_csv(dir / "rotated_loadings.csv", rot.rotated_loadings, factor_header(P));
  m.output(dir / "rotated_loadings.csv");
  write_matrix_csv(dir / "factor_corr.csv", rot.factor_corr, factor_header(P));
  m.output(dir / "factor_corr.csv");
  m.write(dir);
  out << "rotate: criterion " << format_double(rot.criterion_value) << " from start " << rot.best_start
      << (rot.converged ? "" : " (not converged)") << "\n";
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& args, const Common& c, const std::string& model_path,
                const std::string& other_path, const std::string& truth_path, const std::string& aggregate,
                std::size_t starts, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  Manifest m{"compare", args};
  set_threads(c.jobs);
  const auto how = parse_congruence_aggregate(aggregate);
  if (other_path.empty() == truth_path.empty()) throw ConfigError("compare needs exactly one of --other or --truth");
  const auto dir = prepare_out_dir(c.out_dir);
  const auto model = read_model(model_path, m);
  const auto opts = rotation_options(starts, seed);
  const auto rot = rotate_or_best(loading_matrix(model.item_bank), opts, err);

  Eigen::MatrixXd reference;
  if (!truth_path.empty()) {
    if (!fs::exists(truth_path)) throw DataError("truth file not found: " + truth_path);
    m.input(truth_path);
    reference = generating_params_from_json(read_json(truth_path)).loadings;
  } else {
    const auto other = read_model(other_path, m);
    reference = rotate_or_best(loading_matrix(other.item_bank), opts, err).rotated_loadings;
  }
  if (reference.rows() != rot.rotated_loadings.rows() || reference.cols() != rot.rotated_loadings.cols()) {
    throw DataError("solutions differ in shape: " + std::to_string(reference.rows()) + "x" +
                    std::to_string(reference.cols()) + " vs " + std::to_string(rot.rotated_loadings.rows()) + "x" +
                    std::to_string(rot.rotated_loadings.cols()));
  }
  const auto al = align(reference, rot.rotated_loadings);
  const double value = aggregate_congruence(reference, al.aligned, how);
  const bool same = value > kEquivalenceThreshold;
  Json j;
  j["alignment"] = to_json(al.record);
  j["aggregate"] = aggregate;
  j["congruence"] = value;
  j["threshold"] = kEquivalenceThreshold;
  j["equivalent"] = same;
  j["aligned_factor_corr"] = to_json(align_correlations(rot.factor_corr, al.record));
  m.config = {{"aggregate", aggregate}, {"rotation_starts", starts}, {"seed", seed}};
  write_json(dir / "compare.json", j);
  m.output(dir / "compare.json");
  write_matrix_csv(dir / "aligned_loadings.csv", al.aligned, factor_header(static_cast<std::size_t>(al.aligned.cols())));
  m.output(dir / "aligned_loadings.csv");
  m.write(dir);
  out << "compare: " << aggregate << " congruence " << format_double(value) << " -> "
      << (same ? "equivalent" : "not equivalent") << " (threshold " << kEquivalenceThreshold << ")\n";
  return kExitOk;
}

int cmd_replicate(const std::vector<std::string>& args, const Common& c, FitFlags& f, const GeneratorFlags& g,
                  std::optional<std::size_t> n_flag, std::optional<std::size_t> reps_flag, std::size_t starts,
                  std::ostream& out, std::ostream& err) {
  Manifest m{"replicate", args};
  ReplicationOptions ro;
  ro.fit = resolve_fit_config(f);
  ro.root_seed = ro.fit.seed;
  ro.n_respondents = run_value(f, "n_respondents", n_flag, std::size_t{500});
  ro.replications = run_value(f, "replications", reps_flag, std::size_t{2});
  ro.jobs = effective_jobs(run_value(f, "jobs", c.jobs ? std::optional<std::size_t>(c.jobs) : std::nullopt,
                                     std::size_t{1}));
  ro.rotation.n_starts = run_value(f, "rotation_starts", std::optional<std::size_t>(starts), std::size_t{30});
  ro.truth = generator_from(g.generator, g.tmpl, g.categories, g.items, g.latent_dim, ro.root_seed, m);
  if (ro.fit.latent_dim != 0 && ro.fit.latent_dim != ro.truth.latent_dim()) {
    throw ConfigError("replicate fits the generator's latent dimension; drop --latent-dim or match it");
  }
  if (ro.n_respondents < 2) throw ConfigError("--n must be at least 2");
  set_threads(ro.jobs > 1 ? 1 : c.jobs);
  const auto dir = prepare_out_dir(c.out_dir);
  Json cj = to_json(ro.fit);
  cj["latent_dim"] = ro.truth.latent_dim();
  cj["n_respondents"] = ro.n_respondents;
  cj["replications"] = ro.replications;
  cj["rotation_starts"] = ro.rotation.n_starts;
  cj["template"] = g.generator.empty() ? g.tmpl : "file";
  cj["categories"] = g.categories;
  m.config = cj;
  m.seeds = {{"root", ro.root_seed}};
  if (!c.quiet) err << "replicate: " << ro.replications << " replications of N = " << ro.n_respondents << "\n";
  const auto report = run_replications(ro);
  Json times = Json::array();
  for (const auto& r : report.replications) times.push_back(r.seconds);
  m.timings["replication_seconds"] = times;
  write_json(dir / "report.json", to_json(report));
  m.output(dir / "report.json");
  write_json(dir / "truth.json", to_json(ro.truth));
  m.output(dir / "truth.json");
  m.write(dir);
  if (report.failed) err << "warning: " << report.failed << " replication(s) failed and were excluded\n";
  for (const auto& b : report.metrics.blocks) {
    out << b.name << ": RMSE " << format_double(b.rmse) << ", median |bias| " << format_double(b.median_abs_bias)
        << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Item factor analysis with importance-weighted amortized variational inference", "ifa"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  FitFlags fit_flags;
  GeneratorFlags gen;
  std::string data_path, model_path, other_path, truth_path, resume_path, aggregate = "mean";
  std::size_t starts = 30, sim_n = 500;
  std::uint64_t seed = 0;
  bool rotated = false;
  std::optional<std::size_t> min_dim, max_dim, eval_samples, rep_n, reps;
  std::optional<double> holdout;

  auto* fit_cmd = app.add_subcommand("fit", "fit the model to a response CSV");
  fit_cmd->add_option("--data", data_path, "response CSV (rows respondents, columns items)")->required();
  fit_cmd->add_option("--resume", resume_path, "continue from a model file");
  add_fit_flags(fit_cmd, fit_flags);
  add_common(fit_cmd, common);

  auto* sim_cmd = app.add_subcommand("simulate", "draw responses from a generator");
  sim_cmd->add_option("-n,--n", sim_n, "respondents")->capture_default_str();
  sim_cmd->add_option("--seed", seed, "root seed")->capture_default_str();
  add_generator_flags(sim_cmd, gen, true);
  add_common(sim_cmd, common);

  auto* scree_cmd = app.add_subcommand("scree", "holdout log-likelihood over a range of P");
  scree_cmd->add_option("--data", data_path, "response CSV")->required();
  scree_cmd->add_option("--min-dim", min_dim, "smallest P (default 2)");
  scree_cmd->add_option("--max-dim", max_dim, "largest P (default 8)");
  scree_cmd->add_option("--holdout-fraction", holdout, "share of respondents held out (default 0.2)");
  scree_cmd->add_option("--eval-samples", eval_samples, "importance samples per held-out respondent (default 5000)");
  add_fit_flags(scree_cmd, fit_flags);
  add_common(scree_cmd, common);

  auto* score_cmd = app.add_subcommand("score", "posterior-mean factor scores");
  score_cmd->add_option("--model", model_path, "model file")->required();
  score_cmd->add_option("--data", data_path, "response CSV")->required();
  score_cmd->add_flag("--rotated", rotated, "express scores in the Geomin-rotated basis");
  score_cmd->add_option("--starts", starts, "Geomin random starts")->capture_default_str();
  score_cmd->add_option("--seed", seed, "rotation seed")->capture_default_str();
  add_common(score_cmd, common);

  auto* rot_cmd = app.add_subcommand("rotate", "Geomin oblique rotation of a fitted model");
  rot_cmd->add_option("--model", model_path, "model file")->required();
  rot_cmd->add_option("--starts", starts, "Geomin random starts")->capture_default_str();
  rot_cmd->add_option("--seed", seed, "rotation seed")->capture_default_str();
  add_common(rot_cmd, common);

  auto* cmp_cmd = app.add_subcommand("compare", "align two solutions and report congruence");
  cmp_cmd->add_option("--model", model_path, "model file")->required();
  cmp_cmd->add_option("--other", other_path, "second model file");
  cmp_cmd->add_option("--truth", truth_path, "generating parameters JSON as the reference");
  cmp_cmd->add_option("--aggregate", aggregate, "mean, min or matrix")->capture_default_str();
  cmp_cmd->add_option("--starts", starts, "Geomin random starts")->capture_default_str();
  cmp_cmd->add_option("--seed", seed, "rotation seed")->capture_default_str();
  add_common(cmp_cmd, common);

  auto* rep_cmd = app.add_subcommand("replicate", "simulation study: simulate, fit, rotate, align, summarize");
  rep_cmd->add_option("-n,--n", rep_n, "respondents per replication (default 500)");
  rep_cmd->add_option("--replications", reps, "number of replications (default 2)");
  rep_cmd->add_option("--starts", starts, "Geomin random starts")->capture_default_str();
  add_generator_flags(rep_cmd, gen, false);
  add_fit_flags(rep_cmd, fit_flags);
  add_common(rep_cmd, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "run '" << sub->get_name() << " --help' for usage\n";
    } else {
      err << "run '--help' for usage\n";
    }
    return kExitUsage;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(args, common, fit_flags, data_path, resume_path, out, err);
    if (sim_cmd->parsed()) return cmd_simulate(args, common, gen, sim_n, seed, out);
    if (scree_cmd->parsed())
      return cmd_scree(args, common, fit_flags, data_path, min_dim, max_dim, holdout, eval_samples, out, err);
    if (score_cmd->parsed()) return cmd_score(args, common, model_path, data_path, rotated, starts, seed, out, err);
    if (rot_cmd->parsed()) return cmd_rotate(args, common, model_path, starts, seed, out, err);
    if (cmp_cmd->parsed())
      return cmd_compare(args, common, model_path, other_path, truth_path, aggregate, starts, seed, out, err);
    if (rep_cmd->parsed()) return cmd_replicate(args, common, fit_flags, gen, rep_n, reps, starts, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace ifa
