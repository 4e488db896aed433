#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/postfit.hpp"
#include "ifa/rotation.hpp"
#include "ifa/study.hpp"
#include "ifa/trainer.hpp"

namespace ifa {

using Json = nlohmann::ordered_json;

inline constexpr int kModelFormatVersion = 1;

Json to_json(const Eigen::MatrixXd& m);  // array of rows
Eigen::MatrixXd matrix_from_json(const Json& j, std::string_view what);

// Intercepts are written constrained (alpha, decreasing) per item.
Json to_json(const ItemBank& bank);
ItemBank item_bank_from_json(const Json& j);

Json to_json(const EncoderParams& enc);
EncoderParams encoder_from_json(const Json& j);

// Flat keys mirroring FitConfig.
Json to_json(const FitConfig& cfg);
// Applies the keys present in j onto cfg. Unknown keys raise ConfigError
// unless listed in `extra_keys`, which are skipped.
void apply_config(const Json& j, FitConfig& cfg, const std::vector<std::string>& extra_keys = {});

Json to_json(const FittedModel& model, bool include_train_state = true);
FittedModel model_from_json(const Json& j);

Json to_json(const GeneratingParams& gp);
GeneratingParams generating_params_from_json(const Json& j);

Json to_json(const RotationSolution& s);
Json to_json(const AlignmentRecord& r);
Json to_json(const MetricReport& r);
Json to_json(const StudyReport& r);
Json to_json(const std::vector<ScreePoint>& points);

// File helpers. Writes go to "<path>.partial" first and are renamed into
// place once complete. Failures raise DataError.
Json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
void write_json(const std::filesystem::path& path, const Json& j);
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& header = {});

// Shortest text that reads back as the same double.
std::string format_double(double v);

FittedModel load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const FittedModel& model);

}  // namespace ifa
