#include <algorithm>
#include <vector>

#include "ifa/objective.hpp"
#include "ifa/params.hpp"
#include "objective_detail.hpp"

namespace ifa::kernels {

ObjectiveGradient objective_grad_serial(const ItemBank& bank, const EncoderParams& enc,
                                        const Dataset& data, std::span<const std::size_t> rows,
                                        const NoiseBlock& noise, const ObjectiveSpec& spec) {
  detail::check_inputs(bank, enc, data, rows, noise, spec);
  detail::Context ctx(bank, enc, data, noise, spec);
  const std::size_t RS = spec.R * spec.S;
  ObjectiveGradient out;
  auto& v = out.value;
  v.per_respondent.resize(rows.size());
  v.log_weights.resize(rows.size() * RS);
  out.grad.assign(make_layout(bank, enc).size, 0.0);

  detail::Workspace ws;
  double sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.per_respondent[i] = detail::respondent_objective(
        ctx, i, rows[i], std::span<double>(v.log_weights).subspan(i * RS, RS), out.grad, ws);
    sum += v.per_respondent[i];
  }
  v.iw_elbo = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
  if (!rows.empty()) detail::finalize_gradient(ctx, rows.size(), out.grad);
  return out;
}

ObjectiveGradient objective_grad_omp(const ItemBank& bank, const EncoderParams& enc,
                                     const Dataset& data, std::span<const std::size_t> rows,
                                     const NoiseBlock& noise, const ObjectiveSpec& spec) {
  detail::check_inputs(bank, enc, data, rows, noise, spec);
  detail::Context ctx(bank, enc, data, noise, spec);
  const std::size_t RS = spec.R * spec.S;
  const std::size_t d = make_layout(bank, enc).size;
  const std::size_t n = rows.size();
  const std::size_t n_chunks = (n + kChunkRows - 1) / kChunkRows;

  ObjectiveGradient out;
  auto& v = out.value;
  v.per_respondent.resize(n);
  v.log_weights.resize(n * RS);
  std::vector<double> chunks(n_chunks * d, 0.0);

#pragma omp parallel
  {
    detail::Workspace ws;
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
      const auto uc = static_cast<std::size_t>(c);
      std::span<double> buf(chunks.data() + uc * d, d);
      const std::size_t end = std::min(n, (uc + 1) * kChunkRows);
      for (std::size_t i = uc * kChunkRows; i < end; ++i) {
        v.per_respondent[i] = detail::respondent_objective(
            ctx, i, rows[i], std::span<double>(v.log_weights).subspan(i * RS, RS), buf, ws);
      }
    }

    // Reduce chunk buffers in chunk order; each thread owns a slice of
    // parameter indices, so the summation order per entry is fixed.
#pragma omp single
    out.grad.assign(d, 0.0);
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(d); ++k) {
      const auto uk = static_cast<std::size_t>(k);
      double s = 0.0;
      for (std::size_t c = 0; c < n_chunks; ++c) s += chunks[c * d + uk];
      out.grad[uk] = s;
    }
  }

  double sum = 0.0;
  for (double e : v.per_respondent) sum += e;
  v.iw_elbo = n == 0 ? 0.0 : sum / static_cast<double>(n);
  if (n != 0) detail::finalize_gradient(ctx, n, out.grad);
  return out;
}

}  // namespace ifa::kernels
