#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tvmerge/nn.hpp"
#include "tvmerge/steph.hpp"
#include "tvmerge/taskvec.hpp"

namespace tvmerge::analysis {

// Loss of M_0 + C_s tau_s + C_t tau_t sampled over [0,1]^2. Rows index C_s,
// columns index C_t. `loss` holds the smoothed surface; `raw_loss` holds
// the unsmoothed cell evaluations.
struct LandscapeGrid {
  std::vector<double> c_s;
  std::vector<double> c_t;
  linalg::Matrix loss;
  linalg::Matrix raw_loss;
  double sigma = 0.0;
  std::string dataset_tag;
};

// Evaluates the mean survival NLL per grid cell (step must divide 1) and
// smooths with a Gaussian of width sigma. Cells are independent, so they
// may be computed on up to `jobs` threads; the result is identical for any
// job count.
LandscapeGrid loss_landscape(const nn::ModelWeights& m_zero,
                             const taskvec::TaskVector& tau_s,
                             const taskvec::TaskVector& tau_t,
                             std::span<const nn::Bag> dataset, double step,
                             double sigma, std::string_view dataset_tag,
                             std::size_t jobs = 1);

struct SweepRow {
  double lambda = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  taskvec::SARReport sar;  // alignment of tau_t with the mixture
};

// For each lambda: mix tau_t and tau_s, evaluate the merged model's mean
// NLL on both splits, and report how much of tau_t the mixture's dominant
// subspace retains.
std::vector<SweepRow> tvm_sweep(const nn::ModelWeights& m_zero,
                                const taskvec::TaskVector& tau_t,
                                const taskvec::TaskVector& tau_s,
                                std::span<const nn::Bag> train_bags,
                                std::span<const nn::Bag> test_bags,
                                std::span<const double> lambda_grid,
                                double sar_alpha);

struct TrajectoryOverlayPoint {
  std::size_t epoch = 0;
  double lambda = 0.0;
  double w = 0.0;
  double c_t = 0.0;
  double c_s = 0.0;
  bool clipped = false;
};

// Places each epoch's mean (lambda, w) on the landscape axes through the
// identity w*tau_mix = (w*lambda) tau_t + (w*(1-lambda)) tau_s. Requires a
// single-source trajectory; out-of-range coordinates are clipped to [0, 1]
// and flagged.
std::vector<TrajectoryOverlayPoint> overlay_trajectory(
    const LandscapeGrid& grid, const steph::StephTrainLog& log);

// Header row of C_t values, leading column of C_s values, smoothed losses.
std::string landscape_tsv(const LandscapeGrid& grid);

// Columns: epoch, lambda, w, c_t, c_s, clipped.
std::string overlay_tsv(std::span<const TrajectoryOverlayPoint> points);

// Columns: lambda, train_loss, test_loss, one sar:<block> column per block
// ("undefined" where degenerate), and sar:aggregate.
std::string sweep_tsv(std::span<const SweepRow> rows);

}  // namespace tvmerge::analysis
