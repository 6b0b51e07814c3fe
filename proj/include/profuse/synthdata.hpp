#pragma once

#include <cstdint>
#include <vector>

#include "profuse/encoders.hpp"
#include "profuse/types.hpp"

namespace profuse::synthdata {

/// Synthetic-cohort knobs. The generated hazard is
///   h* = beta_c . x_c + pathology_weight * z_p + radiology_weight * z_r
///        + interaction_weight * s_c * z_p
/// with per-subject latents z_p, z_r ~ N(0,1), x_c the generator's own
/// standardized dummy encoding of the drawn clinical record, and s_c = +/-1
/// read off a clinical binary — a cross-modal term no single modality carries.
struct SynthConfig {
  int n_subjects = 200;
  std::uint64_t seed = 1;
  std::vector<double> true_beta_clinical;  // dummy-width (18); empty = preset
  double pathology_weight = 1.0;
  double radiology_weight = 1.0;
  double interaction_weight = 0.0;
  double signal_to_noise = 2.0;  // embedding rows = latent * direction + noise/snr
  double censoring_rate_target = 0.2;
  int pathology_dim = 1024;
  int radiology_dim = 65536;
  int radiology_sparse_nnz = 1024;  // signal-direction support size
  int radiology_noise_band = 4096;  // dense noise confined to [0, band)
  int patches_min = 4, patches_max = 16;
  int slices_min = 4, slices_max = 12;
};

struct GroundTruth {
  std::vector<double> true_log_risk;
  std::vector<double> uncensored_time;
  std::vector<double> censoring_time;  // +inf when censoring is disabled
};

struct SynthCohort {
  std::vector<encoders::ClinicalRecord> records;
  std::vector<Matrix> pathology;  // per subject: patches x pathology_dim
  std::vector<Matrix> radiology;  // per subject: slices x radiology_dim
  std::vector<SurvivalLabel> labels;
  GroundTruth truth;
};

/// Fully seed-determined cohort with exponential event times (rate e^{h*})
/// and uniform censoring calibrated by bisection to the target rate (+-5%).
SynthCohort generate_cohort(const SynthConfig& config);

/// Plain covariate design for direct CPH fitting: X ~ N(0,1), h* = X beta.
struct RegressionCohort {
  Matrix x;
  std::vector<SurvivalLabel> labels;
  Vector true_beta;
};
RegressionCohort generate_regression_cohort(int n, const Vector& beta,
                                            double censoring_rate_target, std::uint64_t seed);

/// Literal O(n^2) pair enumeration of Harrell's C; reference oracle for
/// survival_core::concordance_index.
double oracle_cindex(const Vector& log_risks, const std::vector<SurvivalLabel>& labels);

/// In-place label shuffle, breaking any feature-outcome association.
void permute_labels(std::vector<SurvivalLabel>& labels, std::uint64_t seed);

}  // namespace profuse::synthdata
