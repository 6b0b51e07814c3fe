#include "profuse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "profuse/rng.hpp"

namespace profuse::synthdata {

namespace {

// Category probabilities roughly shaped like a post-prostatectomy cohort.
constexpr double kIsupProbs[5] = {0.15, 0.25, 0.30, 0.20, 0.10};
constexpr double kPtProbs[9] = {0.10, 0.10, 0.10, 0.25, 0.05, 0.20, 0.12, 0.05, 0.03};
constexpr double kBinaryYesProbs[5] = {0.12, 0.35, 0.30, 0.20, 0.15};
constexpr double kAgeMean = 64.0, kAgeStd = 7.0;
constexpr double kBaselineRate = 1.0 / 36.0;  // median ~25 months at h* = 0

int sample_category(Rng& rng, const double* probs, int k) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (int i = 0; i < k; ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return k - 1;
}

std::string format_age(double age) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", age);
  return buf;
}

// Default prognostic coefficients over the 18 dummy columns:
// [age_z, isup 2..5, pT (8 non-reference stages), 5 binary yes-flags].
std::vector<double> preset_beta() {
  return {0.20,                                            // age
          0.15, 0.30, 0.55, 0.85,                          // isup grades 2-5
          0.05, 0.10, 0.15, 0.30, 0.40, 0.55, 0.80, 0.10,  // pT2a..pT4, pTx
          0.35, 0.20, 0.25, 0.50, 0.40};                   // binaries
}

struct TimeDraws {
  std::vector<double> event_time;
  std::vector<double> censor_unit;  // uniform draws scaled by the horizon
};

// Bisect the censoring horizon until the realized censored fraction lands
// within +-5% of the target. C_i = u_i * tau; event when T_i <= C_i.
std::vector<double> calibrate_censoring(const TimeDraws& draws, double target) {
  const std::size_t n = draws.event_time.size();
  if (target <= 0.0)
    return std::vector<double>(n, std::numeric_limits<double>::infinity());

  auto censored_fraction = [&](double tau) {
    std::size_t censored = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (draws.event_time[i] > draws.censor_unit[i] * tau) ++censored;
    return static_cast<double>(censored) / static_cast<double>(n);
  };

  double max_t = 0.0;
  for (double t : draws.event_time) max_t = std::max(max_t, t);
  double lo = 1e-9, hi = std::max(1.0, max_t) * 1e4;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(mid) > target)
      lo = mid;  // too much censoring: lengthen the horizon
    else
      hi = mid;
  }
  const double tau = 0.5 * (lo + hi);
  if (std::abs(censored_fraction(tau) - target) > 0.05)
    throw std::runtime_error("unsatisfiable censoring target");
  std::vector<double> censor_time(n);
  for (std::size_t i = 0; i < n; ++i) censor_time[i] = draws.censor_unit[i] * tau;
  return censor_time;
}

void finalize_labels(const TimeDraws& draws, const std::vector<double>& censor_time,
                     std::vector<SurvivalLabel>& labels, GroundTruth* truth) {
  const std::size_t n = draws.event_time.size();
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = draws.event_time[i];
    const double c = censor_time[i];
    labels[i].time_months = std::min(t, c);
    labels[i].event = t <= c;
  }
  if (truth) {
    truth->uncensored_time = draws.event_time;
    truth->censoring_time = censor_time;
  }
}

Vector unit_direction(int dim, Rng& rng) {
  Vector d(dim);
  for (int i = 0; i < dim; ++i) d(i) = rng.normal();
  d /= d.norm();
  return d;
}

}  // namespace

SynthCohort generate_cohort(const SynthConfig& config) {
  if (config.n_subjects < 1) throw std::invalid_argument("n_subjects must be >= 1");
  if (!(config.signal_to_noise > 0.0))
    throw std::invalid_argument("signal_to_noise must be positive");
  if (config.censoring_rate_target < 0.0 || config.censoring_rate_target >= 1.0)
    throw std::invalid_argument("censoring_rate_target must be in [0, 1)");
  if (config.patches_min < 1 || config.patches_max < config.patches_min ||
      config.slices_min < 1 || config.slices_max < config.slices_min)
    throw std::invalid_argument("invalid row-count range");

  const auto schema = encoders::ClinicalSchema::default_schema();
  std::vector<double> beta =
      config.true_beta_clinical.empty() ? preset_beta() : config.true_beta_clinical;
  if (static_cast<int>(beta.size()) != schema.dummy_width())
    throw std::invalid_argument("true_beta_clinical width must match the dummy encoding");

  Rng root(config.seed);
  Rng clin_rng = root.child(1);
  Rng latent_rng = root.child(2);
  Rng path_rng = root.child(3);
  Rng rad_rng = root.child(4);
  Rng time_rng = root.child(5);

  SynthCohort cohort;
  const int n = config.n_subjects;
  cohort.records.reserve(n);
  cohort.pathology.reserve(n);
  cohort.radiology.reserve(n);
  cohort.truth.true_log_risk.resize(n);

  // Signal directions are cohort-level constants.
  Vector dir_p = unit_direction(config.pathology_dim, path_rng);
  const int nnz = std::min(config.radiology_sparse_nnz, config.radiology_dim);
  const int band = std::min(std::max(config.radiology_noise_band, nnz), config.radiology_dim);
  std::vector<int> support(band);
  for (int i = 0; i < band; ++i) support[i] = i;
  rad_rng.shuffle(support);
  support.resize(nnz);
  std::sort(support.begin(), support.end());
  Vector support_values(nnz);
  for (int i = 0; i < nnz; ++i) support_values(i) = rad_rng.normal();
  support_values /= support_values.norm();

  const double noise_scale = std::isinf(config.signal_to_noise)
                                 ? 0.0
                                 : 1.0 / config.signal_to_noise;

  TimeDraws draws;
  draws.event_time.resize(n);
  draws.censor_unit.resize(n);

  for (int s = 0; s < n; ++s) {
    // Clinical record plus its generator-side standardized dummy encoding.
    encoders::ClinicalRecord record;
    char case_buf[32];
    std::snprintf(case_buf, sizeof(case_buf), "case_%04d", s);
    record.case_id = case_buf;

    Vector x = Vector::Zero(schema.dummy_width());
    int offset = 0;
    const double age_z = clin_rng.normal();
    record.values.push_back(format_age(kAgeMean + kAgeStd * age_z));
    x(offset++) = age_z;

    const int isup = sample_category(clin_rng, kIsupProbs, 5);
    record.values.push_back(schema.attributes[1].categories[isup]);
    if (isup > 0) x(offset + isup - 1) = 1.0;
    offset += 4;

    const int pt = sample_category(clin_rng, kPtProbs, 9);
    record.values.push_back(schema.attributes[2].categories[pt]);
    if (pt > 0) x(offset + pt - 1) = 1.0;
    offset += 8;

    bool lvi_positive = false;
    for (int b = 0; b < 5; ++b) {
      const bool yes = clin_rng.uniform() < kBinaryYesProbs[b];
      record.values.push_back(yes ? "yes" : "no");
      x(offset++) = yes ? 1.0 : 0.0;
      if (b == 4) lvi_positive = yes;
    }
    cohort.records.push_back(std::move(record));

    const double z_p = latent_rng.normal();
    const double z_r = latent_rng.normal();
    const double s_c = lvi_positive ? 1.0 : -1.0;
    double h = config.pathology_weight * z_p + config.radiology_weight * z_r +
               config.interaction_weight * s_c * z_p;
    for (int j = 0; j < schema.dummy_width(); ++j) h += beta[j] * x(j);
    cohort.truth.true_log_risk[s] = h;

    const int m_p = static_cast<int>(path_rng.uniform_int(config.patches_min, config.patches_max));
    Matrix emb_p(m_p, config.pathology_dim);
    for (int r = 0; r < m_p; ++r)
      for (int j = 0; j < config.pathology_dim; ++j)
        emb_p(r, j) = z_p * dir_p(j) + noise_scale * path_rng.normal();
    cohort.pathology.push_back(std::move(emb_p));

    const int m_r = static_cast<int>(rad_rng.uniform_int(config.slices_min, config.slices_max));
    Matrix emb_r = Matrix::Zero(m_r, config.radiology_dim);
    for (int r = 0; r < m_r; ++r) {
      for (int j = 0; j < band; ++j) emb_r(r, j) = noise_scale * rad_rng.normal();
      for (int k = 0; k < nnz; ++k) emb_r(r, support[k]) += z_r * support_values(k);
    }
    cohort.radiology.push_back(std::move(emb_r));

    draws.event_time[s] = -std::log(time_rng.uniform()) / (kBaselineRate * std::exp(h));
    draws.censor_unit[s] = time_rng.uniform();
  }

  auto censor_time = calibrate_censoring(draws, config.censoring_rate_target);
  finalize_labels(draws, censor_time, cohort.labels, &cohort.truth);
  return cohort;
}

RegressionCohort generate_regression_cohort(int n, const Vector& beta,
                                            double censoring_rate_target, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("n must be >= 2");
  RegressionCohort cohort;
  cohort.true_beta = beta;
  cohort.x.resize(n, beta.size());
  Rng rng(seed);
  TimeDraws draws;
  draws.event_time.resize(n);
  draws.censor_unit.resize(n);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < beta.size(); ++j) cohort.x(i, j) = rng.normal();
    const double h = cohort.x.row(i) * beta;
    draws.event_time[i] = -std::log(rng.uniform()) / std::exp(h);
    draws.censor_unit[i] = rng.uniform();
  }
  auto censor_time = calibrate_censoring(draws, censoring_rate_target);
  finalize_labels(draws, censor_time, cohort.labels, nullptr);
  return cohort;
}

double oracle_cindex(const Vector& log_risks, const std::vector<SurvivalLabel>& labels) {
  const int n = static_cast<int>(labels.size());
  if (log_risks.size() != n) throw std::invalid_argument("length mismatch");
  double concordant = 0.0;
  long comparable = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& a = labels[i];
      const auto& b = labels[j];
      if (a.time_months == b.time_months) {
        // Count tied-time pairs once (i < j); comparable only when exactly
        // one subject has the event, which must rank higher.
        if (i > j || a.event == b.event) continue;
        const double h_event = a.event ? log_risks(i) : log_risks(j);
        const double h_other = a.event ? log_risks(j) : log_risks(i);
        ++comparable;
        if (h_event > h_other)
          concordant += 1.0;
        else if (h_event == h_other)
          concordant += 0.5;
      } else if (a.time_months < b.time_months && a.event) {
        ++comparable;
        if (log_risks(i) > log_risks(j))
          concordant += 1.0;
        else if (log_risks(i) == log_risks(j))
          concordant += 0.5;
      }
    }
  }
  if (comparable == 0) throw std::runtime_error("no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

void permute_labels(std::vector<SurvivalLabel>& labels, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(labels);
}

}  // namespace profuse::synthdata
