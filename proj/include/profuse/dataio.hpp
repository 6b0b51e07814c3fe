#pragma once

#include <string>
#include <vector>

#include "profuse/encoders.hpp"
#include "profuse/fusion.hpp"
#include "profuse/synthdata.hpp"
#include "profuse/types.hpp"

namespace profuse::dataio {

/// 9-significant-digit float formatting used by every CSV writer.
std::string format_g9(double value);

// Minimal comma-separated IO: UTF-8, header mandatory, no quoting (case ids
// and categories never contain commas). CRLF input tolerated.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

struct LabeledCase {
  std::string case_id;
  SurvivalLabel label;
};

std::vector<LabeledCase> read_labels_csv(const std::string& path);
void write_labels_csv(const std::string& path, const std::vector<std::string>& case_ids,
                      const std::vector<SurvivalLabel>& labels);

std::vector<encoders::ClinicalRecord> read_clinical_csv(const std::string& path,
                                                        const encoders::ClinicalSchema& schema);
void write_clinical_csv(const std::string& path,
                        const std::vector<encoders::ClinicalRecord>& records,
                        const encoders::ClinicalSchema& schema);

struct Prediction {
  std::string case_id;
  double log_risk = 0.0;
  double ttr = 0.0;
};

void write_predictions_csv(const std::string& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions_csv(const std::string& path);

void write_ground_truth_csv(const std::string& path, const std::vector<std::string>& case_ids,
                            const synthdata::GroundTruth& truth);

void write_curves_csv(const std::string& path, const std::vector<double>& train_curve,
                      const std::vector<double>& val_curve);

/// Embedding container: magic "PFME", version u32, rows u32, cols u32,
/// little-endian f32 row-major. Values widen to f64 on load.
void write_embedding(const std::string& path, const Matrix& values);
Matrix read_embedding(const std::string& path);

/// A cohort on disk, keyed by labels.csv row order. Subjects missing an
/// embedding file carry mask=false for that modality.
struct Dataset {
  std::vector<std::string> case_ids;
  std::vector<SurvivalLabel> labels;
  std::vector<encoders::ClinicalRecord> records;
  std::vector<Matrix> pathology;  // empty matrix when absent
  std::vector<Matrix> radiology;
  std::vector<fusion::ModalityMask> masks;

  int size() const { return static_cast<int>(case_ids.size()); }
};

Dataset load_dataset(const std::string& data_dir, const encoders::ClinicalSchema& schema,
                     const std::string& clinical_csv = "clinical.csv",
                     const std::string& labels_csv = "labels.csv",
                     const std::string& pathology_dir = "pathology",
                     const std::string& radiology_dir = "radiology");

/// Materializes a synthetic cohort in the on-disk layout load_dataset reads,
/// plus ground_truth.csv.
void write_cohort(const std::string& out_dir, const synthdata::SynthCohort& cohort,
                  const encoders::ClinicalSchema& schema);

}  // namespace profuse::dataio
