#include "profuse/dataio.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "profuse/binio.hpp"

namespace fs = std::filesystem;

namespace profuse::dataio {
namespace {

constexpr char kEmbeddingMagic[4] = {'P', 'F', 'M', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot open output file " + path);
  return out;
}

void expect_header(const std::vector<std::string>& actual, const std::vector<std::string>& expected,
                   const std::string& path) {
  if (actual != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) want += ",";
      want += expected[i];
    }
    throw std::runtime_error("unexpected header in " + path + " (want " + want + ")");
  }
}

double parse_double(const std::string& text, const std::string& path) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("malformed number '" + text + "' in " + path);
  }
}

int parse_event(const std::string& text, const std::string& path) {
  if (text == "0") return 0;
  if (text == "1") return 1;
  throw std::runtime_error("event indicator must be 0 or 1 in " + path);
}

}  // namespace

std::string format_g9(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    rows.push_back(split_fields(line));
  }
  if (rows.empty()) throw std::runtime_error("empty csv file " + path);
  return rows;
}

std::vector<LabeledCase> read_labels_csv(const std::string& path) {
  auto rows = read_csv(path);
  expect_header(rows[0], {"case_id", "time_months", "event"}, path);
  std::vector<LabeledCase> cases;
  cases.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) throw std::runtime_error("malformed row in " + path);
    LabeledCase c;
    c.case_id = rows[r][0];
    c.label.time_months = parse_double(rows[r][1], path);
    c.label.event = parse_event(rows[r][2], path) != 0;
    cases.push_back(std::move(c));
  }
  return cases;
}

void write_labels_csv(const std::string& path, const std::vector<std::string>& case_ids,
                      const std::vector<SurvivalLabel>& labels) {
  if (case_ids.size() != labels.size())
    throw std::invalid_argument("case id and label counts differ");
  auto out = open_out(path);
  out << "case_id,time_months,event\n";
  for (std::size_t i = 0; i < case_ids.size(); ++i) {
    out << case_ids[i] << ',' << format_g9(labels[i].time_months) << ',' << (labels[i].event ? 1 : 0)
        << '\n';
  }
}

std::vector<encoders::ClinicalRecord> read_clinical_csv(const std::string& path,
                                                        const encoders::ClinicalSchema& schema) {
  auto rows = read_csv(path);
  std::vector<std::string> expected{"case_id"};
  for (const auto& attr : schema.attributes) expected.push_back(attr.name);
  expect_header(rows[0], expected, path);
  std::vector<encoders::ClinicalRecord> records;
  records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != expected.size()) throw std::runtime_error("malformed row in " + path);
    encoders::ClinicalRecord rec;
    rec.case_id = rows[r][0];
    rec.values.reserve(schema.attributes.size());
    for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
      const std::string& cell = rows[r][a + 1];
      if (cell.empty()) {
        rec.values.emplace_back();  // unknown
      } else {
        rec.values.emplace_back(cell);
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_clinical_csv(const std::string& path,
                        const std::vector<encoders::ClinicalRecord>& records,
                        const encoders::ClinicalSchema& schema) {
  auto out = open_out(path);
  out << "case_id";
  for (const auto& attr : schema.attributes) out << ',' << attr.name;
  out << '\n';
  for (const auto& rec : records) {
    if (rec.values.size() != schema.attributes.size())
      throw std::invalid_argument("record width does not match schema");
    out << rec.case_id;
    for (const auto& value : rec.values) out << ',' << (value ? *value : std::string());
    out << '\n';
  }
}

void write_predictions_csv(const std::string& path, const std::vector<Prediction>& predictions) {
  auto out = open_out(path);
  out << "case_id,log_risk,ttr\n";
  for (const auto& p : predictions)
    out << p.case_id << ',' << format_g9(p.log_risk) << ',' << format_g9(p.ttr) << '\n';
}

std::vector<Prediction> read_predictions_csv(const std::string& path) {
  auto rows = read_csv(path);
  expect_header(rows[0], {"case_id", "log_risk", "ttr"}, path);
  std::vector<Prediction> predictions;
  predictions.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) throw std::runtime_error("malformed row in " + path);
    predictions.push_back(
        {rows[r][0], parse_double(rows[r][1], path), parse_double(rows[r][2], path)});
  }
  return predictions;
}

void write_ground_truth_csv(const std::string& path, const std::vector<std::string>& case_ids,
                            const synthdata::GroundTruth& truth) {
  if (case_ids.size() != truth.true_log_risk.size() ||
      case_ids.size() != truth.uncensored_time.size())
    throw std::invalid_argument("ground truth arrays do not match case count");
  auto out = open_out(path);
  out << "case_id,true_log_risk,uncensored_time\n";
  for (std::size_t i = 0; i < case_ids.size(); ++i) {
    out << case_ids[i] << ',' << format_g9(truth.true_log_risk[i]) << ','
        << format_g9(truth.uncensored_time[i]) << '\n';
  }
}

void write_curves_csv(const std::string& path, const std::vector<double>& train_curve,
                      const std::vector<double>& val_curve) {
  if (train_curve.size() != val_curve.size())
    throw std::invalid_argument("train and validation curves differ in length");
  auto out = open_out(path);
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < train_curve.size(); ++e) {
    out << (e + 1) << ',' << format_g9(train_curve[e]) << ',' << format_g9(val_curve[e]) << '\n';
  }
}

void write_embedding(const std::string& path, const Matrix& values) {
  auto out = open_out(path, std::ios::binary);
  out.write(kEmbeddingMagic, 4);
  binio::write_u32(out, kEmbeddingVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(values.rows()));
  binio::write_u32(out, static_cast<std::uint32_t>(values.cols()));
  std::vector<float> narrow(static_cast<std::size_t>(values.size()));
  const double* src = values.data();  // row-major storage
  for (std::size_t i = 0; i < narrow.size(); ++i) narrow[i] = static_cast<float>(src[i]);
  binio::write_floats(out, narrow.data(), narrow.size());
  if (!out) throw std::runtime_error("failed writing embedding file " + path);
}

Matrix read_embedding(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw std::runtime_error("not an embedding file: " + path);
  std::uint32_t version = 0, rows = 0, cols = 0;
  if (!binio::read_u32(in, version) || !binio::read_u32(in, rows) || !binio::read_u32(in, cols))
    throw std::runtime_error("truncated embedding file: " + path);
  if (version != kEmbeddingVersion)
    throw std::runtime_error("unsupported embedding version " + std::to_string(version));
  std::vector<float> narrow(static_cast<std::size_t>(rows) * cols);
  if (!binio::read_floats(in, narrow.data(), narrow.size()))
    throw std::runtime_error("truncated embedding file: " + path);
  Matrix values(rows, cols);
  double* dst = values.data();
  for (std::size_t i = 0; i < narrow.size(); ++i) dst[i] = static_cast<double>(narrow[i]);
  return values;
}

Dataset load_dataset(const std::string& data_dir, const encoders::ClinicalSchema& schema,
                     const std::string& clinical_csv, const std::string& labels_csv,
                     const std::string& pathology_dir, const std::string& radiology_dir) {
  const fs::path root(data_dir);
  Dataset ds;
  auto labeled = read_labels_csv((root / labels_csv).string());
  auto records = read_clinical_csv((root / clinical_csv).string(), schema);
  std::unordered_map<std::string, std::size_t> by_id;
  by_id.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!by_id.emplace(records[i].case_id, i).second)
      throw std::runtime_error("duplicate clinical record for case " + records[i].case_id);
  }

  ds.case_ids.reserve(labeled.size());
  ds.labels.reserve(labeled.size());
  ds.records.reserve(labeled.size());
  ds.pathology.resize(labeled.size());
  ds.radiology.resize(labeled.size());
  ds.masks.resize(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& lc = labeled[i];
    auto it = by_id.find(lc.case_id);
    if (it == by_id.end())
      throw std::runtime_error("clinical record missing for case " + lc.case_id);
    ds.case_ids.push_back(lc.case_id);
    ds.labels.push_back(lc.label);
    ds.records.push_back(records[it->second]);

    fs::path ppath = root / pathology_dir / (lc.case_id + ".pfme");
    fs::path rpath = root / radiology_dir / (lc.case_id + ".pfme");
    ds.masks[i].clinical = true;
    ds.masks[i].pathology = fs::exists(ppath);
    ds.masks[i].radiology = fs::exists(rpath);
    if (ds.masks[i].pathology) ds.pathology[i] = read_embedding(ppath.string());
    if (ds.masks[i].radiology) ds.radiology[i] = read_embedding(rpath.string());
  }
  return ds;
}

void write_cohort(const std::string& out_dir, const synthdata::SynthCohort& cohort,
                  const encoders::ClinicalSchema& schema) {
  const fs::path root(out_dir);
  fs::create_directories(root / "pathology");
  fs::create_directories(root / "radiology");

  std::vector<std::string> ids;
  ids.reserve(cohort.records.size());
  for (const auto& rec : cohort.records) ids.push_back(rec.case_id);

  write_clinical_csv((root / "clinical.csv").string(), cohort.records, schema);
  write_labels_csv((root / "labels.csv").string(), ids, cohort.labels);
  write_ground_truth_csv((root / "ground_truth.csv").string(), ids, cohort.truth);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    write_embedding((root / "pathology" / (ids[i] + ".pfme")).string(), cohort.pathology[i]);
    write_embedding((root / "radiology" / (ids[i] + ".pfme")).string(), cohort.radiology[i]);
  }
}

}  // namespace profuse::dataio
