#include "lapref/data_io.hpp"

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace lapref {

namespace {

using nlohmann::json;

constexpr char kSamplesMagic[4] = {'L', 'R', 'S', 'S'};
constexpr std::string_view kSamplesCsvTag = "# lapref-samples";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& text, const std::string& where) {
  const std::string cell = trim(text);
  if (cell.empty()) throw Error(ErrorCode::kParseError, where + ": empty cell");
  errno = 0;
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE)
    throw Error(ErrorCode::kParseError, where + ": cannot parse '" + cell + "'");
  if (!std::isfinite(value))
    throw Error(ErrorCode::kNonFiniteValue, where + ": non-finite value '" + cell + "'");
  return value;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return out.str();
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little,
                "samples files assume a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw Error(ErrorCode::kParseError, path + ": truncated header");
  return value;
}

void check_version(std::uint64_t version, const std::string& path) {
  if (version > kFormatVersion)
    throw Error(ErrorCode::kUnsupportedVersion,
                path + ": format_version " + std::to_string(version) +
                    " is newer than supported " + std::to_string(kFormatVersion));
  if (version < 1) throw Error(ErrorCode::kParseError, path + ": invalid format_version");
}

json vector_json(const Vector& v) { return json(std::vector<double>(v.begin(), v.end())); }

Vector json_vector(const json& j, Eigen::Index expected, const std::string& what) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != expected)
    throw Error(ErrorCode::kParseError, what + ": wrong length");
  Vector out(expected);
  for (Eigen::Index i = 0; i < expected; ++i) out[i] = values[static_cast<std::size_t>(i)];
  return out;
}

json posterior_json(const GaussianPosterior& base, const RadialFlowStack* flow) {
  const Eigen::Index d = base.dim();
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["kind"] = flow ? "refined" : "gaussian";
  doc["d"] = d;
  doc["mean"] = vector_json(base.mean);
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(d * d));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) cov.push_back(base.covariance(i, j));
  doc["covariance"] = cov;
  doc["flow"] = json::array();
  if (flow) {
    for (const RadialLayer& layer : flow->layers)
      doc["flow"].push_back({{"z0", vector_json(layer.center)},
                             {"raw_alpha", layer.raw_alpha},
                             {"raw_beta", layer.raw_beta}});
  }
  doc["provenance"] = std::string(provenance_name(base.provenance));
  doc["lambda"] = base.prior_precision;
  return doc;
}

}  // namespace

Dataset gen_toy_logreg(RngStream& rng) {
  Dataset data;
  data.n_classes = 2;
  data.features.resize(50, 2);
  data.labels.resize(50);
  for (int i = 0; i < 50; ++i) {
    const int label = i < 25 ? 0 : 1;
    const double sign = label == 1 ? 1.0 : -1.0;
    data.features(i, 0) = sign * 1.5 + 0.8 * rng.normal();
    data.features(i, 1) = sign * 1.5 + 0.8 * rng.normal();
    data.labels[static_cast<std::size_t>(i)] = label;
  }
  return data;
}

Dataset gen_toy_regression(RngStream& rng, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "gen_toy_regression: n must be >= 1");
  Dataset data;
  data.features.resize(n, 1);
  data.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u = 6.0 * rng.uniform();
    const double x = u < 3.0 ? -4.0 + u : 1.0 + (u - 3.0);
    data.features(i, 0) = x;
    data.targets[i] = std::sin(2.0 * x) * std::exp(-0.1 * x * x) + 0.3 * rng.normal();
  }
  return data;
}

Dataset gen_mixture_classes(int n_classes, int n_features, int n_points, RngStream& rng,
                            double radius) {
  if (n_classes < 2 || n_features < 1 || n_points < n_classes || !(radius > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "gen_mixture_classes: invalid sizes");
  Matrix means(n_classes, n_features);
  for (int k = 0; k < n_classes; ++k) {
    Vector dir = rng.normal_vector(n_features);
    dir /= dir.norm();
    means.row(k) = radius * dir.transpose();
  }
  Dataset data;
  data.n_classes = n_classes;
  data.features = rng.normal_matrix(n_points, n_features);
  data.labels.resize(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const int label = i % n_classes;
    data.labels[static_cast<std::size_t>(i)] = label;
    data.features.row(i) += means.row(label);
  }
  return data;
}

Dataset load_features_csv(const std::string& path, int n_classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2)
    throw Error(ErrorCode::kParseError, path + ":1: need at least one feature column");
  const std::size_t n_features = header.size() - 1;
  for (std::size_t j = 0; j < n_features; ++j)
    if (trim(header[j]) != "f" + std::to_string(j))
      throw Error(ErrorCode::kParseError,
                  path + ":1: expected column f" + std::to_string(j));
  const std::string last = trim(header.back());
  if (last != "label" && last != "target")
    throw Error(ErrorCode::kParseError, path + ":1: last column must be label or target");
  const bool regression = last == "target";

  std::vector<std::vector<double>> rows;
  std::vector<double> outcomes;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::kParseError, where + ": expected " +
                                              std::to_string(header.size()) + " cells, got " +
                                              std::to_string(cells.size()));
    std::vector<double> row(n_features);
    for (std::size_t j = 0; j < n_features; ++j) row[j] = parse_double(cells[j], where);
    const double outcome = parse_double(cells.back(), where);
    if (!regression) {
      if (outcome < 0.0 || outcome != std::floor(outcome) ||
          (n_classes > 0 && outcome >= n_classes))
        throw Error(ErrorCode::kParseError, where + ": label out of range");
    }
    rows.push_back(std::move(row));
    outcomes.push_back(outcome);
  }

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.features.resize(n, static_cast<Eigen::Index>(n_features));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n_features; ++j)
      data.features(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
  if (regression) {
    data.targets = Eigen::Map<const Vector>(outcomes.data(), n);
  } else {
    int max_label = -1;
    for (double v : outcomes) {
      data.labels.push_back(static_cast<int>(v));
      max_label = std::max(max_label, static_cast<int>(v));
    }
    data.n_classes = n_classes > 0 ? n_classes : max_label + 1;
  }
  return data;
}

void save_features_csv(const std::string& path, const Dataset& data) {
  std::ostringstream out;
  for (Eigen::Index j = 0; j < data.n_features(); ++j) out << 'f' << j << ',';
  out << (data.is_regression() ? "target" : "label") << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.n_features(); ++j)
      out << format_double(data.features(i, j)) << ',';
    if (data.is_regression())
      out << format_double(data.targets[i]) << '\n';
    else
      out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
  write_text_file(path, out.str());
}

void save_posterior(const std::string& path, const GaussianPosterior& posterior) {
  write_text_file(path, posterior_json(posterior, nullptr).dump(2) + "\n");
}

void save_posterior(const std::string& path, const RefinedPosterior& posterior) {
  write_text_file(path, posterior_json(posterior.base, &posterior.flow).dump(2) + "\n");
}

PosteriorFile load_posterior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, path + ": cannot open");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
  try {
    check_version(doc.at("format_version").get<std::uint64_t>(), path);
    const auto d = doc.at("d").get<Eigen::Index>();
    if (d < 1) throw Error(ErrorCode::kParseError, path + ": d must be >= 1");
    const Vector mean = json_vector(doc.at("mean"), d, path + ": mean");
    const Vector cov_flat = json_vector(doc.at("covariance"), d * d, path + ": covariance");
    Matrix cov(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = cov_flat[i * d + j];
    PosteriorFile file;
    file.base = GaussianPosterior::from_covariance(
        mean, cov, doc.at("lambda").get<double>(),
        provenance_from_name(doc.at("provenance").get<std::string>()));
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind == "gaussian") {
      file.kind = PosteriorKind::kGaussian;
    } else if (kind == "refined") {
      file.kind = PosteriorKind::kRefined;
      RadialFlowStack flow = RadialFlowStack::identity(d);
      for (const json& layer : doc.at("flow")) {
        RadialLayer l;
        l.center = json_vector(layer.at("z0"), d, path + ": z0");
        l.raw_alpha = layer.at("raw_alpha").get<double>();
        l.raw_beta = layer.at("raw_beta").get<double>();
        flow.layers.push_back(std::move(l));
      }
      file.flow = std::move(flow);
    } else {
      throw Error(ErrorCode::kParseError, path + ": unknown kind '" + kind + "'");
    }
    return file;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
}

RefinedPosterior as_refined(const PosteriorFile& file) {
  return RefinedPosterior(file.base,
                          file.flow ? *file.flow : RadialFlowStack::identity(file.base.dim()));
}

void save_samples(const std::string& path, const SampleSet& samples, SamplesFormat format) {
  if (format == SamplesFormat::kBinary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, path + ": cannot open for writing");
    out.write(kSamplesMagic, 4);
    write_le<std::uint32_t>(out, kFormatVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(samples.dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(samples.provenance));
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(samples.size()));
    write_le<std::uint64_t>(out, samples.seed);
    const RowMajorMatrix rows = samples.draws;
    out.write(reinterpret_cast<const char*>(rows.data()),
              static_cast<std::streamsize>(rows.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::kIoError, path + ": write failed");
    return;
  }
  std::ostringstream out;
  out << kSamplesCsvTag << " format_version=" << kFormatVersion << " d=" << samples.dim()
      << " S=" << samples.size() << " provenance=" << provenance_name(samples.provenance)
      << " seed=" << samples.seed << '\n';
  for (Eigen::Index j = 0; j < samples.dim(); ++j) out << (j ? "," : "") << 'p' << j;
  out << '\n';
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    for (Eigen::Index j = 0; j < samples.dim(); ++j)
      out << (j ? "," : "") << format_double(samples.draws(i, j));
    out << '\n';
  }
  write_text_file(path, out.str());
}

SampleSet load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, path + ": cannot open");
  char magic[4] = {};
  in.read(magic, 4);
  SampleSet out;
  if (in && std::memcmp(magic, kSamplesMagic, 4) == 0) {
    check_version(read_le<std::uint32_t>(in, path), path);
    const auto d = read_le<std::uint32_t>(in, path);
    const auto prov = read_le<std::uint32_t>(in, path);
    const auto s = read_le<std::uint64_t>(in, path);
    out.seed = read_le<std::uint64_t>(in, path);
    if (prov > static_cast<std::uint32_t>(Provenance::kHmc))
      throw Error(ErrorCode::kParseError, path + ": unknown provenance");
    out.provenance = static_cast<Provenance>(prov);
    RowMajorMatrix rows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d));
    in.read(reinterpret_cast<char*>(rows.data()),
            static_cast<std::streamsize>(rows.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::kParseError, path + ": fewer rows than the header states");
    in.peek();
    if (!in.eof()) throw Error(ErrorCode::kParseError, path + ": more rows than the header states");
    out.draws = rows;
    return out;
  }

  in.clear();
  in.seekg(0);
  std::string line;
  std::getline(in, line);
  if (line.rfind(kSamplesCsvTag, 0) != 0)
    throw Error(ErrorCode::kParseError, path + ": not a samples file");
  std::istringstream meta(line.substr(kSamplesCsvTag.size()));
  std::string field;
  std::int64_t d = -1, s = -1;
  while (meta >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "format_version") check_version(std::stoull(value), path);
    else if (key == "d") d = std::stoll(value);
    else if (key == "S") s = std::stoll(value);
    else if (key == "provenance") out.provenance = provenance_from_name(value);
    else if (key == "seed") out.seed = std::stoull(value);
  }
  if (d < 0 || s < 0) throw Error(ErrorCode::kParseError, path + ": incomplete header");
  std::getline(in, line);  // column names
  out.draws.resize(s, d);
  std::int64_t row = 0;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (row >= s) throw Error(ErrorCode::kParseError, where + ": more rows than the header states");
    const auto cells = split_csv_line(line);
    if (static_cast<std::int64_t>(cells.size()) != d)
      throw Error(ErrorCode::kParseError, where + ": wrong number of cells");
    for (std::int64_t j = 0; j < d; ++j)
      out.draws(row, j) = parse_double(cells[static_cast<std::size_t>(j)], where);
    ++row;
  }
  if (row != s) throw Error(ErrorCode::kParseError, path + ": fewer rows than the header states");
  return out;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, path + ": cannot open for writing");
  out << contents;
  if (!out) throw Error(ErrorCode::kIoError, path + ": write failed");
}

}  // namespace lapref
