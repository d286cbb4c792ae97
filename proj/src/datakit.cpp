#include "atypicalib/datakit.hpp"

#include "atypicalib/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

namespace atypicalib {

namespace {

void put_u16(std::string &out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string &out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) {
    out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
}

void put_f64(std::string &out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 8; ++b) {
    out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

std::uint64_t get_le(const std::string &in, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int b = 0; b < width; ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return v;
}

double get_f64(const std::string &in, std::size_t offset) {
  const std::uint64_t bits = get_le(in, offset, 8);
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<double> parse_double(std::string_view token) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') {
    token.remove_prefix(1);
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
    return std::nullopt;
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

void require_finite(const Matrix &m, const std::string &where) {
  if (!m.allFinite()) {
    throw DataError(where + ": matrix contains non-finite values");
  }
}

} // namespace

// ---------------------------------------------------------------------------

void LabeledDataset::validate() const {
  const Index n = logits.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " logit rows");
  }
  if (embeddings && embeddings->rows() != n) {
    throw ShapeError("dataset: embeddings have " + std::to_string(embeddings->rows()) + " rows, expected " +
                     std::to_string(n));
  }
  if (atypicality && atypicality->size() != n) {
    throw ShapeError("dataset: atypicality has " + std::to_string(atypicality->size()) + " entries, expected " +
                     std::to_string(n));
  }
  for (const auto y : labels) {
    if (static_cast<Index>(y) >= logits.cols()) {
      throw DataError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(logits.cols()) +
                      ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<Index> &rows) const {
  LabeledDataset out;
  out.logits.resize(static_cast<Index>(rows.size()), logits.cols());
  out.labels.resize(rows.size());
  if (embeddings) {
    out.embeddings = Matrix(static_cast<Index>(rows.size()), embeddings->cols());
  }
  if (atypicality) {
    out.atypicality = VectorXd(static_cast<Index>(rows.size()));
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index r = rows[k];
    const Index i = static_cast<Index>(k);
    out.logits.row(i) = logits.row(r);
    out.labels[k] = labels[static_cast<std::size_t>(r)];
    if (embeddings) {
      out.embeddings->row(i) = embeddings->row(r);
    }
    if (atypicality) {
      (*out.atypicality)(i) = (*atypicality)(r);
    }
  }
  return out;
}

void SplitSpec::validate() const {
  if (fractions.empty()) {
    throw ArgumentError("split: no fractions given");
  }
  double total = 0.0;
  for (const double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw ArgumentError("split: fractions must be non-negative");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ArgumentError("split: fractions must sum to 1");
  }
}

std::vector<Index> split_sizes(Index n, const std::vector<double> &fractions) {
  std::vector<Index> sizes(fractions.size());
  Index assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    sizes[k] = static_cast<Index>(std::floor(fractions[k] * static_cast<double>(n)));
    assigned += sizes[k];
  }
  for (std::size_t k = 0; assigned < n; k = (k + 1) % sizes.size()) {
    ++sizes[k];
    ++assigned;
  }
  return sizes;
}

std::vector<std::vector<Index>> split_indices(Index n, const SplitSpec &spec) {
  spec.validate();
  if (n <= 0) {
    throw ArgumentError("split: empty dataset");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Xoshiro256 rng(spec.seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }
  const auto sizes = split_sizes(n, spec.fractions);
  std::vector<std::vector<Index>> parts(sizes.size());
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    parts[k].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                    order.begin() + static_cast<std::ptrdiff_t>(cursor + static_cast<std::size_t>(sizes[k])));
    std::sort(parts[k].begin(), parts[k].end());
    cursor += static_cast<std::size_t>(sizes[k]);
  }
  return parts;
}

std::vector<LabeledDataset> split(const LabeledDataset &dataset, const SplitSpec &spec) {
  dataset.validate();
  std::vector<LabeledDataset> out;
  for (const auto &rows : split_indices(dataset.size(), spec)) {
    out.push_back(dataset.subset(rows));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string encode_matrix_binary(const Matrix &m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() || m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError("matrix too large for the binary format");
  }
  std::string out;
  out.reserve(kMatrixHeaderBytes + 8 * static_cast<std::size_t>(m.size()));
  out.append("ATYM", 4);
  put_u16(out, 1);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index k = 0; k < m.size(); ++k) {
    put_f64(out, m.data()[k]);
  }
  return out;
}

Matrix decode_matrix_binary(const std::string &bytes) {
  if (bytes.size() < kMatrixHeaderBytes || bytes.compare(0, 4, "ATYM") != 0) {
    throw FormatError("matrix: missing ATYM header");
  }
  const auto version = get_le(bytes, 4, 2);
  const auto flags = get_le(bytes, 6, 2);
  if (version != 1) {
    throw FormatError("matrix: unsupported version " + std::to_string(version));
  }
  if (flags != 0) {
    throw FormatError("matrix: unsupported flags " + std::to_string(flags));
  }
  const auto rows = get_le(bytes, 8, 4);
  const auto cols = get_le(bytes, 12, 4);
  if (bytes.size() != kMatrixHeaderBytes + 8 * rows * cols) {
    throw FormatError("matrix: payload is " + std::to_string(bytes.size() - kMatrixHeaderBytes) +
                      " bytes, header declares " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index k = 0; k < m.size(); ++k) {
    m.data()[k] = get_f64(bytes, kMatrixHeaderBytes + 8 * static_cast<std::size_t>(k));
  }
  require_finite(m, "matrix");
  return m;
}

std::string encode_matrix_csv(const Matrix &m) {
  std::string out;
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) {
        out.push_back(',');
      }
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, m(i, j));
      out.append(buf, ptr);
    }
    out.push_back('\n');
  }
  return out;
}

Matrix decode_matrix_csv(const std::string &text) {
  std::vector<double> values;
  Index cols = -1;
  Index rows = 0;
  bool first_line = true;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      end = text.size();
    }
    const std::string_view line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto fields = split_fields(line);
    if (first_line) {
      first_line = false;
      if (!parse_double(fields.front())) {
        continue; // header row
      }
    }
    if (cols < 0) {
      cols = static_cast<Index>(fields.size());
    } else if (static_cast<Index>(fields.size()) != cols) {
      throw ShapeError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(cols));
    }
    for (const auto field : fields) {
      const auto v = parse_double(field);
      if (!v) {
        throw FormatError("csv: line " + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
      }
      values.push_back(*v);
    }
    ++rows;
  }
  Matrix m(rows, std::max<Index>(cols, 0));
  std::copy(values.begin(), values.end(), m.data());
  require_finite(m, "csv");
  return m;
}

std::string encode_labels_binary(const Labels &labels) {
  if (labels.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError("labels: too many entries for the binary format");
  }
  std::string out;
  out.reserve(kLabelsHeaderBytes + 4 * labels.size());
  out.append("ATYL", 4);
  put_u16(out, 1);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  for (const auto y : labels) {
    put_u32(out, y);
  }
  return out;
}

Labels decode_labels_binary(const std::string &bytes) {
  if (bytes.size() < kLabelsHeaderBytes || bytes.compare(0, 4, "ATYL") != 0) {
    throw FormatError("labels: missing ATYL header");
  }
  if (get_le(bytes, 4, 2) != 1) {
    throw FormatError("labels: unsupported version");
  }
  const auto n = get_le(bytes, 8, 4);
  if (bytes.size() != kLabelsHeaderBytes + 4 * n) {
    throw FormatError("labels: payload size does not match header count " + std::to_string(n));
  }
  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint32_t>(get_le(bytes, kLabelsHeaderBytes + 4 * i, 4));
  }
  return labels;
}

FileFormat format_for_path(const std::filesystem::path &path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv" ? FileFormat::csv : FileFormat::binary;
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write to '" + path.string() + "' failed");
  }
}

Matrix read_matrix(const std::filesystem::path &path, FileFormat format) {
  const std::string bytes = read_file(path);
  if (format == FileFormat::automatic) {
    format = bytes.compare(0, 4, "ATYM") == 0 ? FileFormat::binary : FileFormat::csv;
  }
  return format == FileFormat::binary ? decode_matrix_binary(bytes) : decode_matrix_csv(bytes);
}

void write_matrix(const Matrix &m, const std::filesystem::path &path, FileFormat format) {
  require_finite(m, "write_matrix");
  if (format == FileFormat::automatic) {
    format = format_for_path(path);
  }
  write_file(path, format == FileFormat::csv ? encode_matrix_csv(m) : encode_matrix_binary(m));
}

Labels read_labels(const std::filesystem::path &path, FileFormat format) {
  const std::string bytes = read_file(path);
  if (format == FileFormat::automatic) {
    format = bytes.compare(0, 4, "ATYL") == 0 ? FileFormat::binary : FileFormat::csv;
  }
  if (format == FileFormat::binary) {
    return decode_labels_binary(bytes);
  }
  const Matrix m = decode_matrix_csv(bytes);
  if (m.cols() != 1 && m.rows() > 0) {
    throw ShapeError("labels csv: expected a single column, got " + std::to_string(m.cols()));
  }
  Labels labels(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    if (v < 0 || v != std::floor(v) || v > std::numeric_limits<std::uint32_t>::max()) {
      throw DataError("labels csv: '" + std::to_string(v) + "' is not a class index");
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(v);
  }
  return labels;
}

void write_labels(const Labels &labels, const std::filesystem::path &path, FileFormat format) {
  if (format == FileFormat::automatic) {
    format = format_for_path(path);
  }
  if (format == FileFormat::binary) {
    write_file(path, encode_labels_binary(labels));
    return;
  }
  std::string out;
  for (const auto y : labels) {
    out += std::to_string(y);
    out.push_back('\n');
  }
  write_file(path, out);
}

std::uint64_t fnv1a64(const std::string &bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint64_t> class_counts(const Labels &labels, Index n_classes) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto y : labels) {
    if (static_cast<Index>(y) >= n_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    ++counts[y];
  }
  return counts;
}

Index infer_n_classes(const Labels &labels) {
  if (labels.empty()) {
    return 0;
  }
  return static_cast<Index>(*std::max_element(labels.begin(), labels.end())) + 1;
}

} // namespace atypicalib
