#include "nonlazy/dataset.hpp"

#include "nonlazy/rng.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nonlazy {

Matrix Dataset::input_kernel() const { return (X.transpose() * X) / double(n0); }

Vector Dataset::k0(const Vector& x) const { return (X.transpose() * x) / double(n0); }

Matrix Dataset::k0_block(const Matrix& x_test) const {
  return (X.transpose() * x_test) / double(n0);
}

namespace {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::uint64_t Dataset::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const std::int32_t dims[3] = {n0, p, m};
  h = fnv1a(dims, sizeof(dims), h);
  const double offs[2] = {y_plus, y_minus};
  h = fnv1a(offs, sizeof(offs), h);
  h = fnv1a(labels.data(), labels.size() * sizeof(int), h);
  h = fnv1a(X.data(), sizeof(double) * X.size(), h);
  h = fnv1a(Y.data(), sizeof(double) * Y.size(), h);
  return h;
}

Matrix one_hot_targets(const std::vector<int>& labels, int m, double y_plus,
                       double y_minus) {
  Matrix y = Matrix::Constant(labels.size(), m, y_minus);
  for (std::size_t mu = 0; mu < labels.size(); ++mu) {
    y(mu, labels[mu]) = y_plus;
  }
  return y;
}

std::vector<int> fixed_ratio_counts(int p, const std::vector<double>& ratios) {
  double sum = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ValidationError("class ratios must sum to 1 (got " + std::to_string(sum) + ")");
  }
  for (double r : ratios) {
    if (r < 0.0) throw ValidationError("class ratios must be nonnegative");
  }
  const int m = static_cast<int>(ratios.size());
  std::vector<int> counts(m);
  std::vector<std::pair<double, int>> remainders(m);
  int assigned = 0;
  for (int r = 0; r < m; ++r) {
    const double exact = p * ratios[r];
    counts[r] = static_cast<int>(std::floor(exact));
    assigned += counts[r];
    remainders[r] = {exact - counts[r], r};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; i < p - assigned; ++i) counts[remainders[i].second] += 1;
  return counts;
}

Dataset make_toy_task(int p, int n0, int m, const std::vector<double>& ratios,
                      LabelAssignment assignment, double y_plus, double y_minus,
                      std::uint64_t seed) {
  if (static_cast<int>(ratios.size()) != m) {
    throw ValidationError("ratios size must equal the class count");
  }
  if (n0 < p) {
    throw ValidationError("toy task needs n0 >= p for exact orthogonality");
  }
  Rng rng(seed);
  Matrix g(n0, p);
  for (int j = 0; j < p; ++j) {
    for (int i = 0; i < n0; ++i) g(i, j) = rng.normal();
  }
  // Orthonormal p-frame scaled by sqrt(n0): (1/n0) x_mu^T x_nu = delta.
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n0, p);

  Dataset d;
  d.n0 = n0;
  d.p = p;
  d.m = m;
  d.y_plus = y_plus;
  d.y_minus = y_minus;
  d.X = std::sqrt(double(n0)) * q;

  d.labels.resize(p);
  if (assignment == LabelAssignment::FixedRatio) {
    const std::vector<int> counts = fixed_ratio_counts(p, ratios);
    int idx = 0;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < counts[r]; ++c) d.labels[idx++] = r;
    }
    // Fisher-Yates with the task RNG keeps assignment deterministic per seed.
    for (int i = p - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_u64() % (i + 1));
      std::swap(d.labels[i], d.labels[j]);
    }
  } else {
    std::vector<double> cdf(m);
    std::partial_sum(ratios.begin(), ratios.end(), cdf.begin());
    for (int mu = 0; mu < p; ++mu) {
      const double u = rng.uniform();
      d.labels[mu] = static_cast<int>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      d.labels[mu] = std::min(d.labels[mu], m - 1);
    }
  }
  d.Y = one_hot_targets(d.labels, m, y_plus, y_minus);
  return d;
}

// ---------------------------------------------------------------------------
// IDX / CSV ingestion

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) {
    throw IoError(path + ": truncated at byte " + std::to_string(offset));
  }
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

struct RawSamples {
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;
  int dim = 0;
};

RawSamples read_idx(const std::string& image_path) {
  std::string label_path = image_path;
  const auto pos = label_path.find("images-idx3");
  if (pos == std::string::npos) {
    throw IoError(image_path + ": expected an images-idx3 file (labels derived by convention)");
  }
  label_path.replace(pos, std::strlen("images-idx3"), "labels-idx1");

  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + image_path);
  std::size_t off = 0;
  if (read_be32(img, image_path, off) != 0x00000803u) {
    throw IoError(image_path + ": bad magic at byte 0 (want 0x00000803)");
  }
  const std::uint32_t count = read_be32(img, image_path, off);
  const std::uint32_t rows = read_be32(img, image_path, off);
  const std::uint32_t cols = read_be32(img, image_path, off);
  const int dim = static_cast<int>(rows * cols);

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + label_path);
  std::size_t loff = 0;
  if (read_be32(lab, label_path, loff) != 0x00000801u) {
    throw IoError(label_path + ": bad magic at byte 0 (want 0x00000801)");
  }
  const std::uint32_t lcount = read_be32(lab, label_path, loff);
  if (lcount != count) {
    throw IoError(label_path + ": label count " + std::to_string(lcount) +
                  " != image count " + std::to_string(count));
  }

  RawSamples raw;
  raw.dim = dim;
  raw.inputs.reserve(count);
  raw.labels.reserve(count);
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), dim);
    if (!img) throw IoError(image_path + ": truncated at byte " + std::to_string(off));
    off += dim;
    char lb;
    lab.read(&lb, 1);
    if (!lab) throw IoError(label_path + ": truncated at byte " + std::to_string(loff));
    ++loff;
    std::vector<double> v(dim);
    for (int j = 0; j < dim; ++j) v[j] = buf[j] / 255.0;
    raw.inputs.push_back(std::move(v));
    raw.labels.push_back(static_cast<unsigned char>(lb));
  }
  return raw;
}

RawSamples read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  if (line.rfind("label", 0) != 0) {
    throw IoError(path + ": expected header starting with 'label' at byte 0");
  }
  RawSamples raw;
  raw.dim = static_cast<int>(std::count(line.begin(), line.end(), ',')) ;
  std::size_t offset = line.size() + 1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    v.reserve(raw.dim);
    bool first = true;
    int label = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (first) {
          label = std::stoi(cell);
          first = false;
        } else {
          v.push_back(std::stod(cell));
        }
      } catch (const std::exception&) {
        throw IoError(path + ": parse error at byte " + std::to_string(offset) +
                      " (line " + std::to_string(line_no) + ")");
      }
    }
    if (static_cast<int>(v.size()) != raw.dim) {
      throw IoError(path + ": wrong field count at line " + std::to_string(line_no));
    }
    raw.inputs.push_back(std::move(v));
    raw.labels.push_back(label);
    offset += line.size() + 1;
  }
  return raw;
}

}  // namespace

Dataset load_dataset(const std::string& path, FileFormat format,
                     const std::vector<int>& classes, int count, double y_plus,
                     double y_minus) {
  RawSamples raw = (format == FileFormat::Idx) ? read_idx(path) : read_csv(path);

  std::vector<int> sorted_classes = classes;
  std::sort(sorted_classes.begin(), sorted_classes.end());
  std::vector<int> remap(1 + (sorted_classes.empty() ? 0 : sorted_classes.back()), -1);
  for (std::size_t i = 0; i < sorted_classes.size(); ++i) remap[sorted_classes[i]] = int(i);

  Dataset d;
  d.n0 = raw.dim;
  d.m = static_cast<int>(sorted_classes.size());
  d.y_plus = y_plus;
  d.y_minus = y_minus;

  std::vector<int> picked;
  for (std::size_t i = 0; i < raw.inputs.size() && int(picked.size()) < count; ++i) {
    const int lab = raw.labels[i];
    if (lab >= 0 && lab < int(remap.size()) && remap[lab] >= 0) picked.push_back(int(i));
  }
  if (static_cast<int>(picked.size()) < count) {
    throw ValidationError("requested " + std::to_string(count) + " samples but only " +
                          std::to_string(picked.size()) + " match the class subset");
  }
  d.p = count;
  d.X = Matrix(d.n0, d.p);
  d.labels.resize(d.p);
  for (int j = 0; j < d.p; ++j) {
    const auto& v = raw.inputs[picked[j]];
    for (int i = 0; i < d.n0; ++i) d.X(i, j) = v[i];
    d.labels[j] = remap[raw.labels[picked[j]]];
  }
  d.Y = one_hot_targets(d.labels, d.m, y_plus, y_minus);
  return d;
}

Dataset preprocess(const Dataset& d, double norm_target) {
  Dataset out = d;
  for (int j = 0; j < out.p; ++j) {
    Vector col = out.X.col(j);
    col.array() -= col.mean();
    const double norm = col.norm();
    if (norm < 1e-12) {
      throw ValidationError("degenerate input at index " + std::to_string(j) +
                            ": zero after mean subtraction");
    }
    out.X.col(j) = col * (std::sqrt(norm_target) / norm);
  }
  return out;
}

Dataset random_project(const Dataset& d, int target_dim, double norm_target,
                       std::uint64_t seed) {
  if (target_dim > d.n0) {
    throw ValidationError("random_project: target_dim exceeds the input dimension");
  }
  Rng rng(seed);
  Matrix g(d.n0, target_dim);
  for (int j = 0; j < target_dim; ++j) {
    for (int i = 0; i < d.n0; ++i) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d.n0, target_dim);

  Dataset out = d;
  out.n0 = target_dim;
  out.X = q.transpose() * d.X;
  for (int j = 0; j < out.p; ++j) {
    const double norm = out.X.col(j).norm();
    if (norm < 1e-12) {
      throw ValidationError("degenerate input at index " + std::to_string(j) +
                            ": zero after projection");
    }
    out.X.col(j) *= std::sqrt(norm_target) / norm;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {
constexpr char kMagic[4] = {'N', 'L', 'Z', 'D'};
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::int32_t dims[3] = {d.n0, d.p, d.m};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const double offs[2] = {d.y_plus, d.y_minus};
  out.write(reinterpret_cast<const char*>(offs), sizeof(offs));
  std::vector<std::int32_t> labels(d.labels.begin(), d.labels.end());
  out.write(reinterpret_cast<const char*>(labels.data()), 4 * labels.size());
  out.write(reinterpret_cast<const char*>(d.X.data()), sizeof(double) * d.X.size());
  out.write(reinterpret_cast<const char*>(d.Y.data()), sizeof(double) * d.Y.size());
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(path + ": not a dataset container (bad magic at byte 0)");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw IoError(path + ": unsupported container version");
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  double offs[2];
  in.read(reinterpret_cast<char*>(offs), sizeof(offs));
  Dataset d;
  d.n0 = dims[0];
  d.p = dims[1];
  d.m = dims[2];
  d.y_plus = offs[0];
  d.y_minus = offs[1];
  std::vector<std::int32_t> labels(d.p);
  in.read(reinterpret_cast<char*>(labels.data()), 4 * labels.size());
  d.labels.assign(labels.begin(), labels.end());
  d.X = Matrix(d.n0, d.p);
  in.read(reinterpret_cast<char*>(d.X.data()), sizeof(double) * d.X.size());
  d.Y = Matrix(d.p, d.m);
  in.read(reinterpret_cast<char*>(d.Y.data()), sizeof(double) * d.Y.size());
  if (!in) throw IoError(path + ": truncated container");
  return d;
}

}  // namespace nonlazy
