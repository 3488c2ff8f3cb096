#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonlazy/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace nonlazy;
namespace fs = std::filesystem;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

// Tiny synthetic IDX pair: `count` 2x2 images, labels cycling 0..3.
void write_idx_fixture(const fs::path& dir, int count) {
  fs::create_directories(dir);
  std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
  write_be32(img, 0x00000803u);
  write_be32(img, count);
  write_be32(img, 2);
  write_be32(img, 2);
  for (int i = 0; i < count; ++i) {
    unsigned char px[4] = {static_cast<unsigned char>(10 + i),
                           static_cast<unsigned char>(20 + i),
                           static_cast<unsigned char>(30 + i),
                           static_cast<unsigned char>(40 + i)};
    img.write(reinterpret_cast<char*>(px), 4);
  }
  std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
  write_be32(lab, 0x00000801u);
  write_be32(lab, count);
  for (int i = 0; i < count; ++i) {
    const char l = static_cast<char>(i % 4);
    lab.write(&l, 1);
  }
}

}  // namespace

TEST_CASE("toy task is exactly orthogonal with fixed-ratio labels") {
  const Dataset d = make_toy_task(4, 4, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::FixedRatio, 1.0, 0.0, 7);
  const Matrix k0 = d.input_kernel();
  CHECK((k0 - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  std::vector<int> counts(3, 0);
  for (int lab : d.labels) counts[lab] += 1;
  CHECK(counts == std::vector<int>{2, 1, 1});
  for (int mu = 0; mu < 4; ++mu) {
    for (int r = 0; r < 3; ++r) {
      CHECK(d.Y(mu, r) == (d.labels[mu] == r ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("toy task orthogonality holds across seeds and sizes") {
  for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
    const Dataset d = make_toy_task(50, 64, 3, {0.5, 0.25, 0.25},
                                    LabelAssignment::FixedRatio, 1.0, 0.5, seed);
    const Matrix k0 = d.input_kernel();
    CHECK((k0 - Matrix::Identity(50, 50)).cwiseAbs().maxCoeff() < 1e-10);
  }
  // Desk-scale version of the redundant-coding setup.
  const Dataset big = make_toy_task(500, 520, 3, {0.5, 0.25, 0.25},
                                    LabelAssignment::FixedRatio, 1.0, 0.5, 3);
  std::vector<int> counts(3, 0);
  for (int lab : big.labels) counts[lab] += 1;
  CHECK(counts == std::vector<int>{250, 125, 125});
}

TEST_CASE("fixed-ratio counts use largest remainders") {
  CHECK(fixed_ratio_counts(10, {0.34, 0.33, 0.33}) == std::vector<int>{4, 3, 3});
  // 7 * [.5 .25 .25] = [3.5 1.75 1.75]: the two larger remainders win.
  CHECK(fixed_ratio_counts(7, {0.5, 0.25, 0.25}) == std::vector<int>{3, 2, 2});
  // Deviation from P * ratio is always below one.
  const auto counts = fixed_ratio_counts(101, {0.5, 0.25, 0.25});
  CHECK(std::abs(counts[0] - 101 * 0.5) < 1.0);
  CHECK(std::abs(counts[1] - 101 * 0.25) < 1.0);
  CHECK(std::abs(counts[2] - 101 * 0.25) < 1.0);
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS_AS(make_toy_task(4, 4, 2, {0.5, 0.6},
                                LabelAssignment::FixedRatio, 1.0, 0.0, 1),
                  ValidationError);
  CHECK_THROWS_AS(make_toy_task(10, 8, 2, {0.5, 0.5},
                                LabelAssignment::FixedRatio, 1.0, 0.0, 1),
                  ValidationError);
}

TEST_CASE("same seed reproduces the dataset bit-exactly") {
  const Dataset a = make_toy_task(20, 24, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::Iid, 1.0, -0.5, 42);
  const Dataset b = make_toy_task(20, 24, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::Iid, 1.0, -0.5, 42);
  CHECK(a.X == b.X);
  CHECK(a.labels == b.labels);
  CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("preprocess centers and normalizes each input") {
  Dataset d;
  d.n0 = 4;
  d.p = 2;
  d.m = 1;
  d.X = Matrix(4, 2);
  d.X.col(0) << 2.0, 1.0, -1.0, 4.0;
  d.X.col(1) << 0.5, -0.5, 0.5, -0.5;  // already centered, unit-ish norm
  d.labels = {0, 0};
  d.Y = one_hot_targets(d.labels, 1, 1.0, 0.0);

  const Dataset out = preprocess(d, 4.0);
  for (int j = 0; j < 2; ++j) {
    CHECK(out.X.col(j).mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.X.col(j).squaredNorm() == doctest::Approx(4.0).epsilon(1e-8));
  }
  // A centered unit-norm input is scaled by sqrt(norm target).
  CHECK(out.X.col(1) == 2.0 * d.X.col(1));

  Dataset degenerate = d;
  degenerate.X.col(0).setConstant(3.0);
  CHECK_THROWS_WITH_AS(auto r = preprocess(degenerate, 4.0),
                       doctest::Contains("index 0"), ValidationError);
}

TEST_CASE("random_project") {
  const Dataset d = preprocess(
      make_toy_task(12, 16, 2, {0.5, 0.5}, LabelAssignment::FixedRatio, 1.0, 0.0, 5),
      16.0);

  SUBCASE("square orthonormal projection preserves the kernel") {
    const Dataset proj = random_project(d, 16, 16.0, 9);
    CHECK((proj.input_kernel() - d.input_kernel()).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("projected kernel has rank at most target_dim") {
    const Dataset proj = random_project(d, 5, 5.0, 9);
    CHECK(proj.n0 == 5);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(proj.input_kernel());
    for (int i = 0; i < 12 - 5; ++i) CHECK(std::abs(eig.eigenvalues()[i]) < 1e-8);
  }

  SUBCASE("target_dim above n0 is a shape error") {
    CHECK_THROWS_AS(auto r = random_project(d, 20, 20.0, 9), ValidationError);
  }
}

TEST_CASE("idx loader") {
  const fs::path dir = fs::temp_directory_path() / "nonlazy_idx_fixture";
  write_idx_fixture(dir, 12);
  const std::string img = (dir / "train-images-idx3-ubyte").string();

  SUBCASE("loads and remaps the requested classes") {
    const Dataset d = load_dataset(img, FileFormat::Idx, {0, 2}, 5, 1.0, -0.5);
    CHECK(d.n0 == 4);
    CHECK(d.p == 5);
    CHECK(d.m == 2);
    for (int lab : d.labels) CHECK((lab == 0 || lab == 1));
    CHECK(d.X.maxCoeff() <= 1.0);  // pixels scaged to [0, 1]
    CHECK(d.Y.rows() == 5);
  }

  SUBCASE("insufficient samples is a count error") {
    CHECK_THROWS_AS(load_dataset(img, FileFormat::Idx, {0, 2}, 100, 1.0, 0.0),
                    ValidationError);
    CHECK_THROWS_AS(load_dataset(img, FileFormat::Idx, {7}, 1, 1.0, 0.0),
                    ValidationError);
  }

  SUBCASE("bad magic reports the byte offset") {
    const fs::path bad = dir / "bad-images-idx3-ubyte";
    std::ofstream out(bad, std::ios::binary);
    write_be32(out, 0xdeadbeef);
    out.close();
    fs::copy_file(dir / "train-labels-idx1-ubyte", dir / "bad-labels-idx1-ubyte",
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_WITH_AS(load_dataset(bad.string(), FileFormat::Idx, {0}, 1, 1.0, 0.0),
                         doctest::Contains("byte 0"), IoError);
  }
}

TEST_CASE("csv loader") {
  const fs::path path = fs::temp_directory_path() / "nonlazy_fixture.csv";
  {
    std::ofstream out(path);
    out << "label,pix0,pix1,pix2\n";
    out << "0,0.1,0.2,0.3\n";
    out << "1,0.5,0.6,0.7\n";
    out << "0,0.9,1.0,1.1\n";
  }
  const Dataset d = load_dataset(path.string(), FileFormat::Csv, {0, 1}, 3, 1.0, 0.0);
  CHECK(d.n0 == 3);
  CHECK(d.p == 3);
  CHECK(d.X(1, 1) == doctest::Approx(0.6));
  CHECK(d.labels == std::vector<int>{0, 1, 0});

  std::ofstream bad(path, std::ios::app);
  bad << "2,not_a_number,0,0\n";
  bad.close();
  CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::Csv, {0, 1, 2}, 4, 1.0, 0.0),
                  IoError);
}

TEST_CASE("dataset container round-trips exactly") {
  const Dataset d = make_toy_task(10, 12, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::FixedRatio, 1.0, 0.5, 13);
  const fs::path path = fs::temp_directory_path() / "nonlazy_dataset.bin";
  save_dataset(d, path.string());
  const Dataset back = load_dataset_container(path.string());
  CHECK(back.labels == d.labels);
  CHECK(back.X == d.X);  // bit-exact
  CHECK(back.Y == d.Y);
  CHECK(back.y_plus == d.y_plus);
  CHECK(back.y_minus == d.y_minus);
  CHECK(back.content_hash() == d.content_hash());
}
