#include "nonlazy/sampler.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace nonlazy {

namespace fs = std::filesystem;
using nlohmann::json;

double NetworkArch::readout_sigma_a2(int p) const {
  if (sigma_a2 > 0.0) return sigma_a2;
  if (nonlinearity == Nonlinearity::ErfSigmoid) return 1.0 / p;
  return std::pow(double(p), -1.0 / depth);
}

WeightState& WeightState::operator+=(const WeightState& other) {
  for (std::size_t l = 0; l < w.size(); ++l) w[l] += other.w[l];
  a += other.a;
  return *this;
}

WeightState& WeightState::scale(double s) {
  for (auto& m : w) m *= s;
  a *= s;
  return *this;
}

int WeightState::parameter_count() const {
  int count = static_cast<int>(a.size());
  for (const auto& m : w) count += static_cast<int>(m.size());
  return count;
}

WeightState init_from_prior(const NetworkArch& arch, const Dataset& d,
                            std::uint64_t seed) {
  Rng rng(seed);
  WeightState st;
  st.w.resize(arch.depth);
  const double sa = std::sqrt(arch.readout_sigma_a2(d.p));
  for (int l = 0; l < arch.depth; ++l) {
    const int cols = l == 0 ? arch.n0 : arch.width;
    st.w[l] = Matrix(arch.width, cols);
    const double s = std::sqrt(arch.sigma2(l));
    for (int j = 0; j < cols; ++j) {
      for (int i = 0; i < arch.width; ++i) st.w[l](i, j) = s * rng.normal();
    }
  }
  st.a = Matrix(arch.width, arch.m);
  for (int r = 0; r < arch.m; ++r) {
    for (int i = 0; i < arch.width; ++i) st.a(i, r) = sa * rng.normal();
  }
  return st;
}

Activations activations(const WeightState& state, const NetworkArch& arch,
                        const Matrix& x_eval) {
  Activations act;
  act.pre.resize(arch.depth);
  act.post.resize(arch.depth);
  const double s0 = 1.0 / std::sqrt(double(arch.n0));
  const double sh = 1.0 / std::sqrt(double(arch.width));
  for (int l = 0; l < arch.depth; ++l) {
    if (l == 0) {
      act.pre[0].noalias() = s0 * (state.w[0] * x_eval);
    } else {
      act.pre[l].noalias() = sh * (state.w[l] * act.post[l - 1]);
    }
    act.post[l] = act.pre[l].unaryExpr([&arch](double z) {
      return apply_nonlinearity(arch.nonlinearity, z);
    });
  }
  return act;
}

Matrix network_output(const WeightState& state, const NetworkArch& arch,
                      const Matrix& x_eval) {
  const Activations act = activations(state, arch, x_eval);
  const double scale = arch.lazy ? std::sqrt(double(arch.width)) : double(arch.width);
  return (act.post.back().transpose() * state.a) / scale;
}

Potential potential_and_gradient(const WeightState& state, const Dataset& d,
                                 const NetworkArch& arch, double temperature,
                                 bool prior_only) {
  Potential pot;
  pot.grad.w.resize(arch.depth);

  const double sa2 = arch.readout_sigma_a2(d.p);
  for (int l = 0; l < arch.depth; ++l) {
    pot.reg += state.w[l].squaredNorm() / (2.0 * arch.sigma2(l));
    pot.grad.w[l] = state.w[l] / arch.sigma2(l);
  }
  pot.reg += state.a.squaredNorm() / (2.0 * sa2);
  pot.grad.a = state.a / sa2;

  if (prior_only) {
    pot.value = pot.reg;
    return pot;
  }

  const Activations act = activations(state, arch, d.X);
  const double scale = arch.lazy ? std::sqrt(double(arch.width)) : double(arch.width);
  const Matrix f = (act.post.back().transpose() * state.a) / scale;
  const Matrix df = f - d.Y;  // P x m
  pot.loss = 0.5 * df.squaredNorm();

  const double beta = arch.width / temperature;  // rescaled T -> T/N
  pot.value = beta * pot.loss + pot.reg;

  // Backward pass, accumulated into the regularizer gradient.
  pot.grad.a.noalias() += (beta / scale) * (act.post.back() * df);
  Matrix dpost = (state.a * df.transpose()) / scale;  // N x P
  const double s0 = 1.0 / std::sqrt(double(arch.n0));
  const double sh = 1.0 / std::sqrt(double(arch.width));
  for (int l = arch.depth - 1; l >= 0; --l) {
    const Matrix dpre = dpost.cwiseProduct(act.pre[l].unaryExpr([&arch](double z) {
      return apply_nonlinearity_deriv(arch.nonlinearity, z);
    }));
    if (l == 0) {
      pot.grad.w[0].noalias() += (beta * s0) * (dpre * d.X.transpose());
    } else {
      pot.grad.w[l].noalias() += (beta * sh) * (dpre * act.post[l - 1].transpose());
      dpost.noalias() = sh * (state.w[l].transpose() * dpre);
    }
  }
  return pot;
}

double default_langevin_step(double temperature) {
  // Stability is set by the loss curvature beta = N/T; scale the default
  // step with T so that beta h stays of order 10^-1 at desk-scale widths.
  return 0.1 * temperature;
}

namespace {

double max_abs_grad(const WeightState& g) {
  double m = g.a.cwiseAbs().maxCoeff();
  for (const auto& w : g.w) m = std::max(m, w.cwiseAbs().maxCoeff());
  return m;
}

void record(SampleChain& chain, std::uint64_t step, const WeightState& st,
            const Potential& pot) {
  chain.states.push_back(st);
  chain.steps.push_back(step);
  chain.loss_trace.push_back(pot.loss);
  chain.reg_trace.push_back(pot.reg);
}

[[noreturn]] void diverged(std::uint64_t step, double loss) {
  std::ostringstream msg;
  msg << "dynamics diverged at step " << step << " (loss " << loss
      << " > 1e6); reduce step size";
  throw std::runtime_error(msg.str());
}

}  // namespace

SampleChain langevin_run(WeightState state, const Dataset& d,
                         const NetworkArch& arch, double temperature,
                         double step, std::uint64_t steps, std::uint64_t thin,
                         std::uint64_t seed) {
  if (thin == 0) thin = 1;
  Rng rng(seed);
  SampleChain chain;
  chain.step_size = step;
  chain.temperature = temperature;
  chain.seed = seed;

  Potential pot = potential_and_gradient(state, d, arch, temperature);
  record(chain, 0, state, pot);
  if (step * max_abs_grad(pot.grad) > 1.0) {
    std::cerr << "langevin_run: step * max|grad| = "
              << step * max_abs_grad(pot.grad) << " > 1, expect instability\n";
  }
  const double noise = std::sqrt(2.0 * step);
  for (std::uint64_t i = 1; i <= steps; ++i) {
    for (std::size_t l = 0; l < state.w.size(); ++l) {
      double* th = state.w[l].data();
      const double* g = pot.grad.w[l].data();
      const auto n = state.w[l].size();
      for (Eigen::Index k = 0; k < n; ++k) {
        th[k] += -step * g[k] + noise * rng.normal();
      }
    }
    {
      double* th = state.a.data();
      const double* g = pot.grad.a.data();
      for (Eigen::Index k = 0; k < state.a.size(); ++k) {
        th[k] += -step * g[k] + noise * rng.normal();
      }
    }
    pot = potential_and_gradient(state, d, arch, temperature);
    if (pot.loss > 1e6) diverged(i, pot.loss);
    if (i % thin == 0) record(chain, i, state, pot);
  }
  return chain;
}

SampleChain gradient_descent_run(WeightState state, const Dataset& d,
                                 const NetworkArch& arch, double temperature,
                                 double step, std::uint64_t steps,
                                 std::uint64_t thin) {
  if (thin == 0) thin = 1;
  SampleChain chain;
  chain.step_size = step;
  chain.temperature = temperature;

  Potential pot = potential_and_gradient(state, d, arch, temperature);
  record(chain, 0, state, pot);
  double h = step;
  for (std::uint64_t i = 1; i <= steps; ++i) {
    WeightState trial = state;
    Potential pot_trial;
    for (;;) {
      trial = state;
      for (std::size_t l = 0; l < trial.w.size(); ++l) {
        trial.w[l].noalias() -= h * pot.grad.w[l];
      }
      trial.a.noalias() -= h * pot.grad.a;
      pot_trial = potential_and_gradient(trial, d, arch, temperature);
      if (pot_trial.value <= pot.value || h < 1e-18) break;
      h *= 0.5;  // backtracking keeps the potential trace non-increasing
    }
    state = std::move(trial);
    pot = pot_trial;
    if (pot.loss > 1e6) diverged(i, pot.loss);
    if (i % thin == 0) record(chain, i, state, pot);
  }
  return chain;
}

std::size_t burn_in_index(const std::vector<double>& loss_trace,
                          std::size_t window, double tol) {
  if (loss_trace.size() < window + 1) return loss_trace.size() / 2;
  for (std::size_t i = window; i < loss_trace.size(); ++i) {
    double lo = loss_trace[i], hi = loss_trace[i];
    for (std::size_t j = i - window; j <= i; ++j) {
      lo = std::min(lo, loss_trace[j]);
      hi = std::max(hi, loss_trace[j]);
    }
    if (hi - lo < tol * std::max(1.0, std::abs(loss_trace[i]))) return i - window;
  }
  return loss_trace.size() / 2;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr char kCheckpointMagic[4] = {'N', 'L', 'C', 'K'};

void write_matrix(std::ofstream& out, const Matrix& m) {
  const std::int64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  out.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
}

Matrix read_matrix(std::ifstream& in) {
  std::int64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size());
  return m;
}
}  // namespace

void save_chain(const SampleChain& chain, const NetworkArch& arch,
                std::uint64_t dataset_hash, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["arch"] = {{"depth", arch.depth},
                      {"width", arch.width},
                      {"n0", arch.n0},
                      {"m", arch.m},
                      {"nonlinearity", to_string(arch.nonlinearity)},
                      {"sigma_a2", arch.sigma_a2},
                      {"sigma_l2", arch.sigma_l2},
                      {"lazy", arch.lazy}};
  manifest["temperature"] = chain.temperature;
  manifest["step_size"] = chain.step_size;
  manifest["seed"] = chain.seed;
  manifest["dataset_hash"] = dataset_hash;
  json files = json::array();
  for (std::size_t i = 0; i < chain.states.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "checkpoint_%06zu.bin", i);
    files.push_back({{"file", name}, {"step", chain.steps[i]}});
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint in " + dir);
    out.write(kCheckpointMagic, 4);
    const std::uint64_t step = chain.steps[i];
    out.write(reinterpret_cast<const char*>(&step), 8);
    out.write(reinterpret_cast<const char*>(&chain.loss_trace[i]), 8);
    out.write(reinterpret_cast<const char*>(&chain.reg_trace[i]), 8);
    const std::int64_t layers = static_cast<std::int64_t>(chain.states[i].w.size());
    out.write(reinterpret_cast<const char*>(&layers), 8);
    for (const Matrix& w : chain.states[i].w) write_matrix(out, w);
    write_matrix(out, chain.states[i].a);
  }
  manifest["checkpoints"] = files;
  std::ofstream mout(fs::path(dir) / "manifest.json");
  if (!mout) throw IoError("cannot write manifest in " + dir);
  mout << manifest.dump(2) << "\n";
}

SampleChain load_chain(const std::string& dir, NetworkArch* arch_out,
                       std::uint64_t* dataset_hash_out) {
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) throw IoError("cannot open manifest in " + dir);
  json manifest = json::parse(min);

  if (arch_out) {
    const json& a = manifest["arch"];
    arch_out->depth = a["depth"];
    arch_out->width = a["width"];
    arch_out->n0 = a["n0"];
    arch_out->m = a["m"];
    arch_out->nonlinearity = nonlinearity_from_string(a["nonlinearity"]);
    arch_out->sigma_a2 = a["sigma_a2"];
    arch_out->sigma_l2 = a["sigma_l2"].get<std::vector<double>>();
    arch_out->lazy = a["lazy"];
  }
  if (dataset_hash_out) *dataset_hash_out = manifest["dataset_hash"];

  SampleChain chain;
  chain.temperature = manifest["temperature"];
  chain.step_size = manifest["step_size"];
  chain.seed = manifest["seed"];
  for (const json& entry : manifest["checkpoints"]) {
    const std::string file = entry["file"];
    std::ifstream in(fs::path(dir) / file, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + file);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
      throw IoError(file + ": bad checkpoint magic");
    }
    std::uint64_t step = 0;
    double loss = 0.0, reg = 0.0;
    in.read(reinterpret_cast<char*>(&step), 8);
    in.read(reinterpret_cast<char*>(&loss), 8);
    in.read(reinterpret_cast<char*>(&reg), 8);
    std::int64_t layers = 0;
    in.read(reinterpret_cast<char*>(&layers), 8);
    WeightState st;
    st.w.resize(layers);
    for (std::int64_t l = 0; l < layers; ++l) st.w[l] = read_matrix(in);
    st.a = read_matrix(in);
    if (!in) throw IoError(file + ": truncated checkpoint");
    chain.states.push_back(std::move(st));
    chain.steps.push_back(step);
    chain.loss_trace.push_back(loss);
    chain.reg_trace.push_back(reg);
  }
  return chain;
}

}  // namespace nonlazy
