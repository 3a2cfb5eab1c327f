#include "flowfilter/paths.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace flowfilter {

TimeGrid::TimeGrid(double t0, double T, double fine_dt, double delta)
    : t0_(t0), T_(T), fine_dt_(fine_dt), delta_(delta) {
  if (!std::isfinite(t0) || !std::isfinite(T) || T < t0) {
    throw Error(ErrorCode::invalid_argument, "time grid needs finite t0 <= T");
  }
  if (!(fine_dt > 0.0) || !(delta > 0.0) || !std::isfinite(fine_dt) || !std::isfinite(delta)) {
    throw Error(ErrorCode::non_positive_delta, "fine_dt and delta must be positive");
  }
  const double r = std::round(delta / fine_dt);
  if (r < 1.0 || std::abs(r * fine_dt - delta) > 1e-12 * std::max(1.0, delta)) {
    throw Error(ErrorCode::invalid_argument,
                "delta must be an integer multiple of fine_dt");
  }
  const double span = T - t0;
  const double m = std::round(span / delta);
  if (std::abs(m * delta - span) > 1e-12 * std::max(1.0, span)) {
    throw Error(ErrorCode::invalid_argument, "T - t0 must be an integer multiple of delta");
  }
  per_mesh_ = static_cast<std::size_t>(r);
  mesh_steps_ = static_cast<std::size_t>(m);
}

namespace {

std::vector<double> slopes_from(const std::vector<double>& knots, double delta) {
  std::vector<double> s(knots.empty() ? 0 : knots.size() - 1);
  for (std::size_t n = 0; n < s.size(); ++n) s[n] = (knots[n + 1] - knots[n]) / delta;
  return s;
}

}  // namespace

ObservationPath::ObservationPath(const TimeGrid& grid, std::vector<double> z,
                                 std::optional<std::uint64_t> seed)
    : grid_(grid), z_(std::move(z)), seed_(seed) {
  if (z_.size() != grid_.fine_steps() + 1) {
    throw Error(ErrorCode::invalid_argument, "observation path length does not match grid");
  }
  knots_.resize(grid_.mesh_steps() + 1);
  for (std::size_t n = 0; n < knots_.size(); ++n) knots_[n] = z_[n * grid_.fine_per_mesh()];
  slopes_ = slopes_from(knots_, grid_.delta());
}

ObservationPath ObservationPath::from_knots(const TimeGrid& grid, std::vector<double> knots) {
  if (knots.size() != grid.mesh_steps() + 1) {
    throw Error(ErrorCode::invalid_argument, "knot count does not match grid");
  }
  const std::size_t r = grid.fine_per_mesh();
  std::vector<double> z(grid.fine_steps() + 1);
  const auto slopes = slopes_from(knots, grid.delta());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const std::size_t n = k / r;
    const std::size_t j = k % r;
    z[k] = j == 0 ? knots[n] : knots[n] + slopes[n] * (static_cast<double>(j) * grid.fine_dt());
  }
  ObservationPath p(grid, std::move(z));
  p.knots_ = std::move(knots);
  p.slopes_ = slopes;
  return p;
}

double ObservationPath::increment(std::size_t k) const {
  if (k + 1 >= z_.size()) throw Error(ErrorCode::out_of_range, "fine step index out of range");
  return z_[k + 1] - z_[k];
}

double ObservationPath::knot_increment(std::size_t n) const {
  if (n + 1 >= knots_.size()) throw Error(ErrorCode::out_of_range, "mesh index out of range");
  return knots_[n + 1] - knots_[n];
}

TruthTrajectory simulate_truth(const SystemModel& model, const TimeGrid& grid,
                               std::span<const double> x0, const IncrementSource& noise,
                               std::optional<std::uint64_t> seed) {
  const std::size_t d = model.dim();
  if (x0.size() != d) throw Error(ErrorCode::invalid_argument, "initial state dimension mismatch");
  const std::size_t K = grid.fine_steps();
  const double dt = grid.fine_dt();
  TruthTrajectory tr;
  tr.seed = seed;
  tr.states.resize(static_cast<Eigen::Index>(K + 1), static_cast<Eigen::Index>(d));
  std::copy(x0.begin(), x0.end(), row_span(tr.states, 0).begin());
  std::vector<double> f(d), dv(d);
  for (std::size_t k = 0; k < K; ++k) {
    const auto x = row_span(std::as_const(tr.states), static_cast<Eigen::Index>(k));
    auto next = row_span(tr.states, static_cast<Eigen::Index>(k + 1));
    model.drift(x, f);
    noise.draw(k, 0, dt, dv);
    for (std::size_t j = 0; j < d; ++j) {
      next[j] = x[j] + f[j] * dt + dv[j];
      if (!std::isfinite(next[j])) {
        throw Error(ErrorCode::non_finite_state,
                    "truth trajectory became non-finite at step " + std::to_string(k + 1));
      }
    }
  }
  return tr;
}

ObservationPath simulate_observations(const SystemModel& model, const TruthTrajectory& truth,
                                      const TimeGrid& grid, const IncrementSource& noise,
                                      std::optional<std::uint64_t> seed) {
  const std::size_t K = grid.fine_steps();
  if (static_cast<std::size_t>(truth.states.rows()) != K + 1 ||
      static_cast<std::size_t>(truth.states.cols()) != model.dim()) {
    throw Error(ErrorCode::invalid_argument, "truth trajectory is not aligned with the grid");
  }
  const double dt = grid.fine_dt();
  std::vector<double> z(K + 1, 0.0);
  double dw = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    noise.draw(k, 0, dt, {&dw, 1});
    z[k + 1] = z[k] + model.obs(row_span(truth.states, static_cast<Eigen::Index>(k))) * dt + dw;
  }
  return ObservationPath(grid, std::move(z), seed);
}

double smoothed_value(const ObservationPath& path, double t) {
  const TimeGrid& g = path.grid();
  if (!(t >= g.t0()) || !(t <= g.T())) {
    throw Error(ErrorCode::out_of_range, "time outside [t0, T]");
  }
  const std::size_t N = g.mesh_steps();
  if (N == 0 || t == g.T()) return path.knots().back();
  auto n = static_cast<std::size_t>(std::floor((t - g.t0()) / g.delta()));
  n = std::min(n, N - 1);
  if (n + 1 <= N && t >= g.mesh_time(n + 1)) {
    if (n + 1 == N) return path.knots().back();
    ++n;
  }
  if (n > 0 && t < g.mesh_time(n)) --n;
  return path.knots()[n] + path.slopes()[n] * (t - g.mesh_time(n));
}

double discrete_observation(const ObservationPath& path, std::size_t n) {
  if (n >= path.slopes().size()) throw Error(ErrorCode::out_of_range, "mesh index out of range");
  return path.slopes()[n];
}

double smoothed_total_variation(const ObservationPath& path) {
  double tv = 0.0;
  for (std::size_t n = 0; n + 1 < path.knots().size(); ++n) {
    tv += std::abs(path.knots()[n + 1] - path.knots()[n]);
  }
  return tv;
}

std::uint64_t slope_checksum(const ObservationPath& path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double s : path.slopes()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &s, sizeof s);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

CsvTable path_table(const TimeGrid& grid, const TruthTrajectory& truth,
                    const ObservationPath& path) {
  const std::size_t d = static_cast<std::size_t>(truth.states.cols());
  CsvTable t;
  t.header.push_back("t");
  for (std::size_t j = 0; j < d; ++j) t.header.push_back("x_" + std::to_string(j + 1));
  t.header.push_back("z");
  const std::size_t K = grid.fine_steps();
  if (static_cast<std::size_t>(truth.states.rows()) != K + 1 || path.z().size() != K + 1) {
    throw Error(ErrorCode::invalid_argument, "path_table: lengths do not match grid");
  }
  for (std::size_t k = 0; k <= K; ++k) {
    std::vector<std::string> row{format_double(grid.fine_time(k))};
    for (std::size_t j = 0; j < d; ++j) {
      row.push_back(format_double(truth.states(static_cast<Eigen::Index>(k),
                                               static_cast<Eigen::Index>(j))));
    }
    row.push_back(format_double(path.z()[k]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable knots_table(const ObservationPath& path) {
  CsvTable t;
  t.header = {"n", "t_n", "z_knot", "slope"};
  const auto& g = path.grid();
  for (std::size_t n = 0; n < path.knots().size(); ++n) {
    t.rows.push_back({std::to_string(n), format_double(g.mesh_time(n)),
                      format_double(path.knots()[n]),
                      n < path.slopes().size() ? format_double(path.slopes()[n]) : ""});
  }
  return t;
}

PathRecord parse_path_table(const CsvTable& table) {
  if (table.header.size() < 3 || table.header.front() != "t" || table.header.back() != "z") {
    throw Error(ErrorCode::io_error, "path table needs columns t, x_1.., z");
  }
  const std::size_t d = table.header.size() - 2;
  PathRecord r;
  r.x.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    r.t.push_back(parse_double(row[0]));
    for (std::size_t j = 0; j < d; ++j) {
      r.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(row[j + 1]);
    }
    r.z.push_back(parse_double(row.back()));
  }
  return r;
}

ObservationPath parse_knots_table(const CsvTable& table, const TimeGrid& grid) {
  const std::size_t c = table.column("z_knot");
  std::vector<double> knots;
  for (const auto& row : table.rows) knots.push_back(parse_double(row[c]));
  return ObservationPath::from_knots(grid, std::move(knots));
}

}  // namespace flowfilter
