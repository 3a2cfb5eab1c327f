#include "flowfilter/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace flowfilter {

using nlohmann::json;

ConfigError::ConfigError(std::string field, const std::string& message)
    : Error(ErrorCode::config_error, field + ": " + message), field_(std::move(field)) {}

namespace {

// A JSON node together with the path used in error messages.
struct Node {
  const json& j;
  std::string path;

  Node at(const std::string& key) const {
    return {j.at(key), path.empty() ? key : path + "." + key};
  }
  Node at(std::size_t i) const { return {j.at(i), path + "[" + std::to_string(i) + "]"}; }
  bool has(const std::string& key) const { return j.is_object() && j.contains(key); }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path, msg); }

  double number() const {
    if (!j.is_number()) fail("expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be positive");
    return v;
  }
  std::uint64_t seed() const {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
      fail("expected a nonnegative integer seed");
    }
    return j.get<std::uint64_t>();
  }
  std::size_t count(std::size_t min_value) const {
    if (!j.is_number_integer() || j.get<std::int64_t>() < static_cast<std::int64_t>(min_value)) {
      fail("expected an integer >= " + std::to_string(min_value));
    }
    return j.get<std::size_t>();
  }
  bool boolean() const {
    if (!j.is_boolean()) fail("expected true or false");
    return j.get<bool>();
  }
  std::string string() const {
    if (!j.is_string()) fail("expected a string");
    return j.get<std::string>();
  }
  const json& array() const {
    if (!j.is_array()) fail("expected an array");
    return j;
  }
  const json& object() const {
    if (!j.is_object()) fail("expected an object");
    return j;
  }
  Vector vector() const {
    const json& a = array();
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = at(i).number();
    return v;
  }
  std::vector<double> numbers() const {
    const Vector v = vector();
    return {v.data(), v.data() + v.size()};
  }
  Matrix matrix() const {
    const json& a = array();
    if (a.empty()) fail("expected a non-empty matrix");
    const std::size_t rows = a.size();
    std::size_t cols = 0;
    Matrix m;
    for (std::size_t i = 0; i < rows; ++i) {
      const Vector r = at(i).vector();
      if (i == 0) {
        cols = static_cast<std::size_t>(r.size());
        m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      } else if (static_cast<std::size_t>(r.size()) != cols) {
        at(i).fail("rows have different lengths");
      }
      m.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return m;
  }
};

template <class F>
auto parse_enum(const Node& n, F&& parse) {
  const std::string s = n.string();
  try {
    return parse(s);
  } catch (const Error& e) {
    n.fail(e.what());
  }
}

void check_keys(const Node& n, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : n.object().items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(n.path.empty() ? k : n.path + "." + k, "unknown field");
  }
}

ModelConfig parse_model(const Node& n) {
  check_keys(n, {"type", "A", "H", "decay", "curvature", "dim"});
  ModelConfig m;
  const std::string type = n.at("type").string();
  if (type == "linear_gaussian") {
    m.type = ModelType::linear_gaussian;
    m.A = n.at("A").matrix();
    if (m.A.rows() != m.A.cols()) n.at("A").fail("must be square");
    m.dim = static_cast<std::size_t>(m.A.rows());
    m.H = n.at("H").vector().transpose();
    if (static_cast<std::size_t>(m.H.size()) != m.dim) n.at("H").fail("length must match A");
  } else if (type == "tanh") {
    m.type = ModelType::tanh;
    m.dim = 1;
    if (n.has("decay")) m.decay = n.at("decay").positive();
  } else if (type == "log_concave_ou") {
    m.type = ModelType::log_concave_ou;
    if (n.has("curvature")) m.curvature = n.at("curvature").positive();
    m.H = n.at("H").vector().transpose();
    m.dim = static_cast<std::size_t>(m.H.size());
    if (m.dim == 0) n.at("H").fail("must not be empty");
    if (n.has("dim") && n.at("dim").count(1) != m.dim) n.at("dim").fail("must match the length of H");
  } else {
    n.at("type").fail("unknown model type '" + type + "' (linear_gaussian, tanh, log_concave_ou)");
  }
  return m;
}

FilterConfig parse_filter(const Node& n) {
  check_keys(n, {"kind", "gain", "mass_matrix", "basis", "density", "kde_points", "kde_bandwidth",
                 "kernel_epsilon", "density_floor", "raw_increments", "freeze_gain_per_mesh",
                 "label", "seed"});
  FilterConfig f;
  const FilterKind kind = parse_enum(n.at("kind"), parse_filter_kind);
  GainOptions g;
  if (n.has("gain")) g.method = parse_enum(n.at("gain"), parse_gain_method);
  if (n.has("mass_matrix")) g.mass_matrix = parse_enum(n.at("mass_matrix"), parse_mass_matrix);
  if (n.has("basis")) {
    const std::string b = n.at("basis").string();
    if (b == "linear") g.basis = Basis::Kind::linear;
    else if (b == "quadratic") g.basis = Basis::Kind::quadratic;
    else n.at("basis").fail("expected linear or quadratic");
  }
  if (n.has("density")) {
    const std::string d = n.at("density").string();
    if (d == "kde") g.density = DensityEstimate::kde;
    else if (d == "gaussian_fit") g.density = DensityEstimate::gaussian_fit;
    else n.at("density").fail("expected kde or gaussian_fit");
  }
  if (n.has("kde_points")) g.kde.points = n.at("kde_points").count(3);
  if (n.has("kde_bandwidth")) g.kde.bandwidth = n.at("kde_bandwidth").positive();
  if (n.has("kernel_epsilon")) g.kernel_epsilon = n.at("kernel_epsilon").positive();
  if (n.has("density_floor")) g.density_floor = n.at("density_floor").positive();
  f.spec = make_filter_spec(kind, g);
  if (n.has("raw_increments")) {
    const bool raw = n.at("raw_increments").boolean();
    if (is_continuous(kind) && !raw) {
      n.at("raw_increments").fail("continuous filters are always driven by raw increments");
    }
    if (!is_continuous(kind) && kind != FilterKind::enkbf && raw) {
      n.at("raw_increments").fail("only enkbf and the continuous filters accept raw increments");
    }
    f.spec.raw_increments = raw;
  }
  if (n.has("freeze_gain_per_mesh")) f.spec.freeze_gain_per_mesh = n.at("freeze_gain_per_mesh").boolean();
  if (n.has("label")) f.spec.label = n.at("label").string();
  if (n.has("seed")) f.seed = n.at("seed").seed();
  return f;
}

bool divides(double big, double small) {
  const double r = big / small;
  return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r) && std::round(r) >= 1.0;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }
  const Node root{doc, ""};
  root.object();
  check_keys(root, {"schema_version", "name", "model", "initial", "grid", "ensemble_size", "seed",
                    "seeds", "filters", "reference", "sweep", "theory", "output"});
  ExperimentConfig c;
  try {
    if (root.has("schema_version")) {
      const auto v = root.at("schema_version").count(1);
      if (v != static_cast<std::size_t>(kConfigSchemaVersion)) {
        root.at("schema_version").fail("unsupported schema version " + std::to_string(v));
      }
    }
    if (root.has("name")) c.name = root.at("name").string();
    if (!root.has("model")) throw ConfigError("model", "missing");
    c.model = parse_model(root.at("model"));

    if (!root.has("initial")) throw ConfigError("initial", "missing");
    const Node init = root.at("initial");
    check_keys(init, {"mean", "cov"});
    c.initial_mean = init.at("mean").vector();
    c.initial_cov = init.at("cov").matrix();
    if (static_cast<std::size_t>(c.initial_mean.size()) != c.model.dim) {
      init.at("mean").fail("length must match the model dimension");
    }
    if (c.initial_cov.rows() != c.initial_mean.size() || c.initial_cov.cols() != c.initial_mean.size()) {
      init.at("cov").fail("must be a square matrix matching the mean");
    }

    if (root.has("grid")) {
      const Node g = root.at("grid");
      check_keys(g, {"t0", "T", "delta", "fine_dt"});
      if (g.has("t0")) c.grid.t0 = g.at("t0").number();
      if (g.has("T")) c.grid.T = g.at("T").positive();
      if (g.has("delta")) c.grid.delta = g.at("delta").positive();
      if (g.has("fine_dt")) c.grid.fine_dt = g.at("fine_dt").positive();
      if (!divides(c.grid.T - c.grid.t0 > 0 ? c.grid.T - c.grid.t0 : c.grid.T, c.grid.delta)) {
        g.at("delta").fail("must divide the horizon");
      }
      if (!divides(c.grid.delta, c.grid.fine_dt)) g.at("fine_dt").fail("must divide delta");
    }
    if (root.has("ensemble_size")) c.ensemble_size = root.at("ensemble_size").count(2);

    if (root.has("seed")) c.seeds.base = root.at("seed").seed();
    if (root.has("seeds")) {
      const Node s = root.at("seeds");
      check_keys(s, {"truth", "observation", "initial", "particles"});
      if (s.has("truth")) c.seeds.truth = s.at("truth").seed();
      if (s.has("observation")) c.seeds.observation = s.at("observation").seed();
      if (s.has("initial")) c.seeds.initial = s.at("initial").seed();
      if (s.has("particles")) c.seeds.particles = s.at("particles").seed();
    }

    if (root.has("filters")) {
      const Node fl = root.at("filters");
      fl.array();
      for (std::size_t i = 0; i < fl.j.size(); ++i) c.filters.push_back(parse_filter(fl.at(i)));
    }

    if (root.has("reference")) {
      const Node r = root.at("reference");
      check_keys(r, {"enabled", "half_width", "points"});
      if (r.has("enabled")) c.reference.enabled = r.at("enabled").boolean();
      if (r.has("half_width")) c.reference.half_width = r.at("half_width").positive();
      if (r.has("points")) c.reference.points = r.at("points").count(3);
    }

    if (root.has("sweep")) {
      const Node s = root.at("sweep");
      check_keys(s, {"deltas", "ensemble_sizes", "seeds"});
      if (s.has("deltas")) {
        c.sweep.deltas = s.at("deltas").numbers();
        for (std::size_t i = 0; i < c.sweep.deltas.size(); ++i) {
          const Node d = s.at("deltas").at(i);
          d.positive();
          if (!divides(c.grid.T - c.grid.t0, c.sweep.deltas[i])) d.fail("must divide the horizon");
          if (!divides(c.sweep.deltas[i], c.grid.fine_dt)) d.fail("must be a multiple of fine_dt");
        }
      }
      if (s.has("ensemble_sizes")) {
        const Node e = s.at("ensemble_sizes");
        e.array();
        for (std::size_t i = 0; i < e.j.size(); ++i) c.sweep.ensemble_sizes.push_back(e.at(i).count(2));
      }
      if (s.has("seeds")) {
        const Node e = s.at("seeds");
        e.array();
        for (std::size_t i = 0; i < e.j.size(); ++i) c.sweep.seeds.push_back(e.at(i).seed());
      }
    }

    if (root.has("theory")) {
      const Node t = root.at("theory");
      check_keys(t, {"c_u", "c_g", "c_r", "gamma_dt", "gamma_steps", "lipschitz", "posterior_times",
                     "tolerance"});
      if (t.has("c_u")) c.theory.c_u = t.at("c_u").positive();
      if (t.has("c_g")) c.theory.c_g = t.at("c_g").positive();
      if (t.has("c_r")) c.theory.c_r = t.at("c_r").positive();
      if (t.has("gamma_dt")) c.theory.gamma_dt = t.at("gamma_dt").positive();
      if (t.has("gamma_steps")) c.theory.gamma_steps = t.at("gamma_steps").count(1);
      if (t.has("lipschitz")) {
        c.theory.lipschitz = t.at("lipschitz").numbers();
        for (std::size_t i = 0; i < c.theory.lipschitz.size(); ++i) t.at("lipschitz").at(i).positive();
      }
      if (t.has("posterior_times")) {
        c.theory.posterior_times = t.at("posterior_times").numbers();
        for (std::size_t i = 0; i < c.theory.posterior_times.size(); ++i) {
          const double v = c.theory.posterior_times[i];
          if (v < c.grid.t0 || v > c.grid.T) {
            t.at("posterior_times").at(i).fail("outside the time horizon");
          }
        }
      }
      if (t.has("tolerance")) c.theory.tolerance = t.at("tolerance").positive();
    }

    if (root.has("output")) {
      const Node o = root.at("output");
      check_keys(o, {"dir"});
      if (o.has("dir")) c.out_dir = o.at("dir").string();
    }
  } catch (const json::out_of_range& e) {
    throw ConfigError("<document>", e.what());
  } catch (const json::type_error& e) {
    throw ConfigError("<document>", e.what());
  }
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

SystemModel build_model(const ExperimentConfig& cfg) {
  const ModelConfig& m = cfg.model;
  try {
    switch (m.type) {
      case ModelType::linear_gaussian:
        return make_linear_gaussian(m.A, m.H);
      case ModelType::tanh:
        return make_tanh_model(m.decay);
      case ModelType::log_concave_ou: {
        // (C2) constant of a Gaussian prior: lambda_min(Hess U + Sigma^{-1}).
        const Matrix prec = cfg.initial_cov.inverse();
        Eigen::SelfAdjointEigenSolver<Matrix> es(prec, Eigen::EigenvaluesOnly);
        const double c_g = es.eigenvalues().minCoeff() - m.curvature;
        if (!(c_g > 0.0)) {
          throw ConfigError("initial.cov", "prior is not log-concave enough for the signal potential");
        }
        const auto spec = quadratic_ou_spec(m.dim, m.curvature, c_g);
        const double radius = m.dim == 1 ? 5.0 : 2.0;
        const double spacing = m.dim == 1 ? 0.25 : 1.0;
        return make_log_concave_ou(spec, m.H, lattice_cloud(m.dim, radius, spacing),
                                   build_initial(cfg));
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model", e.what());
  }
  throw ConfigError("model.type", "unsupported");
}

InitialDensity build_initial(const ExperimentConfig& cfg) {
  try {
    return InitialDensity::gaussian(cfg.initial_mean, cfg.initial_cov);
  } catch (const Error& e) {
    throw ConfigError("initial", e.what());
  }
}

}  // namespace flowfilter
