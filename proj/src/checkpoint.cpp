#include "dgpmpc/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace dgpmpc {
namespace {

void write_vector(std::ostream& out, const char* name, const Vector& v) {
  out << name << ' ' << v.size();
  for (Index i = 0; i < v.size(); ++i) out << ' ' << v(i);
  out << '\n';
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void expect(const std::string& word) {
    const std::string got = token();
    if (got != word)
      throw std::runtime_error("checkpoint: expected '" + word + "' but read '" + got + "'");
  }
  std::string token() {
    std::string t;
    if (!(in_ >> t)) throw std::runtime_error("checkpoint: unexpected end of file");
    return t;
  }
  double real() {
    const std::string t = token();
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size()) throw std::runtime_error("checkpoint: bad number '" + t + "'");
    return v;
  }
  Index integer() {
    const double v = real();
    if (v < 0 || v != static_cast<double>(static_cast<Index>(v)))
      throw std::runtime_error("checkpoint: expected a non-negative integer");
    return static_cast<Index>(v);
  }
  Vector vector(const std::string& name) {
    expect(name);
    Vector v(integer());
    for (Index i = 0; i < v.size(); ++i) v(i) = real();
    return v;
  }
  Matrix matrix(const std::string& name) {
    expect(name);
    const Index rows = integer();
    const Index cols = integer();
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = real();
    return m;
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  const DgpModel& model = checkpoint.model;
  model.validate();
  out << std::setprecision(17);
  out << kCheckpointMagic << '\n';
  out << "state_dim " << model.state_dim << '\n';
  out << "action_dim " << model.action_dim << '\n';
  out << "log_noise_precision " << model.log_noise_precision << '\n';
  out << "relative_jitter " << model.relative_jitter << '\n';
  write_vector(out, "input_mean", model.normalizer.input_mean);
  write_vector(out, "input_scale", model.normalizer.input_scale);
  write_vector(out, "target_mean", model.normalizer.target_mean);
  write_vector(out, "target_scale", model.normalizer.target_scale);
  out << "layers " << model.layers.size() << '\n';
  for (const GpLayer& layer : model.layers) {
    out << "layer " << to_string(layer.kernel.family()) << ' '
        << (layer.mean_kind == MeanKind::kIdentity ? "identity" : "zero") << ' '
        << layer.output_dim << '\n';
    write_vector(out, "log_lengthscales", layer.kernel.log_lengthscales());
    out << "log_signal_variance " << layer.kernel.log_signal_variance() << '\n';
    write_matrix(out, "inducing_inputs", layer.inducing_inputs);
  }
  out << "samples " << checkpoint.samples.size() << '\n';
  for (const PosteriorSample& s : checkpoint.samples) {
    if (!s.matches(model))
      throw std::invalid_argument("checkpoint: posterior sample does not match model");
    for (const Matrix& U : s.inducing_outputs) write_matrix(out, "inducing_outputs", U);
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::string magic = r.token();
  if (magic != kCheckpointMagic)
    throw std::runtime_error("checkpoint: missing DGPMPC1 header");
  Checkpoint cp;
  DgpModel& model = cp.model;
  r.expect("state_dim");
  model.state_dim = r.integer();
  r.expect("action_dim");
  model.action_dim = r.integer();
  r.expect("log_noise_precision");
  model.log_noise_precision = r.real();
  r.expect("relative_jitter");
  model.relative_jitter = r.real();
  model.normalizer.input_mean = r.vector("input_mean");
  model.normalizer.input_scale = r.vector("input_scale");
  model.normalizer.target_mean = r.vector("target_mean");
  model.normalizer.target_scale = r.vector("target_scale");
  r.expect("layers");
  const Index num_layers = r.integer();
  for (Index l = 0; l < num_layers; ++l) {
    r.expect("layer");
    const KernelFamily family = parse_kernel_family(r.token());
    const std::string mean = r.token();
    if (mean != "identity" && mean != "zero")
      throw std::runtime_error("checkpoint: unknown mean kind '" + mean + "'");
    const Index output_dim = r.integer();
    const Vector log_ls = r.vector("log_lengthscales");
    r.expect("log_signal_variance");
    const double log_var = r.real();
    Matrix Z = r.matrix("inducing_inputs");
    model.layers.push_back(GpLayer{KernelSpec::from_log(family, log_ls, log_var), std::move(Z),
                                   output_dim,
                                   mean == "identity" ? MeanKind::kIdentity : MeanKind::kZero});
  }
  model.validate();
  r.expect("samples");
  const Index count = r.integer();
  for (Index i = 0; i < count; ++i) {
    PosteriorSample s;
    for (Index l = 0; l < num_layers; ++l) s.inducing_outputs.push_back(r.matrix("inducing_outputs"));
    if (!s.matches(model)) throw std::runtime_error("checkpoint: sample shape mismatch");
    cp.samples.push_back(std::move(s));
  }
  r.expect("end");
  return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, checkpoint);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace dgpmpc
