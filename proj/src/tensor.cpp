#include "grasp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "grasp/kg.hpp"

namespace grasp {

namespace {

constexpr double kLeakySlope = 0.2;

[[noreturn]] void shape_error(std::string_view op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape() + " and " + b.shape());
}

Matrix checked(Matrix m, std::string_view op) {
  if (!m.all_finite()) throw NumericFault(std::string(op) + ": non-finite output");
  return m;
}

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for Matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Matrix::shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (auto a : {Activation::identity, Activation::elu, Activation::relu, Activation::tanh,
                 Activation::leaky_relu}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::leaky_relu: return x > 0.0 ? x : kLeakySlope * x;
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::elu: return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::leaky_relu: return x > 0.0 ? 1.0 : kLeakySlope;
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// ParameterStore

ParameterStore::Slot& ParameterStore::add(const std::string& name, Matrix init) {
  if (slots_.contains(name)) throw ConfigError("duplicate parameter slot '" + name + "'");
  Slot s;
  s.grad = Matrix(init.rows(), init.cols());
  s.first_moment = Matrix(init.rows(), init.cols());
  s.second_moment = Matrix(init.rows(), init.cols());
  s.value = std::move(init);
  return slots_.emplace(name, std::move(s)).first->second;
}

ParameterStore::Slot& ParameterStore::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw ConfigError("parameter store has no slot '" + name + "'");
  return it->second;
}

const ParameterStore::Slot& ParameterStore::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw ConfigError("parameter store has no slot '" + name + "'");
  return it->second;
}

void ParameterStore::set_frozen(const std::string& name, bool frozen) { slot(name).frozen = frozen; }

void ParameterStore::freeze_prefix(std::string_view prefix, bool frozen) {
  for (auto& [name, s] : slots_) {
    if (name.starts_with(prefix)) s.frozen = frozen;
  }
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : slots_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, s] : slots_) n += s.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, s] : slots_) std::fill(s.grad.data().begin(), s.grad.data().end(), 0.0);
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, s] : slots_) {
    params.push_back({{"name", name},
                      {"rows", s.value.rows()},
                      {"cols", s.value.cols()},
                      {"frozen", s.frozen},
                      {"data", std::vector<double>(s.value.data().begin(), s.value.data().end())}});
  }
  return {{"format_version", kCheckpointFormatVersion}, {"adam_steps", adam_steps_}, {"params", params}};
}

ParameterStore ParameterStore::from_json(const nlohmann::json& doc) {
  if (doc.value("format_version", -1) != kCheckpointFormatVersion) {
    throw ConfigError("unsupported checkpoint format version");
  }
  ParameterStore store;
  for (const auto& p : doc.at("params")) {
    auto& s = store.add(p.at("name").get<std::string>(),
                        Matrix(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>(),
                               p.at("data").get<std::vector<double>>()));
    s.frozen = p.value("frozen", false);
  }
  store.adam_steps_ = doc.value("adam_steps", std::int64_t{0});
  return store;
}

void ParameterStore::load_values(const nlohmann::json& doc) {
  if (doc.value("format_version", -1) != kCheckpointFormatVersion) {
    throw ConfigError("unsupported checkpoint format version");
  }
  for (const auto& p : doc.at("params")) {
    const auto name = p.at("name").get<std::string>();
    auto& s = slot(name);
    const auto rows = p.at("rows").get<std::size_t>();
    const auto cols = p.at("cols").get<std::size_t>();
    if (rows != s.value.rows() || cols != s.value.cols()) {
      throw ConfigError("checkpoint slot '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + s.value.shape());
    }
    s.value = Matrix(rows, cols, p.at("data").get<std::vector<double>>());
  }
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
}

ParameterStore ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  return from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }
const Matrix& Var::grad() const {
  auto& n = tape_->nodes_[id_];
  if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(ParameterStore& store, const std::string& name) {
  if (auto it = parameters_.find(name); it != parameters_.end()) return Var(this, it->second);
  auto& s = store.slot(name);
  Node n;
  n.value = s.value;
  n.needs_grad = !s.frozen;
  n.slot = &s;
  nodes_.push_back(std::move(n));
  parameters_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const ParameterStore& store, const std::string& name) {
  if (auto it = parameters_.find(name); it != parameters_.end()) return Var(this, it->second);
  Var v = constant(store.slot(name).value);
  parameters_.emplace(name, v.id_);
  return v;
}

Var Tape::param(const std::string& name) {
  if (trainable_ != nullptr) return parameter(*trainable_, name);
  if (frozen_ != nullptr) return parameter(*frozen_, name);
  throw ContractError("tape has no bound parameter store");
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var v) { return needs_grad(v); });
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Matrix& delta) {
  auto& node = nodes_[target.id_];
  if (!node.needs_grad) return;
  add_into(node.grad, delta);
}

void Tape::backward(Var output) {
  auto& out = nodes_[output.id_];
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw ContractError("backward needs a 1x1 output, got " + out.value.shape());
  }
  // Gradients exist only where they can flow; constants keep an empty slot.
  for (auto& n : nodes_) {
    if (n.needs_grad) {
      if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows(), n.value.cols());
      else std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    } else {
      n.grad = Matrix();
    }
  }
  if (out.grad.size() != 1) out.grad = Matrix(1, 1);
  out.grad(0, 0) = 1.0;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.needs_grad && n.backward) n.backward(*this, n.grad, n.value);
  }
  for (auto& n : nodes_) {
    if (n.slot != nullptr && n.needs_grad) add_into(n.slot->grad, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  return a.tape().record(checked(matmul(av, bv), "matmul"), {a, b},
                         [a, b](Tape& t, const Matrix& g, const Matrix&) {
                           if (t.needs_grad(a)) t.accumulate(a, matmul_nt(g, b.value()));
                           if (t.needs_grad(b)) t.accumulate(b, matmul_tn(a.value(), g));
                         });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
  Matrix out = a.value();
  add_into(out, b.value());
  return a.tape().record(checked(std::move(out), "add"), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_row", av, bv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv(0, j);
  }
  return a.tape().record(checked(std::move(out), "add_row"), {a, bias},
                         [a, bias](Tape& t, const Matrix& g, const Matrix&) {
                           t.accumulate(a, g);
                           if (t.needs_grad(bias)) {
                             Matrix gb(1, g.cols());
                             for (std::size_t i = 0; i < g.rows(); ++i) {
                               for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                             }
                             t.accumulate(bias, gb);
                           }
                         });
}

Var concat_cols(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
  const std::size_t ca = av.cols();
  const std::size_t cb = bv.cols();
  Matrix out(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga(g.rows(), ca);
    Matrix gb(g.rows(), cb);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
      for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var transpose(Var a) {
  return a.tape().record(transpose(a.value()), {a},
                         [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, transpose(g)); });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& x : out.data()) x *= s;
  return a.tape().record(checked(std::move(out), "scale"), {a}, [a, s](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = g;
    for (double& x : ga.data()) x *= s;
    t.accumulate(a, ga);
  });
}

Var mul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  return a.tape().record(checked(std::move(out), "mul"), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) {
      Matrix ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] * b.value().data()[i];
      t.accumulate(a, ga);
    }
    if (t.needs_grad(b)) {
      Matrix gb(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] = g.data()[i] * a.value().data()[i];
      t.accumulate(b, gb);
    }
  });
}

Var activation(Var a, Activation kind) {
  Matrix out = a.value();
  for (double& x : out.data()) x = activate(kind, x);
  return a.tape().record(checked(std::move(out), "activation"), {a},
                         [a, kind](Tape& t, const Matrix& g, const Matrix&) {
                           Matrix ga(g.rows(), g.cols());
                           const auto in = a.value().data();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga.data()[i] = g.data()[i] * activate_derivative(kind, in[i]);
                           }
                           t.accumulate(a, ga);
                         });
}

Var masked_fill(Var a, const Matrix& mask, double value) {
  if (!a.value().same_shape(mask)) shape_error("masked_fill", a.value(), mask);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.data()[i] == 0.0) out.data()[i] = value;
  }
  return a.tape().record(checked(std::move(out), "masked_fill"), {a},
                         [a, mask](Tape& t, const Matrix& g, const Matrix&) {
                           Matrix ga = g;
                           for (std::size_t i = 0; i < ga.size(); ++i) {
                             if (mask.data()[i] == 0.0) ga.data()[i] = 0.0;
                           }
                           t.accumulate(a, ga);
                         });
}

Var row_softmax(Var a, const Matrix& mask) {
  const Matrix& av = a.value();
  if (!av.same_shape(mask)) shape_error("row_softmax", av, mask);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < av.cols(); ++j) {
      if (mask(i, j) != 0.0) mx = std::max(mx, av(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(av(i, j) - mx);
        total += out(i, j);
      }
    }
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= total;
  }
  return a.tape().record(checked(std::move(out), "row_softmax"), {a},
                         [a](Tape& t, const Matrix& g, const Matrix& y) {
                           // dx_j = y_j (g_j - sum_k g_k y_k); masked y_j = 0 kills their share.
                           Matrix ga(g.rows(), g.cols());
                           for (std::size_t i = 0; i < g.rows(); ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                             for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
                           }
                           t.accumulate(a, ga);
                         });
}

Var row_softmax(Var a) { return row_softmax(a, Matrix(a.rows(), a.cols(), 1.0)); }

Var log_softmax_rows(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const auto r = av.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double x : r) total += std::exp(x - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = r[j] - lse;
  }
  return a.tape().record(checked(std::move(out), "log_softmax_rows"), {a},
                         [a](Tape& t, const Matrix& g, const Matrix& y) {
                           Matrix ga(g.rows(), g.cols());
                           for (std::size_t i = 0; i < g.rows(); ++i) {
                             double gsum = 0.0;
                             for (std::size_t j = 0; j < g.cols(); ++j) gsum += g(i, j);
                             for (std::size_t j = 0; j < g.cols(); ++j) {
                               ga(i, j) = g(i, j) - std::exp(y(i, j)) * gsum;
                             }
                           }
                           t.accumulate(a, ga);
                         });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Matrix& av = a.value();
  Matrix out(index.size(), av.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(index[k]) + " outside " + av.shape());
    }
    std::copy(av.row(index[k]).begin(), av.row(index[k]).end(), out.row(k).begin());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape().record(std::move(out), {a},
                         [a, idx = std::move(idx)](Tape& t, const Matrix& g, const Matrix&) {
                           Matrix ga(a.rows(), a.cols());
                           for (std::size_t k = 0; k < idx.size(); ++k) {
                             auto dst = ga.row(idx[k]);
                             auto src = g.row(k);
                             for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                           }
                           t.accumulate(a, ga);
                         });
}

Var gather_cols(Var a, std::span<const std::size_t> index) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), index.size());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= av.cols()) {
      throw DimensionError("gather_cols: column " + std::to_string(index[k]) + " outside " + av.shape());
    }
    for (std::size_t i = 0; i < av.rows(); ++i) out(i, k) = av(i, index[k]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape().record(std::move(out), {a},
                         [a, idx = std::move(idx)](Tape& t, const Matrix& g, const Matrix&) {
                           Matrix ga(a.rows(), a.cols());
                           for (std::size_t k = 0; k < idx.size(); ++k) {
                             for (std::size_t i = 0; i < g.rows(); ++i) ga(i, idx[k]) += g(i, k);
                           }
                           t.accumulate(a, ga);
                         });
}

Var scatter(Var values, std::span<const std::pair<std::size_t, std::size_t>> positions,
            std::size_t rows, std::size_t cols) {
  const Matrix& v = values.value();
  if (v.cols() != 1 || v.rows() != positions.size()) {
    throw DimensionError("scatter: values " + v.shape() + " for " + std::to_string(positions.size()) +
                         " positions");
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto [r, c] = positions[k];
    if (r >= rows || c >= cols) throw DimensionError("scatter: position outside target shape");
    out(r, c) += v(k, 0);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pos(positions.begin(), positions.end());
  return values.tape().record(std::move(out), {values},
                              [values, pos = std::move(pos)](Tape& t, const Matrix& g, const Matrix&) {
                                Matrix gv(pos.size(), 1);
                                for (std::size_t k = 0; k < pos.size(); ++k) {
                                  gv(k, 0) = g(pos[k].first, pos[k].second);
                                }
                                t.accumulate(values, gv);
                              });
}

Var sum_rows(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (double x : av.row(i)) out(i, 0) += x;
  }
  return a.tape().record(checked(std::move(out), "sum_rows"), {a},
                         [a](Tape& t, const Matrix& g, const Matrix&) {
                           Matrix ga(a.rows(), a.cols());
                           for (std::size_t i = 0; i < ga.rows(); ++i) {
                             for (double& x : ga.row(i)) x = g(i, 0);
                           }
                           t.accumulate(a, ga);
                         });
}

Var reduce_sum(Var a) {
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return a.tape().record(checked(Matrix(1, 1, total), "reduce_sum"), {a},
                         [a](Tape& t, const Matrix& g, const Matrix&) {
                           t.accumulate(a, Matrix(a.rows(), a.cols(), g(0, 0)));
                         });
}

// ---------------------------------------------------------------------------
// Gradient check and optimizers

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFunction& f, ParameterStore& params, double tol, double step) {
  const auto evaluate = [&]() {
    Tape tape;
    Var out = f(tape, params);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError("grad_check needs a scalar output, got " + out.value().shape());
    }
    return out.value()(0, 0);
  };

  params.zero_grad();
  {
    Tape tape;
    Var out = f(tape, params);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError("grad_check needs a scalar output, got " + out.value().shape());
    }
    tape.backward(out);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (const auto& name : params.names()) {
    auto& slot = params.slot(name);
    if (slot.frozen) continue;
    double worst = 0.0;
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      double& x = slot.value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = evaluate();
      x = saved - step;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(slot.grad.data()[i], numeric));
    }
    report.max_relative_error[name] = worst;
    report.worst = std::max(report.worst, worst);
  }
  report.passed = report.worst <= tol;
  params.zero_grad();
  return report;
}

void sgd_step(ParameterStore& params, double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  for (const auto& name : params.names()) {
    auto& s = params.slot(name);
    if (s.frozen) continue;
    for (std::size_t i = 0; i < s.value.size(); ++i) s.value.data()[i] -= lr * s.grad.data()[i];
  }
}

void adam_step(ParameterStore& params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("learning rate must be positive");
  ++params.adam_steps_;
  const double t = static_cast<double>(params.adam_steps_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [_, s] : params.slots_) {
    if (s.frozen) continue;
    auto value = s.value.data();
    auto grad = s.grad.data();
    auto m = s.first_moment.data();
    auto v = s.second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

Matrix glorot(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  SeededRng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& x : m.data()) x = (2.0 * rng.uniform() - 1.0) * limit;
  return m;
}

}  // namespace grasp
