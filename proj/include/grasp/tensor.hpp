#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace grasp {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;
  std::string shape() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { identity, elu, relu, tanh, leaky_relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);
double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/**
 * Named trainable matrices with gradient and Adam moment slots.
 *
 * Names sort lexicographically, which fixes iteration and serialization
 * order. Frozen slots never receive gradient.
 */
class ParameterStore {
 public:
  struct Slot {
    Matrix value;
    Matrix grad;
    Matrix first_moment;
    Matrix second_moment;
    bool frozen = false;
  };

  Slot& add(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return slots_.contains(name); }
  // Throw ConfigError naming the missing slot.
  Slot& slot(const std::string& name);
  const Slot& slot(const std::string& name) const;
  const Matrix& value(const std::string& name) const { return slot(name).value; }

  void set_frozen(const std::string& name, bool frozen);
  // Freezes every slot whose name starts with `prefix`.
  void freeze_prefix(std::string_view prefix, bool frozen = true);

  std::vector<std::string> names() const;
  std::size_t num_scalars() const;
  void zero_grad();

  std::int64_t adam_steps() const { return adam_steps_; }

  nlohmann::json to_json() const;
  static ParameterStore from_json(const nlohmann::json& doc);
  // Overwrites existing slots by name; rejects unknown names and shape mismatches.
  void load_values(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static ParameterStore load(const std::filesystem::path& path);

 private:
  friend void adam_step(ParameterStore&, const AdamConfig&);
  std::map<std::string, Slot> slots_;
  std::int64_t adam_steps_ = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * Reverse-mode recording of matrix primitives.
 *
 * Nodes are appended in evaluation order, so the node list is already a
 * topological order; backward walks it once in reverse.
 */
class Tape {
 public:
  // Receives the upstream gradient and the node's own forward value.
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream, const Matrix& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // One leaf per parameter name; repeated calls return the same node.
  Var parameter(ParameterStore& store, const std::string& name);
  // Read-only snapshot: the leaf is a constant and never receives gradient.
  Var parameter(const ParameterStore& store, const std::string& name);

  // Model code fetches parameters by name from the bound store.
  void bind(ParameterStore& store) { trainable_ = &store; frozen_ = nullptr; }
  void bind(const ParameterStore& store) { frozen_ = &store; trainable_ = nullptr; }
  Var param(const std::string& name);

  // Seeds d(output)=1 and accumulates leaf gradients into their store slots.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

  // Primitive implementation hooks.
  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);
  void accumulate(Var target, const Matrix& delta);
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
    ParameterStore::Slot* slot = nullptr;
  };
  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> parameters_;
  ParameterStore* trainable_ = nullptr;
  const ParameterStore* frozen_ = nullptr;
};

// Primitives. Shape mismatches throw DimensionError naming both shapes;
// non-finite results throw NumericFault.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_row(Var a, Var bias);  // bias is 1 x cols, added to every row
Var concat_cols(Var a, Var b);
Var transpose(Var a);
Var scale(Var a, double s);
Var mul(Var a, Var b);  // elementwise
Var activation(Var a, Activation kind);
// Entries where mask == 0 become `value` and pass no gradient.
Var masked_fill(Var a, const Matrix& mask, double value);
// Softmax over each row restricted to mask == 1 entries; other entries are
// exactly 0 and rows with an empty mask are all zero.
Var row_softmax(Var a, const Matrix& mask);
Var row_softmax(Var a);
Var log_softmax_rows(Var a);
Var gather_rows(Var a, std::span<const std::size_t> index);
Var gather_cols(Var a, std::span<const std::size_t> index);
// Places values[k] (a k x 1 column) at positions[k] of a rows x cols zero matrix.
Var scatter(Var values, std::span<const std::pair<std::size_t, std::size_t>> positions,
            std::size_t rows, std::size_t cols);
Var sum_rows(Var a);    // n x c -> n x 1
Var reduce_sum(Var a);  // -> 1 x 1

// Plain-value helpers shared by oracles and inference code.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);

struct GradCheckReport {
  std::map<std::string, double> max_relative_error;  // frozen slots are omitted
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

using ScalarFunction = std::function<Var(Tape&, ParameterStore&)>;

// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor)
inline constexpr double kGradCheckFloor = 1e-6;
double relative_error(double analytic, double numeric);

/**
 * Compares tape gradients against central finite differences for every
 * entry of every trainable slot. `f` must return a 1x1 node.
 */
GradCheckReport grad_check(const ScalarFunction& f, ParameterStore& params, double tol,
                           double step = 1e-4);

void sgd_step(ParameterStore& params, double lr);
// Standard bias-corrected Adam; the step counter lives in the store.
void adam_step(ParameterStore& params, const AdamConfig& cfg);

// Glorot-uniform initialization from the project's seeded generator.
Matrix glorot(std::size_t rows, std::size_t cols, std::uint64_t seed);

}  // namespace grasp
