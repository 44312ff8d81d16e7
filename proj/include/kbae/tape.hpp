#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbae/tensor.hpp"

namespace kbae {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor4 value);

  std::string name;
  Tensor4 value;
  Tensor4 grad;

  void zero_grad() { grad.fill(0.0); }
};

enum class LayerKind {
  conv2d,
  tconv2d,
  relu,
  sigmoid,
  global_avg_pool,
  channel_scale,
  residual_add,
  flatten,
  reshape,
};

const char* to_string(LayerKind kind);

// One layer of a network. Only conv2d / tconv2d carry weights and bias.
struct LayerParams {
  LayerKind kind = LayerKind::relu;
  std::optional<Parameter> weight;
  std::optional<Parameter> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // weight out x in x k x k, zero bias
  static LayerParams conv(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride, std::size_t padding);
  // weight in x out x k x k, zero bias
  static LayerParams tconv(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                           std::size_t stride, std::size_t padding);
  static LayerParams plain(LayerKind kind);

  bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::tconv2d; }
  std::size_t in_channels() const;
  std::size_t out_channels() const;
  std::size_t kernel_h() const { return weight->value.dims().h; }
  std::size_t kernel_w() const { return weight->value.dims().w; }

  // Throws ConfigError when the invariants of the kind are violated.
  void validate() const;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode computation record. Every op appends a node holding its output
// value; when the tape is armed it also stores a closure that pushes the
// node's gradient back onto its inputs. backward() replays those closures once,
// in reverse execution order, and then the tape is spent.
class Tape {
 public:
  explicit Tape(bool armed = true) : armed_(armed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool armed() const noexcept { return armed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var input(Tensor4 value, bool requires_grad = false);
  Var parameter(Parameter& param);

  const Tensor4& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of a node after backward(); zeros when nothing flowed into it.
  Tensor4 grad(Var v) const;

  Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad);
  Var tconv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad);
  // Dispatches a full layer; parameterless kinds other than the unary ones are
  // rejected here (use channel_scale / add / reshape directly).
  Var apply(Var input, LayerParams& layer);

  Var relu(Var x);
  Var sigmoid(Var x);
  Var global_avg_pool(Var x);
  Var channel_scale(Var x, Var scale);
  Var add(Var a, Var b);
  Var scale(Var x, double factor);
  Var reshape(Var x, Dims dims);

  // Mean of squared differences over every element; returns a 1x1x1x1 node.
  Var mse(Var a, Var b);

  // Identity forward, no gradient backward.
  Var stop_gradient(Var x);

  // Rows of a 1x1xZxK table selected by `rows`, shaped as `out` (whose last
  // axis must be K and whose size must be rows.size()*K). Gradients
  // scatter-add back onto the selected rows.
  Var gather_rows(Var table, std::span<const std::uint32_t> rows, Dims out);

  // Forward value is `selected` exactly; backward copies the incoming gradient
  // onto `z` unchanged and sends nothing to `selected`.
  Var straight_through(Var z, Var selected);

  // Seeds d(loss)/d(loss) = 1 and replays the record. Parameter gradients are
  // accumulated into Parameter::grad. Throws StateError on an unarmed or spent
  // tape.
  void backward(Var loss);

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor4 value, std::initializer_list<Var> parents,
           std::function<void(Tape&, std::size_t)> backward);
  Tensor4& grad_slot(std::size_t id);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  std::vector<Node> nodes_;
  bool armed_;
  bool spent_ = false;
};

}  // namespace kbae
