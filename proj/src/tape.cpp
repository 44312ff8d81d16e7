#include "kbae/tape.hpp"

#include <cmath>

#include "kbae/conv.hpp"
#include "kbae/errors.hpp"

namespace kbae {

Parameter::Parameter(std::string name, Tensor4 value)
    : name(std::move(name)), value(std::move(value)), grad(this->value.dims()) {}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::tconv2d: return "tconv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::global_avg_pool: return "global-avg-pool";
    case LayerKind::channel_scale: return "channel-scale";
    case LayerKind::residual_add: return "residual-add";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

LayerParams LayerParams::conv(std::string name, std::size_t in, std::size_t out,
                              std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerParams p;
  p.kind = LayerKind::conv2d;
  p.weight.emplace(name + ".weight", Tensor4(Dims{out, in, kernel, kernel}));
  p.bias.emplace(name + ".bias", Tensor4(Dims{out, 1, 1, 1}));
  p.stride = stride;
  p.padding = padding;
  p.validate();
  return p;
}

LayerParams LayerParams::tconv(std::string name, std::size_t in, std::size_t out,
                               std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerParams p;
  p.kind = LayerKind::tconv2d;
  p.weight.emplace(name + ".weight", Tensor4(Dims{in, out, kernel, kernel}));
  p.bias.emplace(name + ".bias", Tensor4(Dims{out, 1, 1, 1}));
  p.stride = stride;
  p.padding = padding;
  p.validate();
  return p;
}

LayerParams LayerParams::plain(LayerKind kind) {
  LayerParams p;
  p.kind = kind;
  p.validate();
  return p;
}

std::size_t LayerParams::in_channels() const {
  if (!weight) return 0;
  return kind == LayerKind::conv2d ? weight->value.dims().c : weight->value.dims().n;
}

std::size_t LayerParams::out_channels() const {
  if (!weight) return 0;
  return kind == LayerKind::conv2d ? weight->value.dims().n : weight->value.dims().c;
}

void LayerParams::validate() const {
  if (has_weights()) {
    if (!weight || !bias) {
      throw ConfigError(std::string(to_string(kind)) + " layer needs weights and bias");
    }
    if (bias->value.size() != out_channels()) {
      throw ConfigError(std::string(to_string(kind)) + " bias length " +
                        std::to_string(bias->value.size()) + " does not match " +
                        std::to_string(out_channels()) + " output channels");
    }
  } else if (weight || bias) {
    throw ConfigError(std::string(to_string(kind)) + " layer must not carry weights");
  }
  if (stride < 1) throw ConfigError("stride must be >= 1");
}

Var Tape::push(Tensor4 value, std::initializer_list<Var> parents,
               std::function<void(Tape&, std::size_t)> backward) {
  Node node;
  node.value = std::move(value);
  if (armed_) {
    for (Var p : parents) node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor4& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !(n.grad.dims() == n.value.dims())) {
    n.grad = Tensor4(n.value.dims());
  }
  return n.grad;
}

Tensor4 Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.dims() == n.value.dims()) return n.grad;
  return Tensor4(n.value.dims());
}

Var Tape::input(Tensor4 value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = armed_ && requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  Node node;
  node.value = param.value;
  node.requires_grad = armed_;
  node.param = &param;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  Tensor4 out = conv2d_forward(value(input), value(weight), value(bias).values(), stride, pad);
  return push(std::move(out), {input, weight, bias},
              [input, weight, bias, stride, pad](Tape& t, std::size_t self) {
                const Tensor4& g = t.nodes_[self].grad;
                Tensor4* gi = t.needs(input) ? &t.grad_slot(input.id) : nullptr;
                Tensor4* gw = t.needs(weight) ? &t.grad_slot(weight.id) : nullptr;
                std::span<double> gb =
                    t.needs(bias) ? t.grad_slot(bias.id).values() : std::span<double>{};
                conv2d_backward(t.value(input), t.value(weight), g, stride, pad, gi, gw, gb);
              });
}

Var Tape::tconv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  Tensor4 out = tconv2d_forward(value(input), value(weight), value(bias).values(), stride, pad);
  return push(std::move(out), {input, weight, bias},
              [input, weight, bias, stride, pad](Tape& t, std::size_t self) {
                const Tensor4& g = t.nodes_[self].grad;
                Tensor4* gi = t.needs(input) ? &t.grad_slot(input.id) : nullptr;
                Tensor4* gw = t.needs(weight) ? &t.grad_slot(weight.id) : nullptr;
                std::span<double> gb =
                    t.needs(bias) ? t.grad_slot(bias.id).values() : std::span<double>{};
                tconv2d_backward(t.value(input), t.value(weight), g, stride, pad, gi, gw, gb);
              });
}

Var Tape::apply(Var input, LayerParams& layer) {
  layer.validate();
  switch (layer.kind) {
    case LayerKind::conv2d:
      return conv2d(input, parameter(*layer.weight), parameter(*layer.bias), layer.stride,
                    layer.padding);
    case LayerKind::tconv2d:
      return tconv2d(input, parameter(*layer.weight), parameter(*layer.bias), layer.stride,
                     layer.padding);
    case LayerKind::relu: return relu(input);
    case LayerKind::sigmoid: return sigmoid(input);
    case LayerKind::global_avg_pool: return global_avg_pool(input);
    default:
      throw ConfigError(std::string("layer kind ") + to_string(layer.kind) +
                        " needs an auxiliary operand");
  }
}

Var Tape::relu(Var x) {
  const Tensor4& in = value(x);
  Tensor4 out(in.dims());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    const Tensor4& in = t.value(x);
    Tensor4& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var Tape::sigmoid(Var x) {
  const Tensor4& in = value(x);
  Tensor4 out(in.dims());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    const Tensor4& y = t.nodes_[self].value;
    Tensor4& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::global_avg_pool(Var x) {
  const Tensor4& in = value(x);
  const Dims d = in.dims();
  const std::size_t plane = d.plane();
  if (plane == 0) throw ShapeError("global-avg-pool over an empty plane " + d.str());
  Tensor4 out(Dims{d.n, d.c, 1, 1});
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += in[nc * plane + i];
    out[nc] = s / static_cast<double>(plane);
  }
  return push(std::move(out), {x}, [x, d, plane](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    Tensor4& gx = t.grad_slot(x.id);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
      const double share = g[nc] * inv;
      for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += share;
    }
  });
}

Var Tape::channel_scale(Var x, Var scale) {
  const Tensor4& in = value(x);
  const Tensor4& s = value(scale);
  const Dims d = in.dims();
  require_same_dims(s.dims(), Dims{d.n, d.c, 1, 1}, "channel-scale");
  const std::size_t plane = d.plane();
  Tensor4 out(d);
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    for (std::size_t i = 0; i < plane; ++i) out[nc * plane + i] = in[nc * plane + i] * s[nc];
  }
  return push(std::move(out), {x, scale}, [x, scale, d, plane](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    const Tensor4& in = t.value(x);
    const Tensor4& s = t.value(scale);
    if (t.needs(x)) {
      Tensor4& gx = t.grad_slot(x.id);
      for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += g[nc * plane + i] * s[nc];
      }
    }
    if (t.needs(scale)) {
      Tensor4& gs = t.grad_slot(scale.id);
      for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[nc * plane + i] * in[nc * plane + i];
        gs[nc] += acc;
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor4& va = value(a);
  const Tensor4& vb = value(b);
  require_same_dims(va.dims(), vb.dims(), "residual-add");
  Tensor4 out(va.dims());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    for (Var p : {a, b}) {
      if (!t.needs(p)) continue;
      const Tensor4& g = t.nodes_[self].grad;
      Tensor4& gp = t.grad_slot(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var Tape::scale(Var x, double factor) {
  const Tensor4& in = value(x);
  Tensor4 out(in.dims());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  return push(std::move(out), {x}, [x, factor](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    Tensor4& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var Tape::reshape(Var x, Dims dims) {
  Tensor4 out = value(x).reshaped(dims);
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    Tensor4& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var Tape::mse(Var a, Var b) {
  const Tensor4& va = value(a);
  const Tensor4& vb = value(b);
  require_same_dims(va.dims(), vb.dims(), "mse");
  if (va.size() == 0) throw ShapeError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    s += d * d;
  }
  const double count = static_cast<double>(va.size());
  return push(Tensor4(Dims{1, 1, 1, 1}, s / count), {a, b}, [a, b, count](Tape& t, std::size_t self) {
    const double g = t.nodes_[self].grad[0] * 2.0 / count;
    const Tensor4& va = t.value(a);
    const Tensor4& vb = t.value(b);
    if (t.needs(a)) {
      Tensor4& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g * (va[i] - vb[i]);
    }
    if (t.needs(b)) {
      Tensor4& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < va.size(); ++i) gb[i] -= g * (va[i] - vb[i]);
    }
  });
}

Var Tape::stop_gradient(Var x) {
  Node node;
  node.value = value(x);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::gather_rows(Var table, std::span<const std::uint32_t> rows, Dims out_dims) {
  const Tensor4& tab = value(table);
  const std::size_t z = tab.dims().h;
  const std::size_t k = tab.dims().w;
  if (tab.dims().n != 1 || tab.dims().c != 1) {
    throw ShapeError("gather_rows expects a 1x1xZxK table, got " + tab.dims().str());
  }
  if (out_dims.w != k || out_dims.size() != rows.size() * k) {
    throw ShapeError("gather_rows output " + out_dims.str() + " does not hold " +
                     std::to_string(rows.size()) + " rows of length " + std::to_string(k));
  }
  Tensor4 out(out_dims);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= z) {
      throw RangeError("row index " + std::to_string(rows[r]) + " out of range for " +
                       std::to_string(z) + " rows");
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = tab[rows[r] * k + j];
  }
  std::vector<std::uint32_t> saved(rows.begin(), rows.end());
  return push(std::move(out), {table}, [table, saved = std::move(saved), k](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    Tensor4& gt = t.grad_slot(table.id);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      for (std::size_t j = 0; j < k; ++j) gt[saved[r] * k + j] += g[r * k + j];
    }
  });
}

Var Tape::straight_through(Var z, Var selected) {
  require_same_dims(value(z).dims(), value(selected).dims(), "straight-through");
  Tensor4 out = value(selected);
  return push(std::move(out), {z}, [z](Tape& t, std::size_t self) {
    const Tensor4& g = t.nodes_[self].grad;
    Tensor4& gz = t.grad_slot(z.id);
    for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
  });
}

void Tape::backward(Var loss) {
  if (!armed_) throw StateError("backward called on a tape recorded without differentiation");
  if (spent_) throw StateError("backward called twice on the same computation record");
  if (loss.id >= nodes_.size()) throw StateError("loss is not part of this computation record");
  if (nodes_[loss.id].value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + nodes_[loss.id].value.dims().str());
  }
  spent_ = true;
  grad_slot(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 && n.value.size() != 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (!(p.grad.dims() == p.value.dims())) p.grad = Tensor4(p.value.dims());
      for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
      if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
    }
  }
}

}  // namespace kbae
