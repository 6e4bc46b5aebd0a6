#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcn/checkpoint.hpp"
#include "gcn/model_spec.hpp"
#include "gcn/optimizer.hpp"

namespace gcn {

/// Trainable tensors with stable, unique names in creation order.
template <typename Scalar>
class ParameterSet {
public:
  Var<Scalar> add(std::string name, Tensor<Scalar> init) {
    for (const auto& n : names_)
      if (n == name) throw ContractError("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    vars_.push_back(Var<Scalar>::parameter(std::move(init)));
    return vars_.back();
  }

  std::span<Var<Scalar>> vars() { return vars_; }
  std::span<const Var<Scalar>> vars() const { return vars_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return vars_.size(); }

  const Var<Scalar>& at(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return vars_[i];
    throw ContractError("no parameter named '" + name + "'");
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& v : vars_) n += v.value().size();
    return n;
  }

  void zero_grads() {
    for (auto& v : vars_) v.zero_grad();
  }

private:
  std::vector<std::string> names_;
  std::vector<Var<Scalar>> vars_;
};

template <typename Scalar>
struct FcLayer {
  Var<Scalar> weight;
  Var<Scalar> bias;
};

template <typename Scalar>
struct ConvLayer {
  Var<Scalar> weight;
  Var<Scalar> bias;
};

template <typename Scalar>
struct GeneratorModel {
  GeneratorSpec spec;
  ParameterSet<Scalar> params;
  /// embed[f][i]: i-th fc layer of feature f's stack.
  std::vector<std::vector<FcLayer<Scalar>>> embed;
  std::vector<FcLayer<Scalar>> trunk;
  std::vector<ConvLayer<Scalar>> deconv;
};

template <typename Scalar>
struct ClassifierModel {
  ClassifierSpec spec;
  ParameterSet<Scalar> params;
  std::vector<ConvLayer<Scalar>> convs;
  /// heads[f] = {hidden fc, output fc}
  std::vector<std::array<FcLayer<Scalar>, 2>> heads;
};

namespace detail {

/// N(0, sqrt(2 / fan_in)) weights, zero biases.
template <typename Scalar>
FcLayer<Scalar> add_fc(ParameterSet<Scalar>& ps, const std::string& prefix, Index in, Index out, RngState& rng) {
  FcLayer<Scalar> l;
  l.weight = ps.add(prefix + ".weight", Tensor<Scalar>::gaussian({in, out}, 0.0, std::sqrt(2.0 / in), rng));
  l.bias = ps.add(prefix + ".bias", Tensor<Scalar>::zeros({out}));
  return l;
}

template <typename Scalar>
ConvLayer<Scalar> add_conv(ParameterSet<Scalar>& ps, const std::string& prefix, const ConvSpec& c, RngState& rng) {
  const double fan_in = static_cast<double>(c.in_channels * c.kernel_size * c.kernel_size);
  ConvLayer<Scalar> l;
  l.weight = ps.add(prefix + ".weight",
                    Tensor<Scalar>::gaussian({c.out_channels, c.in_channels, c.kernel_size, c.kernel_size}, 0.0,
                                             std::sqrt(2.0 / fan_in), rng));
  l.bias = ps.add(prefix + ".bias", Tensor<Scalar>::zeros({c.out_channels}));
  return l;
}

/// Fan-in of a transposed convolution is the number of inputs feeding one output pixel,
/// in_channels * (k / stride)^2.
template <typename Scalar>
ConvLayer<Scalar> add_deconv(ParameterSet<Scalar>& ps, const std::string& prefix, const DeconvSpec& d,
                             RngState& rng) {
  const double taps = static_cast<double>(d.kernel_size) / static_cast<double>(d.stride);
  const double fan_in = std::max(1.0, static_cast<double>(d.in_channels) * taps * taps);
  ConvLayer<Scalar> l;
  l.weight = ps.add(prefix + ".weight",
                    Tensor<Scalar>::gaussian({d.in_channels, d.out_channels, d.kernel_size, d.kernel_size}, 0.0,
                                             std::sqrt(2.0 / fan_in), rng));
  l.bias = ps.add(prefix + ".bias", Tensor<Scalar>::zeros({d.out_channels}));
  return l;
}

template <typename Scalar>
Var<Scalar> apply(const FcLayer<Scalar>& l, const Var<Scalar>& x) {
  return fully_connected(x, l.weight, l.bias);
}

}  // namespace detail

inline const char* kInitScheme = "gaussian(0, sqrt(2/fan_in)) weights, zero biases";

template <typename Scalar>
GeneratorModel<Scalar> build_generator(const GeneratorSpec& spec, RngState& rng) {
  spec.validate();
  GeneratorModel<Scalar> m;
  m.spec = spec;
  for (const auto& f : spec.schema.features) {
    std::vector<FcLayer<Scalar>> stack;
    Index in = f.cardinality;
    for (std::size_t i = 0; i < spec.embed_dims.size(); ++i) {
      stack.push_back(detail::add_fc(m.params, "embed." + f.name + ".fc" + std::to_string(i), in, spec.embed_dims[i], rng));
      in = spec.embed_dims[i];
    }
    m.embed.push_back(std::move(stack));
  }
  Index in = spec.schema.size() * spec.embed_dims.back();
  for (std::size_t i = 0; i < spec.trunk_dims.size(); ++i) {
    m.trunk.push_back(detail::add_fc(m.params, "trunk.fc" + std::to_string(i), in, spec.trunk_dims[i], rng));
    in = spec.trunk_dims[i];
  }
  for (std::size_t i = 0; i < spec.deconv.size(); ++i)
    m.deconv.push_back(detail::add_deconv(m.params, "deconv" + std::to_string(i), spec.deconv[i], rng));
  return m;
}

template <typename Scalar>
ClassifierModel<Scalar> build_classifier(const ClassifierSpec& spec, RngState& rng) {
  spec.validate();
  ClassifierModel<Scalar> m;
  m.spec = spec;
  for (std::size_t i = 0; i < spec.convs.size(); ++i)
    m.convs.push_back(detail::add_conv(m.params, "conv" + std::to_string(i), spec.convs[i].conv, rng));
  const auto fs = spec.feature_shape();
  const Index flat = fs[0] * fs[1] * fs[2];
  for (const auto& f : spec.schema.features) {
    auto hidden = detail::add_fc(m.params, "head." + f.name + ".fc0", flat, spec.head_hidden, rng);
    auto out = detail::add_fc(m.params, "head." + f.name + ".fc1", spec.head_hidden, f.cardinality, rng);
    m.heads.push_back({hidden, out});
  }
  return m;
}

/// Checks one [batch, K_f] input per feature with entries in [0, 1].
template <typename Scalar>
Index check_feature_inputs(const FeatureSchema& schema, std::span<const Var<Scalar>> features) {
  if (static_cast<Index>(features.size()) != schema.size())
    throw SchemaError("generator expects " + std::to_string(schema.size()) + " feature vectors, got " +
                      std::to_string(features.size()));
  const Index batch = features.empty() ? 0 : features[0].shape()[0];
  for (Index f = 0; f < schema.size(); ++f) {
    const auto& s = features[static_cast<std::size_t>(f)].shape();
    if (s.size() != 2 || s[0] != batch || s[1] != schema[f].cardinality)
      throw SchemaError("feature '" + schema[f].name + "' input " + shape_string(s) + ", expected [" +
                        std::to_string(batch) + "," + std::to_string(schema[f].cardinality) + "]");
    const auto& v = features[static_cast<std::size_t>(f)].value();
    if ((v.array() < Scalar(0)).any() || (v.array() > Scalar(1)).any() || !all_finite(v))
      throw SchemaError("feature '" + schema[f].name + "' has entries outside [0,1]");
  }
  return batch;
}

/// Per-feature fc stacks -> concat -> trunk fc -> reshape to the seed -> deconv stack.
/// Leaky ReLU follows every learned layer except the last deconv, whose output is linear.
template <typename Scalar>
Var<Scalar> generator_forward(const GeneratorModel<Scalar>& model, std::span<const Var<Scalar>> features) {
  const auto& spec = model.spec;
  const Index batch = check_feature_inputs(spec.schema, features);
  const auto slope = static_cast<Scalar>(spec.slope);
  std::vector<Var<Scalar>> embedded;
  for (std::size_t f = 0; f < features.size(); ++f) {
    Var<Scalar> h = features[f];
    for (const auto& layer : model.embed[f]) h = leaky_relu(detail::apply(layer, h), slope);
    embedded.push_back(h);
  }
  Var<Scalar> h = embedded.size() == 1 ? embedded[0] : concat(embedded, 1);
  for (const auto& layer : model.trunk) h = leaky_relu(detail::apply(layer, h), slope);
  h = reshape(h, {batch, spec.seed_shape[0], spec.seed_shape[1], spec.seed_shape[2]});
  for (std::size_t i = 0; i < model.deconv.size(); ++i) {
    h = deconv2d(h, spec.deconv[i], model.deconv[i].weight, model.deconv[i].bias);
    if (i + 1 < model.deconv.size()) h = leaky_relu(h, slope);
  }
  return h;
}

template <typename Scalar>
Var<Scalar> generator_forward(const GeneratorModel<Scalar>& model, const std::vector<Tensor<Scalar>>& features) {
  std::vector<Var<Scalar>> vars;
  for (const auto& t : features) vars.push_back(Var<Scalar>::constant(t));
  return generator_forward(model, std::span<const Var<Scalar>>(vars));
}

/// One logits tensor [batch, K_f] per schema feature.
template <typename Scalar>
std::vector<Var<Scalar>> classifier_forward(const ClassifierModel<Scalar>& model, const Var<Scalar>& images) {
  const auto& spec = model.spec;
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != spec.input_shape[0] || s[2] != spec.input_shape[1] || s[3] != spec.input_shape[2])
    throw ShapeError("classifier expects [batch," + std::to_string(spec.input_shape[0]) + "," +
                     std::to_string(spec.input_shape[1]) + "," + std::to_string(spec.input_shape[2]) + "], got " +
                     shape_string(s));
  const auto slope = static_cast<Scalar>(spec.slope);
  Var<Scalar> h = images;
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    const auto& layer = spec.convs[i];
    h = leaky_relu(conv2d(h, layer.conv, model.convs[i].weight, model.convs[i].bias), slope);
    if (layer.pool_kernel > 0) h = max_pool2d(h, layer.pool_kernel, layer.pool_stride);
  }
  const Index batch = s[0];
  h = reshape(h, {batch, h.value().size() / batch});
  std::vector<Var<Scalar>> logits;
  for (const auto& head : model.heads) {
    auto hidden = leaky_relu(detail::apply(head[0], h), slope);
    logits.push_back(detail::apply(head[1], hidden));
  }
  return logits;
}

template <typename Scalar>
std::vector<Var<Scalar>> classifier_forward(const ClassifierModel<Scalar>& model, const Tensor<Scalar>& images) {
  return classifier_forward(model, Var<Scalar>::constant(images));
}

/// One-hot [batch, K_f] tensors from per-sample label rows.
template <typename Scalar>
std::vector<Tensor<Scalar>> one_hot_batch(const FeatureSchema& schema, std::span<const std::vector<Index>> rows) {
  std::vector<Tensor<Scalar>> out;
  const Index batch = static_cast<Index>(rows.size());
  for (Index f = 0; f < schema.size(); ++f) {
    Tensor<Scalar> t({batch, schema[f].cardinality});
    for (Index b = 0; b < batch; ++b) {
      const auto& row = rows[static_cast<std::size_t>(b)];
      if (static_cast<Index>(row.size()) != schema.size())
        throw SchemaError("label row has " + std::to_string(row.size()) + " entries for " +
                          std::to_string(schema.size()) + " features");
      const Index y = row[static_cast<std::size_t>(f)];
      if (y < 0 || y >= schema[f].cardinality)
        throw LabelError("label " + std::to_string(y) + " out of range for feature '" + schema[f].name + "'");
      t[b * schema[f].cardinality + y] = Scalar(1);
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

template <typename Scalar>
Checkpoint<Scalar> model_checkpoint(const std::string& kind, OrderedJson spec, const ParameterSet<Scalar>& params,
                                    const Json& meta, const AdamState<Scalar>* adam) {
  Checkpoint<Scalar> ckpt;
  OrderedJson header;
  header["kind"] = kind;
  header["spec"] = std::move(spec);
  header["init"] = kInitScheme;
  header["meta"] = meta.is_null() ? OrderedJson::object() : OrderedJson::parse(meta.dump());
  if (adam) header["adam_step"] = adam->step;
  ckpt.header = Json::parse(header.dump());
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.records.emplace_back(params.names()[i], params.vars()[i].value());
  if (adam) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.records.emplace_back("adam.m." + params.names()[i], adam->m[i]);
      ckpt.records.emplace_back("adam.v." + params.names()[i], adam->v[i]);
    }
  }
  return ckpt;
}

template <typename Scalar>
void restore_parameters(ParameterSet<Scalar>& params, const Checkpoint<Scalar>& ckpt,
                        std::optional<AdamState<Scalar>>* adam) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* t = ckpt.find(params.names()[i]);
    if (!t) throw FormatError("checkpoint lacks parameter '" + params.names()[i] + "'", 0);
    if (t->shape() != params.vars()[i].shape())
      throw FormatError("parameter '" + params.names()[i] + "' has shape " + shape_string(t->shape()), 0);
    params.vars()[i].mutable_value() = *t;
  }
  if (!adam) return;
  if (!ckpt.header.contains("adam_step")) {
    adam->reset();
    return;
  }
  AdamState<Scalar> state;
  state.step = ckpt.header.at("adam_step").template get<std::int64_t>();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* m = ckpt.find("adam.m." + params.names()[i]);
    const auto* v = ckpt.find("adam.v." + params.names()[i]);
    if (!m || !v) throw FormatError("checkpoint lacks optimizer moments for '" + params.names()[i] + "'", 0);
    state.m.push_back(*m);
    state.v.push_back(*v);
  }
  *adam = std::move(state);
}

}  // namespace detail

template <typename Scalar>
void save_generator(const std::string& path, const GeneratorModel<Scalar>& model, const Json& meta = {},
                    const AdamState<Scalar>* adam = nullptr) {
  save_checkpoint(path, detail::model_checkpoint("generator", to_json(model.spec), model.params, meta, adam));
}

template <typename Scalar>
void save_classifier(const std::string& path, const ClassifierModel<Scalar>& model, const Json& meta = {},
                     const AdamState<Scalar>* adam = nullptr) {
  save_checkpoint(path, detail::model_checkpoint("classifier", to_json(model.spec), model.params, meta, adam));
}

inline void expect_kind(const Json& header, const std::string& kind) {
  if (!header.contains("kind") || header["kind"] != kind)
    throw FormatError("checkpoint does not hold a " + kind, 0);
}

/// Rebuilds the model from the stored spec and overwrites every parameter.
template <typename Scalar>
GeneratorModel<Scalar> load_generator(const std::string& path, std::optional<AdamState<Scalar>>* adam = nullptr,
                                      Json* meta = nullptr) {
  auto ckpt = load_checkpoint<Scalar>(path);
  expect_kind(ckpt.header, "generator");
  RngState scratch(0);
  auto model = build_generator<Scalar>(generator_spec_from_json(ckpt.header.at("spec"), "spec"), scratch);
  detail::restore_parameters(model.params, ckpt, adam);
  if (meta) *meta = ckpt.header.value("meta", Json::object());
  return model;
}

template <typename Scalar>
ClassifierModel<Scalar> load_classifier(const std::string& path, std::optional<AdamState<Scalar>>* adam = nullptr,
                                        Json* meta = nullptr) {
  auto ckpt = load_checkpoint<Scalar>(path);
  expect_kind(ckpt.header, "classifier");
  RngState scratch(0);
  auto model = build_classifier<Scalar>(classifier_spec_from_json(ckpt.header.at("spec"), "spec"), scratch);
  detail::restore_parameters(model.params, ckpt, adam);
  if (meta) *meta = ckpt.header.value("meta", Json::object());
  return model;
}

}  // namespace gcn
