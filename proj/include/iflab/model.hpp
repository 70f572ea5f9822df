#pragma once

// Softmax classifiers (multinomial logistic regression and tanh/relu MLPs)
// with per-sample loss, exact gradients, exact Hessian-vector products
// (forward-over-reverse R-operator) and an explicit Hessian for small models.
//
// Parameter layout: for each layer, the weight matrix (out x in, row-major)
// followed by its bias vector. The L2 term (weight_decay / 2) * |theta|^2
// covers every parameter, biases included, and is part of each per-sample
// loss; batch risks are means of per-sample losses, so it is counted once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iflab/data.hpp"
#include "iflab/errors.hpp"
#include "iflab/numerics.hpp"
#include "iflab/parallel.hpp"

namespace iflab {

enum class ModelKind { logistic, mlp };
enum class Activation { tanh, relu };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::logistic ? "logistic" : "mlp"; }
inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  std::size_t input_dim = 1;
  int num_classes = 2;
  std::vector<std::size_t> hidden_sizes;
  Activation activation = Activation::tanh;
  double weight_decay = 0.0;

  void validate() const {
    if (num_classes < 2) throw UsageError("model: K must be >= 2");
    if (input_dim < 1) throw UsageError("model: input_dim must be >= 1");
    if (!(weight_decay >= 0.0)) throw UsageError("model: weight_decay must be >= 0");
    if ((kind == ModelKind::mlp) == hidden_sizes.empty())
      throw UsageError("model: hidden_sizes must be nonempty iff kind == mlp");
    for (auto h : hidden_sizes)
      if (h == 0) throw UsageError("model: hidden layer of size 0");
  }

  /// Relu Hessians are generalized (piecewise) Hessians.
  bool generalized_hessian() const { return kind == ModelKind::mlp && activation == Activation::relu; }

  /// Stable FNV-1a hash of the canonical description.
  std::uint64_t hash() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(kind) << '|' << input_dim << '|' << num_classes << '|';
    for (auto h : hidden_sizes) os << h << ',';
    os << '|' << to_string(activation) << '|' << weight_decay;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : os.str()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  bool operator==(const ModelSpec&) const = default;
};

struct LayerSlice {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

/// Slice map over the flat parameter vector; slices tile [0, total) exactly.
struct ParamLayout {
  std::vector<LayerSlice> layers;
  std::size_t total = 0;
};

inline ParamLayout make_layout(const ModelSpec& spec) {
  spec.validate();
  ParamLayout layout;
  std::size_t in = spec.input_dim;
  std::vector<std::size_t> outs = spec.hidden_sizes;
  outs.push_back(static_cast<std::size_t>(spec.num_classes));
  for (auto out : outs) {
    LayerSlice s{in, out, layout.total, layout.total + in * out};
    layout.total += in * out + out;
    layout.layers.push_back(s);
    in = out;
  }
  return layout;
}

struct Checkpoint {
  Vector params;
  std::size_t step = 0;
  double learning_rate_at_step = 0.0;
  std::string tag;

  bool operator==(const Checkpoint&) const = default;
};

/// A model spec bound to its layout. Cheap to copy; all methods are pure.
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)), layout_(make_layout(spec_)) {}

  const ModelSpec& spec() const noexcept { return spec_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t num_params() const noexcept { return layout_.total; }

  /// Weights ~ N(0, 1) / sqrt(fan_in); biases zero.
  Vector init_params(RngState& rng) const {
    Vector theta(layout_.total, 0.0);
    for (const auto& l : layout_.layers) {
      const Vector w = rand_gaussian(rng, l.in * l.out);
      const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
      for (std::size_t i = 0; i < w.size(); ++i) theta[l.weight_offset + i] = w[i] * scale;
    }
    return theta;
  }

  Vector logits(std::span<const double> theta, std::span<const double> x) const {
    check_params(theta);
    Forward f = forward(theta, x);
    return f.pre.back();
  }

  Vector probabilities(std::span<const double> theta, std::span<const double> x) const {
    check_params(theta);
    return forward(theta, x).probs;
  }

  int predict(std::span<const double> theta, std::span<const double> x) const {
    const Vector z = logits(theta, x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  double accuracy(std::span<const double> theta, const Dataset& ds, bool against_true_label = false) const {
    if (ds.empty()) throw EmptySetError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (const auto& s : ds.samples) {
      const int target = against_true_label ? s.true_label.value_or(s.label) : s.label;
      hits += predict(theta, s.x) == target ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
  }

  double regularizer(std::span<const double> theta) const {
    return spec_.weight_decay == 0.0 ? 0.0 : 0.5 * spec_.weight_decay * dot(theta, theta);
  }

  /// Cross-entropy without the L2 term.
  double data_loss(std::span<const double> theta, const Sample& s) const {
    check_sample(theta, s);
    return forward(theta, s.x).nll(s.label);
  }

  double loss(std::span<const double> theta, const Sample& s) const {
    const double v = data_loss(theta, s) + regularizer(theta);
    require_finite(v, "loss");
    return v;
  }

  Vector grad(std::span<const double> theta, const Sample& s) const {
    check_sample(theta, s);
    Vector g(layout_.total, 0.0);
    accumulate_data_grad(theta, s, 1.0, g);
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, theta, g);
    require_finite(g, "grad");
    return g;
  }

  double batch_risk(std::span<const double> theta, const Dataset& ds) const {
    if (ds.empty()) throw EmptySetError("batch_risk: empty dataset");
    double s = 0.0;
    for (const auto& sample : ds.samples) s += data_loss(theta, sample);
    const double v = s / static_cast<double>(ds.size()) + regularizer(theta);
    require_finite(v, "batch_risk");
    return v;
  }

  /// Risk over a subset given by indices into ds.samples.
  double batch_risk(std::span<const double> theta, const Dataset& ds,
                    std::span<const std::size_t> idx) const {
    if (idx.empty()) throw EmptySetError("batch_risk: empty minibatch");
    double s = 0.0;
    for (auto i : idx) s += data_loss(theta, ds.samples[i]);
    return s / static_cast<double>(idx.size()) + regularizer(theta);
  }

  Vector batch_grad(std::span<const double> theta, const Dataset& ds) const {
    if (ds.empty()) throw EmptySetError("batch_grad: empty dataset");
    check_params(theta);
    Vector g(layout_.total, 0.0);
    const double w = 1.0 / static_cast<double>(ds.size());
    for (const auto& s : ds.samples) {
      check_sample(theta, s);
      accumulate_data_grad(theta, s, w, g);
    }
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, theta, g);
    require_finite(g, "batch_grad");
    return g;
  }

  Vector batch_grad(std::span<const double> theta, const Dataset& ds,
                    std::span<const std::size_t> idx) const {
    if (idx.empty()) throw EmptySetError("batch_grad: empty minibatch");
    check_params(theta);
    Vector g(layout_.total, 0.0);
    const double w = 1.0 / static_cast<double>(idx.size());
    for (auto i : idx) {
      check_sample(theta, ds.samples[i]);
      accumulate_data_grad(theta, ds.samples[i], w, g);
    }
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, theta, g);
    require_finite(g, "batch_grad");
    return g;
  }

  /// Hessian of a single sample's loss (L2 term included) times v.
  Vector hvp_sample(std::span<const double> theta, const Sample& s, std::span<const double> v) const {
    check_sample(theta, s);
    detail::require_same_size(v.size(), layout_.total, "hvp");
    Vector out(layout_.total, 0.0);
    accumulate_data_hvp(theta, s, v, 1.0, out);
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, v, out);
    require_finite(out, "hvp");
    return out;
  }

  /// Batch-mean Hessian times v, including weight_decay * v.
  Vector hvp(std::span<const double> theta, const Dataset& ds, std::span<const double> v) const {
    if (ds.empty()) throw EmptySetError("hvp: empty dataset");
    check_params(theta);
    detail::require_same_size(v.size(), layout_.total, "hvp");
    Vector out(layout_.total, 0.0);
    const double w = 1.0 / static_cast<double>(ds.size());
    for (const auto& s : ds.samples) {
      check_sample(theta, s);
      accumulate_data_hvp(theta, s, v, w, out);
    }
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, v, out);
    require_finite(out, "hvp");
    return out;
  }

  Vector hvp(std::span<const double> theta, const Dataset& ds, std::span<const std::size_t> idx,
             std::span<const double> v) const {
    if (idx.empty()) throw EmptySetError("hvp: empty minibatch");
    detail::require_same_size(v.size(), layout_.total, "hvp");
    Vector out(layout_.total, 0.0);
    const double w = 1.0 / static_cast<double>(idx.size());
    for (auto i : idx) accumulate_data_hvp(theta, ds.samples[i], v, w, out);
    if (spec_.weight_decay != 0.0) axpy(spec_.weight_decay, v, out);
    require_finite(out, "hvp");
    return out;
  }

  static constexpr std::size_t kDefaultHessianCap = 2000;

  /// (H + damping * I) assembled column by column from hvp on basis vectors,
  /// then symmetrized.
  Matrix explicit_hessian(std::span<const double> theta, const Dataset& ds, double damping,
                          std::size_t cap = kDefaultHessianCap, std::size_t threads = 1) const {
    const std::size_t p = layout_.total;
    if (p > cap) {
      throw SizeError("explicit_hessian: " + std::to_string(p) + " parameters exceed cap " +
                      std::to_string(cap) + "; use the lissa or diag_fisher backends");
    }
    if (!(damping >= 0.0)) throw UsageError("explicit_hessian: damping must be >= 0");
    if (ds.empty()) throw EmptySetError("explicit_hessian: empty dataset");
    Matrix h(p, p);
    parallel_for(p, threads, [&](std::size_t j) {
      Vector e(p, 0.0);
      e[j] = 1.0;
      const Vector col = hvp(theta, ds, e);
      for (std::size_t i = 0; i < p; ++i) h(i, j) = col[i];
    });
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        const double m = 0.5 * (h(i, j) + h(j, i));
        h(i, j) = m;
        h(j, i) = m;
      }
      h(i, i) += damping;
    }
    return h;
  }

 private:
  struct Forward {
    std::vector<Vector> acts;  // acts[l] is the input to layer l
    std::vector<Vector> pre;   // pre-activations; pre.back() are the logits
    Vector probs;
    double log_norm = 0.0;

    double nll(int y) const { return log_norm - pre.back()[static_cast<std::size_t>(y)]; }
  };

  void check_params(std::span<const double> theta) const {
    if (theta.size() != layout_.total) {
      throw DimensionError("parameter vector has " + std::to_string(theta.size()) + " entries, model needs " +
                           std::to_string(layout_.total));
    }
  }

  void check_sample(std::span<const double> theta, const Sample& s) const {
    check_params(theta);
    if (s.x.size() != spec_.input_dim)
      throw DimensionError("sample " + std::to_string(s.id) + " has dim " + std::to_string(s.x.size()) +
                           ", model expects " + std::to_string(spec_.input_dim));
    if (s.label < 0 || s.label >= spec_.num_classes)
      throw LabelError("sample " + std::to_string(s.id) + " label " + std::to_string(s.label) +
                       " outside [0, " + std::to_string(spec_.num_classes) + ")");
  }

  double act(double z) const { return spec_.activation == Activation::tanh ? std::tanh(z) : (z > 0 ? z : 0.0); }

  // First and second derivative of the activation given pre-activation z and
  // output a = act(z).
  double act_d1(double z, double a) const {
    return spec_.activation == Activation::tanh ? 1.0 - a * a : (z > 0 ? 1.0 : 0.0);
  }
  double act_d2(double, double a) const {
    return spec_.activation == Activation::tanh ? -2.0 * a * (1.0 - a * a) : 0.0;
  }

  Forward forward(std::span<const double> theta, std::span<const double> x) const {
    const std::size_t depth = layout_.layers.size();
    Forward f;
    f.acts.reserve(depth);
    f.pre.reserve(depth);
    f.acts.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < depth; ++l) {
      const auto& L = layout_.layers[l];
      const Vector& a = f.acts[l];
      Vector z(L.out);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double* w = theta.data() + L.weight_offset + o * L.in;
        double s = theta[L.bias_offset + o];
        for (std::size_t i = 0; i < L.in; ++i) s += w[i] * a[i];
        z[o] = s;
      }
      if (l + 1 < depth) {
        Vector next(L.out);
        for (std::size_t o = 0; o < L.out; ++o) next[o] = act(z[o]);
        f.acts.push_back(std::move(next));
      }
      f.pre.push_back(std::move(z));
    }
    const Vector& z = f.pre.back();
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    f.probs.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      f.probs[k] = std::exp(z[k] - zmax);
      sum += f.probs[k];
    }
    for (double& p : f.probs) p /= sum;
    f.log_norm = zmax + std::log(sum);
    return f;
  }

  // g += w * d(cross-entropy)/d(theta)
  void accumulate_data_grad(std::span<const double> theta, const Sample& s, double w, std::span<double> g) const {
    const Forward f = forward(theta, s.x);
    const std::size_t depth = layout_.layers.size();
    Vector delta = f.probs;
    delta[static_cast<std::size_t>(s.label)] -= 1.0;
    for (std::size_t l = depth; l-- > 0;) {
      const auto& L = layout_.layers[l];
      const Vector& a = f.acts[l];
      for (std::size_t o = 0; o < L.out; ++o) {
        const double d = w * delta[o];
        double* gw = g.data() + L.weight_offset + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) gw[i] += d * a[i];
        g[L.bias_offset + o] += d;
      }
      if (l == 0) break;
      Vector back(L.in, 0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double* wrow = theta.data() + L.weight_offset + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) back[i] += wrow[i] * delta[o];
      }
      const Vector& zprev = f.pre[l - 1];
      for (std::size_t i = 0; i < L.in; ++i) back[i] *= act_d1(zprev[i], a[i]);
      delta = std::move(back);
    }
  }

  // out += w * (Hessian of cross-entropy) * v, by the R-operator applied to
  // the forward and backward passes.
  void accumulate_data_hvp(std::span<const double> theta, const Sample& s, std::span<const double> v, double w,
                           std::span<double> out) const {
    const Forward f = forward(theta, s.x);
    const std::size_t depth = layout_.layers.size();

    std::vector<Vector> r_acts(depth);
    std::vector<Vector> r_pre(depth);
    r_acts[0].assign(spec_.input_dim, 0.0);
    for (std::size_t l = 0; l < depth; ++l) {
      const auto& L = layout_.layers[l];
      const Vector& a = f.acts[l];
      const Vector& ra = r_acts[l];
      Vector rz(L.out);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double* vw = v.data() + L.weight_offset + o * L.in;
        const double* tw = theta.data() + L.weight_offset + o * L.in;
        double acc = v[L.bias_offset + o];
        for (std::size_t i = 0; i < L.in; ++i) acc += vw[i] * a[i] + tw[i] * ra[i];
        rz[o] = acc;
      }
      if (l + 1 < depth) {
        Vector rnext(L.out);
        const Vector& z = f.pre[l];
        const Vector& an = f.acts[l + 1];
        for (std::size_t o = 0; o < L.out; ++o) rnext[o] = act_d1(z[o], an[o]) * rz[o];
        r_acts[l + 1] = std::move(rnext);
      }
      r_pre[l] = std::move(rz);
    }

    Vector delta = f.probs;
    delta[static_cast<std::size_t>(s.label)] -= 1.0;
    const Vector& rlog = r_pre.back();
    const double mean_r = dot(f.probs, rlog);
    Vector r_delta(f.probs.size());
    for (std::size_t k = 0; k < r_delta.size(); ++k) r_delta[k] = f.probs[k] * (rlog[k] - mean_r);

    for (std::size_t l = depth; l-- > 0;) {
      const auto& L = layout_.layers[l];
      const Vector& a = f.acts[l];
      const Vector& ra = r_acts[l];
      for (std::size_t o = 0; o < L.out; ++o) {
        const double rd = w * r_delta[o];
        const double d = w * delta[o];
        double* hw = out.data() + L.weight_offset + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) hw[i] += rd * a[i] + d * ra[i];
        out[L.bias_offset + o] += rd;
      }
      if (l == 0) break;
      Vector back(L.in, 0.0);
      Vector r_back(L.in, 0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double* tw = theta.data() + L.weight_offset + o * L.in;
        const double* vw = v.data() + L.weight_offset + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) {
          back[i] += tw[i] * delta[o];
          r_back[i] += vw[i] * delta[o] + tw[i] * r_delta[o];
        }
      }
      const Vector& zprev = f.pre[l - 1];
      const Vector& rzprev = r_pre[l - 1];
      Vector next_delta(L.in);
      Vector next_r(L.in);
      for (std::size_t i = 0; i < L.in; ++i) {
        const double d1 = act_d1(zprev[i], a[i]);
        const double d2 = act_d2(zprev[i], a[i]);
        next_delta[i] = d1 * back[i];
        next_r[i] = d2 * rzprev[i] * back[i] + d1 * r_back[i];
      }
      delta = std::move(next_delta);
      r_delta = std::move(next_r);
    }
  }

  ModelSpec spec_;
  ParamLayout layout_;
};

// Free-function surface over a spec.

inline Vector init_params(const ModelSpec& spec, RngState& rng) { return Model(spec).init_params(rng); }

inline double loss(const ModelSpec& spec, std::span<const double> theta, const Sample& s) {
  return Model(spec).loss(theta, s);
}

inline Vector grad(const ModelSpec& spec, std::span<const double> theta, const Sample& s) {
  return Model(spec).grad(theta, s);
}

inline double batch_risk(const ModelSpec& spec, std::span<const double> theta, const Dataset& ds) {
  return Model(spec).batch_risk(theta, ds);
}

inline Vector batch_grad(const ModelSpec& spec, std::span<const double> theta, const Dataset& ds) {
  return Model(spec).batch_grad(theta, ds);
}

inline Vector hvp(const ModelSpec& spec, std::span<const double> theta, const Dataset& ds,
                  std::span<const double> v) {
  return Model(spec).hvp(theta, ds, v);
}

inline Matrix explicit_hessian(const ModelSpec& spec, std::span<const double> theta, const Dataset& ds,
                               double damping, std::size_t cap = Model::kDefaultHessianCap) {
  return Model(spec).explicit_hessian(theta, ds, damping, cap);
}

}  // namespace iflab
