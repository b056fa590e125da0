#pragma once

// MLP encoder + projection head with analytic gradients, Adam with decoupled
// weight decay, cosine learning-rate schedule, and JSON (de)serialization.

#include "domclp/common.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace domclp {

enum class Activation { kRelu, kTanh };

inline std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation \"" + s + "\" (expected relu or tanh)");
}

struct ModelConfig {
  std::vector<int> encoder_layers{3, 64, 64, 32};  // input -> ... -> representation
  std::vector<int> projection_layers{32, 16};      // representation -> ... -> projection
  Activation activation = Activation::kRelu;
  bool normalize_projection = true;
  std::uint64_t seed = 0;

  int input_dim() const { return encoder_layers.front(); }
  int repr_dim() const { return encoder_layers.back(); }
  int proj_dim() const { return projection_layers.back(); }

  void validate() const {
    if (encoder_layers.size() < 2) throw ConfigError("encoder_layers needs >= 2 entries");
    if (projection_layers.size() < 2) throw ConfigError("projection_layers needs >= 2 entries");
    for (int d : encoder_layers)
      if (d < 1) throw ConfigError("encoder layer dims must be >= 1");
    for (int d : projection_layers)
      if (d < 1) throw ConfigError("projection layer dims must be >= 1");
    if (projection_layers.front() != encoder_layers.back())
      throw ConfigError("projection input dim must equal encoder output dim");
  }

  bool operator==(const ModelConfig&) const = default;
};

// One affine layer y = x W + b (W is in x out; rows of x are samples).
struct DenseLayer {
  Mat W;
  Vec b;
};

// Holds parameters; the same shape doubles as a gradient / moment container.
struct ModelParams {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> projection;

  void set_zero() {
    for (auto* block : {&encoder, &projection})
      for (auto& l : *block) {
        l.W.setZero();
        l.b.setZero();
      }
  }
  bool all_finite() const {
    for (const auto* block : {&encoder, &projection})
      for (const auto& l : *block)
        if (!l.W.allFinite() || !l.b.allFinite()) return false;
    return true;
  }
  void add_scaled(const ModelParams& other, double s) {
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      encoder[i].W += s * other.encoder[i].W;
      encoder[i].b += s * other.encoder[i].b;
    }
    for (std::size_t i = 0; i < projection.size(); ++i) {
      projection[i].W += s * other.projection[i].W;
      projection[i].b += s * other.projection[i].b;
    }
  }
};

using Gradients = ModelParams;

namespace detail {

inline ModelParams shaped_like(const ModelConfig& cfg) {
  ModelParams p;
  auto build = [](const std::vector<int>& dims, std::vector<DenseLayer>& out) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      out.push_back({Mat::Zero(dims[l], dims[l + 1]), Vec::Zero(dims[l + 1])});
  };
  build(cfg.encoder_layers, p.encoder);
  build(cfg.projection_layers, p.projection);
  return p;
}

}  // namespace detail

// He-uniform for relu (±sqrt(6/fan_in)), Xavier-uniform for tanh
// (±sqrt(6/(fan_in+fan_out))); biases zero. Weights are drawn row-major,
// encoder layers first, so the stream layout is fixed.
inline ModelParams init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p = detail::shaped_like(cfg);
  std::mt19937_64 rng = substream_rng(cfg.seed, "init");
  auto fill = [&](DenseLayer& l) {
    double fan_in = static_cast<double>(l.W.rows());
    double fan_out = static_cast<double>(l.W.cols());
    double bound = cfg.activation == Activation::kRelu ? std::sqrt(6.0 / fan_in)
                                                       : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = u(rng);
  };
  for (auto& l : p.encoder) fill(l);
  for (auto& l : p.projection) fill(l);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
  std::vector<Mat> enc_in, enc_pre;    // per layer: input and affine output
  std::vector<Mat> proj_in, proj_pre;
  Mat pre_norm;                        // projection output before normalization
  Vec row_norms;
  std::vector<std::uint8_t> zero_rows; // rows whose pre-norm norm fell below the floor
};

struct ForwardResult {
  Mat repr;  // encoder output H
  Mat proj;  // projection output Z (row-normalized when configured)
  ForwardCache cache;
};

namespace detail {

inline Mat apply_activation(const Mat& pre, Activation a) {
  if (a == Activation::kRelu) return pre.cwiseMax(0.0);
  return pre.array().tanh().matrix();
}
inline Mat activation_grad(const Mat& pre, Activation a) {
  if (a == Activation::kRelu)
    return (pre.array() > 0.0).cast<double>().matrix();
  Mat t = pre.array().tanh().matrix();
  return (1.0 - t.array().square()).matrix();
}

// Runs one MLP block; activation after every layer except the last.
inline Mat run_block(const std::vector<DenseLayer>& layers, const Mat& input, Activation act,
                     std::vector<Mat>& ins, std::vector<Mat>& pres) {
  Mat cur = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    ins.push_back(cur);
    Mat pre = (cur * layers[l].W).rowwise() + layers[l].b.transpose();
    pres.push_back(pre);
    cur = (l + 1 < layers.size()) ? apply_activation(pre, act) : pre;
  }
  return cur;
}

// Backpropagates through one block given dL/d(block output); accumulates
// parameter gradients and returns dL/d(block input).
inline Mat back_block(const std::vector<DenseLayer>& layers, const std::vector<Mat>& ins,
                      const std::vector<Mat>& pres, Activation act, Mat grad_out,
                      std::vector<DenseLayer>& grads) {
  for (std::size_t li = layers.size(); li-- > 0;) {
    grads[li].W = ins[li].transpose() * grad_out;
    grads[li].b = grad_out.colwise().sum().transpose();
    grad_out = grad_out * layers[li].W.transpose();
    if (li > 0) grad_out = grad_out.cwiseProduct(activation_grad(pres[li - 1], act));
  }
  return grad_out;
}

}  // namespace detail

inline ForwardResult forward(const ModelConfig& cfg, const ModelParams& params, const Mat& X) {
  if (X.cols() != cfg.input_dim())
    throw ConfigError("forward: input has " + std::to_string(X.cols()) + " columns, expected " +
                      std::to_string(cfg.input_dim()));
  if (!X.allFinite()) throw NumericalError("forward: non-finite input");
  ForwardResult res;
  res.repr = detail::run_block(params.encoder, X, cfg.activation, res.cache.enc_in, res.cache.enc_pre);
  Mat u = detail::run_block(params.projection, res.repr, cfg.activation, res.cache.proj_in,
                            res.cache.proj_pre);
  res.cache.pre_norm = u;
  res.cache.zero_rows.assign(static_cast<std::size_t>(u.rows()), 0);
  if (cfg.normalize_projection) {
    res.cache.row_norms = u.rowwise().norm();
    res.proj = Mat::Zero(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (res.cache.row_norms[i] <= kNormFloor)
        res.cache.zero_rows[static_cast<std::size_t>(i)] = 1;
      else
        res.proj.row(i) = u.row(i) / res.cache.row_norms[i];
    }
  } else {
    res.proj = u;
  }
  return res;
}

// dL_dZ is the gradient at the (possibly normalized) projections; dL_dH at
// the encoder output. Either may be empty (treated as zero).
inline Gradients backward(const ModelConfig& cfg, const ModelParams& params,
                          const ForwardResult& fwd, const Mat& dL_dZ, const Mat& dL_dH = Mat()) {
  const ForwardCache& cache = fwd.cache;
  Gradients grads = detail::shaped_like(cfg);
  Mat du;
  if (dL_dZ.size() > 0) {
    if (dL_dZ.rows() != fwd.proj.rows() || dL_dZ.cols() != fwd.proj.cols())
      throw ConfigError("backward: dL_dZ shape mismatch");
    if (cfg.normalize_projection) {
      // d/du of u/|u|: (g - (g·z) z) / |u| per row; zero rows get zero.
      du = Mat::Zero(dL_dZ.rows(), dL_dZ.cols());
      for (Eigen::Index i = 0; i < dL_dZ.rows(); ++i) {
        if (cache.zero_rows[static_cast<std::size_t>(i)]) continue;
        double gz = dL_dZ.row(i).dot(fwd.proj.row(i));
        du.row(i) = (dL_dZ.row(i) - gz * fwd.proj.row(i)) / cache.row_norms[i];
      }
    } else {
      du = dL_dZ;
    }
  } else {
    du = Mat::Zero(fwd.proj.rows(), fwd.proj.cols());
  }
  Mat dH = detail::back_block(params.projection, cache.proj_in, cache.proj_pre, cfg.activation,
                              std::move(du), grads.projection);
  if (dL_dH.size() > 0) {
    if (dL_dH.rows() != fwd.repr.rows() || dL_dH.cols() != fwd.repr.cols())
      throw ConfigError("backward: dL_dH shape mismatch");
    dH += dL_dH;
  }
  detail::back_block(params.encoder, cache.enc_in, cache.enc_pre, cfg.activation, std::move(dH),
                     grads.encoder);
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimState {
  ModelParams m, v;  // Adam moment buffers
  long step = 0;
  double base_lr = 3e-4;
  double weight_decay = 1e-4;
  int total_epochs = 1;
};

inline OptimState make_optim_state(const ModelConfig& cfg, double base_lr, double weight_decay,
                                   int total_epochs) {
  OptimState s;
  s.m = detail::shaped_like(cfg);
  s.v = detail::shaped_like(cfg);
  s.base_lr = base_lr;
  s.weight_decay = weight_decay;
  s.total_epochs = total_epochs;
  return s;
}

inline double cosine_lr(double base_lr, int epoch, int total_epochs) {
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                         static_cast<double>(total_epochs)));
}

// Adam (beta1=0.9, beta2=0.999, eps=1e-8) with decoupled weight decay applied
// to the weight matrices (biases are not decayed).
inline void adam_step(ModelParams& params, const Gradients& grads, OptimState& opt, int epoch) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++opt.step;
  double lr = cosine_lr(opt.base_lr, epoch, opt.total_epochs);
  double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(opt.step));
  double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(opt.step));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v, bool decay) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    p -= lr * ((m / c1).array() / ((v / c2).array().sqrt() + kEps)).matrix();
    if (decay) p -= lr * opt.weight_decay * p;
  };
  auto update_block = [&](std::vector<DenseLayer>& ps, const std::vector<DenseLayer>& gs,
                          std::vector<DenseLayer>& ms, std::vector<DenseLayer>& vs) {
    for (std::size_t l = 0; l < ps.size(); ++l) {
      update(ps[l].W, gs[l].W, ms[l].W, vs[l].W, true);
      update(ps[l].b, gs[l].b, ms[l].b, vs[l].b, false);
    }
  };
  update_block(params.encoder, grads.encoder, opt.m.encoder, opt.v.encoder);
  update_block(params.projection, grads.projection, opt.m.projection, opt.v.projection);
}

// ---------------------------------------------------------------------------
// Flatten / unflatten (finite-difference harnesses, hashing)
// ---------------------------------------------------------------------------

inline Vec flatten(const ModelParams& p) {
  std::vector<double> vals;
  for (const auto* block : {&p.encoder, &p.projection})
    for (const auto& l : *block) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) vals.push_back(l.W(r, c));
      for (Eigen::Index i = 0; i < l.b.size(); ++i) vals.push_back(l.b[i]);
    }
  return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline void unflatten(const Vec& flat, ModelParams& p) {
  Eigen::Index pos = 0;
  for (auto* block : {&p.encoder, &p.projection})
    for (auto& l : *block) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = flat[pos++];
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = flat[pos++];
    }
  if (pos != flat.size()) throw ConfigError("unflatten: size mismatch");
}

// ---------------------------------------------------------------------------
// JSON serialization (checkpoints)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ParseError("expected matrix as array of arrays");
  auto rows = static_cast<Eigen::Index>(j.size());
  auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw ParseError("ragged matrix rows in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vec vec_from_json(const nlohmann::json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline nlohmann::json layers_to_json(const std::vector<DenseLayer>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) arr.push_back({{"W", mat_to_json(l.W)}, {"b", vec_to_json(l.b)}});
  return arr;
}

inline std::vector<DenseLayer> layers_from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& lj : j) layers.push_back({mat_from_json(lj.at("W")), vec_from_json(lj.at("b"))});
  return layers;
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"encoder_layers", cfg.encoder_layers},
          {"projection_layers", cfg.projection_layers},
          {"activation", to_string(cfg.activation)},
          {"normalize_projection", cfg.normalize_projection},
          {"seed", cfg.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder_layers = j.at("encoder_layers").get<std::vector<int>>();
  cfg.projection_layers = j.at("projection_layers").get<std::vector<int>>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  cfg.normalize_projection = j.at("normalize_projection").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

inline nlohmann::json to_json(const ModelParams& p) {
  return {{"encoder", detail::layers_to_json(p.encoder)},
          {"projection", detail::layers_to_json(p.projection)}};
}

inline ModelParams model_params_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.encoder = detail::layers_from_json(j.at("encoder"));
  p.projection = detail::layers_from_json(j.at("projection"));
  if (!p.all_finite()) throw ParseError("checkpoint parameters contain non-finite values");
  return p;
}

inline nlohmann::json to_json(const OptimState& s) {
  return {{"m", to_json(s.m)},          {"v", to_json(s.v)},
          {"step", s.step},             {"base_lr", s.base_lr},
          {"weight_decay", s.weight_decay}, {"total_epochs", s.total_epochs}};
}

inline OptimState optim_state_from_json(const nlohmann::json& j) {
  OptimState s;
  s.m = model_params_from_json(j.at("m"));
  s.v = model_params_from_json(j.at("v"));
  s.step = j.at("step").get<long>();
  s.base_lr = j.at("base_lr").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.total_epochs = j.at("total_epochs").get<int>();
  return s;
}

}  // namespace domclp
