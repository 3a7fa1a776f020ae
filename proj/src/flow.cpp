// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mfsbi/errors.hpp"

namespace mfsbi::flow {

namespace {

constexpr std::size_t kChunk = 2048;
constexpr int kCheckpointVersion = 1;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("not a number: '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw FormatError("not an integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

const char* activation_name(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

const char* embedding_name(EmbeddingKind e) {
  switch (e) {
    case EmbeddingKind::kIdentity: return "identity";
    case EmbeddingKind::kMlp: return "mlp";
    case EmbeddingKind::kCnn: return "cnn";
  }
  return "identity";
}

std::vector<std::pair<std::string, std::string>> split_descriptor(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("descriptor entry without '=': " + item);
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

std::vector<double> uniform_init(std::size_t n, double bound, Engine& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

ad::Tensor activate(const ad::Tensor& h, Activation act) {
  return act == Activation::kTanh ? ad::tanh(h) : ad::relu(h);
}

Matrix to_matrix(const ad::Tensor& t) {
  return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

ad::Tensor to_tensor(const Matrix& m) { return ad::Tensor::from({m.rows, m.cols}, m.data); }

ad::Tensor tile_rows(const ad::Tensor& row, std::size_t n) {
  const std::size_t w = row.dim(1);
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) std::copy(row.data().begin(), row.data().end(), out.begin() + i * w);
  return ad::Tensor::from({n, w}, std::move(out));
}

std::vector<double> take_cols(const Matrix& m, std::span<const std::size_t> cols) {
  std::vector<double> out(m.rows * cols.size());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out[i * cols.size() + j] = m(i, cols[j]);
  return out;
}

}  // namespace

// ---- ArchitectureDescriptor ------------------------------------------------

std::string ArchitectureDescriptor::describe() const {
  std::ostringstream os;
  os << "theta_dim=" << theta_dim << ";x_dim=" << x_dim << ";transforms=" << transforms
     << ";hidden=" << hidden << ";hidden_layers=" << hidden_layers << ";bins=" << spline.bins
     << ";tail_bound=" << fmt_double(spline.tail_bound)
     << ";min_bin_width=" << fmt_double(spline.min_bin_width)
     << ";min_bin_height=" << fmt_double(spline.min_bin_height)
     << ";min_derivative=" << fmt_double(spline.min_derivative)
     << ";activation=" << activation_name(activation) << ";embedding=" << embedding_name(embedding)
     << ";embed_hidden=" << embed_hidden << ";embed_out=" << embed_out << ";image_side=" << image_side
     << ";permutation_seed=" << permutation_seed;
  return os.str();
}

ArchitectureDescriptor ArchitectureDescriptor::parse(const std::string& text) {
  ArchitectureDescriptor a;
  for (const auto& [key, value] : split_descriptor(text)) {
    if (key == "theta_dim") a.theta_dim = parse_size(value);
    else if (key == "x_dim") a.x_dim = parse_size(value);
    else if (key == "transforms") a.transforms = parse_size(value);
    else if (key == "hidden") a.hidden = parse_size(value);
    else if (key == "hidden_layers") a.hidden_layers = parse_size(value);
    else if (key == "bins") a.spline.bins = parse_size(value);
    else if (key == "tail_bound") a.spline.tail_bound = parse_double(value);
    else if (key == "min_bin_width") a.spline.min_bin_width = parse_double(value);
    else if (key == "min_bin_height") a.spline.min_bin_height = parse_double(value);
    else if (key == "min_derivative") a.spline.min_derivative = parse_double(value);
    else if (key == "activation") {
      if (value == "tanh") a.activation = Activation::kTanh;
      else if (value == "relu") a.activation = Activation::kRelu;
      else throw FormatError("unknown activation '" + value + "'");
    } else if (key == "embedding") {
      if (value == "identity") a.embedding = EmbeddingKind::kIdentity;
      else if (value == "mlp") a.embedding = EmbeddingKind::kMlp;
      else if (value == "cnn") a.embedding = EmbeddingKind::kCnn;
      else throw FormatError("unknown embedding '" + value + "'");
    } else if (key == "embed_hidden") a.embed_hidden = parse_size(value);
    else if (key == "embed_out") a.embed_out = parse_size(value);
    else if (key == "image_side") a.image_side = parse_size(value);
    else if (key == "permutation_seed") a.permutation_seed = parse_size(value);
    else throw FormatError("unknown descriptor key '" + key + "'");
  }
  return a;
}

std::uint64_t ArchitectureDescriptor::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : describe()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t ArchitectureDescriptor::feature_dim() const {
  return embedding == EmbeddingKind::kIdentity ? x_dim : embed_out;
}

// ---- LogitBox ---------------------------------------------------------------

LogitBox::LogitBox(std::vector<double> lower, std::vector<double> upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) throw ShapeError("LogitBox: bound sizes differ");
  for (std::size_t d = 0; d < lower_.size(); ++d) {
    if (!std::isfinite(lower_[d]) || !std::isfinite(upper_[d]) || !(lower_[d] < upper_[d])) {
      throw DomainError("LogitBox: dimension " + std::to_string(d) + " needs finite lower < upper");
    }
  }
}

Matrix LogitBox::forward(const Matrix& theta, std::vector<double>& log_det) const {
  if (theta.cols != dim()) {
    throw ShapeError("LogitBox: theta has " + std::to_string(theta.cols) + " columns, box has " +
                     std::to_string(dim()));
  }
  Matrix z(theta.rows, theta.cols);
  log_det.assign(theta.rows, 0.0);
  for (std::size_t i = 0; i < theta.rows; ++i) {
    for (std::size_t d = 0; d < dim(); ++d) {
      const double t = theta(i, d);
      if (!(t > lower_[d] && t < upper_[d])) {
        throw DomainError("theta dimension " + std::to_string(d) + " value " + fmt_double(t) +
                          " is not strictly inside (" + fmt_double(lower_[d]) + ", " +
                          fmt_double(upper_[d]) + ")");
      }
      const double a = std::log(t - lower_[d]);
      const double b = std::log(upper_[d] - t);
      z(i, d) = a - b;
      log_det[i] += std::log(upper_[d] - lower_[d]) - a - b;
    }
  }
  return z;
}

Matrix LogitBox::inverse(const Matrix& z) const {
  Matrix theta(z.rows, z.cols);
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (std::size_t d = 0; d < dim(); ++d) {
      const double lo = lower_[d];
      const double hi = upper_[d];
      const double s = 1.0 / (1.0 + std::exp(-z(i, d)));
      double t = lo + (hi - lo) * s;
      if (!(t > lo)) t = std::nextafter(lo, hi);
      if (!(t < hi)) t = std::nextafter(hi, lo);
      theta(i, d) = t;
    }
  }
  return theta;
}

bool LogitBox::contains(std::span<const double> theta) const {
  if (theta.size() != dim()) return false;
  for (std::size_t d = 0; d < dim(); ++d)
    if (!(theta[d] > lower_[d] && theta[d] < upper_[d])) return false;
  return true;
}

// ---- Standardizer -------------------------------------------------------------

void Standardizer::fit(const Matrix& x) {
  if (x.rows < 2) throw ConfigError("Standardizer::fit needs at least two rows");
  mean_.assign(x.cols, 0.0);
  std_.assign(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) mean_[j] += x(i, j);
  for (auto& m : mean_) m /= static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) std_[j] += (x(i, j) - mean_[j]) * (x(i, j) - mean_[j]);
  for (auto& s : std_) s = std::max(std::sqrt(s / static_cast<double>(x.rows - 1)), kMinStd);
  fitted_ = true;
}

void Standardizer::set(std::vector<double> mean, std::vector<double> std) {
  if (mean.size() != std.size()) throw ShapeError("Standardizer::set: size mismatch");
  for (auto& s : std) s = std::max(s, kMinStd);
  mean_ = std::move(mean);
  std_ = std::move(std);
  fitted_ = true;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (!fitted_) return x;
  if (x.cols != mean_.size()) {
    throw ShapeError("Standardizer: x has " + std::to_string(x.cols) + " columns, expected " +
                     std::to_string(mean_.size()));
  }
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mean_[j]) / std_[j];
  return out;
}

// ---- ConditionalDensityEstimator ---------------------------------------------

ConditionalDensityEstimator::ConditionalDensityEstimator(ArchitectureDescriptor arch, LogitBox box,
                                                         std::uint64_t init_seed)
    : arch_(std::move(arch)), box_(std::move(box)), init_seed_(init_seed) {
  if (arch_.theta_dim == 0 || arch_.x_dim == 0 || arch_.transforms == 0) {
    throw ConfigError("estimator needs theta_dim, x_dim and transforms >= 1");
  }
  if (box_.dim() != arch_.theta_dim) {
    throw ShapeError("estimator: box has " + std::to_string(box_.dim()) + " dims, theta_dim is " +
                     std::to_string(arch_.theta_dim));
  }
  Engine rng(derive_seed(init_seed_, stream_id("init")));

  if (arch_.embedding == EmbeddingKind::kMlp) {
    embed_mlp_ = make_mlp("embedding", arch_.x_dim, arch_.embed_hidden, arch_.hidden_layers,
                          arch_.embed_out, false, rng);
  } else if (arch_.embedding == EmbeddingKind::kCnn) {
    const std::size_t side = arch_.image_side;
    if (side == 0 || side * side != arch_.x_dim || side % 8 != 0) {
      throw ConfigError("cnn embedding needs image_side divisible by 8 with image_side^2 == x_dim");
    }
    const std::size_t channels[] = {1, 8, 16, 32};
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t fan_in = channels[c] * 9;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      const std::string prefix = "embedding.conv" + std::to_string(c);
      conv_weight_.push_back(add_param(prefix + ".weight", {channels[c + 1], channels[c], 3, 3},
                                       uniform_init(channels[c + 1] * fan_in, bound, rng)));
      conv_bias_.push_back(add_param(prefix + ".bias", {channels[c + 1]},
                                     uniform_init(channels[c + 1], bound, rng)));
    }
    const std::size_t flat = 32 * (side / 8) * (side / 8);
    const double bound = 1.0 / std::sqrt(static_cast<double>(flat));
    embed_linear_w_ = add_param("embedding.linear.weight", {flat, arch_.embed_out},
                                uniform_init(flat * arch_.embed_out, bound, rng));
    embed_linear_b_ = add_param("embedding.linear.bias", {arch_.embed_out},
                                uniform_init(arch_.embed_out, bound, rng));
  }

  Engine perm_rng(derive_seed(arch_.permutation_seed, stream_id("permutation")));
  const std::size_t dim = arch_.theta_dim;
  const std::size_t p = arch_.spline.params_per_dim();
  for (std::size_t l = 0; l < arch_.transforms; ++l) {
    Coupling layer;
    if (l > 0 && dim > 1) {
      layer.permutation.resize(dim);
      std::iota(layer.permutation.begin(), layer.permutation.end(), std::size_t{0});
      std::shuffle(layer.permutation.begin(), layer.permutation.end(), perm_rng);
    }
    for (std::size_t d = 0; d < dim; ++d) {
      if (dim == 1 || d % 2 == l % 2) layer.transformed.push_back(d);
      else layer.identity.push_back(d);
    }
    layer.conditioner =
        make_mlp("transform" + std::to_string(l), layer.identity.size() + arch_.feature_dim(), arch_.hidden,
                 arch_.hidden_layers, layer.transformed.size() * p, true, rng);
    layers_.push_back(std::move(layer));
  }
}

ConditionalDensityEstimator::ConditionalDensityEstimator(const ConditionalDensityEstimator& other)
    : arch_(other.arch_),
      box_(other.box_),
      standardizer_(other.standardizer_),
      init_seed_(other.init_seed_),
      params_(other.params_),
      layers_(other.layers_),
      embed_mlp_(other.embed_mlp_),
      conv_weight_(other.conv_weight_),
      conv_bias_(other.conv_bias_),
      embed_linear_w_(other.embed_linear_w_),
      embed_linear_b_(other.embed_linear_b_) {
  for (auto& p : params_) p.tensor = p.tensor.clone();
}

ConditionalDensityEstimator& ConditionalDensityEstimator::operator=(const ConditionalDensityEstimator& other) {
  if (this != &other) {
    ConditionalDensityEstimator copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ConditionalDensityEstimator::set_box(LogitBox box) {
  if (box.dim() != arch_.theta_dim) throw ShapeError("set_box: dimension mismatch");
  box_ = std::move(box);
}

std::size_t ConditionalDensityEstimator::add_param(const std::string& name, ad::Shape shape,
                                                   std::vector<double> values) {
  params_.push_back({name, ad::Tensor::from(std::move(shape), std::move(values), true)});
  return params_.size() - 1;
}

ConditionalDensityEstimator::Mlp ConditionalDensityEstimator::make_mlp(const std::string& prefix, std::size_t in,
                                                                       std::size_t hidden, std::size_t layers,
                                                                       std::size_t out, bool zero_last,
                                                                       Engine& rng) {
  Mlp mlp;
  std::size_t fan_in = in;
  for (std::size_t l = 0; l <= layers; ++l) {
    const bool last = l == layers;
    const std::size_t width = last ? out : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::vector<double> w = uniform_init(fan_in * width, bound, rng);
    std::vector<double> b = uniform_init(width, bound, rng);
    if (last && zero_last) {
      std::fill(w.begin(), w.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
    }
    const std::string name = prefix + ".layer" + std::to_string(l);
    mlp.weight_index.push_back(add_param(name + ".weight", {fan_in, width}, std::move(w)));
    mlp.bias_index.push_back(add_param(name + ".bias", {width}, std::move(b)));
    fan_in = width;
  }
  return mlp;
}

ad::Tensor ConditionalDensityEstimator::run_mlp(const Mlp& mlp, ad::Tensor h, Activation act) const {
  const std::size_t n = mlp.weight_index.size();
  for (std::size_t l = 0; l < n; ++l) {
    h = ad::linear(h, params_[mlp.weight_index[l]].tensor, params_[mlp.bias_index[l]].tensor);
    if (l + 1 < n) h = activate(h, act);
  }
  return h;
}

ad::Tensor ConditionalDensityEstimator::embed(const ad::Tensor& standardized) const {
  switch (arch_.embedding) {
    case EmbeddingKind::kIdentity:
      return standardized;
    case EmbeddingKind::kMlp:
      return run_mlp(embed_mlp_, standardized, arch_.activation);
    case EmbeddingKind::kCnn: {
      const std::size_t batch = standardized.dim(0);
      const std::size_t side = arch_.image_side;
      ad::Tensor h = ad::reshape(standardized, {batch, 1, side, side});
      for (std::size_t c = 0; c < conv_weight_.size(); ++c) {
        h = ad::relu(ad::conv2d(h, params_[conv_weight_[c]].tensor, params_[conv_bias_[c]].tensor, 2, 1));
      }
      h = ad::reshape(h, {batch, h.numel() / batch});
      return ad::linear(h, params_[embed_linear_w_].tensor, params_[embed_linear_b_].tensor);
    }
  }
  return standardized;
}

ad::Tensor ConditionalDensityEstimator::features(const Matrix& x) const {
  if (x.cols != arch_.x_dim) {
    throw ShapeError("estimator: x has " + std::to_string(x.cols) + " columns, expected " +
                     std::to_string(arch_.x_dim));
  }
  ad::check_finite("estimator input x", x.data);
  return embed(to_tensor(standardizer_.apply(x)));
}

ad::Tensor ConditionalDensityEstimator::flow_to_base(const ad::Tensor& z, const ad::Tensor& feats,
                                                     ad::Tensor& log_det) const {
  ad::Tensor h = z;
  log_det = ad::Tensor::zeros({z.dim(0)});
  for (const auto& layer : layers_) {
    if (!layer.permutation.empty()) h = ad::take_columns(h, layer.permutation);
    ad::Tensor cond_in = feats;
    if (!layer.identity.empty()) cond_in = ad::concat({ad::take_columns(h, layer.identity), feats}, 1);
    const ad::Tensor raw = run_mlp(layer.conditioner, cond_in, arch_.activation);
    const ad::Tensor moved = ad::take_columns(h, layer.transformed);
    auto [out, ld] = rq_spline(moved, raw, arch_.spline);
    log_det = ad::add(log_det, ld);
    h = layer.identity.empty() ? out
                               : ad::merge_columns(ad::take_columns(h, layer.identity), layer.identity, out,
                                                   layer.transformed);
  }
  return h;
}

ad::Tensor ConditionalDensityEstimator::log_prob_tensor(const Matrix& theta, const Matrix& x) const {
  if (theta.cols != arch_.theta_dim) {
    throw ShapeError("estimator: theta has " + std::to_string(theta.cols) + " columns, expected " +
                     std::to_string(arch_.theta_dim));
  }
  if (x.rows != 1 && x.rows != theta.rows) {
    throw ShapeError("estimator: x must have 1 or " + std::to_string(theta.rows) + " rows, got " +
                     std::to_string(x.rows));
  }
  ad::check_finite("estimator input theta", theta.data);
  std::vector<double> box_ld;
  const Matrix z = box_.forward(theta, box_ld);

  ad::Tensor feats;
  if (x.rows == theta.rows) {
    feats = features(x);
  } else if (ad::active_tape() != nullptr) {
    feats = features(Matrix::repeat_row(x.row(0), theta.rows));
  } else {
    feats = tile_rows(features(x), theta.rows);
  }

  ad::Tensor flow_ld;
  const ad::Tensor u = flow_to_base(to_tensor(z), feats, flow_ld);
  const double norm = -0.5 * static_cast<double>(arch_.theta_dim) * std::log(2.0 * std::numbers::pi);
  const ad::Tensor base = ad::add_scalar(ad::scale(ad::sum_last(ad::square(u)), -0.5), norm);
  return ad::add(ad::add(base, flow_ld), ad::Tensor::from({theta.rows}, std::move(box_ld)));
}

std::vector<double> ConditionalDensityEstimator::log_prob(const Matrix& theta, const Matrix& x) const {
  if (x.rows != 1 && x.rows != theta.rows) {
    throw ShapeError("estimator: x must have 1 or " + std::to_string(theta.rows) + " rows, got " +
                     std::to_string(x.rows));
  }
  ad::NoGradScope no_grad;
  std::vector<double> out;
  out.reserve(theta.rows);
  for (std::size_t start = 0; start < theta.rows; start += kChunk) {
    const std::size_t stop = std::min(theta.rows, start + kChunk);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix t = theta.select_rows(idx);
    const Matrix xc = x.rows == 1 ? x : x.select_rows(idx);
    const auto lp = log_prob_tensor(t, xc);
    out.insert(out.end(), lp.data().begin(), lp.data().end());
  }
  return out;
}

std::pair<Matrix, std::vector<double>> ConditionalDensityEstimator::to_base(const Matrix& z,
                                                                            const Matrix& x) const {
  ad::NoGradScope no_grad;
  ad::Tensor feats = features(x);
  if (x.rows == 1 && z.rows != 1) feats = tile_rows(feats, z.rows);
  ad::Tensor ld;
  const ad::Tensor u = flow_to_base(to_tensor(z), feats, ld);
  return {to_matrix(u), std::vector<double>(ld.data().begin(), ld.data().end())};
}

std::pair<Matrix, std::vector<double>> ConditionalDensityEstimator::from_base(const Matrix& u,
                                                                              const Matrix& x) const {
  ad::NoGradScope no_grad;
  if (u.cols != arch_.theta_dim) throw ShapeError("from_base: wrong base dimension");
  ad::Tensor feats = features(x);
  if (x.rows == 1 && u.rows != 1) feats = tile_rows(feats, u.rows);
  else if (x.rows != u.rows) throw ShapeError("from_base: x must have 1 or u.rows rows");

  Matrix h = u;
  std::vector<double> log_det(u.rows, 0.0);
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    const auto& layer = *it;
    ad::Tensor cond_in = feats;
    if (!layer.identity.empty()) {
      cond_in = ad::concat({ad::Tensor::from({h.rows, layer.identity.size()}, take_cols(h, layer.identity)), feats}, 1);
    }
    const ad::Tensor raw = run_mlp(layer.conditioner, cond_in, arch_.activation);
    const std::vector<double> moved = take_cols(h, layer.transformed);
    const auto inv = spline_inverse(arch_.spline, moved, raw.data());
    const std::size_t t = layer.transformed.size();
    for (std::size_t i = 0; i < h.rows; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        h(i, layer.transformed[j]) = inv.values[i * t + j];
        log_det[i] += inv.log_det[i * t + j];
      }
    }
    if (!layer.permutation.empty()) {
      Matrix unperm(h.rows, h.cols);
      for (std::size_t i = 0; i < h.rows; ++i)
        for (std::size_t j = 0; j < h.cols; ++j) unperm(i, layer.permutation[j]) = h(i, j);
      h = std::move(unperm);
    }
  }
  ad::check_finite("from_base", h.data);
  return {std::move(h), std::move(log_det)};
}

Matrix ConditionalDensityEstimator::sample(std::size_t n, const Matrix& x, std::uint64_t seed) const {
  if (x.rows != 1) throw ShapeError("sample: x must have exactly one row");
  RandomStream rs(seed, stream_id("flow-sample"));
  Matrix out(0, arch_.theta_dim);
  out.data.reserve(n * arch_.theta_dim);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(n, start + kChunk) - start;
    Matrix u(m, arch_.theta_dim);
    for (auto& v : u.data) v = rs.normal();
    const Matrix theta = box_.inverse(from_base(u, x).first);
    out.data.insert(out.data.end(), theta.data.begin(), theta.data.end());
    out.rows += m;
  }
  return out;
}

void ConditionalDensityEstimator::copy_parameters_from(const ConditionalDensityEstimator& other) {
  if (!(arch_ == other.arch_)) throw ArchitectureMismatch("copy_parameters_from: architectures differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    const auto src = other.params_[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::vector<std::vector<double>> ConditionalDensityEstimator::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void ConditionalDensityEstimator::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    if (values[i].size() != dst.size()) throw ShapeError("restore: size mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

// ---- free functions -------------------------------------------------------------

void clone_weights(const ConditionalDensityEstimator& source, ConditionalDensityEstimator& target) {
  const auto& a = source.architecture();
  const auto& b = target.architecture();
  if (!(a == b)) {
    std::map<std::string, std::string> lhs;
    for (auto& [k, v] : split_descriptor(a.describe())) lhs[k] = v;
    std::string diff;
    for (auto& [k, v] : split_descriptor(b.describe())) {
      if (lhs[k] != v) diff += (diff.empty() ? "" : ", ") + k + " (" + lhs[k] + " vs " + v + ")";
    }
    throw ArchitectureMismatch("clone_weights: architectures differ in " + diff);
  }
  target.copy_parameters_from(source);
  target.standardizer() = source.standardizer();
  target.set_box(source.box());
}

void save_checkpoint(const ConditionalDensityEstimator& estimator, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const auto& arch = estimator.architecture();
  out << "mfsbi-checkpoint\n";
  out << "format_version " << kCheckpointVersion << "\n";
  out << "architecture " << arch.describe() << "\n";
  out << "architecture_hash " << arch.hash() << "\n";
  out << "init_seed " << estimator.init_seed() << "\n";
  out << "box " << estimator.box().dim();
  for (std::size_t d = 0; d < estimator.box().dim(); ++d)
    out << ' ' << hex_double(estimator.box().lower()[d]) << ' ' << hex_double(estimator.box().upper()[d]);
  out << "\n";
  const auto& st = estimator.standardizer();
  out << "standardizer " << (st.fitted() ? st.mean().size() : 0);
  if (st.fitted()) {
    for (std::size_t j = 0; j < st.mean().size(); ++j)
      out << ' ' << hex_double(st.mean()[j]) << ' ' << hex_double(st.std()[j]);
  }
  out << "\n";
  out << "parameters " << estimator.parameters().size() << "\n";
  for (const auto& p : estimator.parameters()) {
    out << "param " << p.name << ' ' << p.tensor.numel();
    for (double v : p.tensor.data()) out << ' ' << hex_double(v);
    out << "\n";
  }
  out << "end\n";
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

ConditionalDensityEstimator load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  auto next_line = [&](const std::string& what) -> std::istringstream {
    if (!std::getline(in, line)) throw CheckpointTruncatedError("checkpoint ends before " + what);
    return std::istringstream(line);
  };
  auto expect_key = [&](std::istringstream& ss, const std::string& key) {
    std::string k;
    ss >> k;
    if (k != key) throw CheckpointTruncatedError("checkpoint: expected '" + key + "', found '" + k + "'");
  };
  auto read_hex = [](std::istringstream& ss, const std::string& what) {
    std::string tok;
    if (!(ss >> tok)) throw CheckpointTruncatedError("checkpoint: missing value in " + what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw CheckpointError("checkpoint: bad number '" + tok + "'");
    return v;
  };

  {
    auto ss = next_line("header");
    if (line != "mfsbi-checkpoint") throw CheckpointError("not an mfsbi checkpoint: " + path.string());
  }
  {
    auto ss = next_line("format_version");
    expect_key(ss, "format_version");
    int version = -1;
    ss >> version;
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint format_version " + std::to_string(version) +
                                   " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
  }
  ArchitectureDescriptor arch;
  {
    auto ss = next_line("architecture");
    expect_key(ss, "architecture");
    std::string text;
    ss >> text;
    try {
      arch = ArchitectureDescriptor::parse(text);
    } catch (const Error& e) {
      throw CheckpointArchitectureError(std::string("checkpoint architecture unreadable: ") + e.what());
    }
  }
  {
    auto ss = next_line("architecture_hash");
    expect_key(ss, "architecture_hash");
    std::uint64_t h = 0;
    ss >> h;
    if (h != arch.hash()) throw CheckpointArchitectureError("checkpoint architecture hash mismatch");
  }
  std::uint64_t init_seed = 0;
  {
    auto ss = next_line("init_seed");
    expect_key(ss, "init_seed");
    ss >> init_seed;
  }
  std::vector<double> lower, upper;
  {
    auto ss = next_line("box");
    expect_key(ss, "box");
    std::size_t d = 0;
    ss >> d;
    for (std::size_t i = 0; i < d; ++i) {
      lower.push_back(read_hex(ss, "box"));
      upper.push_back(read_hex(ss, "box"));
    }
  }
  ConditionalDensityEstimator est(arch, LogitBox(lower, upper), init_seed);
  {
    auto ss = next_line("standardizer");
    expect_key(ss, "standardizer");
    std::size_t d = 0;
    ss >> d;
    if (d > 0) {
      std::vector<double> mean, sd;
      for (std::size_t i = 0; i < d; ++i) {
        mean.push_back(read_hex(ss, "standardizer"));
        sd.push_back(read_hex(ss, "standardizer"));
      }
      est.standardizer().set(std::move(mean), std::move(sd));
    }
  }
  {
    auto ss = next_line("parameters");
    expect_key(ss, "parameters");
    std::size_t count = 0;
    ss >> count;
    if (count != est.parameters().size()) {
      throw CheckpointArchitectureError("checkpoint holds " + std::to_string(count) +
                                        " parameters, architecture needs " +
                                        std::to_string(est.parameters().size()));
    }
  }
  for (auto& p : est.parameters()) {
    auto ss = next_line("parameter " + p.name);
    expect_key(ss, "param");
    std::string name;
    std::size_t n = 0;
    ss >> name >> n;
    if (name != p.name || n != p.tensor.numel()) {
      throw CheckpointArchitectureError("checkpoint parameter '" + name + "' does not match '" + p.name + "'");
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < n; ++i) dst[i] = read_hex(ss, p.name);
  }
  {
    auto ss = next_line("end marker");
    if (line != "end") throw CheckpointTruncatedError("checkpoint missing end marker");
  }
  return est;
}

std::vector<double> bilinear_resize(std::span<const double> image, std::size_t side, std::size_t new_side) {
  if (image.size() != side * side) throw ShapeError("bilinear_resize: image is not side x side");
  std::vector<double> out(new_side * new_side);
  const double ratio = static_cast<double>(side) / static_cast<double>(new_side);
  auto source = [&](std::size_t dst, std::size_t& i0, std::size_t& i1, double& w) {
    double s = (static_cast<double>(dst) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(side - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, side - 1);
    w = s - static_cast<double>(i0);
  };
  for (std::size_t r = 0; r < new_side; ++r) {
    std::size_t r0, r1;
    double wr;
    source(r, r0, r1, wr);
    for (std::size_t c = 0; c < new_side; ++c) {
      std::size_t c0, c1;
      double wc;
      source(c, c0, c1, wc);
      const double top = (1 - wc) * image[r0 * side + c0] + wc * image[r0 * side + c1];
      const double bottom = (1 - wc) * image[r1 * side + c0] + wc * image[r1 * side + c1];
      out[r * new_side + c] = (1 - wr) * top + wr * bottom;
    }
  }
  return out;
}

}  // namespace mfsbi::flow
