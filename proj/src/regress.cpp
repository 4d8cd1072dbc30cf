#include "scenecaps/regress.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "scenecaps/sdf.hpp"

namespace scenecaps {

using nlohmann::json;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Dataset Dataset::subset(std::span<const std::size_t> columns) const {
  Dataset out;
  out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(columns.size()));
  out.targets.resize(targets.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    out.inputs.col(static_cast<Eigen::Index>(i)) = inputs.col(static_cast<Eigen::Index>(columns[i]));
    out.targets.col(static_cast<Eigen::Index>(i)) = targets.col(static_cast<Eigen::Index>(columns[i]));
  }
  return out;
}

Standardizer Standardizer::identity(std::size_t dim) {
  return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim))};
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& columns) {
  const Eigen::Index n = columns.cols();
  Standardizer s;
  s.shift = columns.rowwise().mean();
  s.scale.resize(columns.rows());
  for (Eigen::Index r = 0; r < columns.rows(); ++r) {
    const double var = n > 0 ? (columns.row(r).array() - s.shift(r)).square().sum() / static_cast<double>(n) : 0.0;
    const double sd = std::sqrt(var);
    s.scale(r) = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
  // Exact float values keep standardized models bit-reproducible after reload.
  snap_to_float(s.shift);
  snap_to_float(s.scale);
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  return ((x.colwise() - shift).array().colwise() * scale.array()).matrix();
}

Eigen::MatrixXd Standardizer::invert(const Eigen::MatrixXd& z) const {
  return ((z.array().colwise() / scale.array()).matrix()).colwise() + shift;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw TrainingError("learning rate must be positive");
  if (batch_size == 0) throw TrainingError("batch size must be positive");
  if (steps == 0) throw TrainingError("step count must be positive");
}

void snap_to_float(Eigen::VectorXd& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = static_cast<double>(static_cast<float>(values(i)));
}

namespace {

void init_uniform(Eigen::VectorXd& theta, std::size_t offset, std::size_t count, std::size_t fan_in,
                  std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (std::size_t i = 0; i < count; ++i) theta(static_cast<Eigen::Index>(offset + i)) = uniform(rng, -bound, bound);
}

double mse_of(const Eigen::MatrixXd& out, const Eigen::MatrixXd& y) {
  return (out - y).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(out.size(), 1));
}

}  // namespace

// ---------------------------------------------------------------- dense

DenseModel::DenseModel(const Layers& layers, std::uint64_t seed) : layers_(layers) {
  for (std::size_t d : layers_)
    if (d == 0) throw DimensionError("dense layer sizes must be positive");
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bias_offset(3) + layers_[4]));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < 4; ++l) {
    init_uniform(theta_, weight_offset(l), layers_[l] * layers_[l + 1], layers_[l], rng);
    init_uniform(theta_, bias_offset(l), layers_[l + 1], layers_[l], rng);
  }
  snap_to_float(theta_);
  input_standardizer = Standardizer::identity(layers_[0]);
  output_standardizer = Standardizer::identity(layers_[4]);
}

std::size_t DenseModel::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += layers_[l] * layers_[l + 1] + layers_[l + 1];
  return off;
}

std::size_t DenseModel::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + layers_[layer] * layers_[layer + 1];
}

Eigen::MatrixXd DenseModel::forward_standardized(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < 4; ++l) {
    Eigen::Map<const Eigen::MatrixXd> w(theta_.data() + weight_offset(l), static_cast<Eigen::Index>(layers_[l + 1]),
                                        static_cast<Eigen::Index>(layers_[l]));
    Eigen::Map<const Eigen::VectorXd> b(theta_.data() + bias_offset(l), static_cast<Eigen::Index>(layers_[l + 1]));
    Eigen::MatrixXd z = (w * a).colwise() + b;
    a = l < 3 ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  return a;
}

Eigen::MatrixXd DenseModel::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim()) throw DimensionError("dense model: input dimension mismatch");
  return output_standardizer.invert(forward_standardized(input_standardizer.apply(inputs)));
}

std::vector<double> DenseModel::forward(std::span<const double> input) const {
  if (input.size() != input_dim()) throw DimensionError("dense model: input dimension mismatch");
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd y = forward_batch(x);
  return {y.data(), y.data() + y.size()};
}

double DenseModel::loss_and_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad) const {
  const Eigen::Index batch = x.cols();
  std::array<Eigen::MatrixXd, 5> acts;
  acts[0] = x;
  for (std::size_t l = 0; l < 4; ++l) {
    Eigen::Map<const Eigen::MatrixXd> w(theta_.data() + weight_offset(l), static_cast<Eigen::Index>(layers_[l + 1]),
                                        static_cast<Eigen::Index>(layers_[l]));
    Eigen::Map<const Eigen::VectorXd> b(theta_.data() + bias_offset(l), static_cast<Eigen::Index>(layers_[l + 1]));
    Eigen::MatrixXd z = (w * acts[l]).colwise() + b;
    acts[l + 1] = l < 3 ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  const double denom = static_cast<double>(batch) * static_cast<double>(layers_[4]);
  const Eigen::MatrixXd diff = acts[4] - y;
  const double loss = diff.squaredNorm() / denom;

  grad.setZero(theta_.size());
  Eigen::MatrixXd delta = diff * (2.0 / denom);
  for (std::size_t li = 4; li-- > 0;) {
    const auto rows = static_cast<Eigen::Index>(layers_[li + 1]);
    const auto cols = static_cast<Eigen::Index>(layers_[li]);
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + weight_offset(li), rows, cols);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + bias_offset(li), rows);
    gw.noalias() = delta * acts[li].transpose();
    gb = delta.rowwise().sum();
    if (li > 0) {
      Eigen::Map<const Eigen::MatrixXd> w(theta_.data() + weight_offset(li), rows, cols);
      Eigen::MatrixXd back = w.transpose() * delta;
      delta = (back.array() * (1.0 - acts[li].array().square())).matrix();
    }
  }
  return loss;
}

json DenseModel::shape_json() const { return json{{"layers", layers_}}; }

DenseModel DenseModel::from_shape_json(const json& j) {
  DenseModel m(j.at("layers").get<Layers>(), 0);
  return m;
}

bool operator==(const DenseModel& a, const DenseModel& b) {
  return a.layers_ == b.layers_ && a.theta_ == b.theta_ && a.input_standardizer.shift == b.input_standardizer.shift &&
         a.input_standardizer.scale == b.input_standardizer.scale &&
         a.output_standardizer.shift == b.output_standardizer.shift &&
         a.output_standardizer.scale == b.output_standardizer.scale;
}

// ---------------------------------------------------------------- conv

struct ConvModel::SampleCache {
  std::vector<RowMatrix> inputs;   // per stage input, channels × (size·size)
  std::vector<RowMatrix> cols;     // im2col matrices
  std::vector<RowMatrix> pre;      // conv pre-activations
  std::vector<std::vector<Eigen::Index>> argmax;
  Eigen::VectorXd flat, hidden_pre, hidden;
};

ConvModel::ConvModel(const ConvConfig& config, std::uint64_t seed) : config_(config) {
  build_layout();
  std::mt19937_64 rng(seed);
  for (const auto& s : shapes_) {
    const std::size_t fan_in = s.in_channels * config_.stages[&s - shapes_.data()].kernel *
                               config_.stages[&s - shapes_.data()].kernel;
    const std::size_t ch = config_.stages[&s - shapes_.data()].channels;
    init_uniform(theta_, s.weight_offset, ch * fan_in, fan_in, rng);
    init_uniform(theta_, s.bias_offset, ch, fan_in, rng);
  }
  init_uniform(theta_, hidden_w_, config_.hidden * flat_dim_, flat_dim_, rng);
  init_uniform(theta_, hidden_b_, config_.hidden, flat_dim_, rng);
  init_uniform(theta_, out_w_, config_.outputs * config_.hidden, config_.hidden, rng);
  init_uniform(theta_, out_b_, config_.outputs, config_.hidden, rng);
  snap_to_float(theta_);
  input_standardizer = Standardizer::identity(input_dim());
  output_standardizer = Standardizer::identity(output_dim());
}

void ConvModel::build_layout() {
  if (config_.patch == 0 || config_.hidden == 0 || config_.outputs == 0 || config_.stages.empty())
    throw DimensionError("conv model: invalid configuration");
  shapes_.clear();
  std::size_t size = config_.patch;
  std::size_t channels = 1;
  std::size_t offset = 0;
  for (const auto& st : config_.stages) {
    if (st.kernel == 0 || st.channels == 0 || st.kernel > size) throw DimensionError("conv model: kernel exceeds input");
    StageShape s{};
    s.in_channels = channels;
    s.in_size = size;
    s.out_size = size - st.kernel + 1;
    s.pooled_size = s.out_size / 2;
    if (s.pooled_size == 0) throw DimensionError("conv model: stage output too small to pool");
    s.weight_offset = offset;
    offset += st.channels * channels * st.kernel * st.kernel;
    s.bias_offset = offset;
    offset += st.channels;
    shapes_.push_back(s);
    channels = st.channels;
    size = s.pooled_size;
  }
  flat_dim_ = channels * size * size;
  hidden_w_ = offset;
  offset += config_.hidden * flat_dim_;
  hidden_b_ = offset;
  offset += config_.hidden;
  out_w_ = offset;
  offset += config_.outputs * config_.hidden;
  out_b_ = offset;
  offset += config_.outputs;
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

Eigen::VectorXd ConvModel::forward_one(const Eigen::VectorXd& x, SampleCache* cache) const {
  RowMatrix current = Eigen::Map<const RowMatrix>(x.data(), 1, static_cast<Eigen::Index>(input_dim()));
  for (std::size_t si = 0; si < shapes_.size(); ++si) {
    const auto& s = shapes_[si];
    const std::size_t k = config_.stages[si].kernel;
    const std::size_t ch = config_.stages[si].channels;
    const auto o = static_cast<Eigen::Index>(s.out_size);
    RowMatrix cols(static_cast<Eigen::Index>(s.in_channels * k * k), o * o);
    for (std::size_t c = 0; c < s.in_channels; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
          const double* src = current.data() + c * s.in_size * s.in_size;
          double* dst = cols.data() + row * o * o;
          for (Eigen::Index oy = 0; oy < o; ++oy) {
            const double* line = src + (oy + static_cast<Eigen::Index>(ky)) * static_cast<Eigen::Index>(s.in_size) +
                                 static_cast<Eigen::Index>(kx);
            std::memcpy(dst + oy * o, line, sizeof(double) * static_cast<std::size_t>(o));
          }
        }
    Eigen::Map<const Eigen::MatrixXd> w(theta_.data() + s.weight_offset, static_cast<Eigen::Index>(ch), cols.rows());
    Eigen::Map<const Eigen::VectorXd> b(theta_.data() + s.bias_offset, static_cast<Eigen::Index>(ch));
    RowMatrix pre = w * cols;
    pre.colwise() += b;
    const auto p = static_cast<Eigen::Index>(s.pooled_size);
    RowMatrix pooled(static_cast<Eigen::Index>(ch), p * p);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(ch * p * p));
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(ch); ++c)
      for (Eigen::Index py = 0; py < p; ++py)
        for (Eigen::Index px = 0; px < p; ++px) {
          Eigen::Index best = (2 * py) * o + 2 * px;
          double bv = pre(c, best);
          for (Eigen::Index dy = 0; dy < 2; ++dy)
            for (Eigen::Index dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx = (2 * py + dy) * o + 2 * px + dx;
              if (pre(c, idx) > bv) {
                bv = pre(c, idx);
                best = idx;
              }
            }
          pooled(c, py * p + px) = std::max(bv, 0.0);  // ReLU commutes with max
          arg[static_cast<std::size_t>(c * p * p + py * p + px)] = best;
        }
    if (cache) {
      cache->inputs.push_back(std::move(current));
      cache->cols.push_back(std::move(cols));
      cache->pre.push_back(std::move(pre));
      cache->argmax.push_back(std::move(arg));
    }
    current = std::move(pooled);
  }
  Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(current.data(), current.size());
  Eigen::Map<const Eigen::MatrixXd> wh(theta_.data() + hidden_w_, static_cast<Eigen::Index>(config_.hidden),
                                       static_cast<Eigen::Index>(flat_dim_));
  Eigen::Map<const Eigen::VectorXd> bh(theta_.data() + hidden_b_, static_cast<Eigen::Index>(config_.hidden));
  Eigen::VectorXd hidden_pre = wh * flat + bh;
  Eigen::VectorXd hidden = hidden_pre.cwiseMax(0.0);
  Eigen::Map<const Eigen::MatrixXd> wo(theta_.data() + out_w_, static_cast<Eigen::Index>(config_.outputs),
                                       static_cast<Eigen::Index>(config_.hidden));
  Eigen::Map<const Eigen::VectorXd> bo(theta_.data() + out_b_, static_cast<Eigen::Index>(config_.outputs));
  Eigen::VectorXd out = wo * hidden + bo;
  if (cache) {
    cache->flat = std::move(flat);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Eigen::MatrixXd ConvModel::forward_standardized(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(output_dim()), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.col(i) = forward_one(x.col(i), nullptr);
  return out;
}

Eigen::MatrixXd ConvModel::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim()) throw DimensionError("conv model: input dimension mismatch");
  return output_standardizer.invert(forward_standardized(input_standardizer.apply(inputs)));
}

std::vector<double> ConvModel::forward(std::span<const double> patch) const {
  if (patch.size() != input_dim()) throw DimensionError("conv model: input dimension mismatch");
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(patch.data(), static_cast<Eigen::Index>(patch.size()));
  Eigen::MatrixXd y = forward_batch(x);
  return {y.data(), y.data() + y.size()};
}

double ConvModel::loss_and_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad) const {
  grad.setZero(theta_.size());
  const Eigen::Index batch = x.cols();
  const double denom = static_cast<double>(batch) * static_cast<double>(config_.outputs);
  double loss = 0.0;
  const auto hid = static_cast<Eigen::Index>(config_.hidden);
  const auto outs = static_cast<Eigen::Index>(config_.outputs);
  const auto flat_dim = static_cast<Eigen::Index>(flat_dim_);
  Eigen::Map<const Eigen::MatrixXd> wh(theta_.data() + hidden_w_, hid, flat_dim);
  Eigen::Map<const Eigen::MatrixXd> wo(theta_.data() + out_w_, outs, hid);
  Eigen::Map<Eigen::MatrixXd> gwh(grad.data() + hidden_w_, hid, flat_dim);
  Eigen::Map<Eigen::VectorXd> gbh(grad.data() + hidden_b_, hid);
  Eigen::Map<Eigen::MatrixXd> gwo(grad.data() + out_w_, outs, hid);
  Eigen::Map<Eigen::VectorXd> gbo(grad.data() + out_b_, outs);

  for (Eigen::Index i = 0; i < batch; ++i) {
    SampleCache cache;
    const Eigen::VectorXd out = forward_one(x.col(i), &cache);
    const Eigen::VectorXd diff = out - y.col(i);
    loss += diff.squaredNorm();
    const Eigen::VectorXd d_out = diff * (2.0 / denom);
    gwo.noalias() += d_out * cache.hidden.transpose();
    gbo += d_out;
    Eigen::VectorXd d_hidden = wo.transpose() * d_out;
    for (Eigen::Index h = 0; h < hid; ++h)
      if (cache.hidden_pre(h) <= 0.0) d_hidden(h) = 0.0;
    gwh.noalias() += d_hidden * cache.flat.transpose();
    gbh += d_hidden;
    Eigen::VectorXd d_flat = wh.transpose() * d_hidden;

    RowMatrix d_pooled = Eigen::Map<const RowMatrix>(
        d_flat.data(), static_cast<Eigen::Index>(config_.stages.back().channels),
        static_cast<Eigen::Index>(shapes_.back().pooled_size * shapes_.back().pooled_size));
    for (std::size_t si = shapes_.size(); si-- > 0;) {
      const auto& s = shapes_[si];
      const std::size_t k = config_.stages[si].kernel;
      const auto ch = static_cast<Eigen::Index>(config_.stages[si].channels);
      const auto o = static_cast<Eigen::Index>(s.out_size);
      const auto p = static_cast<Eigen::Index>(s.pooled_size);
      const RowMatrix& pre = cache.pre[si];
      RowMatrix d_pre = RowMatrix::Zero(ch, o * o);
      for (Eigen::Index c = 0; c < ch; ++c)
        for (Eigen::Index j = 0; j < p * p; ++j) {
          const Eigen::Index idx = cache.argmax[si][static_cast<std::size_t>(c * p * p + j)];
          if (pre(c, idx) > 0.0) d_pre(c, idx) += d_pooled(c, j);
        }
      const RowMatrix& cols = cache.cols[si];
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + s.weight_offset, ch, cols.rows());
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + s.bias_offset, ch);
      gw.noalias() += d_pre * cols.transpose();
      gb += d_pre.rowwise().sum();
      if (si == 0) break;
      Eigen::Map<const Eigen::MatrixXd> w(theta_.data() + s.weight_offset, ch, cols.rows());
      RowMatrix d_cols = w.transpose() * d_pre;
      RowMatrix d_in = RowMatrix::Zero(static_cast<Eigen::Index>(s.in_channels),
                                       static_cast<Eigen::Index>(s.in_size * s.in_size));
      for (std::size_t c = 0; c < s.in_channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
            for (Eigen::Index oy = 0; oy < o; ++oy)
              for (Eigen::Index ox = 0; ox < o; ++ox)
                d_in(static_cast<Eigen::Index>(c), (oy + static_cast<Eigen::Index>(ky)) *
                                                       static_cast<Eigen::Index>(s.in_size) +
                                                       ox + static_cast<Eigen::Index>(kx)) += d_cols(row, oy * o + ox);
          }
      d_pooled = std::move(d_in);
    }
  }
  return loss / denom;
}

json ConvModel::shape_json() const {
  json stages = json::array();
  for (const auto& s : config_.stages) stages.push_back({{"channels", s.channels}, {"kernel", s.kernel}});
  return json{{"patch", config_.patch}, {"stages", stages}, {"hidden", config_.hidden}, {"outputs", config_.outputs}};
}

ConvModel ConvModel::from_shape_json(const json& j) {
  ConvConfig c;
  c.patch = j.at("patch").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.outputs = j.at("outputs").get<std::size_t>();
  c.stages.clear();
  for (const auto& s : j.at("stages")) c.stages.push_back({s.at("channels").get<std::size_t>(), s.at("kernel").get<std::size_t>()});
  return ConvModel(c, 0);
}

bool operator==(const ConvModel& a, const ConvModel& b) {
  return a.shape_json() == b.shape_json() && a.theta_ == b.theta_ &&
         a.input_standardizer.shift == b.input_standardizer.shift &&
         a.input_standardizer.scale == b.input_standardizer.scale &&
         a.output_standardizer.shift == b.output_standardizer.shift &&
         a.output_standardizer.scale == b.output_standardizer.scale;
}

// ---------------------------------------------------------------- training

template <class Model>
double evaluate_mse(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  const Eigen::Index chunk = 512;
  for (Eigen::Index start = 0; start < data.inputs.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, data.inputs.cols() - start);
    const Eigen::MatrixXd out = model.forward_batch(data.inputs.middleCols(start, n));
    total += (out - data.targets.middleCols(start, n)).squaredNorm();
  }
  return total / static_cast<double>(data.targets.size());
}

template <class Model>
TrainResult train(Model& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw TrainingError("training dataset is empty");
  if (static_cast<std::size_t>(data.inputs.rows()) != model.input_dim() ||
      static_cast<std::size_t>(data.targets.rows()) != model.output_dim() || data.targets.cols() != data.inputs.cols())
    throw DimensionError("training dataset shape does not match the model");

  if (config.standardize) {
    model.input_standardizer = Standardizer::fit(data.inputs);
    model.output_standardizer = Standardizer::fit(data.targets);
  }
  const Eigen::MatrixXd xs = model.input_standardizer.apply(data.inputs);
  const Eigen::MatrixXd ys = model.output_standardizer.apply(data.targets);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    cursor = 0;
  };

  auto& theta = model.parameters();
  const Eigen::Index np = theta.size();
  Eigen::VectorXd grad(np), m1 = Eigen::VectorXd::Zero(np), m2 = Eigen::VectorXd::Zero(np);
  const std::size_t batch = std::min(config.batch_size, data.size());
  Eigen::MatrixXd xb(xs.rows(), static_cast<Eigen::Index>(batch));
  Eigen::MatrixXd yb(ys.rows(), static_cast<Eigen::Index>(batch));

  TrainResult result;
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t j = 0; j < batch; ++j) {
      if (cursor >= order.size()) shuffle();
      const auto col = static_cast<Eigen::Index>(order[cursor++]);
      xb.col(static_cast<Eigen::Index>(j)) = xs.col(col);
      yb.col(static_cast<Eigen::Index>(j)) = ys.col(col);
    }
    const double loss = model.loss_and_grad(xb, yb, grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " (learning rate " +
                          std::to_string(config.learning_rate) + ")");
    const double progress = static_cast<double>(step) / static_cast<double>(config.steps);
    const double rate = config.learning_rate * (1.0 - (1.0 - config.final_rate_fraction) * progress);
    switch (config.optimizer) {
      case Optimizer::sgd:
        theta -= rate * grad;
        break;
      case Optimizer::momentum:
        m1 = config.momentum * m1 - rate * grad;
        theta += m1;
        break;
      case Optimizer::adam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        m1 = b1 * m1 + (1 - b1) * grad;
        m2 = b2 * m2 + (1 - b2) * grad.cwiseProduct(grad);
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(b1, t);
        const double c2 = 1.0 - std::pow(b2, t);
        theta.array() -= rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
        break;
      }
    }
    window += loss;
    ++window_n;
    if (window_n == config.log_every || step + 1 == config.steps) {
      result.loss_history.push_back(window / static_cast<double>(window_n));
      window = 0.0;
      window_n = 0;
    }
  }
  if (!theta.allFinite()) throw TrainingError("training produced non-finite parameters");
  snap_to_float(theta);
  result.steps = config.steps;
  result.final_loss = evaluate_mse(model, data);
  return result;
}

template <class Model>
double grad_check(const Model& model, std::span<const double> input, std::span<const double> target, double epsilon,
                  std::size_t max_params, std::uint64_t seed) {
  if (input.size() != model.input_dim() || target.size() != model.output_dim())
    throw DimensionError("grad_check: dimension mismatch");
  Eigen::MatrixXd x = model.input_standardizer.apply(
      Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size())));
  Eigen::MatrixXd y = model.output_standardizer.apply(
      Eigen::Map<const Eigen::VectorXd>(target.data(), static_cast<Eigen::Index>(target.size())));
  Eigen::VectorXd analytic;
  model.loss_and_grad(x, y, analytic);

  Model probe = model;
  const Eigen::Index np = probe.parameters().size();
  std::vector<Eigen::Index> indices(static_cast<std::size_t>(np));
  std::iota(indices.begin(), indices.end(), 0);
  if (max_params > 0 && max_params < indices.size()) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = indices.size(); i > 1; --i) std::swap(indices[i - 1], indices[rng() % i]);
    indices.resize(max_params);
  }
  double worst = 0.0;
  for (Eigen::Index idx : indices) {
    double& p = probe.parameters()(idx);
    const double saved = p;
    p = saved + epsilon;
    const double up = mse_of(probe.forward_standardized(x), y);
    p = saved - epsilon;
    const double down = mse_of(probe.forward_standardized(x), y);
    p = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic(idx);
    worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6));
  }
  return worst;
}

// ---------------------------------------------------------------- files

namespace {

constexpr char kMagic[4] = {'S', 'C', 'W', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw DataError("truncated weights file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

json standardizer_json(const Standardizer& s) {
  return json{{"shift", std::vector<double>(s.shift.data(), s.shift.data() + s.shift.size())},
              {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

Standardizer standardizer_from(const json& j) {
  const auto shift = j.at("shift").get<std::vector<double>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  Standardizer s;
  s.shift = Eigen::Map<const Eigen::VectorXd>(shift.data(), static_cast<Eigen::Index>(shift.size()));
  s.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  return s;
}

std::vector<std::uint32_t> layer_dims(const DenseModel& m) {
  return {m.layers().begin(), m.layers().end()};
}

std::vector<std::uint32_t> layer_dims(const ConvModel& m) {
  std::vector<std::uint32_t> d{static_cast<std::uint32_t>(m.config().patch), static_cast<std::uint32_t>(m.config().hidden),
                               static_cast<std::uint32_t>(m.config().outputs),
                               static_cast<std::uint32_t>(m.config().stages.size())};
  for (const auto& s : m.config().stages) {
    d.push_back(static_cast<std::uint32_t>(s.channels));
    d.push_back(static_cast<std::uint32_t>(s.kernel));
  }
  return d;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

template <class Model>
void save_model(const Model& model, const std::filesystem::path& stem, const json& metadata) {
  std::vector<std::uint8_t> bin(kMagic, kMagic + 4);
  put_u32(bin, kFormatVersion);
  put_u32(bin, std::string(Model::kind()) == "dense" ? 0u : 1u);
  const auto dims = layer_dims(model);
  put_u32(bin, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(bin, d);
  const auto& theta = model.parameters();
  put_u64(bin, static_cast<std::uint64_t>(theta.size()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) put_u32(bin, std::bit_cast<std::uint32_t>(static_cast<float>(theta(i))));

  json side{{"format", "scenecaps-weights"},
            {"version", kFormatVersion},
            {"kind", Model::kind()},
            {"shape", model.shape_json()},
            {"parameters", theta.size()},
            {"input_standardizer", standardizer_json(model.input_standardizer)},
            {"output_standardizer", standardizer_json(model.output_standardizer)},
            {"metadata", metadata.is_null() ? json::object() : metadata}};
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream out(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + with_suffix(stem, ".bin").string());
    out.write(reinterpret_cast<const char*>(bin.data()), static_cast<std::streamsize>(bin.size()));
  }
  std::ofstream js(with_suffix(stem, ".json"), std::ios::trunc);
  if (!js) throw DataError("cannot write " + with_suffix(stem, ".json").string());
  js << side.dump(2) << "\n";
}

template <class Model>
Model load_model(const std::filesystem::path& stem, json* metadata) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw DataError("missing weights sidecar " + with_suffix(stem, ".json").string());
  json side;
  try {
    side = json::parse(js);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed weights sidecar: ") + e.what());
  }
  if (side.value("kind", "") != Model::kind()) throw DataError("weights file holds a different model kind");
  Model model = Model::from_shape_json(side.at("shape"));

  std::ifstream in(with_suffix(stem, ".bin"), std::ios::binary);
  if (!in) throw DataError("missing weights file " + with_suffix(stem, ".bin").string());
  std::vector<std::uint8_t> bin{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bin.size() < 4 || std::memcmp(bin.data(), kMagic, 4) != 0) throw DataError("bad weights magic");
  std::size_t pos = 4;
  if (get_le(bin, pos, 4) != kFormatVersion) throw DataError("unsupported weights version");
  const auto kind = get_le(bin, pos, 4);
  if (kind != (std::string(Model::kind()) == "dense" ? 0u : 1u)) throw DataError("weights kind mismatch");
  const auto ndims = get_le(bin, pos, 4);
  std::vector<std::uint32_t> dims;
  for (std::uint64_t i = 0; i < ndims; ++i) dims.push_back(static_cast<std::uint32_t>(get_le(bin, pos, 4)));
  if (dims != layer_dims(model)) throw DataError("weights layer dims disagree with sidecar");
  const auto count = get_le(bin, pos, 8);
  auto& theta = model.parameters();
  if (count != static_cast<std::uint64_t>(theta.size())) throw DataError("weights parameter count mismatch");
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    theta(i) = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bin, pos, 4))));
  model.input_standardizer = standardizer_from(side.at("input_standardizer"));
  model.output_standardizer = standardizer_from(side.at("output_standardizer"));
  if (metadata) *metadata = side.value("metadata", json::object());
  return model;
}

template TrainResult train<DenseModel>(DenseModel&, const Dataset&, const TrainConfig&);
template TrainResult train<ConvModel>(ConvModel&, const Dataset&, const TrainConfig&);
template double grad_check<DenseModel>(const DenseModel&, std::span<const double>, std::span<const double>, double,
                                       std::size_t, std::uint64_t);
template double grad_check<ConvModel>(const ConvModel&, std::span<const double>, std::span<const double>, double,
                                      std::size_t, std::uint64_t);
template double evaluate_mse<DenseModel>(const DenseModel&, const Dataset&);
template double evaluate_mse<ConvModel>(const ConvModel&, const Dataset&);
template void save_model<DenseModel>(const DenseModel&, const std::filesystem::path&, const json&);
template void save_model<ConvModel>(const ConvModel&, const std::filesystem::path&, const json&);
template DenseModel load_model<DenseModel>(const std::filesystem::path&, json*);
template ConvModel load_model<ConvModel>(const std::filesystem::path&, json*);

}  // namespace scenecaps
