#include "ndet/nn/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace ndet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(Tensor& t, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-limit, limit);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(os, d);
  for (std::size_t i = 0; i < t.size(); ++i) write_f64(os, t[i]);
}

Tensor read_tensor(std::istream& is) {
  const std::uint8_t rank = read_u8(is);
  if (rank == 0 || rank > 4) throw DataError("tensor rank outside [1, 4]");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = read_u64(is);
  Tensor t(shape, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f64(is);
  return t;
}

[[noreturn]] void bad_shape(const std::string& kind,
                            const std::vector<std::size_t>& got,
                            const std::string& want) {
  throw DataError(strf("%s cannot accept input %s, expects %s", kind.c_str(),
                       shape_string(got).c_str(), want.c_str()));
}

}  // namespace

const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Linear: return "linear";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Softsign: return "softsign";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Elu: return "elu";
  }
  return "?";
}

ActivationKind activation_from_string(const std::string& s) {
  if (s == "linear") return ActivationKind::Linear;
  if (s == "tanh") return ActivationKind::Tanh;
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "softsign") return ActivationKind::Softsign;
  if (s == "relu") return ActivationKind::Relu;
  if (s == "elu") return ActivationKind::Elu;
  throw ConfigError("unknown activation kind '" + s + "'");
}

double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::Linear: return x;
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::Sigmoid: return sigmoid(x);
    case ActivationKind::Softsign: return x / (1.0 + std::abs(x));
    case ActivationKind::Relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::Elu: return x >= 0.0 ? x : std::expm1(x);
  }
  return x;
}

double activate_derivative(ActivationKind kind, double x, double y) {
  switch (kind) {
    case ActivationKind::Linear: return 1.0;
    case ActivationKind::Tanh: return 1.0 - y * y;
    case ActivationKind::Sigmoid: return y * (1.0 - y);
    case ActivationKind::Softsign: {
      const double d = 1.0 + std::abs(x);
      return 1.0 / (d * d);
    }
    case ActivationKind::Relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::Elu: return x >= 0.0 ? 1.0 : y + 1.0;
  }
  return 1.0;
}

// --- dense -------------------------------------------------------------------

namespace {

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t units)
      : in_(in), units_(units), w_({in, units}, 0.0), b_({units}, 0.0),
        dw_({in, units}, 0.0), db_({units}, 0.0) {}

  std::string kind() const override { return "dense"; }
  std::string describe() const override {
    return strf("dense %zu->%zu", in_, units_);
  }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() == 1 && in[0] == in_) return {units_};
    if (in.size() == 2 && in[1] == in_) return {in[0], units_};
    bad_shape(describe(), in, strf("(%zu) or (rows, %zu)", in_, in_));
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    x_ = x;
    Tensor y(out_shape, 0.0);
    CMapRM W(w_.data(), in_, units_);
    CMapVec b(b_.data(), units_);
    if (x.rank() == 1) {
      CMapVec xv(x.data(), in_);
      MapVec yv(y.data(), units_);
      yv.noalias() = W.transpose() * xv;
      yv += b;
    } else {
      CMapRM X(x.data(), x.dim(0), in_);
      MapRM Y(y.data(), x.dim(0), units_);
      Y.noalias() = X * W;
      Y.rowwise() += b.transpose();
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape(), 0.0);
    CMapRM W(w_.data(), in_, units_);
    MapRM dW(dw_.data(), in_, units_);
    MapVec db(db_.data(), units_);
    if (x_.rank() == 1) {
      CMapVec xv(x_.data(), in_);
      CMapVec dyv(dy.data(), units_);
      MapVec dxv(dx.data(), in_);
      dW.noalias() += xv * dyv.transpose();
      db += dyv;
      dxv.noalias() = W * dyv;
    } else {
      CMapRM X(x_.data(), x_.dim(0), in_);
      CMapRM dY(dy.data(), x_.dim(0), units_);
      MapRM dX(dx.data(), x_.dim(0), in_);
      dW.noalias() += X.transpose() * dY;
      db += dY.colwise().sum().transpose();
      dX.noalias() = dY * W.transpose();
    }
    return dx;
  }

  std::vector<Tensor*> params() override { return {&w_, &b_}; }
  std::vector<Tensor*> grads() override { return {&dw_, &db_}; }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(in_));
    write_u32(os, static_cast<std::uint32_t>(units_));
    write_tensor(os, w_);
    write_tensor(os, b_);
  }

  static std::unique_ptr<DenseLayer> load(std::istream& is) {
    const std::uint32_t in = read_u32(is);
    const std::uint32_t units = read_u32(is);
    auto layer = std::make_unique<DenseLayer>(in, units);
    layer->w_ = read_tensor(is);
    layer->b_ = read_tensor(is);
    return layer;
  }

  void init(std::mt19937_64& rng) { fill_uniform(w_, glorot_limit(in_, units_), rng); }

 private:
  std::size_t in_, units_;
  Tensor w_, b_, dw_, db_, x_;
};

// --- 2D convolution ------------------------------------------------------------

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t k)
      : kh_(kh), kw_(kw), cin_(cin), k_(k), w_({kh, kw, cin, k}, 0.0),
        b_({k}, 0.0), dw_({kh, kw, cin, k}, 0.0), db_({k}, 0.0) {
    if (kh % 2 == 0 || kw % 2 == 0)
      throw ConfigError("same-padded convolution needs odd kernel extents");
  }

  std::string kind() const override { return "conv2d"; }
  std::string describe() const override {
    return strf("conv2d %zux%zu cin %zu k %zu", kh_, kw_, cin_, k_);
  }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() == 3 && in[2] == cin_) return {in[0], in[1], k_};
    if (in.size() == 4 && in[3] == cin_) return {in[0], in[1], in[2], k_};
    bad_shape(describe(), in, strf("(H, W, %zu) or (T, H, W, %zu)", cin_, cin_));
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    x_ = x;
    Tensor y(out_shape, 0.0);
    if (x.rank() == 3) {
      forward_one(x.data(), x.dim(0), x.dim(1), y.data());
    } else {
      const std::size_t step_in = x.dim(1) * x.dim(2) * cin_;
      const std::size_t step_out = x.dim(1) * x.dim(2) * k_;
      for (std::size_t t = 0; t < x.dim(0); ++t)
        forward_one(x.data() + t * step_in, x.dim(1), x.dim(2),
                    y.data() + t * step_out);
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape(), 0.0);
    if (x_.rank() == 3) {
      backward_one(x_.data(), x_.dim(0), x_.dim(1), dy.data(), dx.data());
    } else {
      const std::size_t step_in = x_.dim(1) * x_.dim(2) * cin_;
      const std::size_t step_out = x_.dim(1) * x_.dim(2) * k_;
      for (std::size_t t = 0; t < x_.dim(0); ++t)
        backward_one(x_.data() + t * step_in, x_.dim(1), x_.dim(2),
                     dy.data() + t * step_out, dx.data() + t * step_in);
    }
    return dx;
  }

  std::vector<Tensor*> params() override { return {&w_, &b_}; }
  std::vector<Tensor*> grads() override { return {&dw_, &db_}; }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(kh_));
    write_u32(os, static_cast<std::uint32_t>(kw_));
    write_u32(os, static_cast<std::uint32_t>(cin_));
    write_u32(os, static_cast<std::uint32_t>(k_));
    write_tensor(os, w_);
    write_tensor(os, b_);
  }

  static std::unique_ptr<Conv2dLayer> load(std::istream& is) {
    const std::uint32_t kh = read_u32(is);
    const std::uint32_t kw = read_u32(is);
    const std::uint32_t cin = read_u32(is);
    const std::uint32_t k = read_u32(is);
    auto layer = std::make_unique<Conv2dLayer>(kh, kw, cin, k);
    layer->w_ = read_tensor(is);
    layer->b_ = read_tensor(is);
    return layer;
  }

  void init(std::mt19937_64& rng) {
    fill_uniform(w_, glorot_limit(kh_ * kw_ * cin_, kh_ * kw_ * k_), rng);
  }

 private:
  // Zero-padded patch matrix: (H*W) rows x (kh*kw*cin) columns.
  void im2col(const double* x, std::size_t H, std::size_t W, RowMat& P) const {
    const std::size_t ph = kh_ / 2, pw = kw_ / 2;
    P.setZero(static_cast<Eigen::Index>(H * W),
              static_cast<Eigen::Index>(kh_ * kw_ * cin_));
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t row = i * W + j;
        for (std::size_t dh = 0; dh < kh_; ++dh) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dh) -
                                    static_cast<std::ptrdiff_t>(ph);
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t dw = 0; dw < kw_; ++dw) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dw) -
                                      static_cast<std::ptrdiff_t>(pw);
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            const double* src = x + (si * W + sj) * cin_;
            double* dst = P.data() + row * P.cols() + (dh * kw_ + dw) * cin_;
            std::copy(src, src + cin_, dst);
          }
        }
      }
  }

  void forward_one(const double* x, std::size_t H, std::size_t W, double* y) const {
    RowMat P;
    im2col(x, H, W, P);
    CMapRM K(w_.data(), kh_ * kw_ * cin_, k_);
    CMapVec b(b_.data(), k_);
    MapRM Y(y, H * W, k_);
    Y.noalias() = P * K;
    Y.rowwise() += b.transpose();
  }

  void backward_one(const double* x, std::size_t H, std::size_t W,
                    const double* dy, double* dx) {
    RowMat P;
    im2col(x, H, W, P);
    CMapRM dY(dy, H * W, k_);
    MapRM dK(dw_.data(), kh_ * kw_ * cin_, k_);
    MapVec db(db_.data(), k_);
    dK.noalias() += P.transpose() * dY;
    db += dY.colwise().sum().transpose();

    RowMat dP = dY * CMapRM(w_.data(), kh_ * kw_ * cin_, k_).transpose();
    const std::size_t ph = kh_ / 2, pw = kw_ / 2;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t row = i * W + j;
        for (std::size_t dh = 0; dh < kh_; ++dh) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dh) -
                                    static_cast<std::ptrdiff_t>(ph);
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t dw = 0; dw < kw_; ++dw) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dw) -
                                      static_cast<std::ptrdiff_t>(pw);
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            const double* src = dP.data() + row * dP.cols() + (dh * kw_ + dw) * cin_;
            double* dst = dx + (si * W + sj) * cin_;
            for (std::size_t c = 0; c < cin_; ++c) dst[c] += src[c];
          }
        }
      }
  }

  std::size_t kh_, kw_, cin_, k_;
  Tensor w_, b_, dw_, db_, x_;
};

// --- 2D max pooling -------------------------------------------------------------

class MaxPool2dLayer final : public Layer {
 public:
  MaxPool2dLayer(std::size_t ph, std::size_t pw) : ph_(ph), pw_(pw) {
    if (ph == 0 || pw == 0) throw ConfigError("pool extents must be positive");
  }

  std::string kind() const override { return "maxpool2d"; }
  std::string describe() const override { return strf("maxpool2d %zux%zu", ph_, pw_); }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() == 3) {
      if (in[0] < ph_ || in[1] < pw_)
        bad_shape(describe(), in, strf("extents >= %zux%zu", ph_, pw_));
      return {in[0] / ph_, in[1] / pw_, in[2]};
    }
    if (in.size() == 4) {
      if (in[1] < ph_ || in[2] < pw_)
        bad_shape(describe(), in, strf("extents >= %zux%zu", ph_, pw_));
      return {in[0], in[1] / ph_, in[2] / pw_, in[3]};
    }
    bad_shape(describe(), in, "(H, W, C) or (T, H, W, C)");
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    in_shape_ = x.shape();
    Tensor y(out_shape, 0.0);
    argmax_.assign(y.size(), 0);
    if (x.rank() == 3) {
      pool_one(x.data(), x.dim(0), x.dim(1), x.dim(2), y.data(), argmax_.data(), 0);
    } else {
      const std::size_t step_in = x.dim(1) * x.dim(2) * x.dim(3);
      const std::size_t step_out = (x.dim(1) / ph_) * (x.dim(2) / pw_) * x.dim(3);
      for (std::size_t t = 0; t < x.dim(0); ++t)
        pool_one(x.data() + t * step_in, x.dim(1), x.dim(2), x.dim(3),
                 y.data() + t * step_out, argmax_.data() + t * step_out,
                 t * step_in);
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(in_shape_, 0.0);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(ph_));
    write_u32(os, static_cast<std::uint32_t>(pw_));
  }

  static std::unique_ptr<MaxPool2dLayer> load(std::istream& is) {
    const std::uint32_t ph = read_u32(is);
    const std::uint32_t pw = read_u32(is);
    return std::make_unique<MaxPool2dLayer>(ph, pw);
  }

 private:
  void pool_one(const double* x, std::size_t H, std::size_t W, std::size_t C,
                double* y, std::size_t* arg, std::size_t base) const {
    const std::size_t OH = H / ph_, OW = W / pw_;
    for (std::size_t oi = 0; oi < OH; ++oi)
      for (std::size_t oj = 0; oj < OW; ++oj)
        for (std::size_t c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t di = 0; di < ph_; ++di)
            for (std::size_t dj = 0; dj < pw_; ++dj) {
              const std::size_t idx = ((oi * ph_ + di) * W + (oj * pw_ + dj)) * C + c;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          const std::size_t out_idx = (oi * OW + oj) * C + c;
          y[out_idx] = best;
          arg[out_idx] = base + best_idx;
        }
  }

  std::size_t ph_, pw_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// --- 1D convolution -------------------------------------------------------------

class Conv1dLayer final : public Layer {
 public:
  Conv1dLayer(std::size_t kt, std::size_t cin, std::size_t k)
      : kt_(kt), cin_(cin), k_(k), w_({kt, cin, k}, 0.0), b_({k}, 0.0),
        dw_({kt, cin, k}, 0.0), db_({k}, 0.0) {
    if (kt % 2 == 0)
      throw ConfigError("same-padded convolution needs an odd kernel extent");
  }

  std::string kind() const override { return "conv1d"; }
  std::string describe() const override {
    return strf("conv1d %zu cin %zu k %zu", kt_, cin_, k_);
  }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() == 2 && in[1] == cin_) return {in[0], k_};
    bad_shape(describe(), in, strf("(T, %zu)", cin_));
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    x_ = x;
    const std::size_t T = x.dim(0);
    RowMat P;
    im2col(x.data(), T, P);
    Tensor y(out_shape, 0.0);
    CMapRM K(w_.data(), kt_ * cin_, k_);
    CMapVec b(b_.data(), k_);
    MapRM Y(y.data(), T, k_);
    Y.noalias() = P * K;
    Y.rowwise() += b.transpose();
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::size_t T = x_.dim(0);
    RowMat P;
    im2col(x_.data(), T, P);
    CMapRM dY(dy.data(), T, k_);
    MapRM dK(dw_.data(), kt_ * cin_, k_);
    MapVec db(db_.data(), k_);
    dK.noalias() += P.transpose() * dY;
    db += dY.colwise().sum().transpose();

    RowMat dP = dY * CMapRM(w_.data(), kt_ * cin_, k_).transpose();
    Tensor dx(x_.shape(), 0.0);
    const std::size_t pt = kt_ / 2;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t dt = 0; dt < kt_; ++dt) {
        const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + dt) -
                                  static_cast<std::ptrdiff_t>(pt);
        if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
        const double* src = dP.data() + t * dP.cols() + dt * cin_;
        double* dst = dx.data() + st * cin_;
        for (std::size_t c = 0; c < cin_; ++c) dst[c] += src[c];
      }
    return dx;
  }

  std::vector<Tensor*> params() override { return {&w_, &b_}; }
  std::vector<Tensor*> grads() override { return {&dw_, &db_}; }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(kt_));
    write_u32(os, static_cast<std::uint32_t>(cin_));
    write_u32(os, static_cast<std::uint32_t>(k_));
    write_tensor(os, w_);
    write_tensor(os, b_);
  }

  static std::unique_ptr<Conv1dLayer> load(std::istream& is) {
    const std::uint32_t kt = read_u32(is);
    const std::uint32_t cin = read_u32(is);
    const std::uint32_t k = read_u32(is);
    auto layer = std::make_unique<Conv1dLayer>(kt, cin, k);
    layer->w_ = read_tensor(is);
    layer->b_ = read_tensor(is);
    return layer;
  }

  void init(std::mt19937_64& rng) {
    fill_uniform(w_, glorot_limit(kt_ * cin_, kt_ * k_), rng);
  }

 private:
  void im2col(const double* x, std::size_t T, RowMat& P) const {
    const std::size_t pt = kt_ / 2;
    P.setZero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(kt_ * cin_));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t dt = 0; dt < kt_; ++dt) {
        const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + dt) -
                                  static_cast<std::ptrdiff_t>(pt);
        if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
        std::copy(x + st * cin_, x + (st + 1) * cin_,
                  P.data() + t * P.cols() + dt * cin_);
      }
  }

  std::size_t kt_, cin_, k_;
  Tensor w_, b_, dw_, db_, x_;
};

// --- 1D max pooling --------------------------------------------------------------

class MaxPool1dLayer final : public Layer {
 public:
  explicit MaxPool1dLayer(std::size_t p) : p_(p) {
    if (p == 0) throw ConfigError("pool extent must be positive");
  }

  std::string kind() const override { return "maxpool1d"; }
  std::string describe() const override { return strf("maxpool1d %zu", p_); }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() != 2) bad_shape(describe(), in, "(T, C)");
    if (in[0] < p_) bad_shape(describe(), in, strf("T >= %zu", p_));
    return {in[0] / p_, in[1]};
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    in_shape_ = x.shape();
    const std::size_t C = x.dim(1);
    Tensor y(out_shape, 0.0);
    argmax_.assign(y.size(), 0);
    for (std::size_t ot = 0; ot < out_shape[0]; ++ot)
      for (std::size_t c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dt = 0; dt < p_; ++dt) {
          const std::size_t idx = (ot * p_ + dt) * C + c;
          if (x[idx] > best) {
            best = x[idx];
            best_idx = idx;
          }
        }
        y.at2(ot, c) = best;
        argmax_[ot * C + c] = best_idx;
      }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(in_shape_, 0.0);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(p_));
  }

  static std::unique_ptr<MaxPool1dLayer> load(std::istream& is) {
    return std::make_unique<MaxPool1dLayer>(read_u32(is));
  }

 private:
  std::size_t p_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// --- LSTM -------------------------------------------------------------------------

// One direction's cell parameters plus the per-step activations cached by the
// most recent forward pass.
struct LstmCore {
  std::size_t in = 0, hidden = 0;
  Tensor wx, wh, b, dwx, dwh, db;

  std::vector<std::vector<double>> xs, hs, cs, gi, gf, gg, go, tc;

  LstmCore(std::size_t in_dim, std::size_t hidden_dim)
      : in(in_dim), hidden(hidden_dim), wx({in_dim, 4 * hidden_dim}, 0.0),
        wh({hidden_dim, 4 * hidden_dim}, 0.0), b({4 * hidden_dim}, 0.0),
        dwx({in_dim, 4 * hidden_dim}, 0.0), dwh({hidden_dim, 4 * hidden_dim}, 0.0),
        db({4 * hidden_dim}, 0.0) {}

  void init(std::mt19937_64& rng) {
    fill_uniform(wx, glorot_limit(in, 4 * hidden), rng);
    fill_uniform(wh, 0.05, rng);
    for (std::size_t h = 0; h < hidden; ++h) b[hidden + h] = 1.0;  // forget gate
  }

  // x rows in time order; fills hs with T hidden vectors.
  void forward(const double* x, std::size_t T) {
    const std::size_t H = hidden;
    xs.assign(T, std::vector<double>(in));
    hs.assign(T, std::vector<double>(H, 0.0));
    cs.assign(T, std::vector<double>(H, 0.0));
    gi = gf = gg = go = tc = cs;
    CMapRM Wx(wx.data(), in, 4 * H);
    CMapRM Wh(wh.data(), H, 4 * H);
    CMapVec bv(b.data(), 4 * H);
    Eigen::VectorXd z(4 * H);
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(x + t * in, x + (t + 1) * in, xs[t].begin());
      CMapVec xv(x + t * in, in);
      z.noalias() = Wx.transpose() * xv;
      z.noalias() += Wh.transpose() * h_prev;
      z += bv;
      for (std::size_t h = 0; h < H; ++h) {
        const double i = sigmoid(z(h));
        const double f = sigmoid(z(H + h));
        const double g = std::tanh(z(2 * H + h));
        const double o = sigmoid(z(3 * H + h));
        const double c = f * c_prev(h) + i * g;
        const double tch = std::tanh(c);
        gi[t][h] = i;
        gf[t][h] = f;
        gg[t][h] = g;
        go[t][h] = o;
        cs[t][h] = c;
        tc[t][h] = tch;
        hs[t][h] = o * tch;
      }
      for (std::size_t h = 0; h < H; ++h) {
        h_prev(h) = hs[t][h];
        c_prev(h) = cs[t][h];
      }
    }
  }

  // dh_ext[t]: external gradient on h_t. Returns gradient w.r.t. the input
  // sequence (T x in, row-major) and accumulates parameter gradients.
  std::vector<double> backward(const std::vector<std::vector<double>>& dh_ext) {
    const std::size_t T = xs.size();
    const std::size_t H = hidden;
    CMapRM Wx(wx.data(), in, 4 * H);
    CMapRM Wh(wh.data(), H, 4 * H);
    MapRM dWx(dwx.data(), in, 4 * H);
    MapRM dWh(dwh.data(), H, 4 * H);
    MapVec dbv(db.data(), 4 * H);

    std::vector<double> dx(T * in, 0.0);
    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dz(4 * H);
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t h = 0; h < H; ++h) {
        const double dh = dh_ext[t][h] + dh_next(h);
        const double o = go[t][h], i = gi[t][h], f = gf[t][h], g = gg[t][h];
        const double tch = tc[t][h];
        const double dc = dh * o * (1.0 - tch * tch) + dc_next(h);
        const double c_prev = t > 0 ? cs[t - 1][h] : 0.0;
        dz(h) = dc * g * i * (1.0 - i);
        dz(H + h) = dc * c_prev * f * (1.0 - f);
        dz(2 * H + h) = dc * i * (1.0 - g * g);
        dz(3 * H + h) = dh * tch * o * (1.0 - o);
        dc_next(h) = dc * f;
      }
      CMapVec xv(xs[t].data(), in);
      dWx.noalias() += xv * dz.transpose();
      if (t > 0) {
        CMapVec hv(hs[t - 1].data(), H);
        dWh.noalias() += hv * dz.transpose();
      }
      dbv += dz;
      MapVec dxv(dx.data() + t * in, in);
      dxv.noalias() += Wx * dz;
      dh_next.noalias() = Wh * dz;
    }
    return dx;
  }

  void save_params(std::ostream& os) const {
    write_tensor(os, wx);
    write_tensor(os, wh);
    write_tensor(os, b);
  }
  void load_params(std::istream& is) {
    wx = read_tensor(is);
    wh = read_tensor(is);
    b = read_tensor(is);
  }
};

class LstmLayer final : public Layer {
 public:
  LstmLayer(std::size_t in, std::size_t hidden, bool return_sequences)
      : core_(in, hidden), return_sequences_(return_sequences) {}

  std::string kind() const override { return "lstm"; }
  std::string describe() const override {
    return strf("lstm h %zu%s", core_.hidden,
                return_sequences_ ? " (sequence)" : "");
  }
  bool recurrent() const override { return true; }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() != 2 || in[1] != core_.in)
      bad_shape(describe(), in, strf("(T, %zu)", core_.in));
    if (return_sequences_) return {in[0], core_.hidden};
    return {core_.hidden};
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    const std::size_t T = x.dim(0);
    core_.forward(x.data(), T);
    Tensor y(out_shape, 0.0);
    if (return_sequences_) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < core_.hidden; ++h) y.at2(t, h) = core_.hs[t][h];
    } else {
      for (std::size_t h = 0; h < core_.hidden; ++h) y[h] = core_.hs[T - 1][h];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::size_t T = core_.xs.size();
    std::vector<std::vector<double>> dh(T, std::vector<double>(core_.hidden, 0.0));
    if (return_sequences_) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < core_.hidden; ++h) dh[t][h] = dy.at2(t, h);
    } else {
      for (std::size_t h = 0; h < core_.hidden; ++h) dh[T - 1][h] = dy[h];
    }
    const std::vector<double> dx = core_.backward(dh);
    return Tensor::from({T, core_.in}, dx);
  }

  std::vector<Tensor*> params() override { return {&core_.wx, &core_.wh, &core_.b}; }
  std::vector<Tensor*> grads() override {
    return {&core_.dwx, &core_.dwh, &core_.db};
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(core_.in));
    write_u32(os, static_cast<std::uint32_t>(core_.hidden));
    write_u8(os, return_sequences_ ? 1 : 0);
    core_.save_params(os);
  }

  static std::unique_ptr<LstmLayer> load(std::istream& is) {
    const std::uint32_t in = read_u32(is);
    const std::uint32_t hidden = read_u32(is);
    const bool rs = read_u8(is) != 0;
    auto layer = std::make_unique<LstmLayer>(in, hidden, rs);
    layer->core_.load_params(is);
    return layer;
  }

  void init(std::mt19937_64& rng) { core_.init(rng); }

 private:
  LstmCore core_;
  bool return_sequences_;
};

class BiLstmLayer final : public Layer {
 public:
  BiLstmLayer(std::size_t in, std::size_t hidden, bool return_sequences)
      : fwd_(in, hidden), bwd_(in, hidden), return_sequences_(return_sequences) {}

  std::string kind() const override { return "bilstm"; }
  std::string describe() const override {
    return strf("bilstm h %zu%s", fwd_.hidden,
                return_sequences_ ? " (sequence)" : "");
  }
  bool recurrent() const override { return true; }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() != 2 || in[1] != fwd_.in)
      bad_shape(describe(), in, strf("(T, %zu)", fwd_.in));
    if (return_sequences_) return {in[0], 2 * fwd_.hidden};
    return {2 * fwd_.hidden};
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    const auto out_shape = output_shape(x.shape());
    const std::size_t T = x.dim(0);
    const std::size_t H = fwd_.hidden;
    fwd_.forward(x.data(), T);
    std::vector<double> rev(x.size());
    for (std::size_t t = 0; t < T; ++t)
      std::copy(x.data() + t * fwd_.in, x.data() + (t + 1) * fwd_.in,
                rev.begin() + (T - 1 - t) * fwd_.in);
    bwd_.forward(rev.data(), T);

    Tensor y(out_shape, 0.0);
    if (return_sequences_) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h) {
          y.at2(t, h) = fwd_.hs[t][h];
          y.at2(t, H + h) = bwd_.hs[T - 1 - t][h];  // backward state at time t
        }
    } else {
      for (std::size_t h = 0; h < H; ++h) {
        y[h] = fwd_.hs[T - 1][h];
        y[H + h] = bwd_.hs[T - 1][h];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::size_t T = fwd_.xs.size();
    const std::size_t H = fwd_.hidden;
    std::vector<std::vector<double>> dh_f(T, std::vector<double>(H, 0.0));
    std::vector<std::vector<double>> dh_b(T, std::vector<double>(H, 0.0));
    if (return_sequences_) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h) {
          dh_f[t][h] = dy.at2(t, h);
          dh_b[T - 1 - t][h] = dy.at2(t, H + h);
        }
    } else {
      for (std::size_t h = 0; h < H; ++h) {
        dh_f[T - 1][h] = dy[h];
        dh_b[T - 1][h] = dy[H + h];
      }
    }
    const std::vector<double> dx_f = fwd_.backward(dh_f);
    const std::vector<double> dx_b_rev = bwd_.backward(dh_b);
    Tensor dx = Tensor::from({T, fwd_.in}, dx_f);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < fwd_.in; ++d)
        dx.at2(t, d) += dx_b_rev[(T - 1 - t) * fwd_.in + d];
    return dx;
  }

  std::vector<Tensor*> params() override {
    return {&fwd_.wx, &fwd_.wh, &fwd_.b, &bwd_.wx, &bwd_.wh, &bwd_.b};
  }
  std::vector<Tensor*> grads() override {
    return {&fwd_.dwx, &fwd_.dwh, &fwd_.db, &bwd_.dwx, &bwd_.dwh, &bwd_.db};
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_u32(os, static_cast<std::uint32_t>(fwd_.in));
    write_u32(os, static_cast<std::uint32_t>(fwd_.hidden));
    write_u8(os, return_sequences_ ? 1 : 0);
    fwd_.save_params(os);
    bwd_.save_params(os);
  }

  static std::unique_ptr<BiLstmLayer> load(std::istream& is) {
    const std::uint32_t in = read_u32(is);
    const std::uint32_t hidden = read_u32(is);
    const bool rs = read_u8(is) != 0;
    auto layer = std::make_unique<BiLstmLayer>(in, hidden, rs);
    layer->fwd_.load_params(is);
    layer->bwd_.load_params(is);
    return layer;
  }

  void init(std::mt19937_64& rng) {
    fwd_.init(rng);
    bwd_.init(rng);
  }

 private:
  LstmCore fwd_, bwd_;
  bool return_sequences_;
};

// --- elementwise layers -------------------------------------------------------

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(ActivationKind k) : akind_(k) {}

  std::string kind() const override { return "activation"; }
  std::string describe() const override {
    return strf("activation %s", to_string(akind_));
  }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    return in;
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    x_ = x;
    y_ = Tensor(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) y_[i] = activate(akind_, x[i]);
    return y_;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape(), 0.0);
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = dy[i] * activate_derivative(akind_, x_[i], y_[i]);
    return dx;
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_lp_string(os, to_string(akind_));
  }

  static std::unique_ptr<ActivationLayer> load(std::istream& is) {
    return std::make_unique<ActivationLayer>(
        activation_from_string(read_lp_string(is)));
  }

 private:
  ActivationKind akind_;
  Tensor x_, y_;
};

class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw ConfigError(strf("dropout rate %g must lie in [0, 1)", rate));
  }

  std::string kind() const override { return "dropout"; }
  std::string describe() const override { return strf("dropout %g", rate_); }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    return in;
  }

  Tensor forward(const Tensor& x, bool training, std::mt19937_64& rng) override {
    if (!training || rate_ == 0.0) {
      mask_.assign(x.size(), 1.0);
      return x;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.size());
    Tensor y(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = u(rng) < rate_ ? 0.0 : scale;
      y[i] = x[i] * mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(dy.shape(), 0.0);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_f64(os, rate_);
  }

  static std::unique_ptr<DropoutLayer> load(std::istream& is) {
    return std::make_unique<DropoutLayer>(read_f64(is));
  }

 private:
  double rate_;
  std::vector<double> mask_;
};

class GaussianNoiseLayer final : public Layer {
 public:
  explicit GaussianNoiseLayer(double stddev) : stddev_(stddev) {
    if (stddev < 0.0) throw ConfigError("noise level must be non-negative");
  }

  std::string kind() const override { return "gaussian_noise"; }
  std::string describe() const override { return strf("gaussian_noise %g", stddev_); }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    return in;
  }

  Tensor forward(const Tensor& x, bool training, std::mt19937_64& rng) override {
    if (!training || stddev_ == 0.0) return x;
    std::normal_distribution<double> n(0.0, stddev_);
    Tensor y(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + n(rng);
    return y;
  }

  Tensor backward(const Tensor& dy) override { return dy; }

  void save(std::ostream& os) const override {
    write_lp_string(os, kind());
    write_f64(os, stddev_);
  }

  static std::unique_ptr<GaussianNoiseLayer> load(std::istream& is) {
    return std::make_unique<GaussianNoiseLayer>(read_f64(is));
  }

 private:
  double stddev_;
};

class FlattenLayer final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }

  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const override {
    if (in.size() == 4) return {in[0], in[1] * in[2] * in[3]};
    std::size_t n = 1;
    for (std::size_t d : in) n *= d;
    return {n};
  }

  Tensor forward(const Tensor& x, bool, std::mt19937_64&) override {
    in_shape_ = x.shape();
    return x.reshaped(output_shape(x.shape()));
  }

  Tensor backward(const Tensor& dy) override { return dy.reshaped(in_shape_); }

  void save(std::ostream& os) const override { write_lp_string(os, kind()); }

 private:
  std::vector<std::size_t> in_shape_;
};

}  // namespace

// --- factories -----------------------------------------------------------------

std::unique_ptr<Layer> make_dense(std::size_t in, std::size_t units,
                                  std::mt19937_64& rng) {
  auto layer = std::make_unique<DenseLayer>(in, units);
  layer->init(rng);
  return layer;
}

std::unique_ptr<Layer> make_conv2d(std::size_t kh, std::size_t kw, std::size_t cin,
                                   std::size_t k, std::mt19937_64& rng) {
  auto layer = std::make_unique<Conv2dLayer>(kh, kw, cin, k);
  layer->init(rng);
  return layer;
}

std::unique_ptr<Layer> make_maxpool2d(std::size_t ph, std::size_t pw) {
  return std::make_unique<MaxPool2dLayer>(ph, pw);
}

std::unique_ptr<Layer> make_conv1d(std::size_t kt, std::size_t cin, std::size_t k,
                                   std::mt19937_64& rng) {
  auto layer = std::make_unique<Conv1dLayer>(kt, cin, k);
  layer->init(rng);
  return layer;
}

std::unique_ptr<Layer> make_maxpool1d(std::size_t p) {
  return std::make_unique<MaxPool1dLayer>(p);
}

std::unique_ptr<Layer> make_lstm(std::size_t in, std::size_t hidden,
                                 bool return_sequences, std::mt19937_64& rng) {
  auto layer = std::make_unique<LstmLayer>(in, hidden, return_sequences);
  layer->init(rng);
  return layer;
}

std::unique_ptr<Layer> make_bilstm(std::size_t in, std::size_t hidden,
                                   bool return_sequences, std::mt19937_64& rng) {
  auto layer = std::make_unique<BiLstmLayer>(in, hidden, return_sequences);
  layer->init(rng);
  return layer;
}

std::unique_ptr<Layer> make_activation(ActivationKind kind) {
  return std::make_unique<ActivationLayer>(kind);
}

std::unique_ptr<Layer> make_dropout(double rate) {
  return std::make_unique<DropoutLayer>(rate);
}

std::unique_ptr<Layer> make_gaussian_noise(double stddev) {
  return std::make_unique<GaussianNoiseLayer>(stddev);
}

std::unique_ptr<Layer> make_flatten() { return std::make_unique<FlattenLayer>(); }

std::unique_ptr<Layer> load_layer(std::istream& is) {
  const std::string kind = read_lp_string(is);
  if (kind == "dense") return DenseLayer::load(is);
  if (kind == "conv2d") return Conv2dLayer::load(is);
  if (kind == "maxpool2d") return MaxPool2dLayer::load(is);
  if (kind == "conv1d") return Conv1dLayer::load(is);
  if (kind == "maxpool1d") return MaxPool1dLayer::load(is);
  if (kind == "lstm") return LstmLayer::load(is);
  if (kind == "bilstm") return BiLstmLayer::load(is);
  if (kind == "activation") return ActivationLayer::load(is);
  if (kind == "dropout") return DropoutLayer::load(is);
  if (kind == "gaussian_noise") return GaussianNoiseLayer::load(is);
  if (kind == "flatten") return std::make_unique<FlattenLayer>();
  throw DataError("unknown layer kind '" + kind + "' in network file");
}

}  // namespace ndet
