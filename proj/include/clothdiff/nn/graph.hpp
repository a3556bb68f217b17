#pragma once

// Closed-catalog layer graph with forward evaluation and reverse-mode gradients.
//
// Every value carries a leading batch dimension N; node shapes are declared per
// sample. The only exception is the mse node, whose value is the scalar batch
// loss with shape [1].

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/core/rng.hpp"
#include "clothdiff/nn/tensor.hpp"

namespace clothdiff::nn {

enum class Op {
  kInput,
  kLinear,
  kConv2d,
  kConvTranspose2d,
  kGroupNorm,
  kMish,
  kFiLM,
  kAdd,
  kMeanPool,
  kConcat,
  kMse,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kLinear: return "linear";
    case Op::kConv2d: return "conv2d";
    case Op::kConvTranspose2d: return "conv_transpose2d";
    case Op::kGroupNorm: return "group_norm";
    case Op::kMish: return "mish";
    case Op::kFiLM: return "film";
    case Op::kAdd: return "add";
    case Op::kMeanPool: return "mean_pool";
    case Op::kConcat: return "concat";
    case Op::kMse: return "mse";
  }
  return "?";
}

enum class ParamInit { kUniformFanIn, kOnes, kZeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::kUniformFanIn;
  int fan_in = 1;
};

struct Node {
  Op op = Op::kInput;
  std::string name;
  std::vector<int> inputs;
  std::vector<int> params;  // slots into Graph::params()
  Shape shape;              // per-sample output shape; empty for the scalar mse loss
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
  int groups = 0;
};

inline constexpr double kGroupNormEps = 1e-5;

inline int group_count(int channels) {
  int g = std::min(8, channels);
  while (channels % g != 0) --g;
  return g;
}

class Graph {
 public:
  int input(const std::string& name, Shape sample_shape) {
    Node n;
    n.op = Op::kInput;
    n.name = name;
    n.shape = std::move(sample_shape);
    for (int d : n.shape) require(d > 0, ErrorKind::kShape, "input '" + name + "' has non-positive extent");
    inputs_.push_back(static_cast<int>(nodes_.size()));
    return push(std::move(n));
  }

  int linear(const std::string& name, int x, int out_features) {
    const Node& in = at(x, name);
    expect_rank(name, Op::kLinear, in, 1);
    const int fin = in.shape[0];
    Node n = make(Op::kLinear, name, {x}, {out_features});
    n.params = {add_param(name + ".weight", {out_features, fin}, ParamInit::kUniformFanIn, fin),
                add_param(name + ".bias", {out_features}, ParamInit::kUniformFanIn, fin)};
    return push(std::move(n));
  }

  int conv2d(const std::string& name, int x, int out_channels, int kernel, int stride = 1, int padding = 0) {
    const Node& in = at(x, name);
    expect_rank(name, Op::kConv2d, in, 3);
    require(kernel > 0 && stride > 0 && padding >= 0, ErrorKind::kShape, "node '" + name + "': bad conv geometry");
    const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
    const int ho = (h + 2 * padding - kernel) / stride + 1;
    const int wo = (w + 2 * padding - kernel) / stride + 1;
    require(h + 2 * padding >= kernel && w + 2 * padding >= kernel, ErrorKind::kShape,
            "node '" + name + "' (conv2d): kernel larger than padded input " + shape_string(in.shape));
    Node n = make(Op::kConv2d, name, {x}, {out_channels, ho, wo});
    n.kernel = kernel;
    n.stride = stride;
    n.padding = padding;
    const int fin = c * kernel * kernel;
    n.params = {add_param(name + ".weight", {out_channels, c, kernel, kernel}, ParamInit::kUniformFanIn, fin),
                add_param(name + ".bias", {out_channels}, ParamInit::kUniformFanIn, fin)};
    return push(std::move(n));
  }

  /// Output extent is (in - 1) * stride - 2 * padding + kernel + output_padding.
  int conv_transpose2d(const std::string& name, int x, int out_channels, int kernel, int stride, int padding,
                       int output_padding = 0) {
    const Node& in = at(x, name);
    expect_rank(name, Op::kConvTranspose2d, in, 3);
    require(output_padding >= 0 && output_padding < std::max(stride, 1) + 1, ErrorKind::kShape,
            "node '" + name + "': output_padding out of range");
    const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
    const int ho = (h - 1) * stride - 2 * padding + kernel + output_padding;
    const int wo = (w - 1) * stride - 2 * padding + kernel + output_padding;
    require(ho > 0 && wo > 0, ErrorKind::kShape, "node '" + name + "' (conv_transpose2d): empty output");
    Node n = make(Op::kConvTranspose2d, name, {x}, {out_channels, ho, wo});
    n.kernel = kernel;
    n.stride = stride;
    n.padding = padding;
    n.output_padding = output_padding;
    const int fin = out_channels * kernel * kernel;
    n.params = {add_param(name + ".weight", {c, out_channels, kernel, kernel}, ParamInit::kUniformFanIn, fin),
                add_param(name + ".bias", {out_channels}, ParamInit::kUniformFanIn, fin)};
    return push(std::move(n));
  }

  int group_norm(const std::string& name, int x) {
    const Node& in = at(x, name);
    require(in.shape.size() == 1 || in.shape.size() == 3, ErrorKind::kShape,
            "node '" + name + "' (group_norm): expects [C] or [C,H,W], got " + shape_string(in.shape));
    const int c = in.shape[0];
    Node n = make(Op::kGroupNorm, name, {x}, in.shape);
    n.groups = group_count(c);
    n.params = {add_param(name + ".weight", {c}, ParamInit::kOnes, 1),
                add_param(name + ".bias", {c}, ParamInit::kZeros, 1)};
    return push(std::move(n));
  }

  int mish(const std::string& name, int x) {
    const Node& in = at(x, name);
    return push(make(Op::kMish, name, {x}, in.shape));
  }

  /// out = x * (1 + gamma) + beta with [gamma, beta] = cond, one pair per channel.
  int film(const std::string& name, int x, int cond) {
    const Node& in = at(x, name);
    const Node& cn = at(cond, name);
    require(!in.shape.empty() && cn.shape.size() == 1 && cn.shape[0] == 2 * in.shape[0], ErrorKind::kShape,
            "node '" + name + "' (film): condition " + shape_string(cn.shape) + " does not match features " +
                shape_string(in.shape));
    return push(make(Op::kFiLM, name, {x, cond}, in.shape));
  }

  int add(const std::string& name, int a, int b) {
    const Node& na = at(a, name);
    const Node& nb = at(b, name);
    require(na.shape == nb.shape, ErrorKind::kShape,
            "node '" + name + "' (add): " + shape_string(na.shape) + " vs " + shape_string(nb.shape));
    return push(make(Op::kAdd, name, {a, b}, na.shape));
  }

  /// Global spatial mean: [C,H,W] -> [C].
  int mean_pool(const std::string& name, int x) {
    const Node& in = at(x, name);
    expect_rank(name, Op::kMeanPool, in, 3);
    return push(make(Op::kMeanPool, name, {x}, {in.shape[0]}));
  }

  /// Concatenation along the channel (first per-sample) axis.
  int concat(const std::string& name, int a, int b) {
    const Node& na = at(a, name);
    const Node& nb = at(b, name);
    bool ok = na.shape.size() == nb.shape.size() && !na.shape.empty();
    for (std::size_t i = 1; ok && i < na.shape.size(); ++i) ok = na.shape[i] == nb.shape[i];
    require(ok, ErrorKind::kShape,
            "node '" + name + "' (concat): " + shape_string(na.shape) + " vs " + shape_string(nb.shape));
    Shape s = na.shape;
    s[0] += nb.shape[0];
    return push(make(Op::kConcat, name, {a, b}, s));
  }

  /// Mean squared error over every element of the batch; scalar output.
  int mse(const std::string& name, int pred, int target) {
    const Node& na = at(pred, name);
    const Node& nb = at(target, name);
    require(na.shape == nb.shape, ErrorKind::kShape,
            "node '" + name + "' (mse): " + shape_string(na.shape) + " vs " + shape_string(nb.shape));
    return push(make(Op::kMse, name, {pred, target}, {}));
  }

  void mark_output(int node) {
    at(node, "output");
    outputs_.push_back(node);
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const std::vector<ParamSpec>& params() const { return params_; }
  const std::vector<int>& inputs() const { return inputs_; }
  std::vector<int> outputs() const {
    if (outputs_.empty() && !nodes_.empty()) return {static_cast<int>(nodes_.size()) - 1};
    return outputs_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += shape_size(p.shape);
    return n;
  }

 private:
  const Node& at(int i, const std::string& user) const {
    require(i >= 0 && i < static_cast<int>(nodes_.size()), ErrorKind::kShape,
            "node '" + user + "' refers to unknown node " + std::to_string(i));
    return nodes_[static_cast<std::size_t>(i)];
  }

  static void expect_rank(const std::string& name, Op op, const Node& in, std::size_t rank) {
    require(in.shape.size() == rank, ErrorKind::kShape,
            "node '" + name + "' (" + op_name(op) + "): expects rank-" + std::to_string(rank) +
                " sample input, got " + shape_string(in.shape));
  }

  static Node make(Op op, const std::string& name, std::vector<int> inputs, Shape shape) {
    Node n;
    n.op = op;
    n.name = name;
    n.inputs = std::move(inputs);
    n.shape = std::move(shape);
    return n;
  }

  int add_param(std::string name, Shape shape, ParamInit init, int fan_in) {
    params_.push_back({std::move(name), std::move(shape), init, fan_in});
    return static_cast<int>(params_.size()) - 1;
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<ParamSpec> params_;
  std::vector<int> inputs_;
  std::vector<int> outputs_;
};

template <typename T>
using ParamSet = std::vector<Tensor<T>>;

/// Fan-in uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norm scales 1, shifts 0.
template <typename T = float>
ParamSet<T> init_params(const Graph& g, std::uint64_t seed) {
  ParamSet<T> out;
  out.reserve(g.params().size());
  for (std::size_t i = 0; i < g.params().size(); ++i) {
    const ParamSpec& spec = g.params()[i];
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case ParamInit::kOnes: t.fill(T(1)); break;
      case ParamInit::kZeros: break;
      case ParamInit::kUniformFanIn: {
        Rng rng(derive_seed(seed, i));
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
struct Forward {
  int batch = 0;
  std::vector<Tensor<T>> values;
  std::vector<std::vector<T>> stats;  // group_norm: mean and rstd per (n, group)
};

template <typename T>
struct Gradients {
  ParamSet<T> params;
  std::vector<Tensor<T>> inputs;  // one per graph input, in declaration order
};

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Shape batched(int n, const Shape& s) {
  Shape out;
  out.reserve(s.size() + 1);
  out.push_back(n);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// cols[(c,ki,kj), (n,dh,dw)] = src[n, c, dh*stride - pad + ki, dw*stride - pad + kj]
template <typename T>
void im2col(const T* src, int N, int C, int Hs, int Ws, int K, int stride, int pad, int Hd, int Wd, T* cols) {
  const std::size_t ncols = static_cast<std::size_t>(N) * Hd * Wd;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        T* row = cols + (static_cast<std::size_t>((c * K + ki) * K + kj)) * ncols;
        for (int n = 0; n < N; ++n) {
          const T* plane = src + (static_cast<std::size_t>(n) * C + c) * Hs * Ws;
          T* out = row + static_cast<std::size_t>(n) * Hd * Wd;
          for (int dh = 0; dh < Hd; ++dh) {
            const int sh = dh * stride - pad + ki;
            if (sh < 0 || sh >= Hs) {
              std::fill(out + dh * Wd, out + (dh + 1) * Wd, T(0));
              continue;
            }
            for (int dw = 0; dw < Wd; ++dw) {
              const int sw = dw * stride - pad + kj;
              out[dh * Wd + dw] = (sw >= 0 && sw < Ws) ? plane[sh * Ws + sw] : T(0);
            }
          }
        }
      }
}

// Adjoint of im2col: dst[n, c, sh, sw] += cols[(c,ki,kj), (n,dh,dw)].
template <typename T>
void col2im(const T* cols, int N, int C, int Hs, int Ws, int K, int stride, int pad, int Hd, int Wd, T* dst) {
  const std::size_t ncols = static_cast<std::size_t>(N) * Hd * Wd;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        const T* row = cols + (static_cast<std::size_t>((c * K + ki) * K + kj)) * ncols;
        for (int n = 0; n < N; ++n) {
          T* plane = dst + (static_cast<std::size_t>(n) * C + c) * Hs * Ws;
          const T* in = row + static_cast<std::size_t>(n) * Hd * Wd;
          for (int dh = 0; dh < Hd; ++dh) {
            const int sh = dh * stride - pad + ki;
            if (sh < 0 || sh >= Hs) continue;
            for (int dw = 0; dw < Wd; ++dw) {
              const int sw = dw * stride - pad + kj;
              if (sw >= 0 && sw < Ws) plane[sh * Ws + sw] += in[dh * Wd + dw];
            }
          }
        }
      }
}

// [N, C, S] <-> [C, N*S]
template <typename T>
void to_channel_major(const T* src, int N, int C, int S, T* dst) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(src + (static_cast<std::size_t>(n) * C + c) * S, S,
                  dst + static_cast<std::size_t>(c) * N * S + static_cast<std::size_t>(n) * S);
}

template <typename T>
void from_channel_major(const T* src, int N, int C, int S, T* dst) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(src + static_cast<std::size_t>(c) * N * S + static_cast<std::size_t>(n) * S, S,
                  dst + (static_cast<std::size_t>(n) * C + c) * S);
}

// tanh(softplus(x)) = n / (n + 2) with n = e^x (e^x + 2), which needs a single exp.
template <typename T>
T mish(T x) {
  if (x > T(20)) return x;
  const T e = std::exp(x);
  const T n = e * (e + T(2));
  return x * n / (n + T(2));
}

template <typename T>
T mish_grad(T x) {
  if (x > T(20)) return T(1);
  const T e = std::exp(x);
  const T n = e * (e + T(2));
  const T d = n + T(2);
  const T t = n / d;
  const T sig = e / (T(1) + e);
  return t + x * sig * (T(4) * (n + T(1)) / (d * d));
}

inline int spatial(const Shape& s) {
  int p = 1;
  for (std::size_t i = 1; i < s.size(); ++i) p *= s[i];
  return p;
}

}  // namespace detail

/// Runs every node and keeps all intermediate values (needed by backward()).
template <typename T>
Forward<T> forward(const Graph& g, const ParamSet<T>& params, std::span<const Tensor<T>> inputs) {
  using detail::MatR;
  using ConstMap = Eigen::Map<const MatR<T>>;
  using MutMap = Eigen::Map<MatR<T>>;

  require(inputs.size() == g.inputs().size(), ErrorKind::kShape,
          "graph expects " + std::to_string(g.inputs().size()) + " inputs, got " + std::to_string(inputs.size()));
  require(params.size() == g.params().size(), ErrorKind::kShape,
          "graph expects " + std::to_string(g.params().size()) + " parameter tensors, got " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i].shape() == g.params()[i].shape, ErrorKind::kShape,
            "parameter '" + g.params()[i].name + "' has shape " + shape_string(params[i].shape()) + ", expected " +
                shape_string(g.params()[i].shape));

  Forward<T> fw;
  fw.values.resize(g.nodes().size());
  fw.stats.resize(g.nodes().size());
  fw.batch = inputs.empty() ? 0 : inputs[0].shape().empty() ? 0 : inputs[0].dim(0);
  const int N = fw.batch;
  require(N > 0, ErrorKind::kShape, "graph inputs must carry a positive batch dimension");

  std::size_t next_input = 0;
  for (std::size_t id = 0; id < g.nodes().size(); ++id) {
    const Node& nd = g.nodes()[id];
    auto in = [&](int k) -> const Tensor<T>& { return fw.values[static_cast<std::size_t>(nd.inputs[k])]; };
    auto prm = [&](int k) -> const Tensor<T>& { return params[static_cast<std::size_t>(nd.params[k])]; };
    Tensor<T>& out = fw.values[id];

    switch (nd.op) {
      case Op::kInput: {
        const Tensor<T>& x = inputs[next_input++];
        require(x.shape() == detail::batched(N, nd.shape), ErrorKind::kShape,
                "input node '" + nd.name + "' expects " + shape_string(detail::batched(N, nd.shape)) + ", got " +
                    shape_string(x.shape()));
        out = x;
        break;
      }
      case Op::kLinear: {
        const Tensor<T>& x = in(0);
        const int fin = x.dim(1), fout = nd.shape[0];
        out = Tensor<T>(detail::batched(N, nd.shape));
        MutMap y(out.data(), N, fout);
        y.noalias() = ConstMap(x.data(), N, fin) * ConstMap(prm(0).data(), fout, fin).transpose();
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < fout; ++o) y(n, o) += prm(1)[static_cast<std::size_t>(o)];
        break;
      }
      case Op::kConv2d: {
        const Tensor<T>& x = in(0);
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Co = nd.shape[0], Ho = nd.shape[1], Wo = nd.shape[2], K = nd.kernel;
        const int ckk = C * K * K, cols_n = N * Ho * Wo;
        Buffer<T> cols(static_cast<std::size_t>(ckk) * cols_n);
        detail::im2col(x.data(), N, C, H, W, K, nd.stride, nd.padding, Ho, Wo, cols.data());
        Buffer<T> om(static_cast<std::size_t>(Co) * cols_n);
        MutMap(om.data(), Co, cols_n).noalias() =
            ConstMap(prm(0).data(), Co, ckk) * ConstMap(cols.data(), ckk, cols_n);
        out = Tensor<T>(detail::batched(N, nd.shape));
        detail::from_channel_major(om.data(), N, Co, Ho * Wo, out.data());
        const auto& b = prm(1);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < Co; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * Co + c) * Ho * Wo;
            for (int s = 0; s < Ho * Wo; ++s) p[s] += b[static_cast<std::size_t>(c)];
          }
        break;
      }
      case Op::kConvTranspose2d: {
        const Tensor<T>& x = in(0);
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Co = nd.shape[0], Ho = nd.shape[1], Wo = nd.shape[2], K = nd.kernel;
        const int cokk = Co * K * K, xn = N * H * W;
        Buffer<T> xm(static_cast<std::size_t>(C) * xn);
        detail::to_channel_major(x.data(), N, C, H * W, xm.data());
        Buffer<T> cols(static_cast<std::size_t>(cokk) * xn);
        MutMap(cols.data(), cokk, xn).noalias() =
            ConstMap(prm(0).data(), C, cokk).transpose() * ConstMap(xm.data(), C, xn);
        out = Tensor<T>(detail::batched(N, nd.shape));
        detail::col2im(cols.data(), N, Co, Ho, Wo, K, nd.stride, nd.padding, H, W, out.data());
        const auto& b = prm(1);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < Co; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * Co + c) * Ho * Wo;
            for (int s = 0; s < Ho * Wo; ++s) p[s] += b[static_cast<std::size_t>(c)];
          }
        break;
      }
      case Op::kGroupNorm: {
        const Tensor<T>& x = in(0);
        const int C = nd.shape[0], S = detail::spatial(nd.shape), G = nd.groups, cg = C / G;
        out = Tensor<T>(x.shape());
        auto& st = fw.stats[id];
        st.assign(static_cast<std::size_t>(N) * G * 2, T(0));
        const auto& gamma = prm(0);
        const auto& beta = prm(1);
        for (int n = 0; n < N; ++n)
          for (int gi = 0; gi < G; ++gi) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + gi * cg) * S;
            const std::size_t cnt = static_cast<std::size_t>(cg) * S;
            double mean = 0.0;
            for (std::size_t k = 0; k < cnt; ++k) mean += static_cast<double>(x[off + k]);
            mean /= static_cast<double>(cnt);
            double var = 0.0;
            for (std::size_t k = 0; k < cnt; ++k) {
              const double d = static_cast<double>(x[off + k]) - mean;
              var += d * d;
            }
            var /= static_cast<double>(cnt);
            const double rstd = 1.0 / std::sqrt(var + kGroupNormEps);
            st[(static_cast<std::size_t>(n) * G + gi) * 2] = static_cast<T>(mean);
            st[(static_cast<std::size_t>(n) * G + gi) * 2 + 1] = static_cast<T>(rstd);
            for (int c = 0; c < cg; ++c) {
              const int ch = gi * cg + c;
              for (int s = 0; s < S; ++s) {
                const std::size_t k = off + static_cast<std::size_t>(c) * S + s;
                const T xh = static_cast<T>((static_cast<double>(x[k]) - mean) * rstd);
                out[k] = xh * gamma[static_cast<std::size_t>(ch)] + beta[static_cast<std::size_t>(ch)];
              }
            }
          }
        break;
      }
      case Op::kMish: {
        const Tensor<T>& x = in(0);
        out = Tensor<T>(x.shape());
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = detail::mish(x[k]);
        break;
      }
      case Op::kFiLM: {
        const Tensor<T>& x = in(0);
        const Tensor<T>& cond = in(1);
        const int C = nd.shape[0], S = detail::spatial(nd.shape);
        out = Tensor<T>(x.shape());
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const T scale = T(1) + cond[static_cast<std::size_t>(n) * 2 * C + c];
            const T shift = cond[static_cast<std::size_t>(n) * 2 * C + C + c];
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
            for (int s = 0; s < S; ++s) out[off + s] = x[off + s] * scale + shift;
          }
        break;
      }
      case Op::kAdd: {
        out = in(0);
        out += in(1);
        break;
      }
      case Op::kMeanPool: {
        const Tensor<T>& x = in(0);
        const int C = x.dim(1), S = x.dim(2) * x.dim(3);
        out = Tensor<T>(detail::batched(N, nd.shape));
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * S;
            double acc = 0.0;
            for (int s = 0; s < S; ++s) acc += static_cast<double>(p[s]);
            out[static_cast<std::size_t>(n) * C + c] = static_cast<T>(acc / S);
          }
        break;
      }
      case Op::kConcat: {
        const Tensor<T>& a = in(0);
        const Tensor<T>& b = in(1);
        out = Tensor<T>(detail::batched(N, nd.shape));
        const std::size_t sa = a.size() / N, sb = b.size() / N;
        for (int n = 0; n < N; ++n) {
          std::copy_n(a.data() + n * sa, sa, out.data() + n * (sa + sb));
          std::copy_n(b.data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
        }
        break;
      }
      case Op::kMse: {
        const Tensor<T>& a = in(0);
        const Tensor<T>& b = in(1);
        double acc = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
          const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
          acc += d * d;
        }
        out = Tensor<T>(Shape{1}, static_cast<T>(acc / static_cast<double>(a.size())));
        break;
      }
    }
  }
  return fw;
}

template <typename T>
std::vector<Tensor<T>> evaluate(const Graph& g, const ParamSet<T>& params, std::span<const Tensor<T>> inputs) {
  Forward<T> fw = forward(g, params, inputs);
  std::vector<Tensor<T>> outs;
  for (int o : g.outputs()) outs.push_back(std::move(fw.values[static_cast<std::size_t>(o)]));
  return outs;
}

/// Vector-Jacobian product: propagates `seeds` (node id, dL/dvalue) backwards.
template <typename T>
Gradients<T> backward(const Graph& g, const ParamSet<T>& params, const Forward<T>& fw,
                      std::span<const std::pair<int, Tensor<T>>> seeds) {
  using detail::MatR;
  using ConstMap = Eigen::Map<const MatR<T>>;
  using MutMap = Eigen::Map<MatR<T>>;

  const int N = fw.batch;
  std::vector<Tensor<T>> grad(g.nodes().size());
  for (const auto& [id, seed] : seeds) {
    const auto& v = fw.values.at(static_cast<std::size_t>(id));
    require(seed.shape() == v.shape(), ErrorKind::kShape,
            "seed for node '" + g.node(id).name + "' has shape " + shape_string(seed.shape()) + ", expected " +
                shape_string(v.shape()));
    auto& dst = grad[static_cast<std::size_t>(id)];
    if (dst.empty())
      dst = seed;
    else
      dst += seed;
  }

  Gradients<T> out;
  out.params.reserve(params.size());
  for (const auto& p : params) out.params.emplace_back(p.shape());

  auto accumulate = [&](int node, const std::function<void(Tensor<T>&)>& fn) {
    auto& dst = grad[static_cast<std::size_t>(node)];
    if (dst.empty()) dst = Tensor<T>(fw.values[static_cast<std::size_t>(node)].shape());
    fn(dst);
  };

  for (std::size_t rid = g.nodes().size(); rid-- > 0;) {
    const Node& nd = g.nodes()[rid];
    const Tensor<T>& dy = grad[rid];
    if (dy.empty() || nd.op == Op::kInput) continue;
    auto val = [&](int k) -> const Tensor<T>& { return fw.values[static_cast<std::size_t>(nd.inputs[k])]; };
    auto prm = [&](int k) -> const Tensor<T>& { return params[static_cast<std::size_t>(nd.params[k])]; };
    auto dprm = [&](int k) -> Tensor<T>& { return out.params[static_cast<std::size_t>(nd.params[k])]; };

    switch (nd.op) {
      case Op::kInput: break;
      case Op::kLinear: {
        const Tensor<T>& x = val(0);
        const int fin = x.dim(1), fout = nd.shape[0];
        ConstMap dym(dy.data(), N, fout);
        MutMap(dprm(0).data(), fout, fin).noalias() += dym.transpose() * ConstMap(x.data(), N, fin);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < fout; ++o) dprm(1)[static_cast<std::size_t>(o)] += dym(n, o);
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          MutMap(dx.data(), N, fin).noalias() += dym * ConstMap(prm(0).data(), fout, fin);
        });
        break;
      }
      case Op::kConv2d: {
        const Tensor<T>& x = val(0);
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Co = nd.shape[0], Ho = nd.shape[1], Wo = nd.shape[2], K = nd.kernel;
        const int ckk = C * K * K, cols_n = N * Ho * Wo;
        Buffer<T> dym(static_cast<std::size_t>(Co) * cols_n);
        detail::to_channel_major(dy.data(), N, Co, Ho * Wo, dym.data());
        ConstMap dyM(dym.data(), Co, cols_n);
        Buffer<T> cols(static_cast<std::size_t>(ckk) * cols_n);
        detail::im2col(x.data(), N, C, H, W, K, nd.stride, nd.padding, Ho, Wo, cols.data());
        MutMap(dprm(0).data(), Co, ckk).noalias() += dyM * ConstMap(cols.data(), ckk, cols_n).transpose();
        for (int c = 0; c < Co; ++c) dprm(1)[static_cast<std::size_t>(c)] += dyM.row(c).sum();
        MutMap dcols(cols.data(), ckk, cols_n);
        dcols.noalias() = ConstMap(prm(0).data(), Co, ckk).transpose() * dyM;
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          detail::col2im(cols.data(), N, C, H, W, K, nd.stride, nd.padding, Ho, Wo, dx.data());
        });
        break;
      }
      case Op::kConvTranspose2d: {
        const Tensor<T>& x = val(0);
        const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Co = nd.shape[0], Ho = nd.shape[1], Wo = nd.shape[2], K = nd.kernel;
        const int cokk = Co * K * K, xn = N * H * W;
        Buffer<T> dcols(static_cast<std::size_t>(cokk) * xn);
        detail::im2col(dy.data(), N, Co, Ho, Wo, K, nd.stride, nd.padding, H, W, dcols.data());
        ConstMap dcM(dcols.data(), cokk, xn);
        Buffer<T> xm(static_cast<std::size_t>(C) * xn);
        detail::to_channel_major(x.data(), N, C, H * W, xm.data());
        MutMap(dprm(0).data(), C, cokk).noalias() += ConstMap(xm.data(), C, xn) * dcM.transpose();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < Co; ++c) {
            const T* p = dy.data() + (static_cast<std::size_t>(n) * Co + c) * Ho * Wo;
            T acc = 0;
            for (int s = 0; s < Ho * Wo; ++s) acc += p[s];
            dprm(1)[static_cast<std::size_t>(c)] += acc;
          }
        Buffer<T> dxm(static_cast<std::size_t>(C) * xn);
        MutMap(dxm.data(), C, xn).noalias() = ConstMap(prm(0).data(), C, cokk) * dcM;
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          Buffer<T> tmp(dx.size());
          detail::from_channel_major(dxm.data(), N, C, H * W, tmp.data());
          for (std::size_t k = 0; k < tmp.size(); ++k) dx[k] += tmp[k];
        });
        break;
      }
      case Op::kGroupNorm: {
        const Tensor<T>& x = val(0);
        const int C = nd.shape[0], S = detail::spatial(nd.shape), G = nd.groups, cg = C / G;
        const auto& st = fw.stats[rid];
        const auto& gamma = prm(0);
        Tensor<T>& dgamma = dprm(0);
        Tensor<T>& dbeta = dprm(1);
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          Buffer<T> xh(static_cast<std::size_t>(cg) * S), dxh(static_cast<std::size_t>(cg) * S);
          for (int n = 0; n < N; ++n)
            for (int gi = 0; gi < G; ++gi) {
              const T mean = st[(static_cast<std::size_t>(n) * G + gi) * 2];
              const T rstd = st[(static_cast<std::size_t>(n) * G + gi) * 2 + 1];
              const std::size_t off = (static_cast<std::size_t>(n) * C + gi * cg) * S;
              double sum_d = 0.0, sum_dx = 0.0;
              for (int c = 0; c < cg; ++c) {
                const int ch = gi * cg + c;
                for (int s = 0; s < S; ++s) {
                  const std::size_t k = static_cast<std::size_t>(c) * S + s;
                  xh[k] = (x[off + k] - mean) * rstd;
                  dxh[k] = dy[off + k] * gamma[static_cast<std::size_t>(ch)];
                  dgamma[static_cast<std::size_t>(ch)] += dy[off + k] * xh[k];
                  dbeta[static_cast<std::size_t>(ch)] += dy[off + k];
                  sum_d += static_cast<double>(dxh[k]);
                  sum_dx += static_cast<double>(dxh[k]) * static_cast<double>(xh[k]);
                }
              }
              const double cnt = static_cast<double>(cg) * S;
              const T md = static_cast<T>(sum_d / cnt), mdx = static_cast<T>(sum_dx / cnt);
              for (std::size_t k = 0; k < xh.size(); ++k) dx[off + k] += rstd * (dxh[k] - md - xh[k] * mdx);
            }
        });
        break;
      }
      case Op::kMish: {
        const Tensor<T>& x = val(0);
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          for (std::size_t k = 0; k < x.size(); ++k) dx[k] += dy[k] * detail::mish_grad(x[k]);
        });
        break;
      }
      case Op::kFiLM: {
        const Tensor<T>& x = val(0);
        const Tensor<T>& cond = val(1);
        const int C = nd.shape[0], S = detail::spatial(nd.shape);
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const T scale = T(1) + cond[static_cast<std::size_t>(n) * 2 * C + c];
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
              for (int s = 0; s < S; ++s) dx[off + s] += dy[off + s] * scale;
            }
        });
        accumulate(nd.inputs[1], [&](Tensor<T>& dc) {
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
              T ds = 0, db = 0;
              for (int s = 0; s < S; ++s) {
                ds += dy[off + s] * x[off + s];
                db += dy[off + s];
              }
              dc[static_cast<std::size_t>(n) * 2 * C + c] += ds;
              dc[static_cast<std::size_t>(n) * 2 * C + C + c] += db;
            }
        });
        break;
      }
      case Op::kAdd: {
        accumulate(nd.inputs[0], [&](Tensor<T>& d) { d += dy; });
        accumulate(nd.inputs[1], [&](Tensor<T>& d) { d += dy; });
        break;
      }
      case Op::kMeanPool: {
        const Tensor<T>& x = val(0);
        const int C = x.dim(1), S = x.dim(2) * x.dim(3);
        accumulate(nd.inputs[0], [&](Tensor<T>& dx) {
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const T v = dy[static_cast<std::size_t>(n) * C + c] / static_cast<T>(S);
              T* p = dx.data() + (static_cast<std::size_t>(n) * C + c) * S;
              for (int s = 0; s < S; ++s) p[s] += v;
            }
        });
        break;
      }
      case Op::kConcat: {
        const std::size_t sa = val(0).size() / N, sb = val(1).size() / N;
        accumulate(nd.inputs[0], [&](Tensor<T>& da) {
          for (int n = 0; n < N; ++n)
            for (std::size_t k = 0; k < sa; ++k) da[n * sa + k] += dy[n * (sa + sb) + k];
        });
        accumulate(nd.inputs[1], [&](Tensor<T>& db) {
          for (int n = 0; n < N; ++n)
            for (std::size_t k = 0; k < sb; ++k) db[n * sb + k] += dy[n * (sa + sb) + sa + k];
        });
        break;
      }
      case Op::kMse: {
        const Tensor<T>& a = val(0);
        const Tensor<T>& b = val(1);
        const T scale = dy[0] * T(2) / static_cast<T>(a.size());
        accumulate(nd.inputs[0], [&](Tensor<T>& da) {
          for (std::size_t k = 0; k < a.size(); ++k) da[k] += scale * (a[k] - b[k]);
        });
        accumulate(nd.inputs[1], [&](Tensor<T>& db) {
          for (std::size_t k = 0; k < a.size(); ++k) db[k] -= scale * (a[k] - b[k]);
        });
        break;
      }
    }
  }

  for (int id : g.inputs()) {
    auto& gi = grad[static_cast<std::size_t>(id)];
    out.inputs.push_back(gi.empty() ? Tensor<T>(fw.values[static_cast<std::size_t>(id)].shape()) : std::move(gi));
  }
  return out;
}

/// Gradients of scale * value(loss_node) with respect to every parameter and input.
template <typename T>
Gradients<T> gradients(const Graph& g, const ParamSet<T>& params, std::span<const Tensor<T>> inputs, int loss_node,
                       T scale = T(1)) {
  const Node& ln = g.node(loss_node);
  Forward<T> fw = forward(g, params, inputs);
  require(fw.values[static_cast<std::size_t>(loss_node)].size() == 1, ErrorKind::kShape,
          "loss node '" + ln.name + "' is not scalar-valued (" +
              shape_string(fw.values[static_cast<std::size_t>(loss_node)].shape()) + ")");
  const std::pair<int, Tensor<T>> seed{loss_node,
                                       Tensor<T>(fw.values[static_cast<std::size_t>(loss_node)].shape(), scale)};
  return backward(g, params, fw, std::span<const std::pair<int, Tensor<T>>>(&seed, 1));
}

}  // namespace clothdiff::nn
