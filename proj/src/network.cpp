// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/network.hpp"

#include <cmath>
#include <string>

#include "shiftadd/rng.hpp"

namespace shiftadd {

template <typename Scalar>
std::vector<std::span<Scalar>> trainable_views(ModelParams<Scalar> &params) {
  std::vector<std::span<Scalar>> v;
  auto add = [&](auto &m) {
    v.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  };
  for (auto &l : params.layers) {
    if (l.conv) {
      add(l.conv->kernel);
      add(l.conv->bias);
    }
    if (l.bn) {
      add(l.bn->gamma);
      add(l.bn->beta);
    }
    if (l.dense) {
      add(l.dense->weights);
      add(l.dense->bias);
    }
  }
  return v;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelSpec &spec, std::uint64_t seed) {
  ModelParams<Scalar> p = ModelParams<Scalar>::zeros(spec);
  auto rng = named_stream(seed, "init");
  for (auto &l : p.layers) {
    RowMatrixX<Scalar> *w = l.conv ? &l.conv->kernel : (l.dense ? &l.dense->weights : nullptr);
    if (!w) continue;
    const double stddev = std::sqrt(2.0 / static_cast<double>(w->cols()));
    for (Eigen::Index i = 0; i < w->size(); ++i)
      w->data()[i] = static_cast<Scalar>(stddev * standard_normal(rng));
  }
  return p;
}

namespace {

template <typename Scalar>
void im2col(const MatrixX<Scalar> &in, Shape is, int batch, const LayerSpec &l,
            Shape os, MatrixX<Scalar> &cols) {
  const int pq = l.kernel_h * l.kernel_w;
  const Eigen::Index in_plane = static_cast<Eigen::Index>(is.plane());
  const Eigen::Index out_plane = static_cast<Eigen::Index>(os.plane());
  cols.setZero(static_cast<Eigen::Index>(is.channels) * pq, out_plane * batch);
  for (int b = 0; b < batch; ++b)
    for (int x = 0; x < os.rows; ++x)
      for (int y = 0; y < os.cols; ++y) {
        const Eigen::Index col = b * out_plane + x * os.cols + y;
        for (int p = 0; p < l.kernel_h; ++p) {
          const int r = x * l.stride + p - l.padding;
          if (r < 0 || r >= is.rows) continue;
          for (int q = 0; q < l.kernel_w; ++q) {
            const int c = y * l.stride + q - l.padding;
            if (c < 0 || c >= is.cols) continue;
            const Eigen::Index src = b * in_plane + r * is.cols + c;
            for (int n = 0; n < is.channels; ++n)
              cols(static_cast<Eigen::Index>(n) * pq + p * l.kernel_w + q, col) = in(n, src);
          }
        }
      }
}

template <typename Scalar>
MatrixX<Scalar> col2im(const MatrixX<Scalar> &cols, Shape is, int batch,
                       const LayerSpec &l, Shape os) {
  const int pq = l.kernel_h * l.kernel_w;
  const Eigen::Index in_plane = static_cast<Eigen::Index>(is.plane());
  const Eigen::Index out_plane = static_cast<Eigen::Index>(os.plane());
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(is.channels, in_plane * batch);
  for (int b = 0; b < batch; ++b)
    for (int x = 0; x < os.rows; ++x)
      for (int y = 0; y < os.cols; ++y) {
        const Eigen::Index col = b * out_plane + x * os.cols + y;
        for (int p = 0; p < l.kernel_h; ++p) {
          const int r = x * l.stride + p - l.padding;
          if (r < 0 || r >= is.rows) continue;
          for (int q = 0; q < l.kernel_w; ++q) {
            const int c = y * l.stride + q - l.padding;
            if (c < 0 || c >= is.cols) continue;
            const Eigen::Index dst = b * in_plane + r * is.cols + c;
            for (int n = 0; n < is.channels; ++n)
              out(n, dst) += cols(static_cast<Eigen::Index>(n) * pq + p * l.kernel_w + q, col);
          }
        }
      }
  return out;
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(ModelSpec spec, ModelParams<Scalar> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  check_params(spec_, params_);
  shapes_ = spec_.shapes();
  grads_ = ModelParams<Scalar>::zeros(spec_);
  cache_.resize(spec_.layers.size());
}

template <typename Scalar>
MatrixX<Scalar> Network<Scalar>::forward(const MatrixX<Scalar> &input, int batch,
                                         bool training) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (input.rows() != spec_.input.channels ||
      input.cols() != static_cast<Eigen::Index>(spec_.input.plane()) * batch)
    throw ConfigError("batch input does not match spec input " + spec_.input.str());
  batch_ = batch;
  trained_forward_ = training;
  const MatrixX<Scalar> *cur = &input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec &l = spec_.layers[i];
    const Shape is = spec_.input_of(i);
    const Shape os = shapes_[i];
    Cache &c = cache_[i];
    const LayerParams<Scalar> &p = params_.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        im2col(*cur, is, batch, l, os, c.cols);
        c.out.noalias() = p.conv->kernel * c.cols;
        c.out.colwise() += p.conv->bias;
        if (l.batchnorm) {
          auto &bn = *params_.layers[i].bn;
          const Eigen::Index m = c.out.cols();
          if (training) {
            const VectorX<Scalar> mean = c.out.rowwise().mean();
            c.out.colwise() -= mean;
            const VectorX<Scalar> var =
                c.out.array().square().rowwise().sum().matrix() / static_cast<Scalar>(m);
            c.inv_std = (var.array() + bn.epsilon).rsqrt().matrix();
            c.xhat = c.inv_std.asDiagonal() * c.out;
            const Scalar unbias = m > 1 ? static_cast<Scalar>(m) / static_cast<Scalar>(m - 1)
                                        : Scalar(1);
            bn.mean = (Scalar(1) - bn_momentum) * bn.mean + bn_momentum * mean;
            bn.var = (Scalar(1) - bn_momentum) * bn.var + bn_momentum * unbias * var;
            c.out = bn.gamma.asDiagonal() * c.xhat;
            c.out.colwise() += bn.beta;
          } else {
            for (Eigen::Index ch = 0; ch < c.out.rows(); ++ch) {
              const Scalar scale = bn.gamma(ch) / std::sqrt(bn.var(ch) + bn.epsilon);
              c.out.row(ch) =
                  ((c.out.row(ch).array() - bn.mean(ch)) * scale + bn.beta(ch)).matrix();
            }
          }
        }
        if (l.relu) c.out = c.out.cwiseMax(Scalar(0));
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const Eigen::Index in_plane = static_cast<Eigen::Index>(is.plane());
        const Eigen::Index out_plane = static_cast<Eigen::Index>(os.plane());
        c.out.resize(is.channels, out_plane * batch);
        const bool is_max = l.kind == LayerKind::MaxPool;
        if (is_max) c.argmax.assign(static_cast<std::size_t>(c.out.size()), 0);
        const Scalar area = static_cast<Scalar>(l.kernel_h * l.kernel_w);
        for (int b = 0; b < batch; ++b)
          for (int x = 0; x < os.rows; ++x)
            for (int y = 0; y < os.cols; ++y) {
              const Eigen::Index oc = b * out_plane + x * os.cols + y;
              for (int ch = 0; ch < is.channels; ++ch) {
                Scalar acc = 0;
                Eigen::Index best = -1;
                for (int pp = 0; pp < l.kernel_h; ++pp)
                  for (int q = 0; q < l.kernel_w; ++q) {
                    const Eigen::Index src =
                        b * in_plane + (x * l.stride + pp) * is.cols + y * l.stride + q;
                    const Scalar v = (*cur)(ch, src);
                    if (is_max) {
                      if (best < 0 || v > acc) {
                        acc = v;
                        best = src;
                      }
                    } else {
                      acc += v;
                    }
                  }
                c.out(ch, oc) = is_max ? acc : acc / area;
                if (is_max) c.argmax[static_cast<std::size_t>(oc * is.channels + ch)] = best;
              }
            }
        break;
      }
      case LayerKind::Flatten: {
        const Eigen::Index plane = static_cast<Eigen::Index>(is.plane());
        c.out.resize(static_cast<Eigen::Index>(is.size()), batch);
        for (int b = 0; b < batch; ++b)
          for (int ch = 0; ch < is.channels; ++ch)
            c.out.col(b).segment(ch * plane, plane) =
                cur->row(ch).segment(b * plane, plane).transpose();
        break;
      }
      case LayerKind::Dense: {
        c.cols = *cur;
        c.out.noalias() = p.dense->weights * c.cols;
        c.out.colwise() += p.dense->bias;
        if (l.relu) c.out = c.out.cwiseMax(Scalar(0));
        break;
      }
      case LayerKind::Input:
        throw ConfigError("input pseudo-layer inside graph");
    }
    cur = &c.out;
  }
  return *cur;
}

template <typename Scalar>
void Network<Scalar>::backward(const MatrixX<Scalar> &dlogits) {
  if (!trained_forward_) throw ConfigError("backward needs a training-mode forward");
  if (dlogits.rows() != spec_.class_count || dlogits.cols() != batch_)
    throw ConfigError("logit gradient shape mismatch");
  const int batch = batch_;
  MatrixX<Scalar> grad = dlogits;
  for (std::size_t ii = spec_.layers.size(); ii-- > 0;) {
    const LayerSpec &l = spec_.layers[ii];
    const Shape is = spec_.input_of(ii);
    const Shape os = shapes_[ii];
    Cache &c = cache_[ii];
    LayerParams<Scalar> &g = grads_.layers[ii];
    const LayerParams<Scalar> &p = params_.layers[ii];
    switch (l.kind) {
      case LayerKind::Dense: {
        if (l.relu) grad = (c.out.array() > Scalar(0)).select(grad, Scalar(0));
        g.dense->weights.noalias() = grad * c.cols.transpose();
        g.dense->bias = grad.rowwise().sum();
        if (ii > 0) grad = p.dense->weights.transpose() * grad;
        break;
      }
      case LayerKind::Flatten: {
        const Eigen::Index plane = static_cast<Eigen::Index>(is.plane());
        MatrixX<Scalar> out(is.channels, plane * batch);
        for (int b = 0; b < batch; ++b)
          for (int ch = 0; ch < is.channels; ++ch)
            out.row(ch).segment(b * plane, plane) =
                grad.col(b).segment(ch * plane, plane).transpose();
        grad = std::move(out);
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const Eigen::Index in_plane = static_cast<Eigen::Index>(is.plane());
        const Eigen::Index out_plane = static_cast<Eigen::Index>(os.plane());
        MatrixX<Scalar> out = MatrixX<Scalar>::Zero(is.channels, in_plane * batch);
        const Scalar area = static_cast<Scalar>(l.kernel_h * l.kernel_w);
        for (Eigen::Index oc = 0; oc < out_plane * batch; ++oc) {
          for (int ch = 0; ch < is.channels; ++ch) {
            if (l.kind == LayerKind::MaxPool) {
              out(ch, c.argmax[static_cast<std::size_t>(oc * is.channels + ch)]) += grad(ch, oc);
            } else {
              const Eigen::Index b = oc / out_plane;
              const Eigen::Index x = (oc % out_plane) / os.cols;
              const Eigen::Index y = oc % os.cols;
              for (int pp = 0; pp < l.kernel_h; ++pp)
                for (int q = 0; q < l.kernel_w; ++q)
                  out(ch, b * in_plane + (x * l.stride + pp) * is.cols + y * l.stride + q) +=
                      grad(ch, oc) / area;
            }
          }
        }
        grad = std::move(out);
        break;
      }
      case LayerKind::Conv: {
        if (l.relu) grad = (c.out.array() > Scalar(0)).select(grad, Scalar(0));
        if (l.batchnorm) {
          const auto &bn = *p.bn;
          const Scalar m = static_cast<Scalar>(grad.cols());
          g.bn->gamma = (grad.array() * c.xhat.array()).rowwise().sum().matrix();
          g.bn->beta = grad.rowwise().sum();
          const MatrixX<Scalar> dxhat = bn.gamma.asDiagonal() * grad;
          const VectorX<Scalar> sum_d = dxhat.rowwise().sum();
          const VectorX<Scalar> sum_dx = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix();
          MatrixX<Scalar> dx = dxhat * m;
          dx.colwise() -= sum_d;
          dx -= sum_dx.asDiagonal() * c.xhat;
          grad = (c.inv_std / m).asDiagonal() * dx;
        }
        g.conv->kernel.noalias() = grad * c.cols.transpose();
        g.conv->bias = grad.rowwise().sum();
        if (ii > 0) {
          const MatrixX<Scalar> dcols = p.conv->kernel.transpose() * grad;
          grad = col2im(dcols, is, batch, l, os);
        }
        break;
      }
      case LayerKind::Input:
        break;
    }
  }
}

BatchLoss batch_kd_loss(const MatrixX<double> &logits, std::span<const int> labels,
                        const MatrixX<double> *teacher, const KDConfig &cfg,
                        std::span<const std::string> sample_ids) {
  cfg.validate();
  const Eigen::Index batch = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw ConfigError("label count does not match batch");
  if (teacher && (teacher->rows() != logits.rows() || teacher->cols() != batch))
    throw ConfigError("teacher logits shape does not match student logits");
  BatchLoss r;
  r.dlogits.resize(logits.rows(), batch);
  double total = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const VectorX<double> s = logits.col(b);
    const int label = labels[static_cast<std::size_t>(b)];
    const auto name = [&] {
      return static_cast<std::size_t>(b) < sample_ids.size()
                 ? sample_ids[static_cast<std::size_t>(b)]
                 : "#" + std::to_string(b);
    };
    if (!s.allFinite()) throw NumericError("non-finite logits for sample " + name());
    double loss;
    VectorX<double> g;
    if (teacher) {
      const VectorX<double> t = teacher->col(b);
      loss = kd_loss(s, t, label, cfg);
      g = kd_loss_gradient(s, t, label, cfg);
    } else {
      loss = cross_entropy(s, label);
      g = cross_entropy_gradient(s, label);
    }
    if (!std::isfinite(loss) || !g.allFinite())
      throw NumericError("non-finite loss for sample " + name());
    total += loss;
    r.dlogits.col(b) = g / static_cast<double>(batch);
  }
  r.loss = total / static_cast<double>(batch);
  return r;
}

Gradients backward_gradients(const ModelSpec &spec, const ModelParams<double> &params,
                             const MatrixX<double> &input, std::span<const int> labels,
                             const MatrixX<double> *teacher, const KDConfig &cfg) {
  Network<double> net(spec, params);
  const int batch = static_cast<int>(labels.size());
  const MatrixX<double> logits = net.forward(input, batch, true);
  BatchLoss bl = batch_kd_loss(logits, labels, teacher, cfg);
  net.backward(bl.dlogits);
  return {bl.loss, net.grads()};
}

template std::vector<std::span<float>> trainable_views(ModelParams<float> &);
template std::vector<std::span<double>> trainable_views(ModelParams<double> &);
template ModelParams<float> init_params(const ModelSpec &, std::uint64_t);
template ModelParams<double> init_params(const ModelSpec &, std::uint64_t);
template class Network<float>;
template class Network<double>;

}  // namespace shiftadd
