#include <algorithm>

#include "osal/errors.hpp"
#include "osal/vnn.hpp"

namespace osal {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

struct ForwardVisitor {
  const Vector& params;
  const Matrix& x;

  Matrix operator()(const DenseLayer& l) const {
    ConstMap w(params.data() + l.offset, l.out, l.in);
    Eigen::Map<const Vector> b(params.data() + l.offset + static_cast<std::size_t>(l.out) * l.in,
                               l.out);
    Matrix y = w * x;
    y.colwise() += b;
    return y;
  }

  Matrix operator()(const ReluLayer&) const { return x.cwiseMax(0.0); }

  Matrix operator()(const Conv2dLayer& l) const {
    const int k = l.kernel, oh = l.out_height(), ow = l.out_width();
    const int positions = oh * ow, patch = l.patch_size();
    ConstMap wt(params.data() + l.offset, patch, l.out_channels);
    Eigen::Map<const Eigen::RowVectorXd> b(
        params.data() + l.offset + static_cast<std::size_t>(patch) * l.out_channels,
        l.out_channels);
    Matrix y(l.out_dim(), x.cols());
    Matrix patches(positions, patch);
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      const double* in = x.col(s).data();
      for (int c = 0; c < l.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int col = (c * k + ky) * k + kx;
            for (int oy = 0; oy < oh; ++oy) {
              const double* row = in + (c * l.in_height + oy + ky) * l.in_width + kx;
              for (int ox = 0; ox < ow; ++ox) patches(oy * ow + ox, col) = row[ox];
            }
          }
        }
      }
      MutMap out(y.col(s).data(), positions, l.out_channels);
      out.noalias() = patches * wt;
      out.rowwise() += b;
    }
    return y;
  }

  Matrix operator()(const MaxPool2Layer& l) const {
    const int oh = l.out_height(), ow = l.out_width();
    Matrix y(l.out_dim(), x.cols());
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      const double* in = x.col(s).data();
      double* out = y.col(s).data();
      for (int c = 0; c < l.channels; ++c) {
        const double* plane = in + c * l.in_height * l.in_width;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double* p = plane + 2 * oy * l.in_width + 2 * ox;
            out[(c * oh + oy) * ow + ox] =
                std::max(std::max(p[0], p[1]), std::max(p[l.in_width], p[l.in_width + 1]));
          }
        }
      }
    }
    return y;
  }
};

struct BackwardVisitor {
  const Vector& params;
  Vector& grads;
  const Matrix& x;  // layer input
  const Matrix& g;  // d(loss)/d(layer output)

  Matrix operator()(const DenseLayer& l) const {
    ConstMap w(params.data() + l.offset, l.out, l.in);
    MutMap gw(grads.data() + l.offset, l.out, l.in);
    Eigen::Map<Vector> gb(grads.data() + l.offset + static_cast<std::size_t>(l.out) * l.in, l.out);
    gw.noalias() += g * x.transpose();
    gb += g.rowwise().sum();
    return w.transpose() * g;
  }

  Matrix operator()(const ReluLayer&) const {
    return (x.array() > 0.0).select(g, 0.0);
  }

  Matrix operator()(const Conv2dLayer& l) const {
    const int k = l.kernel, oh = l.out_height(), ow = l.out_width();
    const int positions = oh * ow, patch = l.patch_size();
    ConstMap wt(params.data() + l.offset, patch, l.out_channels);
    MutMap gwt(grads.data() + l.offset, patch, l.out_channels);
    Eigen::Map<Eigen::RowVectorXd> gb(
        grads.data() + l.offset + static_cast<std::size_t>(patch) * l.out_channels,
        l.out_channels);
    Matrix dx = Matrix::Zero(l.in_dim(), x.cols());
    Matrix patches(positions, patch);
    Matrix dpatches(positions, patch);
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      const double* in = x.col(s).data();
      for (int c = 0; c < l.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int col = (c * k + ky) * k + kx;
            for (int oy = 0; oy < oh; ++oy) {
              const double* row = in + (c * l.in_height + oy + ky) * l.in_width + kx;
              for (int ox = 0; ox < ow; ++ox) patches(oy * ow + ox, col) = row[ox];
            }
          }
        }
      }
      Eigen::Map<const Matrix> gout(g.col(s).data(), positions, l.out_channels);
      gwt.noalias() += patches.transpose() * gout;
      gb += gout.colwise().sum();
      dpatches.noalias() = gout * wt.transpose();
      double* din = dx.col(s).data();
      for (int c = 0; c < l.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int col = (c * k + ky) * k + kx;
            for (int oy = 0; oy < oh; ++oy) {
              double* row = din + (c * l.in_height + oy + ky) * l.in_width + kx;
              for (int ox = 0; ox < ow; ++ox) row[ox] += dpatches(oy * ow + ox, col);
            }
          }
        }
      }
    }
    return dx;
  }

  Matrix operator()(const MaxPool2Layer& l) const {
    const int oh = l.out_height(), ow = l.out_width();
    Matrix dx = Matrix::Zero(l.in_dim(), x.cols());
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      const double* in = x.col(s).data();
      const double* go = g.col(s).data();
      double* din = dx.col(s).data();
      for (int c = 0; c < l.channels; ++c) {
        const int base = c * l.in_height * l.in_width;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const int top = base + 2 * oy * l.in_width + 2 * ox;
            int best = top;
            for (int idx : {top + 1, top + l.in_width, top + l.in_width + 1}) {
              if (in[idx] > in[best]) best = idx;
            }
            din[best] += go[(c * oh + oy) * ow + ox];
          }
        }
      }
    }
    return dx;
  }
};

}  // namespace

int layer_in_dim(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> int {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return l.in;
        else if constexpr (std::is_same_v<T, ReluLayer>) return l.dim;
        else return l.in_dim();
      },
      layer);
}

int layer_out_dim(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> int {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return l.out;
        else if constexpr (std::is_same_v<T, ReluLayer>) return l.dim;
        else return l.out_dim();
      },
      layer);
}

int Network::in_dim() const { return layers.empty() ? 0 : layer_in_dim(layers.front()); }
int Network::out_dim() const { return layers.empty() ? 0 : layer_out_dim(layers.back()); }

Matrix Network::forward(const Vector& params, const Matrix& x,
                        std::vector<Matrix>* inputs) const {
  if (inputs != nullptr) inputs->clear();
  Matrix current = x;
  for (const auto& layer : layers) {
    if (current.rows() != layer_in_dim(layer)) {
      throw ShapeError("layer expects " + std::to_string(layer_in_dim(layer)) + " inputs, got " +
                       std::to_string(current.rows()));
    }
    Matrix next = std::visit(ForwardVisitor{params, current}, layer);
    if (inputs != nullptr) inputs->push_back(std::move(current));
    current = std::move(next);
  }
  return current;
}

Matrix Network::backward(const Vector& params, Vector& grads, const std::vector<Matrix>& inputs,
                         Matrix grad_out) const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    grad_out = std::visit(BackwardVisitor{params, grads, inputs[i], grad_out}, layers[i]);
  }
  return grad_out;
}

}  // namespace osal
