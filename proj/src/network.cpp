#include "onn/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "onn/error.hpp"

namespace onn {

namespace {

constexpr std::size_t kMaxTaps = 255;  // taps must fit a MedianRoute entry

std::size_t argmedian_small(const double* terms, std::size_t n, double* scratch) {
  std::copy(terms, terms + n, scratch);
  const std::size_t mid = (n - 1) / 2;
  std::nth_element(scratch, scratch + mid, scratch + n);
  const double v = scratch[mid];
  for (std::size_t j = 0; j < n; ++j) {
    if (terms[j] == v) return j;
  }
  return mid;
}

FeatureMap apply_resample(Resample r, const FeatureMap& m) {
  switch (r) {
    case Resample::down2: return downsample2(m);
    case Resample::up2: return upsample2(m);
    case Resample::none: break;
  }
  return m;
}

FeatureMap resample_adjoint(Resample r, const FeatureMap& delta) {
  switch (r) {
    case Resample::down2: return downsample2_adjoint(delta);
    case Resample::up2: return upsample2_adjoint(delta);
    case Resample::none: break;
  }
  return delta;
}

FeatureMap activate(ActOp op, const FeatureMap& x, const OperatorConstants& c) {
  FeatureMap y(x.height, x.width);
  for (std::size_t p = 0; p < x.size(); ++p) y.values[p] = act_eval(op, x.values[p], c);
  return y;
}

// delta (w.r.t. the activation output) times f'(x), in place.
void chain_activation(ActOp op, const FeatureMap& x, const OperatorConstants& c,
                      FeatureMap& delta) {
  for (std::size_t p = 0; p < x.size(); ++p) delta.values[p] *= act_grad(op, x.values[p], c);
}

struct Window {
  int m0, m1, n0, n1;  // output pixel range whose tap lands inside the input
};

Window valid_window(int h, int w, int dr, int dc) {
  return {std::max(0, -dr), std::min(h, h - dr), std::max(0, -dc), std::min(w, w - dc)};
}

template <typename N>
void accumulate_sum(const Kernel& k, const FeatureMap& in, const OperatorConstants& c,
                    FeatureMap& acc) {
  const int hr = k.rows / 2;
  const int hc = k.cols / 2;
  for (int r = 0; r < k.rows; ++r) {
    for (int t = 0; t < k.cols; ++t) {
      const double w = k.at(r, t);
      const int dr = r - hr;
      const int dc = t - hc;
      const Window win = valid_window(in.height, in.width, dr, dc);
      for (int m = win.m0; m < win.m1; ++m) {
        const double* src = in.row(m + dr).data() + dc;
        double* dst = acc.row(m).data();
        for (int n = win.n0; n < win.n1; ++n) dst[n] += N::eval(w, src[n], c);
      }
    }
  }
}

template <typename N>
void accumulate_median(const Kernel& k, const FeatureMap& in, const OperatorConstants& c,
                       FeatureMap& acc, MedianRoute* route) {
  const int hr = k.rows / 2;
  const int hc = k.cols / 2;
  const auto taps = static_cast<std::size_t>(k.rows * k.cols);
  std::array<double, kMaxTaps> terms{};
  std::array<double, kMaxTaps> scratch{};
  if (route) route->assign(in.size(), 0);
  for (int m = 0; m < in.height; ++m) {
    for (int n = 0; n < in.width; ++n) {
      std::size_t j = 0;
      for (int r = 0; r < k.rows; ++r) {
        const int ym = m + r - hr;
        for (int t = 0; t < k.cols; ++t, ++j) {
          const int yn = n + t - hc;
          const bool inside = ym >= 0 && ym < in.height && yn >= 0 && yn < in.width;
          terms[j] = N::eval(k.weights[j], inside ? in.at(ym, yn) : 0.0, c);
        }
      }
      const std::size_t best = argmedian_small(terms.data(), taps, scratch.data());
      acc.at(m, n) += terms[best];
      if (route) (*route)[static_cast<std::size_t>(m * in.width + n)] = static_cast<std::uint8_t>(best);
    }
  }
}

template <typename N>
void backward_sum(const Kernel& k, const FeatureMap& in, const OperatorConstants& c,
                  const FeatureMap& dx, Kernel& grad, FeatureMap* din) {
  const int hr = k.rows / 2;
  const int hc = k.cols / 2;
  for (int r = 0; r < k.rows; ++r) {
    for (int t = 0; t < k.cols; ++t) {
      const double w = k.at(r, t);
      const int dr = r - hr;
      const int dc = t - hc;
      const Window win = valid_window(in.height, in.width, dr, dc);
      double gw = 0.0;
      for (int m = win.m0; m < win.m1; ++m) {
        const double* src = in.row(m + dr).data() + dc;
        const double* d = dx.row(m).data();
        if (din) {
          double* dst = din->row(m + dr).data() + dc;
          for (int n = win.n0; n < win.n1; ++n) {
            const NodalGrad g = N::grads(w, src[n], c);
            gw += d[n] * g.dw;
            dst[n] += d[n] * g.dy;
          }
        } else {
          for (int n = win.n0; n < win.n1; ++n) gw += d[n] * N::grads(w, src[n], c).dw;
        }
      }
      grad.at(r, t) += gw;
    }
  }
}

template <typename N>
void backward_median(const Kernel& k, const FeatureMap& in, const OperatorConstants& c,
                     const FeatureMap& dx, const MedianRoute& route, Kernel& grad,
                     FeatureMap* din) {
  const int hr = k.rows / 2;
  const int hc = k.cols / 2;
  for (int m = 0; m < in.height; ++m) {
    for (int n = 0; n < in.width; ++n) {
      const int j = route[static_cast<std::size_t>(m * in.width + n)];
      const int ym = m + j / k.cols - hr;
      const int yn = n + j % k.cols - hc;
      // Padded taps have y = 0, where every nodal operator has zero dPsi/dw.
      if (ym < 0 || ym >= in.height || yn < 0 || yn >= in.width) continue;
      const double d = dx.at(m, n);
      const NodalGrad g = N::grads(k.weights[static_cast<std::size_t>(j)], in.at(ym, yn), c);
      grad.weights[static_cast<std::size_t>(j)] += d * g.dw;
      if (din) din->at(ym, yn) += d * g.dy;
    }
  }
}

void check_inputs(const OnnModel& model, const std::vector<FeatureMap>& inputs) {
  model.validate();
  if (inputs.size() != static_cast<std::size_t>(model.arch.neurons(0))) {
    fail_data("input map count does not match the input layer");
  }
  const int div = model.arch.spatial_divisor();
  for (const auto& m : inputs) {
    if (!m.same_shape(inputs.front())) fail_data("input maps differ in shape");
    if (m.height <= 0 || m.width <= 0 || m.height % div != 0 || m.width % div != 0) {
      fail_data("input dimensions must be positive multiples of " + std::to_string(div));
    }
    if (m.height < model.arch.kernel_rows / 2 + 1 || m.width < model.arch.kernel_cols / 2 + 1) {
      fail_data("input smaller than the kernel");
    }
  }
  if (static_cast<std::size_t>(model.arch.kernel_rows * model.arch.kernel_cols) > kMaxTaps) {
    fail_usage("kernel has too many taps");
  }
}

}  // namespace

void oper2d_accumulate(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                       const OperatorConstants& c, FeatureMap& acc, MedianRoute* route) {
  dispatch_nodal(set.nodal, [&](auto n) {
    using N = decltype(n);
    if (set.pool == PoolOp::sum) {
      accumulate_sum<N>(kernel, input, c, acc);
    } else {
      accumulate_median<N>(kernel, input, c, acc, route);
    }
  });
}

FeatureMap oper2d(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                  const OperatorConstants& c, MedianRoute* route) {
  if (kernel.rows / 2 >= input.height || kernel.cols / 2 >= input.width) {
    fail_data("kernel larger than the padded input");
  }
  FeatureMap out(input.height, input.width);
  oper2d_accumulate(kernel, input, set, c, out, route);
  return out;
}

void oper2d_backward(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                     const OperatorConstants& c, const FeatureMap& delta_x,
                     const MedianRoute& route, Kernel& grad, FeatureMap* delta_input) {
  dispatch_nodal(set.nodal, [&](auto n) {
    using N = decltype(n);
    if (set.pool == PoolOp::sum) {
      backward_sum<N>(kernel, input, c, delta_x, grad, delta_input);
    } else {
      backward_median<N>(kernel, input, c, delta_x, route, grad, delta_input);
    }
  });
}

ForwardTrace forward(const OnnModel& model, const std::vector<FeatureMap>& inputs) {
  check_inputs(model, inputs);
  const int L = model.arch.layer_count();
  ForwardTrace trace;
  trace.layers.resize(static_cast<std::size_t>(L));
  trace.layers[0].out = inputs;

  for (int l = 1; l < L; ++l) {
    const auto& spec = model.arch.layers[static_cast<std::size_t>(l)];
    const int N = spec.neurons;
    const int P = model.arch.neurons(l - 1);
    const auto& prev = trace.layers[static_cast<std::size_t>(l - 1)].out;
    auto& lt = trace.layers[static_cast<std::size_t>(l)];
    lt.pre.resize(static_cast<std::size_t>(N));
    lt.act.resize(static_cast<std::size_t>(N));
    lt.out.resize(static_cast<std::size_t>(N));
    lt.routes.resize(static_cast<std::size_t>(N * P));
    const int h = prev.front().height;
    const int w = prev.front().width;

#pragma omp parallel for schedule(dynamic, 1)
    for (int k = 0; k < N; ++k) {
      const OperatorSet set = set_from_index(model.set_of(l, k));
      FeatureMap acc(h, w, model.params.biases[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)]);
      for (int i = 0; i < P; ++i) {
        MedianRoute* route = set.pool == PoolOp::median
                                 ? &lt.routes[static_cast<std::size_t>(k * P + i)]
                                 : nullptr;
        oper2d_accumulate(model.kernel(l, k, i), prev[static_cast<std::size_t>(i)], set,
                          model.constants, acc, route);
      }
      auto& act = lt.act[static_cast<std::size_t>(k)];
      act = activate(set.act, acc, model.constants);
      lt.out[static_cast<std::size_t>(k)] = apply_resample(spec.resample, act);
      lt.pre[static_cast<std::size_t>(k)] = std::move(acc);
    }
  }
  return trace;
}

ForwardTrace forward(const OnnModel& model, const FeatureMap& input) {
  return forward(model, std::vector<FeatureMap>{input});
}

double mse(const FeatureMap& output, const FeatureMap& target) {
  if (!output.same_shape(target)) fail_data("mse: shape mismatch");
  if (output.size() == 0) fail_data("mse: empty maps");
  double s = 0.0;
  for (std::size_t p = 0; p < output.size(); ++p) {
    const double d = output.values[p] - target.values[p];
    s += d * d;
  }
  return s / static_cast<double>(output.size());
}

std::vector<FeatureMap> output_delta(const OnnModel& model, const ForwardTrace& trace,
                                     const std::vector<FeatureMap>& targets, double scale) {
  const int L = model.arch.layer_count();
  const auto& lt = trace.layers.back();
  if (targets.size() != lt.out.size()) fail_data("target count does not match the output layer");
  const auto resample = model.arch.layers.back().resample;
  std::vector<FeatureMap> deltas;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const FeatureMap& out = lt.out[k];
    if (!out.same_shape(targets[k])) fail_data("target shape does not match the output");
    FeatureMap d(out.height, out.width);
    const double f = scale * 2.0 / static_cast<double>(out.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
      d.values[p] = f * (out.values[p] - targets[k].values[p]);
    }
    d = resample_adjoint(resample, d);
    const ActOp act = set_from_index(model.set_of(L - 1, static_cast<int>(k))).act;
    chain_activation(act, lt.pre[k], model.constants, d);
    deltas.push_back(std::move(d));
  }
  return deltas;
}

BackwardResult backward(const OnnModel& model, const ForwardTrace& trace,
                        const std::vector<FeatureMap>& output_delta) {
  const int L = model.arch.layer_count();
  if (trace.layers.size() != static_cast<std::size_t>(L) ||
      output_delta.size() != trace.layers.back().pre.size()) {
    fail_data("stale forward trace");
  }
  for (int l = 1; l < L; ++l) {
    const auto& lt = trace.layers[static_cast<std::size_t>(l)];
    const auto n = static_cast<std::size_t>(model.arch.neurons(l));
    if (lt.pre.size() != n || lt.act.size() != n || lt.out.size() != n) {
      fail_data("stale forward trace");
    }
  }
  BackwardResult res;
  res.grads = zeros_like(model);
  res.deltas.resize(static_cast<std::size_t>(L));
  res.deltas[static_cast<std::size_t>(L - 1)] = output_delta;

  for (int l = L - 1; l >= 1; --l) {
    const int N = model.arch.neurons(l);
    const int P = model.arch.neurons(l - 1);
    const auto& lt = trace.layers[static_cast<std::size_t>(l)];
    const auto& prev = trace.layers[static_cast<std::size_t>(l - 1)].out;
    const auto& dx = res.deltas[static_cast<std::size_t>(l)];
    for (int k = 0; k < N; ++k) {
      if (!dx[static_cast<std::size_t>(k)].same_shape(lt.pre[static_cast<std::size_t>(k)])) {
        fail_data("stale forward trace");
      }
      double b = 0.0;
      for (double v : dx[static_cast<std::size_t>(k)].values) b += v;
      res.grads.biases[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = b;
    }
    std::vector<OperatorSet> sets;
    for (int k = 0; k < N; ++k) sets.push_back(set_from_index(model.set_of(l, k)));
    auto& gk = res.grads.kernels[static_cast<std::size_t>(l)];

    if (l == 1) {
#pragma omp parallel for schedule(dynamic, 1)
      for (int k = 0; k < N; ++k) {
        for (int i = 0; i < P; ++i) {
          const auto idx = static_cast<std::size_t>(k * P + i);
          oper2d_backward(model.kernel(l, k, i), prev[static_cast<std::size_t>(i)],
                          sets[static_cast<std::size_t>(k)], model.constants,
                          dx[static_cast<std::size_t>(k)], lt.routes[idx], gk[idx], nullptr);
        }
      }
      continue;
    }

    const auto& below = trace.layers[static_cast<std::size_t>(l - 1)];
    const auto below_resample = model.arch.layers[static_cast<std::size_t>(l - 1)].resample;
    auto& dbelow = res.deltas[static_cast<std::size_t>(l - 1)];
    dbelow.resize(static_cast<std::size_t>(P));

#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < P; ++i) {
      const FeatureMap& y = prev[static_cast<std::size_t>(i)];
      FeatureMap dy(y.height, y.width);
      for (int k = 0; k < N; ++k) {
        const auto idx = static_cast<std::size_t>(k * P + i);
        oper2d_backward(model.kernel(l, k, i), y, sets[static_cast<std::size_t>(k)],
                        model.constants, dx[static_cast<std::size_t>(k)], lt.routes[idx],
                        gk[idx], &dy);
      }
      FeatureMap d = resample_adjoint(below_resample, dy);
      const ActOp act = set_from_index(model.set_of(l - 1, i)).act;
      chain_activation(act, below.pre[static_cast<std::size_t>(i)], model.constants, d);
      dbelow[static_cast<std::size_t>(i)] = std::move(d);
    }
  }
  return res;
}

void accumulate(GradientSet& dst, const GradientSet& src) {
  for (std::size_t l = 0; l < dst.kernels.size(); ++l) {
    for (std::size_t j = 0; j < dst.kernels[l].size(); ++j) {
      auto& d = dst.kernels[l][j].weights;
      const auto& s = src.kernels[l][j].weights;
      for (std::size_t p = 0; p < d.size(); ++p) d[p] += s[p];
    }
    for (std::size_t k = 0; k < dst.biases[l].size(); ++k) dst.biases[l][k] += src.biases[l][k];
  }
}

// ---------------------------------------------------------------------------

namespace reference {

namespace {

std::vector<double> gather_terms(const Kernel& kernel, const FeatureMap& input, int m, int n,
                                 NodalOp nodal, const OperatorConstants& c,
                                 std::vector<double>* ys = nullptr,
                                 std::vector<bool>* inside = nullptr) {
  std::vector<double> terms;
  for (int r = 0; r < kernel.rows; ++r) {
    for (int t = 0; t < kernel.cols; ++t) {
      const int ym = m + r - kernel.rows / 2;
      const int yn = n + t - kernel.cols / 2;
      const bool in = ym >= 0 && ym < input.height && yn >= 0 && yn < input.width;
      const double y = in ? input.at(ym, yn) : 0.0;
      terms.push_back(nodal_eval(nodal, kernel.at(r, t), y, c));
      if (ys) ys->push_back(y);
      if (inside) inside->push_back(in);
    }
  }
  return terms;
}

}  // namespace

FeatureMap oper2d(const Kernel& kernel, const FeatureMap& input, const OperatorSet& set,
                  const OperatorConstants& c) {
  FeatureMap out(input.height, input.width);
  for (int m = 0; m < input.height; ++m) {
    for (int n = 0; n < input.width; ++n) {
      out.at(m, n) = pool_eval(set.pool, gather_terms(kernel, input, m, n, set.nodal, c)).value;
    }
  }
  return out;
}

ForwardTrace forward(const OnnModel& model, const std::vector<FeatureMap>& inputs) {
  const int L = model.arch.layer_count();
  ForwardTrace trace;
  trace.layers.resize(static_cast<std::size_t>(L));
  trace.layers[0].out = inputs;
  for (int l = 1; l < L; ++l) {
    const auto& prev = trace.layers[static_cast<std::size_t>(l - 1)].out;
    auto& lt = trace.layers[static_cast<std::size_t>(l)];
    for (int k = 0; k < model.arch.neurons(l); ++k) {
      const OperatorSet set = set_from_index(model.set_of(l, k));
      FeatureMap x(prev.front().height, prev.front().width,
                   model.params.biases[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)]);
      for (int i = 0; i < model.arch.neurons(l - 1); ++i) {
        const FeatureMap term =
            reference::oper2d(model.kernel(l, k, i), prev[static_cast<std::size_t>(i)], set,
                              model.constants);
        for (std::size_t p = 0; p < x.size(); ++p) x.values[p] += term.values[p];
      }
      FeatureMap y = activate(set.act, x, model.constants);
      lt.out.push_back(apply_resample(model.arch.layers[static_cast<std::size_t>(l)].resample, y));
      lt.act.push_back(std::move(y));
      lt.pre.push_back(std::move(x));
    }
  }
  return trace;
}

BackwardResult backward(const OnnModel& model, const ForwardTrace& trace,
                        const std::vector<FeatureMap>& output_delta) {
  const int L = model.arch.layer_count();
  BackwardResult res;
  res.grads = zeros_like(model);
  res.deltas.resize(static_cast<std::size_t>(L));
  res.deltas[static_cast<std::size_t>(L - 1)] = output_delta;
  const auto& c = model.constants;

  for (int l = L - 1; l >= 1; --l) {
    const int N = model.arch.neurons(l);
    const int P = model.arch.neurons(l - 1);
    const auto& prev = trace.layers[static_cast<std::size_t>(l - 1)].out;
    const auto& dx = res.deltas[static_cast<std::size_t>(l)];
    std::vector<FeatureMap> dy;
    for (int i = 0; i < P; ++i) {
      dy.emplace_back(prev[static_cast<std::size_t>(i)].height,
                      prev[static_cast<std::size_t>(i)].width);
    }
    for (int k = 0; k < N; ++k) {
      const OperatorSet set = set_from_index(model.set_of(l, k));
      const FeatureMap& d = dx[static_cast<std::size_t>(k)];
      double gb = 0.0;
      for (int m = 0; m < d.height; ++m) {
        for (int n = 0; n < d.width; ++n) gb += d.at(m, n);
      }
      res.grads.biases[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = gb;
      for (int i = 0; i < P; ++i) {
        const Kernel& ker = model.kernel(l, k, i);
        Kernel& g = res.grads.kernels[static_cast<std::size_t>(l)][static_cast<std::size_t>(k * P + i)];
        const FeatureMap& in = prev[static_cast<std::size_t>(i)];
        for (int m = 0; m < in.height; ++m) {
          for (int n = 0; n < in.width; ++n) {
            std::vector<double> ys;
            std::vector<bool> inside;
            const auto terms = gather_terms(ker, in, m, n, set.nodal, c, &ys, &inside);
            for (std::size_t j = 0; j < terms.size(); ++j) {
              const double pg = pool_grad(set.pool, terms, j);
              if (pg == 0.0) continue;
              const double w = ker.weights[j];
              g.weights[j] += d.at(m, n) * pg * nodal_grad_w(set.nodal, w, ys[j], c);
              if (inside[j]) {
                const int ym = m + static_cast<int>(j) / ker.cols - ker.rows / 2;
                const int yn = n + static_cast<int>(j) % ker.cols - ker.cols / 2;
                dy[static_cast<std::size_t>(i)].at(ym, yn) +=
                    d.at(m, n) * pg * nodal_grad_y(set.nodal, w, ys[j], c);
              }
            }
          }
        }
      }
    }
    if (l == 1) break;
    auto& dbelow = res.deltas[static_cast<std::size_t>(l - 1)];
    const auto& below = trace.layers[static_cast<std::size_t>(l - 1)];
    for (int i = 0; i < P; ++i) {
      FeatureMap d = resample_adjoint(model.arch.layers[static_cast<std::size_t>(l - 1)].resample,
                                      dy[static_cast<std::size_t>(i)]);
      chain_activation(set_from_index(model.set_of(l - 1, i)).act,
                       below.pre[static_cast<std::size_t>(i)], c, d);
      dbelow.push_back(std::move(d));
    }
  }
  return res;
}

}  // namespace reference

}  // namespace onn
