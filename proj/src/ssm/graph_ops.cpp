#include <omp.h>

#include <memory>
#include <stdexcept>
#include <string>

#include "madiff/ssm.hpp"
#include "scan_core.hpp"

namespace madiff::ssm {

namespace {

std::string dims(const dg::Tensor& t) { return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]"; }

}  // namespace

dg::Var selective_scan(dg::Var uv, dg::Var deltav, dg::Var Av, dg::Var Bv, dg::Var Cv, std::size_t length) {
  dg::Graph& g = *uv.graph;
  for (const dg::Var* v : {&deltav, &Av, &Bv, &Cv})
    if (v->graph != &g) throw std::invalid_argument("selective_scan: vars belong to different graphs");
  const dg::Tensor& u = uv.value();
  const dg::Tensor& delta = deltav.value();
  const dg::Tensor& A = Av.value();
  const dg::Tensor& B = Bv.value();
  const dg::Tensor& Cm = Cv.value();
  const std::size_t rows = u.rows(), C = u.cols(), N = A.cols();
  if (length == 0 || rows % length != 0)
    throw std::invalid_argument("selective_scan: " + std::to_string(rows) + " rows is not a multiple of length " +
                                std::to_string(length));
  if (!u.same_shape(delta)) throw std::invalid_argument("selective_scan: u " + dims(u) + " vs delta " + dims(delta));
  if (A.rows() != C) throw std::invalid_argument("selective_scan: A " + dims(A) + " vs u " + dims(u));
  if (B.rows() != rows || B.cols() != N || !B.same_shape(Cm))
    throw std::invalid_argument("selective_scan: B " + dims(B) + " / C " + dims(Cm) + " vs A " + dims(A));
  const std::size_t seqs = rows / length, cn = C * N;

  const bool keep = g.grad_enabled() && (g.requires_grad(uv) || g.requires_grad(deltav) || g.requires_grad(Av) ||
                                         g.requires_grad(Bv) || g.requires_grad(Cv));
  auto h_tr = std::make_shared<std::vector<double>>(keep ? rows * cn : 0);
  auto ab_tr = std::make_shared<std::vector<double>>(keep ? rows * cn : 0);
  auto g_tr = std::make_shared<std::vector<double>>(keep ? rows * cn : 0);

  dg::Tensor y({rows, C});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qs = 0; qs < static_cast<std::ptrdiff_t>(seqs); ++qs) {
    const std::size_t r0 = static_cast<std::size_t>(qs) * length;
    std::vector<double> h(cn, 0.0);
    detail::scan_sequence(u.data() + r0 * C, delta.data() + r0 * C, A.data(), B.data() + r0 * N,
                          Cm.data() + r0 * N, length, C, N, h.data(), y.data() + r0 * C,
                          keep ? h_tr->data() + r0 * cn : nullptr, keep ? ab_tr->data() + r0 * cn : nullptr,
                          keep ? g_tr->data() + r0 * cn : nullptr);
  }

  const int iu = uv.id, id = deltav.id, ia = Av.id, ib = Bv.id, ic = Cv.id;
  return g.record(std::move(y), {iu, id, ia, ib, ic}, [=](dg::Graph& gr, int self) {
    const double* dy = gr.node_grad(self).data();
    const double* uu = gr.value(iu).data();
    const double* dd = gr.value(id).data();
    const double* AA = gr.value(ia).data();
    const double* BB = gr.value(ib).data();
    const double* CC = gr.value(ic).data();
    std::vector<double> du(rows * C, 0.0), ddelta(rows * C, 0.0), dB(rows * N, 0.0), dC(rows * N, 0.0);
    std::vector<double> dA(seqs * cn, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t qs = 0; qs < static_cast<std::ptrdiff_t>(seqs); ++qs) {
      const std::size_t q = static_cast<std::size_t>(qs);
      double* dAq = dA.data() + q * cn;
      std::vector<double> dh(cn, 0.0);
      for (std::size_t tt = length; tt-- > 0;) {
        const std::size_t row = q * length + tt;
        for (std::size_t c = 0; c < C; ++c) {
          const double dyc = dy[row * C + c];
          const double uc = uu[row * C + c];
          const double d = dd[row * C + c];
          double du_acc = 0.0, dd_acc = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t k = row * cn + c * N + n;
            const double dhn = dh[c * N + n] + CC[row * N + n] * dyc;
            dC[row * N + n] += dyc * (*h_tr)[k];
            const double h_prev = tt > 0 ? (*h_tr)[k - cn] : 0.0;
            const double ab = (*ab_tr)[k], gn = (*g_tr)[k], a = AA[c * N + n], bn = BB[row * N + n];
            const double d_ab = dhn * h_prev;
            const double d_bb = dhn * uc;
            du_acc += dhn * (gn * bn);
            dB[row * N + n] += d_bb * gn;
            const double d_g = d_bb * bn;
            // a_bar = exp(d a), g = expm1(d a) / a
            dd_acc += d_ab * a * ab + d_g * ab;
            dAq[c * N + n] += d_ab * d * ab + d_g * (d * ab - gn) / a;
            dh[c * N + n] = dhn * ab;
          }
          du[row * C + c] = du_acc;
          ddelta[row * C + c] = dd_acc;
        }
      }
    }
    auto accumulate = [&](int node, const std::vector<double>& src) {
      if (!gr.requires_grad(node)) return;
      double* dst = gr.grad_buffer(node).data();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    };
    accumulate(iu, du);
    accumulate(id, ddelta);
    accumulate(ib, dB);
    accumulate(ic, dC);
    if (gr.requires_grad(ia)) {
      double* dst = gr.grad_buffer(ia).data();
      for (std::size_t q = 0; q < seqs; ++q)
        for (std::size_t k = 0; k < cn; ++k) dst[k] += dA[q * cn + k];
    }
  });
}

dg::Var causal_depthwise_conv(dg::Var xv, dg::Var wv, dg::Var bv, std::size_t length) {
  dg::Graph& g = *xv.graph;
  if (wv.graph != &g || bv.graph != &g)
    throw std::invalid_argument("causal_depthwise_conv: vars belong to different graphs");
  const dg::Tensor& x = xv.value();
  const dg::Tensor& w = wv.value();
  const dg::Tensor& b = bv.value();
  const std::size_t rows = x.rows(), C = x.cols(), K = w.rows();
  if (length == 0 || rows % length != 0)
    throw std::invalid_argument("causal_depthwise_conv: " + std::to_string(rows) +
                                " rows is not a multiple of length " + std::to_string(length));
  if (w.cols() != C || K == 0) throw std::invalid_argument("causal_depthwise_conv: weight " + dims(w) + " vs x " + dims(x));
  if (b.rows() != 1 || b.cols() != C)
    throw std::invalid_argument("causal_depthwise_conv: bias " + dims(b) + " vs x " + dims(x));

  dg::Tensor out({rows, C});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r % length;
    for (std::size_t c = 0; c < C; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t back = K - 1 - k;
        if (back <= t) acc += w[k * C + c] * x[(r - back) * C + c];
      }
      out[r * C + c] = acc;
    }
  }
  const int ix = xv.id, iw = wv.id, ib = bv.id;
  return g.record(std::move(out), {ix, iw, ib}, [=](dg::Graph& gr, int self) {
    const dg::Tensor& go = gr.node_grad(self);
    const dg::Tensor& xx = gr.value(ix);
    const dg::Tensor& ww = gr.value(iw);
    const bool need_x = gr.requires_grad(ix), need_w = gr.requires_grad(iw), need_b = gr.requires_grad(ib);
    double* gx = need_x ? gr.grad_buffer(ix).data() : nullptr;
    double* gw = need_w ? gr.grad_buffer(iw).data() : nullptr;
    double* gb = need_b ? gr.grad_buffer(ib).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t t = r % length;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = go[r * C + c];
        if (gb) gb[c] += d;
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t back = K - 1 - k;
          if (back > t) continue;
          if (gx) gx[(r - back) * C + c] += ww[k * C + c] * d;
          if (gw) gw[k * C + c] += xx[(r - back) * C + c] * d;
        }
      }
    }
  });
}

}  // namespace madiff::ssm
