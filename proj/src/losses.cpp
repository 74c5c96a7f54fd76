#include "cdgs/losses.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace cdgs {

namespace {

constexpr int kWindow = 11;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

const std::array<double, kWindow>& ssim_kernel() {
    static const std::array<double, kWindow> k = [] {
        std::array<double, kWindow> w{};
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - (kWindow - 1) / 2.0;
            w[i] = std::exp(-d * d / (2 * sigma * sigma));
            sum += w[i];
        }
        for (auto& v : w)
            v /= sum;
        return w;
    }();
    return k;
}

// Valid-mode separable Gaussian filter; output is (H-10) x (W-10).
Image filter_valid(const Image& src) {
    const auto& k = ssim_kernel();
    const int c = src.channels;
    Image horiz(src.height, src.width - kWindow + 1, c);
    for (int y = 0; y < horiz.height; ++y)
        for (int x = 0; x < horiz.width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int i = 0; i < kWindow; ++i)
                    acc += k[i] * src.at(y, x + i, ch);
                horiz.at(y, x, ch) = acc;
            }
    Image out(src.height - kWindow + 1, horiz.width, c);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int i = 0; i < kWindow; ++i)
                    acc += k[i] * horiz.at(y + i, x, ch);
                out.at(y, x, ch) = acc;
            }
    return out;
}

// Adjoint of filter_valid: spreads a (H-10) x (W-10) gradient back to H x W.
Image filter_adjoint(const Image& grad, int height, int width) {
    const auto& k = ssim_kernel();
    const int c = grad.channels;
    Image vert(height, grad.width, c);
    for (int y = 0; y < grad.height; ++y)
        for (int x = 0; x < grad.width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                const double g = grad.at(y, x, ch);
                for (int i = 0; i < kWindow; ++i)
                    vert.at(y + i, x, ch) += k[i] * g;
            }
    Image out(height, width, c);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < vert.width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                const double g = vert.at(y, x, ch);
                for (int i = 0; i < kWindow; ++i)
                    out.at(y, x + i, ch) += k[i] * g;
            }
    return out;
}

Image elementwise_product(const Image& a, const Image& b) {
    Image out(a.height, a.width, a.channels);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = a.data[i] * b.data[i];
    return out;
}

void require_ssim_shapes(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("ssim: image shape mismatch");
    if (a.height < kWindow || a.width < kWindow)
        throw std::invalid_argument("ssim: images smaller than the 11x11 window");
}

} // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("psnr: image shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double ssim(const Image& a, const Image& b) {
    return ssim_with_grad(a, b, nullptr);
}

double ssim_with_grad(const Image& pred, const Image& target, Image* d_pred) {
    require_ssim_shapes(pred, target);
    const Image mu_a = filter_valid(pred);
    const Image mu_b = filter_valid(target);
    const Image gaa = filter_valid(elementwise_product(pred, pred));
    const Image gbb = filter_valid(elementwise_product(target, target));
    const Image gab = filter_valid(elementwise_product(pred, target));

    const std::size_t n_windows = mu_a.data.size();
    const double weight = 1.0 / static_cast<double>(n_windows);

    Image d_mu_a, d_gaa, d_gab;
    if (d_pred) {
        d_mu_a = Image(mu_a.height, mu_a.width, mu_a.channels);
        d_gaa = Image(mu_a.height, mu_a.width, mu_a.channels);
        d_gab = Image(mu_a.height, mu_a.width, mu_a.channels);
    }

    double total = 0.0;
    for (std::size_t i = 0; i < n_windows; ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double sa = gaa.data[i] - ma * ma;
        const double sb = gbb.data[i] - mb * mb;
        const double sab = gab.data[i] - ma * mb;
        const double a1 = 2 * ma * mb + kSsimC1;
        const double a2 = 2 * sab + kSsimC2;
        const double b1 = ma * ma + mb * mb + kSsimC1;
        const double b2 = sa + sb + kSsimC2;
        const double denom = b1 * b2;
        const double value = a1 * a2 / denom;
        total += value;
        if (d_pred) {
            // Partials of the SSIM map w.r.t. (mu_a, G*a^2, G*ab); the
            // variances' explicit mu_a terms are folded in here.
            const double d_a1 = a2 / denom;
            const double d_a2 = a1 / denom;
            const double d_b1 = -value / b1;
            const double d_b2 = -value / b2;
            d_gab.data[i] = weight * (d_a2 * 2.0);
            d_gaa.data[i] = weight * d_b2;
            d_mu_a.data[i] = weight * (d_a1 * 2 * mb + d_a2 * (-2 * mb) + d_b1 * 2 * ma +
                                       d_b2 * (-2 * ma));
        }
    }

    if (d_pred) {
        *d_pred = filter_adjoint(d_mu_a, pred.height, pred.width);
        const Image spread_gaa = filter_adjoint(d_gaa, pred.height, pred.width);
        const Image spread_gab = filter_adjoint(d_gab, pred.height, pred.width);
        for (std::size_t i = 0; i < d_pred->data.size(); ++i)
            d_pred->data[i] += 2.0 * pred.data[i] * spread_gaa.data[i] +
                               target.data[i] * spread_gab.data[i];
    }
    return total * weight;
}

double loss_recon(const Image& pred, const Image& target, double lambda, Image* d_pred) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("loss_recon: image shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(pred.data.size());
    double l1 = 0.0;
    if (d_pred)
        *d_pred = Image(pred.height, pred.width, pred.channels);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        l1 += std::abs(d);
        if (d_pred)
            d_pred->data[i] = (1.0 - lambda) * inv_n * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    }
    l1 *= inv_n;
    if (lambda == 0.0)
        return (1.0 - lambda) * l1;

    Image d_ssim_img;
    const double s = ssim_with_grad(pred, target, d_pred ? &d_ssim_img : nullptr);
    if (d_pred)
        for (std::size_t i = 0; i < d_pred->data.size(); ++i)
            d_pred->data[i] -= lambda * d_ssim_img.data[i];
    return (1.0 - lambda) * l1 + lambda * (1.0 - s);
}

namespace {

double flow_l1_direction(const FlowField& pred, const FlowField& gt, FlowField* d_pred,
                         const char* name) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("loss_flow: flow field shape mismatch");
    std::size_t n_valid = 0;
    for (auto v : gt.valid)
        n_valid += v != 0;
    if (n_valid == 0) {
        std::fprintf(stderr, "loss_flow: empty validity mask for %s flow, term is 0\n", name);
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(n_valid);
    double total = 0.0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (!gt.is_valid(y, x))
                continue;
            const double du = pred.u(y, x) - gt.u(y, x);
            const double dv = pred.v(y, x) - gt.v(y, x);
            total += std::abs(du) + std::abs(dv);
            if (d_pred) {
                d_pred->u(y, x) = inv * (du > 0 ? 1.0 : (du < 0 ? -1.0 : 0.0));
                d_pred->v(y, x) = inv * (dv > 0 ? 1.0 : (dv < 0 ? -1.0 : 0.0));
            }
        }
    return total * inv;
}

} // namespace

double loss_flow(const FlowOutput& pred, const FlowOutput& gt, FlowOutput* d_pred) {
    if (d_pred) {
        d_pred->fwd = FlowField(pred.fwd.height, pred.fwd.width);
        d_pred->bwd = FlowField(pred.bwd.height, pred.bwd.width);
    }
    return flow_l1_direction(pred.fwd, gt.fwd, d_pred ? &d_pred->fwd : nullptr, "forward") +
           flow_l1_direction(pred.bwd, gt.bwd, d_pred ? &d_pred->bwd : nullptr, "backward");
}

double total_loss(const Image& pred_img, const Image& gt_img, const FlowOutput* pred_flow,
                  const FlowOutput* gt_flow, const LossWeights& w, Image* d_img,
                  FlowOutput* d_flow) {
    double loss = loss_recon(pred_img, gt_img, w.lambda_dssim, d_img);
    if (pred_flow && gt_flow) {
        loss += w.lambda_flow * loss_flow(*pred_flow, *gt_flow, d_flow);
        if (d_flow) {
            for (auto& v : d_flow->fwd.uv)
                v *= w.lambda_flow;
            for (auto& v : d_flow->bwd.uv)
                v *= w.lambda_flow;
        }
    } else if (d_flow) {
        *d_flow = FlowOutput{};
    }
    return loss;
}

} // namespace cdgs
