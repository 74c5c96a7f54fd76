#pragma once

#include "cdgs/image.hpp"
#include "cdgs/rasterizer.hpp"

namespace cdgs {

struct LossWeights {
    double lambda_dssim = 0.2; // weight of the D-SSIM term inside the recon loss
    double lambda_flow = 1000.0;
};

/// Peak signal-to-noise ratio in dB, -10 log10(MSE). Identical images
/// return +infinity.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
/// C2=0.03^2, valid-mode windows, mean over channels and window positions.
/// Throws std::invalid_argument on shape mismatch or images smaller than
/// the window.
double ssim(const Image& a, const Image& b);

/// SSIM plus d(SSIM)/d(pred) when d_pred is non-null.
double ssim_with_grad(const Image& pred, const Image& target, Image* d_pred);

/// (1-lambda) * mean|pred-target| + lambda * (1 - SSIM(pred, target)).
/// When d_pred is non-null it receives d(loss)/d(pred).
double loss_recon(const Image& pred, const Image& target, double lambda,
                  Image* d_pred = nullptr);

/// Mean L1 over valid pixels of |du|+|dv|, forward and backward directions
/// summed. Validity masks ride on the ground-truth fields; a direction with
/// an empty mask contributes 0 (with a warning).
double loss_flow(const FlowOutput& pred, const FlowOutput& gt, FlowOutput* d_pred = nullptr);

/// loss_recon + lambda_flow * loss_flow; the flow term is dropped when
/// either flow argument is null.
double total_loss(const Image& pred_img, const Image& gt_img, const FlowOutput* pred_flow,
                  const FlowOutput* gt_flow, const LossWeights& w, Image* d_img = nullptr,
                  FlowOutput* d_flow = nullptr);

} // namespace cdgs
