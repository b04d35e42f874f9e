// SPDX-License-Identifier: Apache-2.0
#include "atmv/codec.hpp"

namespace atmv {

namespace {

void haar_fwd(const real* px, int H, int W, real* out) {
    const int H2 = H / 2, W2 = W / 2;
    const std::int64_t plane = std::int64_t(H2) * W2;
    real* ll = out;
    real* lh = out + plane;
    real* hl = out + 2 * plane;
    real* hh = out + 3 * plane;
    for (int by = 0; by < H2; ++by)
        for (int bx = 0; bx < W2; ++bx) {
            const real a = px[(2 * by) * W + 2 * bx];
            const real b = px[(2 * by) * W + 2 * bx + 1];
            const real c = px[(2 * by + 1) * W + 2 * bx];
            const real d = px[(2 * by + 1) * W + 2 * bx + 1];
            const std::int64_t j = std::int64_t(by) * W2 + bx;
            ll[j] = (a + b + c + d) / 2;
            lh[j] = (a - b + c - d) / 2;
            hl[j] = (a + b - c - d) / 2;
            hh[j] = (a - b - c + d) / 2;
        }
}

void haar_inv(const real* co, int H2, int W2, real* px) {
    const int W = 2 * W2;
    const std::int64_t plane = std::int64_t(H2) * W2;
    const real* ll = co;
    const real* lh = co + plane;
    const real* hl = co + 2 * plane;
    const real* hh = co + 3 * plane;
    for (int by = 0; by < H2; ++by)
        for (int bx = 0; bx < W2; ++bx) {
            const std::int64_t j = std::int64_t(by) * W2 + bx;
            const real A = ll[j], B = lh[j], C = hl[j], D = hh[j];
            px[(2 * by) * W + 2 * bx] = (A + B + C + D) / 2;
            px[(2 * by) * W + 2 * bx + 1] = (A - B + C - D) / 2;
            px[(2 * by + 1) * W + 2 * bx] = (A + B - C - D) / 2;
            px[(2 * by + 1) * W + 2 * bx + 1] = (A - B - C + D) / 2;
        }
}

}  // namespace

Tensor encode_frame(const Tensor& frame) {
    if (!frame.defined() || frame.rank() != 3 || frame.dim(0) != 1)
        throw ShapeError("encode_frame: expected [1,H,W], got " +
                         (frame.defined() ? shape_str(frame.shape()) : std::string("undefined")));
    const int H = frame.dim(1), W = frame.dim(2);
    if (H % 2 != 0 || W % 2 != 0 || H < 2 || W < 2)
        throw ShapeError("encode_frame: extents must be even and positive, got " +
                         shape_str(frame.shape()));
    Tensor out = Tensor::zeros({4, H / 2, W / 2});
    haar_fwd(frame.data().data(), H, W, out.raw_data().data());
    return out;
}

Tensor decode_frame(const Tensor& latent) {
    if (!latent.defined() || latent.rank() != 3 || latent.dim(0) != 4)
        throw ShapeError("decode_frame: expected [4,H/2,W/2], got " +
                         (latent.defined() ? shape_str(latent.shape()) : std::string("undefined")));
    const int H2 = latent.dim(1), W2 = latent.dim(2);
    Tensor out = Tensor::zeros({1, 2 * H2, 2 * W2});
    haar_inv(latent.data().data(), H2, W2, out.raw_data().data());
    return out;
}

Tensor encode_clip(const Tensor& frames) {
    if (!frames.defined() || frames.rank() != 4 || frames.dim(1) != 1)
        throw ShapeError("encode_clip: expected [T,1,H,W]");
    const int T = frames.dim(0), H = frames.dim(2), W = frames.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("encode_clip: extents must be even, got " + shape_str(frames.shape()));
    Tensor out = Tensor::zeros({T, 4, H / 2, W / 2});
    const std::int64_t in_step = std::int64_t(H) * W;
    const std::int64_t out_step = 4 * std::int64_t(H / 2) * (W / 2);
    for (int t = 0; t < T; ++t)
        haar_fwd(frames.data().data() + t * in_step, H, W, out.raw_data().data() + t * out_step);
    return out;
}

Tensor decode_clip(const Tensor& latents) {
    if (!latents.defined() || latents.rank() != 4 || latents.dim(1) != 4)
        throw ShapeError("decode_clip: expected [T,4,H/2,W/2]");
    const int T = latents.dim(0), H2 = latents.dim(2), W2 = latents.dim(3);
    Tensor out = Tensor::zeros({T, 1, 2 * H2, 2 * W2});
    const std::int64_t in_step = 4 * std::int64_t(H2) * W2;
    const std::int64_t out_step = std::int64_t(2 * H2) * (2 * W2);
    for (int t = 0; t < T; ++t)
        haar_inv(latents.data().data() + t * in_step, H2, W2, out.raw_data().data() + t * out_step);
    return out;
}

}  // namespace atmv
