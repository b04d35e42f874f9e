// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image <-> latent codec: single-level orthonormal Haar transform taking a
// 1 x H x W grayscale frame to a 4 x H/2 x W/2 latent with channels ordered
// [LL, LH, HL, HH]. The transform matrix is symmetric orthogonal, so decode
// applies the same butterfly and the round trip is exact up to rounding.
// Decode does not clamp; clamping happens only at file export.

#include "atmv/tensor.hpp"

namespace atmv {

// [1,H,W] -> [4,H/2,W/2]; H, W even.
Tensor encode_frame(const Tensor& frame);

// [4,Hl,Wl] -> [1,2*Hl,2*Wl]; exact inverse of encode_frame.
Tensor decode_frame(const Tensor& latent);

// Per-frame application over clips: [T,1,H,W] <-> [T,4,H/2,W/2].
Tensor encode_clip(const Tensor& frames);
Tensor decode_clip(const Tensor& latents);

}  // namespace atmv
