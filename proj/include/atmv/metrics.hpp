// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation triple: SSIM of the first generated frame against its
// reference, mean adjacent-frame cosine as a temporal consistency proxy, and
// block-matching flow magnitude as a motion intensity proxy. Motion is
// reported in pixels per frame at frame resolution. The three are
// independent by design: a static copy of the reference scores
// (ssim 1, consistency 1, motion 0), which is exactly the failure mode the
// motion column exposes.

#include <string>
#include <vector>

#include "atmv/tensor.hpp"

namespace atmv {

struct VideoMetrics {
    double ssim_first_frame = 0;
    double temporal_consistency = 0;
    double motion_intensity = 0;
};

struct MetricsReport {
    double ssim_first_frame = 0;  // means over videos
    double temporal_consistency = 0;
    double motion_intensity = 0;
    int n_videos = 0;
    std::vector<VideoMetrics> rows;
};

// Standard SSIM, 7x7 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2,
// dynamic range 1, mean over positions where the window fits.
double ssim(const Tensor& a, const Tensor& b);

// Mean over adjacent pairs of the cosine between mean-subtracted frames.
// Zero-variance pairs score 1 when both frames are equal constants, else 0.
double temporal_consistency(const std::vector<Tensor>& video);

// Exhaustive integer block matching: 8x8 blocks, search radius 4, SSD
// objective with smallest-displacement tie break, blocks weighted by their
// variance. Mean weighted displacement magnitude over adjacent pairs.
double motion_intensity(const std::vector<Tensor>& video);

// references[i] is scored against generated[i][0].
MetricsReport evaluate(const std::vector<std::vector<Tensor>>& generated,
                       const std::vector<Tensor>& references);

std::string report_tsv(const MetricsReport& report);
std::string report_json(const MetricsReport& report);

}  // namespace atmv
