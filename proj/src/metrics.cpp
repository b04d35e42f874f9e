// SPDX-License-Identifier: Apache-2.0
#include "atmv/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <span>

#include <json.hpp>

#include "atmv/errors.hpp"

namespace atmv {

namespace {

constexpr int kWin = 7;
constexpr int kHalfWin = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr int kBlock = 8;
constexpr int kSearch = 4;

void require_frame(const Tensor& f, const char* who) {
    if (!f.defined() || f.rank() != 3 || f.dim(0) != 1)
        throw ShapeError(std::string(who) + ": frame must be [1,H,W]");
}

// 7x7 Gaussian taps, sigma 1.5, normalized to sum 1.
const std::array<double, kWin>& gauss_taps() {
    static const std::array<double, kWin> taps = [] {
        std::array<double, kWin> t{};
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalfWin;
            t[std::size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += t[std::size_t(i)];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    require_frame(a, "ssim");
    require_frame(b, "ssim");
    if (a.shape() != b.shape()) throw ShapeError("ssim: frame shapes differ");
    const int h = a.dim(1), w = a.dim(2);
    if (h < kWin || w < kWin) throw ShapeError("ssim: frame smaller than the 7x7 window");
    const auto& taps = gauss_taps();
    auto va = a.data();
    auto vb = b.data();
    auto at = [&](std::span<const real> v, int y, int x) {
        return double(v[std::size_t(y) * w + x]);
    };

    double total = 0;
    std::int64_t count = 0;
    for (int cy = kHalfWin; cy < h - kHalfWin; ++cy)
        for (int cx = kHalfWin; cx < w - kHalfWin; ++cx) {
            double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
            for (int dy = -kHalfWin; dy <= kHalfWin; ++dy)
                for (int dx = -kHalfWin; dx <= kHalfWin; ++dx) {
                    const double wgt = taps[std::size_t(dy + kHalfWin)] * taps[std::size_t(dx + kHalfWin)];
                    const double pa = at(va, cy + dy, cx + dx);
                    const double pb = at(vb, cy + dy, cx + dx);
                    ma += wgt * pa;
                    mb += wgt * pb;
                    aa += wgt * pa * pa;
                    bb += wgt * pb * pb;
                    ab += wgt * pa * pb;
                }
            const double var_a = aa - ma * ma;
            const double var_b = bb - mb * mb;
            const double cov = ab - ma * mb;
            total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
            ++count;
        }
    return total / double(count);
}

double temporal_consistency(const std::vector<Tensor>& video) {
    if (video.size() < 2) throw UsageError("temporal_consistency: need at least 2 frames");
    for (const Tensor& f : video) require_frame(f, "temporal_consistency");
    double total = 0;
    for (std::size_t k = 0; k + 1 < video.size(); ++k) {
        const Tensor& fa = video[k];
        const Tensor& fb = video[k + 1];
        if (fa.shape() != fb.shape()) throw ShapeError("temporal_consistency: frame shapes differ");
        auto va = fa.data();
        auto vb = fb.data();
        const std::int64_t n = fa.size();
        double sa = 0, sb = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            sa += double(va[std::size_t(i)]);
            sb += double(vb[std::size_t(i)]);
        }
        const double mean_a = sa / double(n), mean_b = sb / double(n);
        double dot = 0, na = 0, nb = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double ua = double(va[std::size_t(i)]) - mean_a;
            const double ub = double(vb[std::size_t(i)]) - mean_b;
            dot += ua * ub;
            na += ua * ua;
            nb += ub * ub;
        }
        if (na == 0 || nb == 0) {
            const bool equal_consts = na == 0 && nb == 0 && mean_a == mean_b;
            total += equal_consts ? 1.0 : 0.0;
        } else {
            total += dot / std::sqrt(na * nb);
        }
    }
    return total / double(video.size() - 1);
}

double motion_intensity(const std::vector<Tensor>& video) {
    if (video.size() < 2) throw UsageError("motion_intensity: need at least 2 frames");
    for (const Tensor& f : video) require_frame(f, "motion_intensity");
    const int h = video[0].dim(1), w = video[0].dim(2);
    const int by_n = h / kBlock, bx_n = w / kBlock;

    double total = 0;
    for (std::size_t k = 0; k + 1 < video.size(); ++k) {
        if (video[k + 1].shape() != video[k].shape())
            throw ShapeError("motion_intensity: frame shapes differ");
        auto va = video[k].data();
        auto vb = video[k + 1].data();
        auto at = [&](std::span<const real> v, int y, int x) {
            return double(v[std::size_t(y) * w + x]);
        };
        // Displaced reads outside the frame use edge replication, so every
        // candidate in the search window is comparable.
        auto at_clamped = [&](std::span<const real> v, int y, int x) {
            return at(v, std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
        };

        double weight_sum = 0, disp_sum = 0;
        for (int by = 0; by < by_n; ++by)
            for (int bx = 0; bx < bx_n; ++bx) {
                const int y0 = by * kBlock, x0 = bx * kBlock;
                double s = 0, s2 = 0;
                for (int y = 0; y < kBlock; ++y)
                    for (int x = 0; x < kBlock; ++x) {
                        const double p = at(va, y0 + y, x0 + x);
                        s += p;
                        s2 += p * p;
                    }
                const double n = double(kBlock) * kBlock;
                const double var = s2 / n - (s / n) * (s / n);
                if (var <= 0) continue;

                double best_ssd = 0;
                int best_d2 = 0, best_dx = 0, best_dy = 0;
                bool found = false;
                for (int dy = -kSearch; dy <= kSearch; ++dy)
                    for (int dx = -kSearch; dx <= kSearch; ++dx) {
                        const int ty = y0 + dy, tx = x0 + dx;
                        double ssd = 0;
                        for (int y = 0; y < kBlock; ++y)
                            for (int x = 0; x < kBlock; ++x) {
                                const double d = at(va, y0 + y, x0 + x) - at_clamped(vb, ty + y, tx + x);
                                ssd += d * d;
                            }
                        const int d2 = dx * dx + dy * dy;
                        if (!found || ssd < best_ssd || (ssd == best_ssd && d2 < best_d2)) {
                            found = true;
                            best_ssd = ssd;
                            best_d2 = d2;
                            best_dx = dx;
                            best_dy = dy;
                        }
                    }
                weight_sum += var;
                disp_sum += var * std::sqrt(double(best_dx * best_dx + best_dy * best_dy));
            }
        total += weight_sum > 0 ? disp_sum / weight_sum : 0.0;
    }
    return total / double(video.size() - 1);
}

MetricsReport evaluate(const std::vector<std::vector<Tensor>>& generated,
                       const std::vector<Tensor>& references) {
    if (generated.size() != references.size())
        throw UsageError("evaluate: generated and reference counts differ");
    if (generated.empty()) throw UsageError("evaluate: no videos");
    MetricsReport report;
    report.n_videos = int(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        if (generated[i].empty()) throw UsageError("evaluate: empty video");
        VideoMetrics row;
        row.ssim_first_frame = ssim(generated[i][0], references[i]);
        row.temporal_consistency = temporal_consistency(generated[i]);
        row.motion_intensity = motion_intensity(generated[i]);
        report.rows.push_back(row);
        report.ssim_first_frame += row.ssim_first_frame;
        report.temporal_consistency += row.temporal_consistency;
        report.motion_intensity += row.motion_intensity;
    }
    report.ssim_first_frame /= report.n_videos;
    report.temporal_consistency /= report.n_videos;
    report.motion_intensity /= report.n_videos;
    return report;
}

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string report_tsv(const MetricsReport& report) {
    std::string out =
        "# motion_intensity unit: pixels per frame at frame resolution\n"
        "video\tssim_first_frame\ttemporal_consistency\tmotion_intensity\n";
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const VideoMetrics& r = report.rows[i];
        out += std::to_string(i) + "\t" + fmt6(r.ssim_first_frame) + "\t" +
               fmt6(r.temporal_consistency) + "\t" + fmt6(r.motion_intensity) + "\n";
    }
    out += "mean\t" + fmt6(report.ssim_first_frame) + "\t" + fmt6(report.temporal_consistency) +
           "\t" + fmt6(report.motion_intensity) + "\n";
    return out;
}

std::string report_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["motion_intensity_unit"] = "pixels per frame at frame resolution";
    j["n_videos"] = report.n_videos;
    j["mean"] = {{"ssim_first_frame", report.ssim_first_frame},
                 {"temporal_consistency", report.temporal_consistency},
                 {"motion_intensity", report.motion_intensity}};
    j["videos"] = nlohmann::ordered_json::array();
    for (const VideoMetrics& r : report.rows)
        j["videos"].push_back({{"ssim_first_frame", r.ssim_first_frame},
                               {"temporal_consistency", r.temporal_consistency},
                               {"motion_intensity", r.motion_intensity}});
    return j.dump(2) + "\n";
}

}  // namespace atmv
