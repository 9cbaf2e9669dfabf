#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxseed {

double iou(const Mask3D& pred, const Mask3D& gt) {
    require_same_dims(pred.dims, gt.dims, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t v = 0; v < pred.data.size(); ++v) {
        inter += pred.data[v] & gt.data[v];
        uni += pred.data[v] | gt.data[v];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> extract_surface(const Mask3D& m) {
    if (m.count() == 0) throw EmptyMaskError("extract_surface: mask is empty");
    const Dims& d = m.dims;
    std::vector<std::size_t> out;
    static constexpr int kNeighbours[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (int i = 0; i < d.h; ++i) {
        for (int j = 0; j < d.w; ++j) {
            for (int k = 0; k < d.d; ++k) {
                if (!m.at(i, j, k)) continue;
                bool boundary = false;
                for (const auto& n : kNeighbours) {
                    const int a = i + n[0], b = j + n[1], c = k + n[2];
                    if (!d.contains(a, b, c) || !m.at(a, b, c)) {
                        boundary = true;
                        break;
                    }
                }
                if (boundary) out.push_back(d.index(i, j, k));
            }
        }
    }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One axis of the lower-envelope transform: out[q] = min_p ((q - p) s)^2 + f[p].
void envelope_1d(const std::vector<double>& f, double s, std::vector<double>& out, std::vector<int>& v,
                 std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    v.resize(n);
    z.resize(n + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double xq = q * s;
        double sect = 0.0;
        while (k >= 0) {
            const double xp = v[k] * s;
            sect = ((f[q] + xq * xq) - (f[v[k]] + xp * xp)) / (2.0 * (xq - xp));
            if (sect <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        } else {
            ++k;
            v[k] = q;
            z[k] = sect;
        }
        z[k + 1] = kInf;
    }
    out.assign(n, kInf);
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double x = q * s;
        while (z[j + 1] < x) ++j;
        const double dx = x - v[j] * s;
        out[q] = dx * dx + f[v[j]];
    }
}

}  // namespace

ScalarGridT<double> squared_distance_transform(const Mask3D& m, const Spacing& spacing) {
    check_spacing(spacing);
    if (m.count() == 0) throw EmptyMaskError("distance_transform: mask is empty");
    const Dims& d = m.dims;
    ScalarGridT<double> g(d);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = m.data[i] ? 0.0 : kInf;

    std::vector<double> line, out, z;
    std::vector<int> v;
    // D axis (contiguous), then W, then H.
    for (int i = 0; i < d.h; ++i) {
        for (int j = 0; j < d.w; ++j) {
            line.assign(g.data.begin() + d.index(i, j, 0), g.data.begin() + d.index(i, j, 0) + d.d);
            envelope_1d(line, spacing[2], out, v, z);
            std::copy(out.begin(), out.end(), g.data.begin() + d.index(i, j, 0));
        }
    }
    line.resize(d.w);
    for (int i = 0; i < d.h; ++i) {
        for (int k = 0; k < d.d; ++k) {
            line.resize(d.w);
            for (int j = 0; j < d.w; ++j) line[j] = g.data[d.index(i, j, k)];
            envelope_1d(line, spacing[1], out, v, z);
            for (int j = 0; j < d.w; ++j) g.data[d.index(i, j, k)] = out[j];
        }
    }
    for (int j = 0; j < d.w; ++j) {
        for (int k = 0; k < d.d; ++k) {
            line.resize(d.h);
            for (int i = 0; i < d.h; ++i) line[i] = g.data[d.index(i, j, k)];
            envelope_1d(line, spacing[0], out, v, z);
            for (int i = 0; i < d.h; ++i) g.data[d.index(i, j, k)] = out[i];
        }
    }
    return g;
}

ScalarGrid distance_transform(const Mask3D& m, const Spacing& spacing) {
    auto sq = squared_distance_transform(m, spacing);
    ScalarGrid out(m.dims);
    for (std::size_t i = 0; i < sq.data.size(); ++i) out.data[i] = static_cast<float>(std::sqrt(sq.data[i]));
    return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile of an empty set");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
    return values[rank - 1];
}

namespace {

Mask3D mask_of(const Dims& dims, const std::vector<std::size_t>& voxels) {
    Mask3D m(dims);
    for (auto v : voxels) m.data[v] = 1;
    return m;
}

std::vector<double> directed_distances(const std::vector<std::size_t>& from, const ScalarGridT<double>& sq) {
    std::vector<double> d;
    d.reserve(from.size());
    for (auto v : from) d.push_back(std::sqrt(sq.data[v]));
    return d;
}

}  // namespace

double hd95(const Mask3D& pred, const Mask3D& gt, const Spacing& spacing) {
    require_same_dims(pred.dims, gt.dims, "hd95");
    if (pred.count() == 0 || gt.count() == 0) throw EmptyMaskError("hd95 undefined: empty mask");
    const auto sp = extract_surface(pred);
    const auto sg = extract_surface(gt);
    const auto dt_pred = squared_distance_transform(mask_of(pred.dims, sp), spacing);
    const auto dt_gt = squared_distance_transform(mask_of(gt.dims, sg), spacing);
    const double a = nearest_rank_percentile(directed_distances(sp, dt_gt), 0.95);
    const double b = nearest_rank_percentile(directed_distances(sg, dt_pred), 0.95);
    return std::max(a, b);
}

double volume_diagonal_mm(const Dims& dims, const Spacing& spacing) {
    const double x = (dims.h - 1) * static_cast<double>(spacing[0]);
    const double y = (dims.w - 1) * static_cast<double>(spacing[1]);
    const double z = (dims.d - 1) * static_cast<double>(spacing[2]);
    return std::sqrt(x * x + y * y + z * z);
}

}  // namespace voxseed
