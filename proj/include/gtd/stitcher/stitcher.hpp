#pragma once

// Phase-correlation registration of microscope fields and running-average
// mosaic assembly.
//
// Offsets: register_frames(a, b) returns where frame b's origin lies in frame
// a's pixel coordinates, i.e. b(x, y) ~ a(x + dx, y + dy). A viewer moving the
// stage right by 40 px yields dx = +40.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtd/error.hpp"
#include "gtd/numerics/fft.hpp"
#include "gtd/numerics/rng.hpp"
#include "gtd/slideio/raster.hpp"

namespace gtd::stitch {

struct FieldFrame {
    slideio::SlideImage rgb;
    std::vector<slideio::ProbMap> probs;  // optional per-class maps, same dims as rgb
    int index = 0;
    int true_x = 0, true_y = 0;  // simulator ground truth; unused by registration
};

struct StitchTransform {
    double dx = 0.0, dy = 0.0;  // subpixel offset
    int ix = 0, iy = 0;         // integer peak
    double confidence = 0.0;    // phase-correlation peak height, 0..1
    bool accepted = false;
};

struct RegisterOptions {
    double min_confidence = 0.05;
    double min_variance = 1e-6;  // luma variance in [0,1] units below which a frame is flat
    double taper = 0.2;          // Tukey edge-taper fraction; 1 = Hann, 0 = none
};

namespace detail {

inline std::vector<double> luma01(const slideio::SlideImage& img) {
    std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) g[static_cast<std::size_t>(y) * img.width + x] = img.gray(x, y) / 255.0;
    return g;
}

inline double tukey(int i, int n, double alpha) {
    if (n <= 1 || alpha <= 0.0) return 1.0;
    const double u = (i + 0.5) / n, edge = std::min(u, 1.0 - u), half = alpha / 2.0;
    return edge >= half ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / half);
}

/// Mean-removed, optionally tapered luma zero-padded into an M x M' field.
inline num::ComplexField prepared(const std::vector<double>& g, int w, int h, std::size_t rows, std::size_t cols,
                                  double taper) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    num::ComplexField f(rows, cols);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double wv = tukey(x, w, taper) * tukey(y, h, taper);
            f(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = (g[static_cast<std::size_t>(y) * w + x] - mean) * wv;
        }
    return f;
}

inline double variance(const std::vector<double>& g) {
    double s = 0.0, sq = 0.0;
    for (double v : g) {
        s += v;
        sq += v * v;
    }
    const double n = static_cast<double>(g.size());
    return std::max(0.0, sq / n - (s / n) * (s / n));
}

/// Vertex offset of a parabola through (-1, a), (0, b), (1, c).
inline double parabolic(double a, double b, double c) {
    const double den = a - 2.0 * b + c;
    if (!(std::abs(den) > 1e-15)) return 0.0;
    return std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
}

} // namespace detail

/// Phase correlation with zero padding to at least twice the frame size, so
/// shifts up to +-N/2 are unambiguous for non-periodic content.
inline StitchTransform register_frames(const slideio::SlideImage& a, const slideio::SlideImage& b,
                                       const RegisterOptions& opt = {}) {
    if (a.width != b.width || a.height != b.height)
        throw ContractError("register: frames differ in size (" + std::to_string(a.width) + "x" +
                            std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                            std::to_string(b.height) + ")");
    StitchTransform t;
    const auto ga = detail::luma01(a), gb = detail::luma01(b);
    if (detail::variance(ga) < opt.min_variance || detail::variance(gb) < opt.min_variance) return t;

    const std::size_t rows = num::next_pow2(2 * static_cast<std::size_t>(a.height));
    const std::size_t cols = num::next_pow2(2 * static_cast<std::size_t>(a.width));
    auto fa = num::fft2(detail::prepared(ga, a.width, a.height, rows, cols, opt.taper));
    auto fb = num::fft2(detail::prepared(gb, b.width, b.height, rows, cols, opt.taper));
    double energy = 0.0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) energy = std::max(energy, std::abs(fa.data[i] * std::conj(fb.data[i])));
    const double floor = 1e-12 * energy;
    std::size_t live = 0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) {
        const auto r = fa.data[i] * std::conj(fb.data[i]);
        const double m = std::abs(r);
        if (m > floor) {
            fa.data[i] = r / m;
            ++live;
        } else {
            fa.data[i] = 0.0;
        }
    }
    if (live == 0) return t;
    const auto corr = num::ifft2(std::move(fa));

    // With Fa * conj(Fb) and b(x) = a(x + d) the peak lands at +d.
    std::size_t best = 0;
    for (std::size_t i = 1; i < corr.data.size(); ++i)
        if (corr.data[i].real() > corr.data[best].real()) best = i;
    const auto pr = best / cols, pc = best % cols;
    auto wrap = [](std::size_t p, std::size_t n) {
        return p > n / 2 ? static_cast<int>(p) - static_cast<int>(n) : static_cast<int>(p);
    };
    auto at = [&](long r, long c) {
        const auto rr = static_cast<std::size_t>((r + static_cast<long>(rows)) % static_cast<long>(rows));
        const auto cc = static_cast<std::size_t>((c + static_cast<long>(cols)) % static_cast<long>(cols));
        return corr(rr, cc).real();
    };
    const long r0 = static_cast<long>(pr), c0 = static_cast<long>(pc);
    const double peak = at(r0, c0);
    const double sx = detail::parabolic(at(r0, c0 - 1), peak, at(r0, c0 + 1));
    const double sy = detail::parabolic(at(r0 - 1, c0), peak, at(r0 + 1, c0));
    t.ix = wrap(pc, cols);
    t.iy = wrap(pr, rows);
    t.dx = t.ix + sx;
    t.dy = t.iy + sy;
    t.confidence = std::clamp(peak, 0.0, 1.0);
    t.accepted = t.confidence >= opt.min_confidence;
    return t;
}

// ---------------------------------------------------------------------------
// Mosaic

/// Running per-pixel sums over a canvas that grows in any direction. Frames are
/// placed at integer positions (subpixel offsets are rounded).
class Mosaic {
public:
    explicit Mosaic(int classes = 0) : classes_(classes) {}

    int x0() const { return x0_; }
    int y0() const { return y0_; }
    int width() const { return w_; }
    int height() const { return h_; }
    int classes() const { return classes_; }
    bool empty() const { return w_ == 0; }

    void add(const FieldFrame& f, int px, int py) {
        if (static_cast<int>(f.probs.size()) != classes_)
            throw ContractError("mosaic: frame carries " + std::to_string(f.probs.size()) + " probability maps, expected " +
                                std::to_string(classes_));
        for (const auto& p : f.probs)
            if (p.width != f.rgb.width || p.height != f.rgb.height)
                throw ContractError("mosaic: probability map dims differ from the frame");
        grow(px, py, px + f.rgb.width, py + f.rgb.height);
        for (int y = 0; y < f.rgb.height; ++y)
            for (int x = 0; x < f.rgb.width; ++x) {
                const std::size_t i = index(px + x, py + y);
                const auto* p = f.rgb.px(x, y);
                for (int c = 0; c < 3; ++c) rgb_[3 * i + static_cast<std::size_t>(c)] += p[c];
                for (int k = 0; k < classes_; ++k) prob_[static_cast<std::size_t>(k)][i] += f.probs[static_cast<std::size_t>(k)](x, y);
                ++count_[i];
            }
    }

    /// Canvas pixel (global coordinates) mean in 8-bit units; NaN if uncovered.
    double mean_rgb(int gx, int gy, int c) const {
        const std::size_t i = index(gx, gy);
        return count_[i] ? rgb_[3 * i + static_cast<std::size_t>(c)] / count_[i] : std::nan("");
    }
    int count(int gx, int gy) const { return count_[index(gx, gy)]; }
    bool contains(int gx, int gy) const { return gx >= x0_ && gy >= y0_ && gx < x0_ + w_ && gy < y0_ + h_; }

    slideio::SlideImage rgb() const {
        slideio::SlideImage out(std::max(w_, 1), std::max(h_, 1));
        for (std::size_t i = 0; i < count_.size(); ++i)
            if (count_[i])
                for (int c = 0; c < 3; ++c)
                    out.rgb[3 * i + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(
                        std::lround(std::clamp(rgb_[3 * i + static_cast<std::size_t>(c)] / count_[i], 0.0, 255.0)));
        return out;
    }

    slideio::ProbMap prob(int k) const {
        slideio::ProbMap out(std::max(w_, 1), std::max(h_, 1));
        for (std::size_t i = 0; i < count_.size(); ++i)
            if (count_[i]) out.data[i] = static_cast<float>(prob_[static_cast<std::size_t>(k)][i] / count_[i]);
        return out;
    }

    slideio::Plane<std::int32_t> counts() const {
        slideio::Plane<std::int32_t> out(std::max(w_, 1), std::max(h_, 1));
        for (std::size_t i = 0; i < count_.size(); ++i) out.data[i] = count_[i];
        return out;
    }

private:
    std::size_t index(int gx, int gy) const {
        return static_cast<std::size_t>(gy - y0_) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(gx - x0_);
    }

    void grow(int ax, int ay, int bx, int by) {
        if (!empty() && ax >= x0_ && ay >= y0_ && bx <= x0_ + w_ && by <= y0_ + h_) return;
        const int nx0 = empty() ? ax : std::min(x0_, ax), ny0 = empty() ? ay : std::min(y0_, ay);
        const int nx1 = empty() ? bx : std::max(x0_ + w_, bx), ny1 = empty() ? by : std::max(y0_ + h_, by);
        const int nw = nx1 - nx0, nh = ny1 - ny0;
        std::vector<double> rgb(static_cast<std::size_t>(nw) * nh * 3, 0.0);
        std::vector<std::vector<double>> prob(static_cast<std::size_t>(classes_),
                                              std::vector<double>(static_cast<std::size_t>(nw) * nh, 0.0));
        std::vector<int> count(static_cast<std::size_t>(nw) * nh, 0);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                const std::size_t o = static_cast<std::size_t>(y) * w_ + x;
                const std::size_t n = static_cast<std::size_t>(y + y0_ - ny0) * nw + (x + x0_ - nx0);
                for (int c = 0; c < 3; ++c) rgb[3 * n + static_cast<std::size_t>(c)] = rgb_[3 * o + static_cast<std::size_t>(c)];
                for (int k = 0; k < classes_; ++k) prob[static_cast<std::size_t>(k)][n] = prob_[static_cast<std::size_t>(k)][o];
                count[n] = count_[o];
            }
        rgb_ = std::move(rgb);
        prob_ = std::move(prob);
        count_ = std::move(count);
        x0_ = nx0;
        y0_ = ny0;
        w_ = nw;
        h_ = nh;
    }

    int classes_;
    int x0_ = 0, y0_ = 0, w_ = 0, h_ = 0;
    std::vector<double> rgb_;
    std::vector<std::vector<double>> prob_;
    std::vector<int> count_;
};

// ---------------------------------------------------------------------------
// Session: chain registration against the last accepted frame.

struct StitchLogEntry {
    int frame = 0;
    double dx = 0.0, dy = 0.0;
    double confidence = 0.0;
    bool accepted = false;

    nlohmann::ordered_json to_json() const {
        return {{"frame", frame}, {"dx", dx}, {"dy", dy}, {"confidence", confidence}, {"accepted", accepted}};
    }
};

class StitchSession {
public:
    explicit StitchSession(int classes = 0, RegisterOptions opt = {}) : mosaic_(classes), opt_(opt) {}

    /// Registers against the last accepted frame; the first frame anchors at (0,0).
    const StitchLogEntry& append(const FieldFrame& f) {
        StitchLogEntry e;
        e.frame = f.index;
        if (!last_) {
            e.confidence = 1.0;
            e.accepted = true;
            place(f, 0.0, 0.0);
        } else {
            const auto t = register_frames(last_->rgb, f.rgb, opt_);
            e.dx = t.dx;
            e.dy = t.dy;
            e.confidence = t.confidence;
            e.accepted = t.accepted;
            if (t.accepted)
                place(f, pos_x_ + t.dx, pos_y_ + t.dy);
            else
                queued_.push_back(f.index);
        }
        log_.push_back(e);
        return log_.back();
    }

    const Mosaic& mosaic() const { return mosaic_; }
    const std::vector<StitchLogEntry>& log() const { return log_; }
    const std::vector<int>& queued() const { return queued_; }
    /// Integer canvas position of every accepted frame, in capture order.
    const std::vector<std::pair<int, int>>& placements() const { return placements_; }

    std::size_t accepted_count() const {
        return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [](const auto& e) { return e.accepted; }));
    }

    std::string log_jsonl() const {
        std::string s;
        for (const auto& e : log_) s += e.to_json().dump() + "\n";
        return s;
    }

private:
    void place(const FieldFrame& f, double x, double y) {
        pos_x_ = x;
        pos_y_ = y;
        const int px = static_cast<int>(std::lround(x)), py = static_cast<int>(std::lround(y));
        mosaic_.add(f, px, py);
        placements_.push_back({px, py});
        last_ = f;
    }

    Mosaic mosaic_;
    RegisterOptions opt_;
    std::optional<FieldFrame> last_;
    double pos_x_ = 0.0, pos_y_ = 0.0;
    std::vector<StitchLogEntry> log_;
    std::vector<int> queued_;
    std::vector<std::pair<int, int>> placements_;
};

// ---------------------------------------------------------------------------
// Viewport simulator

struct PathSpec {
    int field_width = 256;
    int field_height = 256;
    int cols = 3;
    int rows = 3;
    double overlap = 0.5;  // fraction of the field shared by grid neighbours
    int start_x = 0;
    int start_y = 0;
};

struct JitterSpec {
    int offset_px = 0;              // uniform integer jitter in [-offset_px, offset_px] per axis
    double gain_lo = 1.0, gain_hi = 1.0;
    double gamma_lo = 1.0, gamma_hi = 1.0;

    static JitterSpec none() { return {}; }
    static JitterSpec typical(int offset = 6) { return {offset, 0.9, 1.1, 0.9, 1.1}; }
};

struct Viewport {
    std::vector<FieldFrame> frames;
    std::string warning;  // set when the path had to be clamped into the slide
};

/// Serpentine scan (left-to-right on even rows, right-to-left on odd rows).
inline Viewport simulate_viewport(const slideio::SlideImage& slide, const PathSpec& path, const JitterSpec& jitter,
                                  std::uint64_t seed, const std::vector<slideio::ProbMap>& probs = {}) {
    if (path.field_width > slide.width || path.field_height > slide.height)
        throw ContractError("simulate_viewport: field larger than the slide");
    if (path.cols < 1 || path.rows < 1 || !(path.overlap >= 0.0 && path.overlap < 1.0))
        throw ContractError("simulate_viewport: bad path spec");
    for (const auto& p : probs)
        if (p.width != slide.width || p.height != slide.height)
            throw ContractError("simulate_viewport: probability map dims differ from the slide");
    const int sx = static_cast<int>(std::lround(path.field_width * (1.0 - path.overlap)));
    const int sy = static_cast<int>(std::lround(path.field_height * (1.0 - path.overlap)));
    // worst-case neighbour overlap must stay >= 25% of the field area
    const double ox = 1.0 - static_cast<double>(std::max(sx, 0) + 2 * jitter.offset_px) / path.field_width;
    const double oy = 1.0 - static_cast<double>(2 * jitter.offset_px) / path.field_height;
    const double ox2 = 1.0 - static_cast<double>(2 * jitter.offset_px) / path.field_width;
    const double oy2 = 1.0 - static_cast<double>(sy + 2 * jitter.offset_px) / path.field_height;
    if (ox * oy < 0.25 || ox2 * oy2 < 0.25)
        throw ContractError("simulate_viewport: step plus jitter leaves less than 25% overlap between neighbours");

    num::Rng rng(num::derive_seed(seed, "viewport"));
    Viewport out;
    int idx = 0;
    for (int r = 0; r < path.rows; ++r)
        for (int k = 0; k < path.cols; ++k) {
            const int c = r % 2 == 0 ? k : path.cols - 1 - k;
            int x = path.start_x + c * sx, y = path.start_y + r * sy;
            if (jitter.offset_px > 0) {
                x += static_cast<int>(rng.integer(-jitter.offset_px, jitter.offset_px));
                y += static_cast<int>(rng.integer(-jitter.offset_px, jitter.offset_px));
            }
            const double gain = rng.uniform(jitter.gain_lo, jitter.gain_hi);
            const double gamma = rng.uniform(jitter.gamma_lo, jitter.gamma_hi);
            const int cx = std::clamp(x, 0, slide.width - path.field_width);
            const int cy = std::clamp(y, 0, slide.height - path.field_height);
            if ((cx != x || cy != y) && out.warning.empty())
                out.warning = "viewport path leaves the slide at frame " + std::to_string(idx) + "; clamped";
            FieldFrame f;
            f.index = idx++;
            f.true_x = cx;
            f.true_y = cy;
            f.rgb = slideio::SlideImage(path.field_width, path.field_height);
            const bool identity = gain == 1.0 && gamma == 1.0;
            for (int yy = 0; yy < path.field_height; ++yy)
                for (int xx = 0; xx < path.field_width; ++xx) {
                    const auto* s = slide.px(cx + xx, cy + yy);
                    auto* d = f.rgb.px(xx, yy);
                    for (int ch = 0; ch < 3; ++ch)
                        d[ch] = identity ? s[ch]
                                         : static_cast<std::uint8_t>(std::lround(
                                               std::clamp(255.0 * gain * std::pow(s[ch] / 255.0, gamma), 0.0, 255.0)));
                }
            for (const auto& p : probs) {
                slideio::ProbMap crop(path.field_width, path.field_height);
                for (int yy = 0; yy < path.field_height; ++yy)
                    for (int xx = 0; xx < path.field_width; ++xx) crop(xx, yy) = p(cx + xx, cy + yy);
                f.probs.push_back(std::move(crop));
            }
            out.frames.push_back(std::move(f));
        }
    return out;
}

} // namespace gtd::stitch
