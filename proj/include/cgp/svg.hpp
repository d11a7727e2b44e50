#pragma once

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/data.hpp"
#include "cgp/evaluation.hpp"
#include "cgp/prediction.hpp"

namespace cgp {

// Class color palette (10 classes), then gray for class-free models.
inline const char* class_color(int cls) {
  static const std::array<const char*, 10> kPalette = {
      "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231",
      "#911eb4", "#46f0f0", "#f032e6", "#bcf60c", "#008080"};
  if (cls < 0) return "#7f8ca0";
  return kPalette[static_cast<std::size_t>(cls) % kPalette.size()];
}

namespace svg {

// Tiny SVG assembler; coordinates are already in pixel space.
class Writer {
 public:
  Writer(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, const std::string& stroke,
            const std::string& fill) {
    body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
          << "\" stroke=\"" << stroke << "\" fill=\"" << fill << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0) {
    body_ << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\"" << fill
          << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                double width, double opacity) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width
          << "\" stroke-opacity=\"" << opacity << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << x << ',' << y << ' ';
    body_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11.0) {
    body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\">" << s << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
       << height_ << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\">\n";
    os << body_.str();
    os << "</svg>\n";
    return os.str();
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

}  // namespace svg

// Grid of prediction panels for one test item: rows sweep the prefix length
// t, columns the horizon dt. Each panel shows the observed prefix (blue
// dots), the true continuation (gray dots), the final observed point (red),
// and n overlaid rollouts colored by their first sampled class.
inline std::string render_prediction_svg(const ModelRef& ref, const TrajectorySample& item,
                                         const std::vector<int>& ts, const std::vector<int>& dts,
                                         int n_rollouts, std::uint64_t seed) {
  if (ts.empty() || dts.empty())
    throw std::invalid_argument("render_prediction_svg: empty t or dt sweep");
  for (int t : ts)
    if (t < 1 || static_cast<std::size_t>(t) >= item.length())
      throw std::invalid_argument("render_prediction_svg: prefix t=" + std::to_string(t) +
                                  " outside the sequence of length " +
                                  std::to_string(item.length()));

  const double panel = 180.0, margin = 14.0, pad = 10.0;
  const double width = margin + dts.size() * (panel + margin);
  const double height = margin + ts.size() * (panel + margin);
  svg::Writer w(width, height);

  const RelativeSequence full = to_relative(item);
  for (std::size_t row = 0; row < ts.size(); ++row) {
    for (std::size_t col = 0; col < dts.size(); ++col) {
      const int t = ts[row];
      const int dt = dts[col];
      const double ox = margin + col * (panel + margin);
      const double oy = margin + row * (panel + margin);
      // data space [0,127]^2 -> panel, y flipped
      const auto px = [&](const Point& p) {
        return std::pair<double, double>{
            ox + pad + p[0] / 127.0 * (panel - 2 * pad),
            oy + panel - pad - p[1] / 127.0 * (panel - 2 * pad)};
      };
      w.rect(ox, oy, panel, panel, "#cccccc", "none");
      w.text(ox + 4, oy + 12, "t=" + std::to_string(t) + " dt=" + std::to_string(dt));

      RelativeSequence prefix{full.origin,
                              {full.deltas.begin(), full.deltas.begin() + (t - 1)}};
      const Point last_obs = item.coords[static_cast<std::size_t>(t - 1)];
      for (int i = 0; i < n_rollouts; ++i) {
        std::vector<Point> abs;
        int cls = -1;
        if (ref.cgp) {
          Rng rng = Rng(seed).derive(hash_tag("figure"), i);
          const RolloutResult r = rollout(*ref.cgp, prefix, dt, rng);
          abs = r.absolute;
          cls = r.classes.front();
        } else if (ref.mdn) {
          Rng rng = Rng(seed).derive(hash_tag("figure"), i);
          abs = mdn_rollout(*ref.mdn, prefix, dt, rng).absolute;
        } else if (ref.dlstm) {
          abs = dlstm_rollout(*ref.dlstm, prefix, dt).absolute;
        } else {
          const std::vector<Point> abs_prefix(item.coords.begin(), item.coords.begin() + t);
          abs = nn_predict(*ref.nn, abs_prefix, dt);
        }
        std::vector<std::pair<double, double>> pts{px(last_obs)};
        for (const auto& p : abs) pts.push_back(px(p));
        w.polyline(pts, class_color(cls), 1.2, ref.probabilistic() ? 0.35 : 0.9);
        if (!ref.probabilistic()) break;  // deterministic: one line is the prediction
      }
      for (int i = t; i < static_cast<int>(item.length()); ++i)
        w.circle(px(item.coords[i]).first, px(item.coords[i]).second, 1.6, "#9a9a9a", 0.8);
      for (int i = 0; i < t; ++i)
        w.circle(px(item.coords[i]).first, px(item.coords[i]).second, 1.8, "#1f77b4", 0.9);
      w.circle(px(last_obs).first, px(last_obs).second, 3.0, "#d62728");
    }
  }
  return w.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_text_file: cannot open " + path);
  out << content;
  if (!out) throw std::runtime_error("write_text_file: write failed for " + path);
}

}  // namespace cgp
