#include "phinet/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "phinet/errors.hpp"

namespace phinet {
namespace {

const std::array<const char*, 6> kLineColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

const std::array<std::array<float, 3>, 8> kLabelColors{{{0.0f, 0.0f, 0.0f},
                                                        {0.90f, 0.20f, 0.20f},
                                                        {0.20f, 0.70f, 0.25f},
                                                        {0.20f, 0.40f, 0.95f},
                                                        {0.95f, 0.80f, 0.10f},
                                                        {0.70f, 0.30f, 0.85f},
                                                        {0.10f, 0.80f, 0.85f},
                                                        {0.95f, 0.55f, 0.15f}}};

}  // namespace

void write_line_chart_svg(const std::string& title, const std::vector<double>& x, const std::vector<Series>& series,
                          const std::filesystem::path& path) {
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double x0 = x.empty() ? 0 : x.front(), x1 = x.empty() ? 1 : x.back();
  double y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  if (y0 > y1) y0 = 0, y1 = 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
    const double u = x0 + (x1 - x0) * i / 4.0;
    out << "<text x=\"" << px(u) << "\" y=\"" << H - B + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << std::lround(u) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kLineColors[s % kLineColors.size()];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(x.size(), series[s].y.size()); ++i)
      if (std::isfinite(series[s].y[i])) out << px(x[i]) << "," << py(series[s].y[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
        << series[s].name << "</text>\n";
  }
  out << "</svg>\n";
}

std::vector<int> strip_frames(int length) {
  if (length < 1) throw ProtocolError("strip_frames: empty sequence");
  const int last = length - 1;
  return {0, static_cast<int>(std::lround(0.25 * last)), static_cast<int>(std::lround(0.75 * last)), last};
}

Frame render_mask_strip(const std::vector<LabelGrid>& masks, const std::vector<Frame>& frames, int size) {
  if (masks.empty()) throw ProtocolError("render_mask_strip: no panels");
  const int gap = 2;
  const int n = static_cast<int>(masks.size());
  Frame strip(3, 1);
  for (auto& p : strip.planes) p = Eigen::MatrixXf::Ones(size, n * size + (n - 1) * gap);
  for (int i = 0; i < n; ++i) {
    const LabelGrid& m = masks[i];
    const int ox = i * (size + gap);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int l = m(y * m.rows() / size, x * m.cols() / size);
        const auto& c = kLabelColors[static_cast<std::size_t>(l) % kLabelColors.size()];
        for (int ch = 0; ch < 3; ++ch) {
          float base = 0.5f;
          if (!frames.empty()) {
            const Frame& f = frames[i];
            base = f.planes[std::min(ch, f.channels() - 1)](y * f.height() / size, x * f.width() / size);
          }
          strip.planes[ch](y, ox + x) = l == 0 ? base : 0.45f * base + 0.55f * c[ch];
        }
      }
  }
  return strip;
}

}  // namespace phinet
