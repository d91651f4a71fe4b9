#pragma once

// Minimal SVG charts: line plots with optional shaded bands, and heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "eegclip/tensor.hpp"

namespace eegclip::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::vector<double> lo, hi;  // optional band, same length as x
};

namespace detail {

inline std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return palette[i % 6];
}

}  // namespace detail

inline std::string line_plot_svg(const std::vector<Series>& series, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel,
                                 bool log_x = false) {
  const double W = 640, H = 420, L = 70, R = 150, T = 40, B = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  const auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      const double lo = s.lo.empty() ? s.y[i] : s.lo[i], hi = s.hi.empty() ? s.y[i] : s.hi[i];
      y0 = std::min({y0, s.y[i], lo});
      y1 = std::max({y1, s.y[i], hi});
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) +
                  "\" height=\"" + detail::num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::esc(title) + "</text>\n";
  s += "<rect x=\"" + detail::num(L) + "\" y=\"" + detail::num(T) + "\" width=\"" +
       detail::num(W - L - R) + "\" height=\"" + detail::num(H - T - B) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    s += "<text x=\"" + detail::num(L - 6) + "\" y=\"" + detail::num(py(yv) + 4) +
         "\" text-anchor=\"end\">" + detail::num(yv) + "</text>\n";
    const double xpos = L + (xv - x0) / (x1 - x0) * (W - L - R);
    s += "<text x=\"" + detail::num(xpos) + "\" y=\"" + detail::num(H - B + 16) +
         "\" text-anchor=\"middle\">" + detail::num(log_x ? std::pow(10.0, xv) : xv) + "</text>\n";
  }
  s += "<text x=\"" + detail::num(L + (W - L - R) / 2) + "\" y=\"" + detail::num(H - 12) +
       "\" text-anchor=\"middle\">" + detail::esc(xlabel) + "</text>\n";
  s += "<text transform=\"translate(16," + detail::num(T + (H - T - B) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + detail::esc(ylabel) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    if (!sr.lo.empty() && sr.lo.size() == sr.x.size()) {
      std::string pts;
      for (std::size_t i = 0; i < sr.x.size(); ++i) pts += detail::num(px(sr.x[i])) + "," + detail::num(py(sr.hi[i])) + " ";
      for (std::size_t i = sr.x.size(); i-- > 0;) pts += detail::num(px(sr.x[i])) + "," + detail::num(py(sr.lo[i])) + " ";
      s += "<polygon points=\"" + pts + "\" fill=\"" + detail::color(k) + "\" fill-opacity=\"0.2\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < sr.x.size(); ++i) pts += detail::num(px(sr.x[i])) + "," + detail::num(py(sr.y[i])) + " ";
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + detail::color(k) + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::num(W - R + 10) + "\" y=\"" + detail::num(T + 16 + 18.0 * double(k)) +
         "\" fill=\"" + detail::color(k) + "\">" + detail::esc(sr.name) + "</text>\n";
  }
  return s + "</svg>\n";
}

// Rows are labelled (e.g. electrodes); columns follow `x_axis`.
inline std::string heatmap_svg(const Tensor<double>& values, const std::vector<std::string>& row_labels,
                               const std::vector<double>& x_axis, const std::string& title,
                               const std::string& xlabel) {
  const std::size_t rows = values.dim(0), cols = values.dim(1);
  const double L = 60, T = 40, cell_h = 16, plot_w = 600;
  const double W = L + plot_w + 20, H = T + cell_h * double(rows) + 50;
  double lo = 1e300, hi = -1e300;
  for (double v : values.data) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1;
  const double cw = plot_w / double(std::max<std::size_t>(cols, 1));
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) +
                  "\" height=\"" + detail::num(H) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::esc(title) + "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = T + cell_h * double(r);
    s += "<text x=\"" + detail::num(L - 4) + "\" y=\"" + detail::num(y + cell_h - 4) +
         "\" text-anchor=\"end\">" + detail::esc(r < row_labels.size() ? row_labels[r] : "") + "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = (values(r, c) - lo) / (hi - lo);
      const int red = int(255 * t), blue = int(255 * (1 - t));
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", red, std::min(red, blue) / 2, blue);
      s += "<rect x=\"" + detail::num(L + cw * double(c)) + "\" y=\"" + detail::num(y) + "\" width=\"" +
           detail::num(cw + 0.3) + "\" height=\"" + detail::num(cell_h) + "\" fill=\"" + fill + "\"/>\n";
    }
  }
  const double ya = T + cell_h * double(rows) + 14;
  for (int i = 0; i <= 5 && !x_axis.empty(); ++i) {
    const std::size_t c = std::min(cols - 1, std::size_t(double(cols - 1) * i / 5.0));
    s += "<text x=\"" + detail::num(L + cw * (double(c) + 0.5)) + "\" y=\"" + detail::num(ya) +
         "\" text-anchor=\"middle\">" + detail::num(x_axis[c]) + "</text>\n";
  }
  s += "<text x=\"" + detail::num(L + plot_w / 2) + "\" y=\"" + detail::num(ya + 18) +
       "\" text-anchor=\"middle\">" + detail::esc(xlabel) + "</text>\n";
  return s + "</svg>\n";
}

}  // namespace eegclip::plot
