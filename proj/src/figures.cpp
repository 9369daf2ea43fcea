#include "liqa/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <zlib.h>

namespace liqa::figures {

namespace {

constexpr int kWidth = 800, kHeight = 560;
constexpr int kMarginLeft = 70, kMarginRight = 30, kMarginTop = 50, kMarginBottom = 60;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

struct Rgb {
  unsigned char r, g, b;
};

Rgb palette_rgb(int i) {
  static const Rgb colors[kPaletteSize] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},
                                           {255, 127, 14}, {148, 103, 189}, {140, 86, 75},
                                           {23, 190, 207}, {127, 127, 127}};
  return colors[i % kPaletteSize];
}

struct Range {
  Scalar lo = 0.0, hi = 1.0;
  void expand(Scalar v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

struct Bounds {
  Scalar x_lo, x_hi, y_lo, y_hi;

  Scalar px(Scalar x) const {
    const Scalar span = (x_hi > x_lo) ? x_hi - x_lo : 1.0;
    return kMarginLeft + (x - x_lo) / span * (kWidth - kMarginLeft - kMarginRight);
  }
  Scalar py(Scalar y) const {
    const Scalar span = (y_hi > y_lo) ? y_hi - y_lo : 1.0;
    return kHeight - kMarginBottom - (y - y_lo) / span * (kHeight - kMarginTop - kMarginBottom);
  }
};

Bounds compute_bounds(const std::vector<Series>& series) {
  Scalar x_lo = std::numeric_limits<Scalar>::infinity(), x_hi = -x_lo;
  Scalar y_lo = x_lo, y_hi = -x_lo;
  for (const Series& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  if (!(x_lo < x_hi)) x_hi = x_lo + 1.0;
  if (!(y_lo < y_hi)) y_hi = y_lo + 1.0;
  const Scalar pad = 0.05 * (y_hi - y_lo);
  return {x_lo, x_hi, y_lo - pad, y_hi + pad};
}

std::string fmt(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---- SVG ---------------------------------------------------------------------

void svg_header(std::ofstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\""
     << " text-anchor=\"middle\">" << title << "</text>\n";
}

void svg_axes(std::ofstream& os, const Bounds& b, const std::string& x_label,
              const std::string& y_label) {
  os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
     << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
     << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const Scalar xv = b.x_lo + (b.x_hi - b.x_lo) * k / 5.0;
    const Scalar yv = b.y_lo + (b.y_hi - b.y_lo) * k / 5.0;
    os << "<line x1=\"" << b.px(xv) << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
       << b.px(xv) << "\" y2=\"" << kHeight - kMarginBottom + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << b.px(xv) << "\" y=\"" << kHeight - kMarginBottom + 20
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << fmt(xv)
       << "</text>\n";
    os << "<line x1=\"" << kMarginLeft - 5 << "\" y1=\"" << b.py(yv) << "\" x2=\"" << kMarginLeft
       << "\" y2=\"" << b.py(yv) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << b.py(yv) + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << fmt(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (kMarginLeft + kWidth - kMarginRight) / 2 << "\" y=\"" << kHeight - 15
     << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">" << x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << (kMarginTop + kHeight - kMarginBottom) / 2
     << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\""
     << " transform=\"rotate(-90 18 " << (kMarginTop + kHeight - kMarginBottom) / 2 << ")\">"
     << y_label << "</text>\n";
}

// ---- raster canvas ----------------------------------------------------------------

struct Canvas {
  std::vector<unsigned char> rgb;
  Canvas() : rgb(static_cast<std::size_t>(kWidth) * kHeight * 3, 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= kWidth || y >= kHeight) return;
    const std::size_t at = (static_cast<std::size_t>(y) * kWidth + x) * 3;
    rgb[at] = c.r;
    rgb[at + 1] = c.g;
    rgb[at + 2] = c.b;
  }

  void thick(int x, int y, Rgb c) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) set(x + dx, y + dy, c);
  }

  void line(Scalar x0, Scalar y0, Scalar x1, Scalar y1, Rgb c, bool wide = false) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int k = 0; k <= steps; ++k) {
      const Scalar t = static_cast<Scalar>(k) / steps;
      const int x = static_cast<int>(std::lround(x0 + (x1 - x0) * t));
      const int y = static_cast<int>(std::lround(y0 + (y1 - y0) * t));
      if (wide)
        thick(x, y, c);
      else
        set(x, y, c);
    }
  }

  void dot(Scalar cx, Scalar cy, Rgb c) {
    for (int dy = -3; dy <= 3; ++dy)
      for (int dx = -3; dx <= 3; ++dx)
        if (dx * dx + dy * dy <= 9)
          set(static_cast<int>(std::lround(cx)) + dx, static_cast<int>(std::lround(cy)) + dy, c);
  }

  void cross(Scalar cx, Scalar cy, Rgb c) {
    for (int d = -4; d <= 4; ++d) {
      set(static_cast<int>(std::lround(cx)) + d, static_cast<int>(std::lround(cy)) + d, c);
      set(static_cast<int>(std::lround(cx)) + d, static_cast<int>(std::lround(cy)) - d, c);
    }
  }

  void axes(const Bounds& b) {
    const Rgb black{0, 0, 0};
    line(kMarginLeft, kHeight - kMarginBottom, kWidth - kMarginRight, kHeight - kMarginBottom, black);
    line(kMarginLeft, kMarginTop, kMarginLeft, kHeight - kMarginBottom, black);
    for (int k = 0; k <= 5; ++k) {
      const Scalar xv = b.x_lo + (b.x_hi - b.x_lo) * k / 5.0;
      const Scalar yv = b.y_lo + (b.y_hi - b.y_lo) * k / 5.0;
      line(b.px(xv), kHeight - kMarginBottom, b.px(xv), kHeight - kMarginBottom + 5, black);
      line(kMarginLeft - 5, b.py(yv), kMarginLeft, b.py(yv), black);
    }
  }
};

}  // namespace

void write_png(const std::string& path, int width, int height,
               const std::vector<unsigned char>& rgb) {
  require(rgb.size() == static_cast<std::size_t>(width) * height * 3, "write_png: bad buffer size");

  // Filtered scanlines (filter byte 0 per row), then one zlib stream.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(height) * (static_cast<std::size_t>(width) * 3 + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::size_t at = static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(at),
               rgb.begin() + static_cast<std::ptrdiff_t>(at + static_cast<std::size_t>(width) * 3));
  }
  uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(compressed_size);
  require(compress2(compressed.data(), &compressed_size, raw.data(), static_cast<uLong>(raw.size()),
                    6) == Z_OK,
          "write_png: deflate failed");
  compressed.resize(compressed_size);

  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_png: cannot write " + path);
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  auto write_chunk = [&](const char* type, const std::vector<unsigned char>& data) {
    auto be32 = [](std::uint32_t v) {
      return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                          static_cast<unsigned char>(v >> 16),
                                          static_cast<unsigned char>(v >> 8),
                                          static_cast<unsigned char>(v)};
    };
    const auto len = be32(static_cast<std::uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(len.data()), 4);
    os.write(type, 4);
    if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    const auto crc_be = be32(static_cast<std::uint32_t>(crc));
    os.write(reinterpret_cast<const char*>(crc_be.data()), 4);
  };

  std::vector<unsigned char> ihdr(13);
  auto put_be32 = [&](std::size_t at, std::uint32_t v) {
    ihdr[at] = static_cast<unsigned char>(v >> 24);
    ihdr[at + 1] = static_cast<unsigned char>(v >> 16);
    ihdr[at + 2] = static_cast<unsigned char>(v >> 8);
    ihdr[at + 3] = static_cast<unsigned char>(v);
  };
  put_be32(0, static_cast<std::uint32_t>(width));
  put_be32(4, static_cast<std::uint32_t>(height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  write_chunk("IHDR", ihdr);
  write_chunk("IDAT", compressed);
  write_chunk("IEND", {});
}

void write_line_chart(const std::string& path_base, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  require(!series.empty(), "write_line_chart: no series");
  const Bounds b = compute_bounds(series);

  std::ofstream svg(path_base + ".svg");
  require(svg.good(), "write_line_chart: cannot write " + path_base + ".svg");
  svg_header(svg, title);
  svg_axes(svg, b, x_label, y_label);
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << b.px(s.x[i]) << "," << b.py(s.y[i]) << " ";
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      svg << "<circle cx=\"" << b.px(s.x[i]) << "\" cy=\"" << b.py(s.y[i])
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const Scalar ly = kMarginTop + 16.0 * static_cast<Scalar>(si);
    svg << "<rect x=\"" << kWidth - kMarginRight - 130 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << kWidth - kMarginRight - 112 << "\" y=\"" << ly + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";

  Canvas canvas;
  canvas.axes(b);
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const Rgb c = palette_rgb(static_cast<int>(si));
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
      canvas.line(b.px(s.x[i]), b.py(s.y[i]), b.px(s.x[i + 1]), b.py(s.y[i + 1]), c, true);
    for (std::size_t i = 0; i < s.x.size(); ++i) canvas.dot(b.px(s.x[i]), b.py(s.y[i]), c);
  }
  write_png(path_base + ".png", kWidth, kHeight, canvas.rgb);
}

void write_scatter_chart(const std::string& path_base, const std::string& title,
                         const std::vector<ScatterClass>& classes) {
  require(!classes.empty(), "write_scatter_chart: no classes");
  std::vector<Series> as_series;
  for (const ScatterClass& c : classes) as_series.push_back({c.name, c.x, c.y});
  const Bounds b = compute_bounds(as_series);

  std::ofstream svg(path_base + ".svg");
  require(svg.good(), "write_scatter_chart: cannot write " + path_base + ".svg");
  svg_header(svg, title);
  svg_axes(svg, b, "dim 1", "dim 2");
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const ScatterClass& c = classes[ci];
    const char* color = kPalette[c.color_index % kPaletteSize];
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      const Scalar x = b.px(c.x[i]), y = b.py(c.y[i]);
      if (c.cross_marker)
        svg << "<path d=\"M" << x - 4 << " " << y - 4 << " L" << x + 4 << " " << y + 4 << " M"
            << x - 4 << " " << y + 4 << " L" << x + 4 << " " << y - 4 << "\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
      else
        svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3.5\" fill=\"" << color
            << "\"/>\n";
    }
    const Scalar ly = kMarginTop + 16.0 * static_cast<Scalar>(ci);
    svg << "<text x=\"" << kWidth - kMarginRight - 130 << "\" y=\"" << ly + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
        << (c.cross_marker ? "x " : "o ") << c.name << "</text>\n";
  }
  svg << "</svg>\n";

  Canvas canvas;
  canvas.axes(b);
  for (const ScatterClass& c : classes) {
    const Rgb color = palette_rgb(c.color_index);
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (c.cross_marker)
        canvas.cross(b.px(c.x[i]), b.py(c.y[i]), color);
      else
        canvas.dot(b.px(c.x[i]), b.py(c.y[i]), color);
    }
  }
  write_png(path_base + ".png", kWidth, kHeight, canvas.rgb);
}

}  // namespace liqa::figures
