#ifndef LIQA_FIGURES_HPP
#define LIQA_FIGURES_HPP

#include <string>
#include <vector>

#include "liqa/core.hpp"

// Chart emission without a plotting dependency: SVG for the vector variant
// and a zlib-backed PNG raster. Every figure gets a CSV sidecar written by
// the harness with exactly the plotted values.
namespace liqa::figures {

struct Series {
  std::string name;
  std::vector<Scalar> x, y;
};

struct ScatterClass {
  std::string name;
  std::vector<Scalar> x, y;
  bool cross_marker = false;  // false: filled dot, true: x marker
  int color_index = 0;
};

void write_line_chart(const std::string& path_base, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

void write_scatter_chart(const std::string& path_base, const std::string& title,
                         const std::vector<ScatterClass>& classes);

// Minimal RGB8 PNG writer.
void write_png(const std::string& path, int width, int height,
               const std::vector<unsigned char>& rgb);

}  // namespace liqa::figures

#endif  // LIQA_FIGURES_HPP
