#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lsens/metrics.hpp"

namespace lsens {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major
};

// Color for one (label, single, ensemble) agreement combination. The mapping
// is total and injective over the 8 codes:
//   (1,1,1) white   both correct        (0,1,0) red     single false alarm
//   (1,0,1) cyan    only ensemble hit   (0,0,1) blue    ensemble false alarm
//   (1,1,0) yellow  only single hit     (0,1,1) magenta both false alarm
//   (1,0,0) green   both missed         (0,0,0) black   background
std::array<std::uint8_t, 3> diff_color(bool label, bool single_pred, bool ensemble_pred);

// Per-pixel agreement raster; pixels outside the valid mask turn dark gray.
RgbImage diff_map(const std::vector<std::uint8_t>& label,
                  const std::vector<std::uint8_t>& single_bin,
                  const std::vector<std::uint8_t>& ensemble_bin,
                  const std::vector<std::uint8_t>& valid, int width, int height);

// Machine-readable color key for diff maps.
std::string diff_legend_json();

// 8-bit truecolor PNG, written atomically.
void write_png(const RgbImage& image, const std::string& path);

// PNG plus the legend at path + ".json".
void save_diff_map(const RgbImage& image, const std::string& path);

// Pixel position of a score inside the rendered diagram, exposed so tests
// can check marker placement without re-deriving the layout.
double diagram_x(double precision);
double diagram_y(double recall);

// Precision/recall skill diagram as SVG markup: unit-square axes, the F1
// isolines and frequency-bias rays carried by the spec, one labeled marker
// per point.
std::string render_diagram_svg(const DiagramSpec& spec);

void render_diagram(const DiagramSpec& spec, const std::string& out_path);

}  // namespace lsens
