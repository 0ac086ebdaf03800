#include "lsens/render.hpp"

#include <zlib.h>

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <json.hpp>

#include "lsens/common.hpp"

using nlohmann::json;

namespace lsens {

namespace {

struct DiffEntry {
    bool label;
    bool single_pred;
    bool ensemble_pred;
    std::array<std::uint8_t, 3> color;
    const char* name;
    const char* meaning;
};

// Indexed by (label << 2) | (single << 1) | ensemble.
constexpr DiffEntry kDiffTable[8] = {
    {false, false, false, {0, 0, 0}, "black", "background, all agree"},
    {false, false, true, {0, 0, 255}, "blue", "ensemble false alarm"},
    {false, true, false, {255, 0, 0}, "red", "single-model false alarm"},
    {false, true, true, {255, 0, 255}, "magenta", "both false alarm"},
    {true, false, false, {0, 160, 0}, "green", "both missed"},
    {true, false, true, {0, 255, 255}, "cyan", "single missed, ensemble correct"},
    {true, true, false, {255, 255, 0}, "yellow", "single correct, ensemble missed"},
    {true, true, true, {255, 255, 255}, "white", "both correct"},
};

constexpr std::array<std::uint8_t, 3> kInvalidColor = {64, 64, 64};

void put_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(char((v >> 24) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char(v & 0xff));
}

void append_chunk(std::string& out, const char* type, const std::string& data) {
    put_u32_be(out, std::uint32_t(data.size()));
    std::string body = std::string(type, 4) + data;
    out += body;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size()));
    put_u32_be(out, std::uint32_t(crc));
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// Layout: a 480 px unit square with room for tick labels on the left and
// bottom and curve labels on the right.
constexpr double kPlot = 480.0;
constexpr double kLeft = 70.0;
constexpr double kTop = 24.0;
constexpr double kRight = 76.0;
constexpr double kBottom = 64.0;
constexpr double kSvgW = kLeft + kPlot + kRight;
constexpr double kSvgH = kTop + kPlot + kBottom;

const char* kMarkerFill[6] = {"#d64f2a", "#2a6fd6", "#2aa02a",
                              "#8a2ad6", "#c8a02a", "#2ab8c8"};

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::array<std::uint8_t, 3> diff_color(bool label, bool single_pred, bool ensemble_pred) {
    return kDiffTable[(int(label) << 2) | (int(single_pred) << 1) | int(ensemble_pred)].color;
}

RgbImage diff_map(const std::vector<std::uint8_t>& label,
                  const std::vector<std::uint8_t>& single_bin,
                  const std::vector<std::uint8_t>& ensemble_bin,
                  const std::vector<std::uint8_t>& valid, int width, int height) {
    require(width > 0 && height > 0, "diff map dimensions must be positive");
    const std::size_t n = std::size_t(width) * std::size_t(height);
    require(label.size() == n && single_bin.size() == n && ensemble_bin.size() == n &&
                valid.size() == n,
            "diff map inputs do not share the scene shape");

    RgbImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const std::array<std::uint8_t, 3> c =
            valid[i] ? diff_color(label[i] != 0, single_bin[i] != 0, ensemble_bin[i] != 0)
                     : kInvalidColor;
        img.pixels[i * 3] = c[0];
        img.pixels[i * 3 + 1] = c[1];
        img.pixels[i * 3 + 2] = c[2];
    }
    return img;
}

std::string diff_legend_json() {
    json classes = json::array();
    for (const DiffEntry& e : kDiffTable)
        classes.push_back({{"label", int(e.label)},
                           {"single", int(e.single_pred)},
                           {"ensemble", int(e.ensemble_pred)},
                           {"color", {e.color[0], e.color[1], e.color[2]}},
                           {"name", e.name},
                           {"meaning", e.meaning}});
    json legend = {{"classes", classes},
                   {"invalid", {{"color", {kInvalidColor[0], kInvalidColor[1], kInvalidColor[2]}},
                                {"name", "gray"},
                                {"meaning", "outside the valid mask"}}}};
    return legend.dump(2);
}

void write_png(const RgbImage& image, const std::string& path) {
    require(image.width > 0 && image.height > 0, "cannot write an empty image");
    const std::size_t row = std::size_t(image.width) * 3;
    require(image.pixels.size() == row * std::size_t(image.height),
            "pixel buffer does not match the image dimensions");

    // Filter byte 0 (none) before every scanline, then one zlib stream.
    std::string raw;
    raw.reserve((row + 1) * std::size_t(image.height));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(image.pixels.data()) + std::size_t(y) * row,
                   row);
    }
    uLongf zsize = compressBound(uLong(raw.size()));
    std::vector<Bytef> z(zsize);
    require(compress2(z.data(), &zsize, reinterpret_cast<const Bytef*>(raw.data()),
                      uLong(raw.size()), 9) == Z_OK,
            "scanline compression failed");

    std::string ihdr;
    put_u32_be(ihdr, std::uint32_t(image.width));
    put_u32_be(ihdr, std::uint32_t(image.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filtering
    ihdr.push_back(0);   // no interlace

    std::string png("\x89PNG\r\n\x1a\n", 8);
    append_chunk(png, "IHDR", ihdr);
    append_chunk(png, "IDAT", std::string(reinterpret_cast<const char*>(z.data()), zsize));
    append_chunk(png, "IEND", "");
    write_text_atomic(path, png);
}

void save_diff_map(const RgbImage& image, const std::string& path) {
    write_png(image, path);
    write_text_atomic(path + ".json", diff_legend_json());
}

double diagram_x(double precision) { return kLeft + precision * kPlot; }
double diagram_y(double recall) { return kTop + (1.0 - recall) * kPlot; }

std::string render_diagram_svg(const DiagramSpec& spec) {
    for (const DiagramPoint& p : spec.points)
        require(p.s.precision >= 0.0 && p.s.precision <= 1.0 && p.s.recall >= 0.0 &&
                    p.s.recall <= 1.0,
                "diagram point " + p.name + " lies outside the unit square");

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", kSvgW) +
           "\" height=\"" + fmt("%.0f", kSvgH) + "\" viewBox=\"0 0 " + fmt("%.0f", kSvgW) +
           " " + fmt("%.0f", kSvgH) + "\">\n";
    svg += "<rect width=\"" + fmt("%.0f", kSvgW) + "\" height=\"" + fmt("%.0f", kSvgH) +
           "\" fill=\"white\"/>\n";

    // Frequency-bias rays y = b*x, clipped to the unit square.
    for (double b : spec.bias_rays) {
        if (b <= 0.0) continue;
        const double px = b <= 1.0 ? 1.0 : 1.0 / b;
        const double ry = b <= 1.0 ? b : 1.0;
        svg += "<line class=\"bias\" x1=\"" + fmt("%.2f", diagram_x(0)) + "\" y1=\"" +
               fmt("%.2f", diagram_y(0)) + "\" x2=\"" + fmt("%.2f", diagram_x(px)) +
               "\" y2=\"" + fmt("%.2f", diagram_y(ry)) +
               "\" stroke=\"#b8b8b8\" stroke-dasharray=\"5,4\"/>\n";
        const double lx = diagram_x(px) + (b <= 1.0 ? 6.0 : 0.0);
        const double ly = diagram_y(ry) - (b <= 1.0 ? 0.0 : 6.0);
        svg += "<text x=\"" + fmt("%.2f", lx) + "\" y=\"" + fmt("%.2f", ly) +
               "\" font-size=\"11\" fill=\"#888888\">" + fmt("%g", b) + "</text>\n";
    }

    // F1 isolines with their value at the right edge.
    for (const DiagramCurve& c : spec.isolines) {
        if (c.samples.empty()) continue;
        svg += "<polyline class=\"isoline\" fill=\"none\" stroke=\"#d0d0d0\" points=\"";
        for (const auto& [p, r] : c.samples)
            svg += fmt("%.2f", diagram_x(p)) + "," + fmt("%.2f", diagram_y(r)) + " ";
        svg += "\"/>\n";
        const auto& last = c.samples.back();
        svg += "<text x=\"" + fmt("%.2f", diagram_x(last.first) + 8.0) + "\" y=\"" +
               fmt("%.2f", diagram_y(last.second) + 4.0) +
               "\" font-size=\"11\" fill=\"#999999\">" + fmt("%.1f", c.f1) + "</text>\n";
    }

    // Frame and ticks.
    svg += "<rect x=\"" + fmt("%.0f", kLeft) + "\" y=\"" + fmt("%.0f", kTop) + "\" width=\"" +
           fmt("%.0f", kPlot) + "\" height=\"" + fmt("%.0f", kPlot) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 10; ++t) {
        const double v = t / 10.0;
        svg += "<line x1=\"" + fmt("%.2f", diagram_x(v)) + "\" y1=\"" +
               fmt("%.2f", diagram_y(0)) + "\" x2=\"" + fmt("%.2f", diagram_x(v)) + "\" y2=\"" +
               fmt("%.2f", diagram_y(0) + 5.0) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt("%.2f", diagram_x(v)) + "\" y=\"" +
               fmt("%.2f", diagram_y(0) + 20.0) +
               "\" font-size=\"12\" text-anchor=\"middle\">" + fmt("%.1f", v) + "</text>\n";
        svg += "<line x1=\"" + fmt("%.2f", diagram_x(0) - 5.0) + "\" y1=\"" +
               fmt("%.2f", diagram_y(v)) + "\" x2=\"" + fmt("%.2f", diagram_x(0)) + "\" y2=\"" +
               fmt("%.2f", diagram_y(v)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt("%.2f", diagram_x(0) - 9.0) + "\" y=\"" +
               fmt("%.2f", diagram_y(v) + 4.0) +
               "\" font-size=\"12\" text-anchor=\"end\">" + fmt("%.1f", v) + "</text>\n";
    }
    svg += "<text x=\"" + fmt("%.2f", diagram_x(0.5)) + "\" y=\"" +
           fmt("%.2f", diagram_y(0) + 44.0) +
           "\" font-size=\"14\" text-anchor=\"middle\">Precision</text>\n";
    svg += "<text x=\"" + fmt("%.2f", diagram_x(0) - 44.0) + "\" y=\"" +
           fmt("%.2f", diagram_y(0.5)) + "\" font-size=\"14\" text-anchor=\"middle\"" +
           " transform=\"rotate(-90 " + fmt("%.2f", diagram_x(0) - 44.0) + " " +
           fmt("%.2f", diagram_y(0.5)) + ")\">Recall</text>\n";

    // Markers, drawn above everything else.
    for (std::size_t i = 0; i < spec.points.size(); ++i) {
        const DiagramPoint& p = spec.points[i];
        const double cx = diagram_x(p.s.precision);
        const double cy = diagram_y(p.s.recall);
        svg += "<circle class=\"pt\" cx=\"" + fmt("%.2f", cx) + "\" cy=\"" + fmt("%.2f", cy) +
               "\" r=\"5\" fill=\"" + kMarkerFill[i % 6] +
               "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + fmt("%.2f", cx + 8.0) + "\" y=\"" + fmt("%.2f", cy - 6.0) +
               "\" font-size=\"12\">" + xml_escape(p.name) + "</text>\n";
    }

    svg += "</svg>\n";
    return svg;
}

void render_diagram(const DiagramSpec& spec, const std::string& out_path) {
    write_text_atomic(out_path, render_diagram_svg(spec));
}

}  // namespace lsens
