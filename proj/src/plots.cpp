#include "safesteer/plots.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "safesteer/error.hpp"

namespace safesteer {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 48.0;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  return out;
}

// %.17g keeps CSV values round-trippable.
std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string px(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

const char* category_color(Category c) {
  switch (c) {
    case Category::Benign: return "#2a9d3f";
    case Category::CB: return "#d62728";
    case Category::SD: return "#ff7f0e";
    case Category::TYPO: return "#9467bd";
    case Category::SDTYPO: return "#8c564b";
  }
  return "#000000";
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double map(double v, double out_lo, double out_hi) const {
    const double span = hi > lo ? hi - lo : 1.0;
    return out_lo + (v - lo) / span * (out_hi - out_lo);
  }
};

void svg_open(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n"
      << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
      << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"#888\"/>\n";
}

}  // namespace

void write_points_csv(std::span<const ProjectionPoint> points, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "id,x,y,label,category,stage\n";
  for (const auto& p : points) {
    out << csv_field(p.id) << ',' << num(p.x) << ',' << num(p.y) << ',' << to_string(p.label) << ','
        << to_string(p.category) << ',' << stage_name(p.stage) << '\n';
  }
}

void write_scatter_svg(std::span<const ProjectionPoint> points, const std::string& title,
                       const std::filesystem::path& path) {
  Range xr{0, 1}, yr{0, 1};
  if (!points.empty()) {
    auto [xmin, xmax] = std::minmax_element(points.begin(), points.end(),
                                            [](const auto& a, const auto& b) { return a.x < b.x; });
    auto [ymin, ymax] = std::minmax_element(points.begin(), points.end(),
                                            [](const auto& a, const auto& b) { return a.y < b.y; });
    xr = {xmin->x, xmax->x};
    yr = {ymin->y, ymax->y};
  }
  auto out = open_out(path);
  svg_open(out, title);
  for (const auto& p : points) {
    const double cx = xr.map(p.x, kMargin + 8, kWidth - kMargin - 8);
    const double cy = yr.map(p.y, kHeight - kMargin - 8, kMargin + 8);
    const char* color = category_color(p.category);
    if (p.stage == kPrefillStage) {
      out << "<circle cx=\"" << px(cx) << "\" cy=\"" << px(cy) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    } else {
      out << "<path d=\"M" << px(cx - 3) << ' ' << px(cy - 3) << "L" << px(cx + 3) << ' ' << px(cy + 3)
          << "M" << px(cx - 3) << ' ' << px(cy + 3) << "L" << px(cx + 3) << ' ' << px(cy - 3)
          << "\" stroke=\"" << color << "\"/>\n";
    }
  }
  double ly = kMargin + 14;
  for (Category c : kAllCategories) {
    out << "<circle cx=\"" << kWidth - kMargin - 70 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\""
        << category_color(c) << "\"/><text x=\"" << kWidth - kMargin - 60 << "\" y=\"" << ly << "\">"
        << to_string(c) << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
}

void write_loss_csv(std::span<const double> loss_history, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < loss_history.size(); ++i) out << i + 1 << ',' << num(loss_history[i]) << '\n';
}

void write_line_svg(std::span<const double> ys, const std::string& title, const std::string& y_label,
                    const std::filesystem::path& path) {
  Range xr{0, static_cast<double>(std::max<std::size_t>(ys.size(), 2) - 1)};
  Range yr{0, 1};
  if (!ys.empty()) {
    auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
    yr = {*lo, *hi};
  }
  auto out = open_out(path);
  svg_open(out, title);
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    out << (i ? " " : "") << px(xr.map(static_cast<double>(i), kMargin, kWidth - kMargin)) << ','
        << px(yr.map(ys[i], kHeight - kMargin, kMargin));
  }
  out << "\"/>\n<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
      << ")\" text-anchor=\"middle\">" << y_label << "</text>\n"
      << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16 << "\">" << num(yr.lo) << " .. "
      << num(yr.hi) << "</text>\n</svg>\n";
}

void write_arms_csv(std::span<const ArmResult> arms, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "arm,enable_probe,enable_msav,negate_mu,harmful_tokens,total_tokens,rate,ci_lo,ci_hi\n";
  for (const auto& a : arms) {
    out << a.name << ',' << a.enable_probe << ',' << a.enable_msav << ',' << a.negate_mu << ','
        << a.harmful_tokens << ',' << a.total_tokens << ',' << num(a.rate) << ',' << num(a.ci.lo) << ','
        << num(a.ci.hi) << '\n';
  }
}

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "k,step,harmful_tokens,total_tokens,rate,ci_lo,ci_hi,error\n";
  for (const auto& c : sweep.cells) {
    out << c.k << ',' << c.step << ',';
    if (c.result) {
      out << c.result->harmful_tokens << ',' << c.result->total_tokens << ',' << num(c.result->rate) << ','
          << num(c.result->ci.lo) << ',' << num(c.result->ci.hi) << ",\n";
    } else {
      out << ",,,,," << csv_field(c.error.value_or("")) << '\n';
    }
  }
}

}  // namespace safesteer
