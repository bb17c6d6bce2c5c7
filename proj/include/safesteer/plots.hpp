#pragma once

// CSV and self-contained SVG writers for projections, loss curves and sweeps.

#include <filesystem>
#include <span>
#include <string>

#include "safesteer/eval.hpp"

namespace safesteer {

void write_points_csv(std::span<const ProjectionPoint> points, const std::filesystem::path& path);
void write_scatter_svg(std::span<const ProjectionPoint> points, const std::string& title,
                       const std::filesystem::path& path);

void write_loss_csv(std::span<const double> loss_history, const std::filesystem::path& path);
void write_line_svg(std::span<const double> ys, const std::string& title, const std::string& y_label,
                    const std::filesystem::path& path);

void write_arms_csv(std::span<const ArmResult> arms, const std::filesystem::path& path);
// One row per (k, step) cell, plus a header row; failed cells carry the error.
void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path);

}  // namespace safesteer
