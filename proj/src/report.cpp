#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "robustmtl/evaluation.hpp"

namespace rmtl {

namespace {

const char* kCurveColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                              "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

// One Q-vs-strength curve per CSV on a log-x axis; the clean row (strength
// zero) cannot sit on a log axis and is skipped.
void write_report_svg(const std::vector<std::string>& csv_paths, const std::string& out_path) {
    if (csv_paths.empty()) throw ContractError("report: no input CSVs");

    struct Curve {
        std::string label;
        std::vector<std::pair<double, double>> points;  // strength, Q
    };
    std::vector<Curve> curves;
    double xmin = 1e300, xmax = 0;
    for (const auto& path : csv_paths) {
        const SweepResult res = read_sweep_csv(path);
        Curve c;
        c.label = std::filesystem::path(path).stem().string() + " (" + to_string(res.family) + ")";
        for (const auto& r : res.rows) {
            if (r.eps_requested <= 0) continue;
            c.points.push_back({r.eps_requested, r.q});
            xmin = std::min(xmin, r.eps_requested);
            xmax = std::max(xmax, r.eps_requested);
        }
        if (c.points.empty()) throw ContractError("report: no nonzero-strength rows in " + path);
        curves.push_back(std::move(c));
    }

    const double W = 640, H = 420;
    const double L = 70, R = 20, T = 30, B = 50;  // margins
    const double lx0 = std::log(xmin), lx1 = std::log(xmax);
    auto px = [&](double eps) {
        return L + (std::log(eps) - lx0) / (lx1 - lx0) * (W - L - R);
    };
    auto py = [&](double q) { return T + (1.0 - q) * (H - T - B); };

    std::ofstream f(out_path);
    if (!f) throw IoError("cannot open for writing: " + out_path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
      << "mIoU ratio Q vs. perturbation strength</text>\n";

    // frame + y grid
    f << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\""
      << H - T - B << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double q = i / 5.0;
        f << "<line x1=\"" << L << "\" y1=\"" << py(q) << "\" x2=\"" << W - R << "\" y2=\""
          << py(q) << "\" stroke=\"#dddddd\"/>\n";
        f << "<text x=\"" << L - 8 << "\" y=\"" << py(q) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(q) << "</text>\n";
    }
    // x ticks at the strengths of the first curve
    for (const auto& [eps, q] : curves[0].points) {
        (void)q;
        f << "<line x1=\"" << px(eps) << "\" y1=\"" << H - B << "\" x2=\"" << px(eps) << "\" y2=\""
          << H - B + 5 << "\" stroke=\"black\"/>\n";
        f << "<text x=\"" << px(eps) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(eps) << "</text>\n";
    }
    f << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">perturbation strength (log scale)</text>\n";
    f << "<text x=\"16\" y=\"" << (T + H - B) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">Q</text>\n";

    for (size_t ci = 0; ci < curves.size(); ++ci) {
        const char* color = kCurveColors[ci % 8];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [eps, q] : curves[ci].points) f << px(eps) << "," << py(q) << " ";
        f << "\"/>\n";
        for (const auto& [eps, q] : curves[ci].points)
            f << "<circle cx=\"" << px(eps) << "\" cy=\"" << py(q) << "\" r=\"3\" fill=\"" << color
              << "\"/>\n";
        const double ly = T + 16 + 16 * static_cast<double>(ci);
        f << "<line x1=\"" << L + 10 << "\" y1=\"" << ly << "\" x2=\"" << L + 34 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        f << "<text x=\"" << L + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << curves[ci].label
          << "</text>\n";
    }
    f << "</svg>\n";
    if (!f) throw IoError("write failed: " + out_path);
}

}  // namespace rmtl
