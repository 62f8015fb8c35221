#include "nreft/bench.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "nreft/errors.hpp"

namespace nreft {

EvalResult evaluate_pass_at_1_with(const std::vector<Dataset>& benchmarks, const CompletionFn& fn, uint64_t seed) {
    if (benchmarks.empty()) throw ContractError("no benchmarks to evaluate");
    EvalResult result;
    for (size_t k = 0; k < benchmarks.size(); ++k) {
        const Dataset& bench = benchmarks[k];
        std::vector<std::vector<int>> completions;
        completions.reserve(bench.problems.size());
        for (size_t i = 0; i < bench.problems.size(); ++i) {
            Rng rng(derive_seed(seed, SeedScope::kEval, k, i));
            completions.push_back(fn(bench.problems[i], rng));
        }
        result.per_benchmark.push_back(benchmark_accuracy(bench, completions));
    }
    result.aggregate = aggregate_accuracy(result.per_benchmark);
    return result;
}

DeltaReport make_delta(const std::string& metric, double value, double baseline) {
    DeltaReport d;
    d.metric = metric;
    d.value = value;
    d.baseline = baseline;
    d.delta_abs = value - baseline;
    if (baseline == 0.0) {
        d.relative_valid = false;
        d.delta_pct = 0.0;
    } else {
        d.delta_pct = 100.0 * (value - baseline) / baseline;
    }
    return d;
}

std::string render_delta_table(std::span<const DeltaReport> rows) {
    std::ostringstream out;
    out << std::left << std::setw(28) << "metric" << std::right << std::setw(14) << "value" << std::setw(14)
        << "baseline" << std::setw(12) << "delta%" << std::setw(14) << "delta_abs" << "\n";
    out << std::string(82, '-') << "\n";
    for (const DeltaReport& d : rows) {
        out << std::left << std::setw(28) << d.metric << std::right << std::fixed << std::setprecision(4)
            << std::setw(14) << d.value << std::setw(14) << d.baseline;
        if (d.relative_valid) {
            out << std::setw(11) << std::setprecision(2) << d.delta_pct << "%";
        } else {
            out << std::setw(12) << "n/a";
        }
        out << std::setw(14) << std::setprecision(4) << d.delta_abs << "\n";
    }
    return out.str();
}

LinearFit least_squares_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("linear fit needs >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw ContractError("linear fit over constant x");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double pred = fit.intercept + fit.slope * x[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
    }
    fit.r_squared = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
    return fit;
}

std::string render_multi_series_svg(std::span<const SvgSeries> series, const std::string& x_label,
                                    const std::string& y_label) {
    if (series.empty()) throw ContractError("svg chart needs at least one series");
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || s.x.empty()) throw ContractError("svg chart needs paired points");
    }
    static const char* kColors[] = {"#2c7fb8", "#d95f02", "#1b9e77", "#7570b3", "#e7298a"};
    const double width = 480.0, height = 320.0, margin = 56.0;
    double xmin = series[0].x[0], xmax = xmin, ymin = 0.0, ymax = series[0].y[0];
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double ytop = ymax;
    ymax *= 1.05;
    auto px = [&](double v) { return margin + (v - xmin) / (xmax - xmin) * (width - 2 * margin); };
    auto py = [&](double v) { return height - margin - (v - ymin) / (ymax - ymin) * (height - 2 * margin); };

    std::ostringstream svg;
    svg << std::fixed << std::setprecision(1);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "  <line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    svg << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
        << "\" stroke=\"black\"/>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % 5];
        svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
        svg << "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i) {
            svg << "  <circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color
                << "\"/>\n";
        }
        if (!s.label.empty()) {
            svg << "  <text x=\"" << width - margin + 2 << "\" y=\"" << margin + 14.0 * static_cast<double>(si)
                << "\" font-size=\"10\" fill=\"" << color << "\" text-anchor=\"end\">" << s.label << "</text>\n";
        }
    }
    for (size_t i = 0; i < series[0].x.size(); ++i) {
        svg << "  <text x=\"" << px(series[0].x[i]) << "\" y=\"" << height - margin + 16 << "\" font-size=\"10\" "
            << "text-anchor=\"middle\">" << series[0].x[i] << "</text>\n";
    }
    svg << "  <text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" font-size=\"12\" text-anchor=\"middle\">"
        << x_label << "</text>\n";
    svg << "  <text x=\"14\" y=\"" << height / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << height / 2 << ")\">" << y_label << "</text>\n";
    svg << "  <text x=\"" << margin - 6 << "\" y=\"" << py(ytop) + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
        << std::setprecision(0) << ytop << "</text>\n";
    svg << "  <text x=\"" << margin - 6 << "\" y=\"" << height - margin + 4 << "\" font-size=\"10\" text-anchor=\"end\">0</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

std::string render_throughput_svg(std::span<const double> x, std::span<const double> y, const std::string& x_label,
                                  const std::string& y_label) {
    SvgSeries s;
    s.x.assign(x.begin(), x.end());
    s.y.assign(y.begin(), y.end());
    const SvgSeries series[] = {s};
    return render_multi_series_svg(series, x_label, y_label);
}

}  // namespace nreft
