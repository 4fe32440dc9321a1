#include "elena/charts.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <string>

#include "elena/anatomizer.hpp"

namespace elena {

namespace {

const cv::Scalar kInk(30, 30, 30);
const cv::Scalar kWhite(255, 255, 255);
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

Image to_image(const cv::Mat& bgr) {
    Image out(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) out.set(x, y, {row[x][2], row[x][1], row[x][0]});
    }
    return out;
}

void text(cv::Mat& m, const std::string& s, int x, int y, double scale = 0.45, cv::Scalar color = kInk) {
    cv::putText(m, s, {x, y}, kFont, scale, color, 1, cv::LINE_8);
}

void centered(cv::Mat& m, const std::string& s, int cx, int cy, double scale, cv::Scalar color) {
    int base = 0;
    const auto size = cv::getTextSize(s, kFont, scale, 1, &base);
    text(m, s, cx - size.width / 2, cy + size.height / 2, scale, color);
}

std::string title(const EvaluationReport& r) {
    return r.run_id + " (" + std::string(to_string(r.prompt_kind)) + ", " + std::string(to_string(r.condition)) + ")";
}

// Vertical bar chart; values are percentages in [0, 100].
cv::Mat bars(const std::string& heading, const std::vector<std::string>& names,
             const std::vector<std::vector<double>>& series, const std::vector<cv::Scalar>& colors,
             const std::vector<std::string>& legend) {
    const int group_w = 90, left = 50, top = 50, plot_h = 300;
    const int width = left + group_w * static_cast<int>(names.size()) + 30;
    cv::Mat m(top + plot_h + 60, width, CV_8UC3, kWhite);
    text(m, heading, left, 25, 0.5);
    for (int pct = 0; pct <= 100; pct += 25) {
        const int y = top + plot_h - pct * plot_h / 100;
        cv::line(m, {left, y}, {width - 20, y}, cv::Scalar(220, 220, 220), 1);
        text(m, std::to_string(pct), 10, y + 4, 0.4);
    }
    const int n_series = static_cast<int>(series.size());
    const int bar_w = std::max(4, (group_w - 20) / std::max(1, n_series));
    for (std::size_t i = 0; i < names.size(); ++i) {
        const int gx = left + static_cast<int>(i) * group_w + 10;
        for (int s = 0; s < n_series; ++s) {
            const double v = std::clamp(series[s][i], 0.0, 100.0);
            const int h = static_cast<int>(v * plot_h / 100.0 + 0.5);
            cv::rectangle(m, {gx + s * bar_w, top + plot_h - h}, {gx + (s + 1) * bar_w - 2, top + plot_h},
                          colors[s], cv::FILLED);
        }
        centered(m, names[i].substr(0, 11), gx + (group_w - 20) / 2, top + plot_h + 15, 0.35, kInk);
    }
    for (std::size_t s = 0; s < legend.size(); ++s) {
        const int lx = left + static_cast<int>(s) * 110;
        cv::rectangle(m, {lx, top + plot_h + 35}, {lx + 12, top + plot_h + 47}, colors[s], cv::FILLED);
        text(m, legend[s], lx + 18, top + plot_h + 46, 0.4);
    }
    return m;
}

}  // namespace

Image confusion_chart(const EvaluationReport& report) {
    const int cell = 64, left = 110, top = 70;
    const int n = static_cast<int>(kLabelCount);
    cv::Mat m(top + cell * n + 50, left + cell * (n + 1) + 20, CV_8UC3, kWhite);
    text(m, "Confusion: " + title(report), 10, 25, 0.5);
    long long peak = 1;
    for (const auto& row : report.confusion.counts) {
        for (auto v : row) peak = std::max(peak, v);
    }
    for (int c = 0; c <= n; ++c) {
        const std::string name = c < n ? std::string(to_string(kAllLabels[c])).substr(0, 7) : "none";
        centered(m, name, left + c * cell + cell / 2, top - 12, 0.38, kInk);
    }
    for (int r = 0; r < n; ++r) {
        text(m, std::string(to_string(kAllLabels[r])), 10, top + r * cell + cell / 2 + 5, 0.42);
        for (int c = 0; c <= n; ++c) {
            const long long v = c < n ? report.confusion.counts[r][c] : report.confusion.unanswered[r];
            const double t = static_cast<double>(v) / static_cast<double>(peak);
            const auto shade = static_cast<int>(255 - 200 * std::min(t, 1.0));
            const cv::Scalar fill = c < n ? cv::Scalar(255, shade, shade) : cv::Scalar(shade, shade, 255);
            const cv::Point p0(left + c * cell, top + r * cell);
            cv::rectangle(m, p0, p0 + cv::Point(cell - 1, cell - 1), fill, cv::FILLED);
            cv::rectangle(m, p0, p0 + cv::Point(cell - 1, cell - 1), cv::Scalar(200, 200, 200), 1);
            centered(m, std::to_string(v), p0.x + cell / 2, p0.y + cell / 2, 0.5, t > 0.6 ? kWhite : kInk);
        }
    }
    text(m, "rows: gold, columns: predicted; last column: unanswered", 10, top + n * cell + 30, 0.4);
    return to_image(m);
}

Image per_category_chart(const EvaluationReport& report) {
    std::vector<std::string> names;
    std::vector<std::vector<double>> series(3);
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        names.emplace_back(to_string(kAllLabels[i]));
        series[0].push_back(100.0 * report.metrics.per_class[i].precision);
        series[1].push_back(100.0 * report.metrics.per_class[i].recall);
        series[2].push_back(100.0 * report.metrics.per_class[i].f1);
    }
    names.emplace_back("Macro");
    series[0].push_back(100.0 * report.metrics.macro_precision);
    series[1].push_back(100.0 * report.metrics.macro_recall);
    series[2].push_back(100.0 * report.metrics.macro_f1);
    return to_image(bars("Per-category scores (%): " + title(report), names, series,
                         {cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44)},
                         {"precision", "recall", "F1"}));
}

Image region_chart(const EvaluationReport& report) {
    std::vector<std::string> names;
    std::vector<std::vector<double>> series(1);
    for (std::size_t i = 0; i < report.distribution.region_percentages.size(); ++i) {
        names.emplace_back(display_name(static_cast<BodyRegion>(i)));
        series[0].push_back(report.distribution.region_percentages[i]);
    }
    return to_image(bars("Body-part mentions by region (%): " + title(report), names, series,
                         {cv::Scalar(75, 25, 230)}, {"share of mentions"}));
}

}  // namespace elena
