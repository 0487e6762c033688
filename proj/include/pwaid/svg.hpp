#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pwaid/errors.hpp"

namespace pwaid {

// Shortest decimal text that round-trips the value exactly; deterministic across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Minimal file-based line and scatter plot writer producing standalone SVG.
class SvgPlot {
public:
    struct Series {
        std::string label;
        std::string color;
        std::vector<double> x;
        std::vector<double> y;
        bool scatter = false;
        bool dashed = false;
    };

    struct Band {
        double x0;
        double x1;
        std::string color;
    };

    SvgPlot(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

    void add(Series s) { series_.push_back(std::move(s)); }
    void add_band(Band b) { bands_.push_back(std::move(b)); }

    static std::string palette(std::size_t i) {
        static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                       "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
        return colors[i % 10];
    }

    std::string render() const {
        double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
        double ymin = xmin, ymax = -xmin;
        for (const auto& s : series_) {
            for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
            for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
        }
        if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0;
        if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
        if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
        if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
        const double pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;

        auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kWidth - kLeft - kRight); };
        auto py = [&](double y) { return kHeight - kBottom - (y - ymin) / (ymax - ymin) * (kHeight - kTop - kBottom); };

        std::ostringstream o;
        o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
          << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
        o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        for (const auto& b : bands_) {
            const double a = px(std::max(b.x0, xmin)), c = px(std::min(b.x1, xmax));
            if (c > a)
                o << "<rect x=\"" << num(a) << "\" y=\"" << kTop << "\" width=\"" << num(c - a) << "\" height=\""
                  << kHeight - kTop - kBottom << "\" fill=\"" << b.color << "\" fill-opacity=\"0.15\"/>\n";
        }
        o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
          << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (int k = 0; k <= 4; ++k) {
            const double xv = xmin + (xmax - xmin) * k / 4.0, yv = ymin + (ymax - ymin) * k / 4.0;
            o << "<text x=\"" << num(px(xv)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
              << tick(xv) << "</text>\n";
            o << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
              << "</text>\n";
        }
        o << "<text x=\"" << kWidth / 2 << "\" y=\"" << kTop - 12 << "\" text-anchor=\"middle\" font-size=\"14\">"
          << escape(title_) << "</text>\n";
        o << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8 << "\" text-anchor=\"middle\">" << escape(xlabel_)
          << "</text>\n";
        o << "<text x=\"14\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
          << kHeight / 2 << ")\">" << escape(ylabel_) << "</text>\n";

        for (const auto& s : series_) {
            const std::size_t n = std::min(s.x.size(), s.y.size());
            if (s.scatter) {
                for (std::size_t i = 0; i < n; ++i)
                    o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"1.2\" fill=\""
                      << s.color << "\"/>\n";
            } else if (n > 0) {
                o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
                  << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
                for (std::size_t i = 0; i < n; ++i) o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
                o << "\"/>\n";
            }
        }
        int row = 0;
        for (const auto& s : series_) {
            if (s.label.empty()) continue;
            const double y = kTop + 14 + 16 * row++;
            o << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << num(y - 4) << "\" x2=\"" << kWidth - kRight + 30
              << "\" y2=\"" << num(y - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
              << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
            o << "<text x=\"" << kWidth - kRight + 34 << "\" y=\"" << num(y) << "\">" << escape(s.label) << "</text>\n";
        }
        o << "</svg>\n";
        return o.str();
    }

    void write(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot open plot file '" + path + "' for writing");
        f << render();
        if (!f) throw std::runtime_error("failed writing plot file '" + path + "'");
    }

private:
    static constexpr int kWidth = 900;
    static constexpr int kHeight = 480;
    static constexpr int kLeft = 70;
    static constexpr int kRight = 170;
    static constexpr int kTop = 40;
    static constexpr int kBottom = 50;

    static std::string num(double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
        return std::string(buf, res.ptr);
    }

    static std::string tick(double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 4);
        return std::string(buf, res.ptr);
    }

    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            if (c == '<') out += "&lt;";
            else if (c == '>') out += "&gt;";
            else if (c == '&') out += "&amp;";
            else out += c;
        }
        return out;
    }

    std::string title_, xlabel_, ylabel_;
    std::vector<Series> series_;
    std::vector<Band> bands_;
};

}  // namespace pwaid
