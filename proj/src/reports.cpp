#include "rff/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rff/errors.hpp"

namespace rff::report {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string num6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(path, mode);
    if (!out) throw FormatError("cannot write " + path, 0);
    return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const eval::EvalReport& report) {
    auto out = open_out(path);
    out << "cf1,cmc@1,auroc\n";
    out << num(report.cf1) << ',' << num(report.cmc.empty() ? 0.0 : report.cmc[0]) << ','
        << num(report.auroc) << "\n";
}

void append_fusion_rows(const std::string& path, const std::vector<fusion::FusionRow>& rows) {
    const bool fresh = !std::filesystem::exists(path);
    auto out = open_out(path, std::ios::app);
    bool need_header = fresh;
    if (!fresh) {
        std::ifstream in(path);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        need_header = content.find("k,policy,method,cf1") == std::string::npos;
    }
    if (need_header) out << "k,policy,method,cf1\n";
    for (const auto& r : rows) {
        out << r.k << ',' << fusion::to_string(r.policy) << ',' << r.method << ',' << num(r.cf1)
            << "\n";
    }
}

void write_cmc_csv(const std::string& path, const std::vector<double>& cmc) {
    auto out = open_out(path);
    out << "N,value\n";
    for (size_t i = 0; i < cmc.size(); ++i) out << (i + 1) << ',' << num(cmc[i]) << "\n";
}

void write_roc_csv(const std::string& path, const eval::RocCurve& curve) {
    auto out = open_out(path);
    out << "threshold,fpr,tpr\n";
    for (size_t i = 0; i < curve.thresholds.size(); ++i) {
        out << num(curve.thresholds[i]) << ',' << num(curve.fpr[i]) << ',' << num(curve.tpr[i])
            << "\n";
    }
}

void write_confusion_csv(const std::string& path, const eval::EvalReport& report) {
    auto out = open_out(path);
    out << "true_id";
    for (uint16_t id : report.class_ids) out << ",pred_" << id;
    out << "\n";
    for (size_t r = 0; r < report.confusion.size(); ++r) {
        out << report.class_ids[r];
        for (int64_t c : report.confusion[r]) out << ',' << c;
        out << "\n";
    }
}

void write_embeddings2d_csv(const std::string& path, const nn::Tensor& coords,
                            const std::vector<uint16_t>& device_ids,
                            const std::vector<uint16_t>& location_ids) {
    if (coords.rows() != static_cast<int>(device_ids.size()) ||
        coords.rows() != static_cast<int>(location_ids.size())) {
        throw InvalidArgument("embeddings2d: label arrays must match coordinate rows");
    }
    auto out = open_out(path);
    out << "x,y,device_id,location_id\n";
    for (int r = 0; r < coords.rows(); ++r) {
        out << num(coords.at(r, 0)) << ',' << num(coords.at(r, 1)) << ',' << device_ids[static_cast<size_t>(r)]
            << ',' << location_ids[static_cast<size_t>(r)] << "\n";
    }
}

void write_loss_csv(const std::string& path, const std::vector<double>& epoch_loss) {
    auto out = open_out(path);
    out << "epoch,loss\n";
    for (size_t i = 0; i < epoch_loss.size(); ++i) out << i << ',' << num(epoch_loss[i]) << "\n";
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr int kW = 640, kH = 480;
constexpr int kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string svg_header(const std::string& title) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << kW / 2 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
         "text-anchor=\"middle\">"
      << title << "</text>\n";
    return s.str();
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& xs,
                          const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty()) {
        throw InvalidArgument("svg_line_plot: x/y vectors must be non-empty and aligned");
    }
    double x_lo = xs[0], x_hi = xs[0], y_lo = ys[0], y_hi = ys[0];
    for (size_t i = 0; i < xs.size(); ++i) {
        x_lo = std::min(x_lo, xs[i]);
        x_hi = std::max(x_hi, xs[i]);
        y_lo = std::min(y_lo, ys[i]);
        y_hi = std::max(y_hi, ys[i]);
    }
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    if (y_hi == y_lo) y_hi = y_lo + 1.0;
    const double px = (kW - kLeft - kRight) / (x_hi - x_lo);
    const double py = (kH - kTop - kBottom) / (y_hi - y_lo);

    std::ostringstream s;
    s << svg_header(title);
    s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight
      << "\" height=\"" << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
        const double sx = kLeft + (xs[i] - x_lo) * px;
        const double sy = kH - kBottom - (ys[i] - y_lo) * py;
        if (i) s << ' ';
        s << num6(sx) << ',' << num6(sy);
    }
    s << "\"/>\n";
    s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
    s << "<text x=\"18\" y=\"" << kH / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 18 "
      << kH / 2 << ")\">" << y_label << "</text>\n";
    // corner tick labels
    s << "<text x=\"" << kLeft << "\" y=\"" << kH - kBottom + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << num6(x_lo) << "</text>\n";
    s << "<text x=\"" << kW - kRight << "\" y=\"" << kH - kBottom + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num6(x_hi)
      << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << kH - kBottom
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num6(y_lo)
      << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + 10
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num6(y_hi)
      << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

std::string svg_heatmap(const std::string& title, const std::vector<uint16_t>& ids,
                        const std::vector<std::vector<int64_t>>& counts) {
    const size_t k = counts.size();
    if (k == 0 || ids.size() != k) throw InvalidArgument("svg_heatmap: bad matrix");
    int64_t mx = 1;
    for (const auto& row : counts) {
        if (row.size() != k) throw InvalidArgument("svg_heatmap: matrix must be square");
        for (int64_t v : row) mx = std::max(mx, v);
    }
    const double cell_w = static_cast<double>(kW - kLeft - kRight) / static_cast<double>(k);
    const double cell_h = static_cast<double>(kH - kTop - kBottom) / static_cast<double>(k);

    std::ostringstream s;
    s << svg_header(title);
    for (size_t r = 0; r < k; ++r) {
        for (size_t c = 0; c < k; ++c) {
            const double frac = static_cast<double>(counts[r][c]) / static_cast<double>(mx);
            const int red = static_cast<int>(255 - 205 * frac);
            const int green = static_cast<int>(255 - 155 * frac);
            const int blue = 255;
            s << "<rect x=\"" << num6(kLeft + c * cell_w) << "\" y=\"" << num6(kTop + r * cell_h)
              << "\" width=\"" << num6(cell_w) << "\" height=\"" << num6(cell_h) << "\" fill=\"rgb("
              << red << ',' << green << ',' << blue << ")\" stroke=\"#ddd\"/>\n";
        }
    }
    if (k <= 20) {
        for (size_t i = 0; i < k; ++i) {
            s << "<text x=\"" << num6(kLeft + (i + 0.5) * cell_w) << "\" y=\"" << kH - kBottom + 16
              << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << ids[i]
              << "</text>\n";
            s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num6(kTop + (i + 0.5) * cell_h + 4)
              << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << ids[i]
              << "</text>\n";
        }
    }
    s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">predicted"
      << "</text>\n";
    s << "<text x=\"18\" y=\"" << kH / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 18 "
      << kH / 2 << ")\">true</text>\n";
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// CSV -> SVG rendering

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path, 0);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> row;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                row.push_back(line.substr(start));
                break;
            }
            row.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double to_d(const std::string& tok, const std::string& path, size_t line) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ParseError("bad number in " + path, line);
    return v;
}

}  // namespace

int render_reports(const std::string& report_dir) {
    namespace fs = std::filesystem;
    int written = 0;
    const fs::path dir(report_dir);

    const fs::path cmc_csv = dir / "cmc.csv";
    if (fs::exists(cmc_csv)) {
        const auto rows = read_csv(cmc_csv.string());
        std::vector<double> xs, ys;
        for (size_t i = 1; i < rows.size(); ++i) {
            xs.push_back(to_d(rows[i][0], cmc_csv.string(), i + 1));
            ys.push_back(to_d(rows[i][1], cmc_csv.string(), i + 1));
        }
        open_out((dir / "cmc.svg").string())
            << svg_line_plot("Cumulative matching characteristic", "N", "CMC(N)", xs, ys);
        ++written;
    }
    const fs::path roc_csv = dir / "roc.csv";
    if (fs::exists(roc_csv)) {
        const auto rows = read_csv(roc_csv.string());
        std::vector<double> xs, ys;
        for (size_t i = 1; i < rows.size(); ++i) {
            xs.push_back(to_d(rows[i][1], roc_csv.string(), i + 1));
            ys.push_back(to_d(rows[i][2], roc_csv.string(), i + 1));
        }
        open_out((dir / "roc.svg").string())
            << svg_line_plot("Receiver operating characteristic", "FPR", "TPR", xs, ys);
        ++written;
    }
    const fs::path loss_csv = dir / "loss_history.csv";
    if (fs::exists(loss_csv)) {
        const auto rows = read_csv(loss_csv.string());
        std::vector<double> xs, ys;
        for (size_t i = 1; i < rows.size(); ++i) {
            xs.push_back(to_d(rows[i][0], loss_csv.string(), i + 1));
            ys.push_back(to_d(rows[i][1], loss_csv.string(), i + 1));
        }
        open_out((dir / "loss.svg").string())
            << svg_line_plot("Training loss", "epoch", "mean loss", xs, ys);
        ++written;
    }
    const fs::path conf_csv = dir / "confusion.csv";
    if (fs::exists(conf_csv)) {
        const auto rows = read_csv(conf_csv.string());
        if (rows.size() >= 2) {
            std::vector<uint16_t> ids;
            std::vector<std::vector<int64_t>> counts;
            for (size_t i = 1; i < rows.size(); ++i) {
                ids.push_back(static_cast<uint16_t>(std::stoul(rows[i][0])));
                std::vector<int64_t> row;
                for (size_t c = 1; c < rows[i].size(); ++c) row.push_back(std::stoll(rows[i][c]));
                counts.push_back(std::move(row));
            }
            open_out((dir / "confusion.svg").string())
                << svg_heatmap("Confusion matrix", ids, counts);
            ++written;
        }
    }
    if (written == 0) {
        throw InvalidArgument("no report CSVs found in " + report_dir);
    }
    return written;
}

}  // namespace rff::report
