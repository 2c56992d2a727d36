#pragma once

#include <string>
#include <vector>

#include "rff/fusion.hpp"
#include "rff/reid_eval.hpp"

namespace rff::report {

// CSV emission. Numbers use %.17g so files re-parse exactly; nothing
// time-dependent is written.
void write_metrics_csv(const std::string& path, const eval::EvalReport& report);
void append_fusion_rows(const std::string& path, const std::vector<fusion::FusionRow>& rows);
void write_cmc_csv(const std::string& path, const std::vector<double>& cmc);
void write_roc_csv(const std::string& path, const eval::RocCurve& curve);
void write_confusion_csv(const std::string& path, const eval::EvalReport& report);
void write_embeddings2d_csv(const std::string& path, const nn::Tensor& coords,
                            const std::vector<uint16_t>& device_ids,
                            const std::vector<uint16_t>& location_ids);
void write_loss_csv(const std::string& path, const std::vector<double>& epoch_loss);

// Minimal standalone SVG plots (no timestamps, byte-stable output).
std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& xs,
                          const std::vector<double>& ys);
std::string svg_heatmap(const std::string& title, const std::vector<uint16_t>& ids,
                        const std::vector<std::vector<int64_t>>& counts);

// Renders the CSVs found in report_dir (cmc, roc, loss_history, confusion)
// into matching SVG files. Returns the number of plots written.
int render_reports(const std::string& report_dir);

}  // namespace rff::report
