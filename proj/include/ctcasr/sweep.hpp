#pragma once

// Filter-count sweep: one training run per conv width, a combined history,
// loss/WER charts and a best-per-run summary.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "ctcasr/config.hpp"
#include "ctcasr/corpus.hpp"
#include "ctcasr/log.hpp"
#include "ctcasr/pipeline.hpp"
#include "ctcasr/svg.hpp"

namespace ctcasr {

struct SweepRun {
  int filters = 0;
  bool ok = false;
  std::string error;
  std::vector<EpochRecord> history;
};

struct SweepSummaryRow {
  int filters = 0;
  std::string status;  // "ok" or "failed: <reason>"
  int best_epoch = 0;
  double best_val_wer = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kCombinedHeader = "filters,epoch,train_loss,val_loss,val_wer";

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& field : csv::split_record(text, 0)) {
    const std::string f(trim(field));
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (f.empty() || used != f.size() || v <= 0)
      raise(Errc::InvalidArgument, "expected a comma-separated list of positive integers, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) raise(Errc::InvalidArgument, "empty list");
  return out;
}

inline std::vector<SweepSummaryRow> summarize_sweep(const std::vector<SweepRun>& runs) {
  std::vector<SweepSummaryRow> out;
  for (const auto& r : runs) {
    SweepSummaryRow s;
    s.filters = r.filters;
    s.status = r.ok ? "ok" : "failed: " + r.error;
    for (const auto& e : r.history)
      if (std::isfinite(e.val_wer) && !(e.val_wer >= s.best_val_wer)) {
        s.best_val_wer = e.val_wer;
        s.best_epoch = e.epoch;
      }
    if (!r.history.empty()) {
      s.final_train_loss = r.history.back().train_loss;
      s.final_val_loss = r.history.back().val_loss;
    }
    out.push_back(s);
  }
  return out;
}

inline std::string format_summary_table(const std::vector<SweepSummaryRow>& rows) {
  std::string out = "filters  best_val_wer  best_epoch  final_train_loss  final_val_loss  status\n";
  char line[256];
  for (const auto& s : rows) {
    std::snprintf(line, sizeof line, "%7d  %12.2f  %10d  %16.4f  %14.4f  %s\n", s.filters, s.best_val_wer,
                  s.best_epoch, s.final_train_loss, s.final_val_loss, s.status.c_str());
    out += line;
  }
  return out;
}

inline void write_combined_csv(const std::vector<SweepRun>& runs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out << kCombinedHeader << '\n';
  char line[160];
  for (const auto& r : runs)
    for (const auto& e : r.history) {
      std::snprintf(line, sizeof line, "%d,%d,%.10g,%.10g,%.4f\n", r.filters, e.epoch, e.train_loss, e.val_loss,
                    e.val_wer);
      out << line;
    }
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

inline void write_sweep_summary_csv(const std::vector<SweepSummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoFailure, "cannot write " + path.string());
  out << "filters,status,best_epoch,best_val_wer,final_train_loss,final_val_loss\n";
  char line[200];
  for (const auto& s : rows) {
    std::snprintf(line, sizeof line, ",%d,%.4f,%.10g,%.10g\n", s.best_epoch, s.best_val_wer, s.final_train_loss,
                  s.final_val_loss);
    out << s.filters << ',' << csv::quote(s.status) << line;
  }
  if (!out) raise(Errc::IoFailure, "write failed for " + path.string());
}

namespace sweep_detail {
inline double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}
}  // namespace sweep_detail

/// Reads either a combined sweep CSV or a single run's history.csv; a history
/// file becomes one run labelled with default_filters.
inline std::vector<SweepRun> read_history_table(const std::filesystem::path& path, int default_filters = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) raise(Errc::MissingHeader, path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool combined = line == kCombinedHeader;
  if (!combined && line != kHistoryHeader)
    raise(Errc::MissingHeader, path.string() + ": expected header '" + kCombinedHeader + "' or '" +
                                   kHistoryHeader + "'");
  std::map<int, SweepRun> runs;
  std::vector<int> order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = csv::split_record(line, line_no);
    if (f.size() != 5) raise(Errc::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    try {
      int filters = default_filters;
      EpochRecord e;
      if (combined) {
        filters = std::stoi(f[0]);
        e.epoch = std::stoi(f[1]);
        e.train_loss = sweep_detail::parse_double(f[2]);
        e.val_loss = sweep_detail::parse_double(f[3]);
        e.val_wer = sweep_detail::parse_double(f[4]);
      } else {
        e.epoch = std::stoi(f[0]);
        e.train_loss = sweep_detail::parse_double(f[1]);
        e.val_loss = sweep_detail::parse_double(f[2]);
        e.val_wer = sweep_detail::parse_double(f[3]);
        e.seconds = sweep_detail::parse_double(f[4]);
      }
      if (!runs.count(filters)) {
        order.push_back(filters);
        runs[filters].filters = filters;
        runs[filters].ok = true;
      }
      runs[filters].history.push_back(e);
    } catch (const std::logic_error&) {
      raise(Errc::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  std::vector<SweepRun> out;
  for (int f : order) out.push_back(std::move(runs[f]));
  return out;
}

/// loss.svg (train solid, validation dashed) and wer.svg, one colour per run.
inline void write_sweep_charts(const std::vector<SweepRun>& runs, const std::filesystem::path& out_dir) {
  svg::Chart loss{"CTC loss by epoch", "epoch", "loss", {}};
  svg::Chart werc{"Validation WER by epoch", "epoch", "WER (%)", {}};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    const std::string tag = std::to_string(r.filters) + " filters";
    svg::Series tr{tag + " train", {}, false, static_cast<int>(i)};
    svg::Series va{tag + " val", {}, true, static_cast<int>(i)};
    svg::Series w{tag, {}, false, static_cast<int>(i)};
    for (const auto& e : r.history) {
      tr.points.emplace_back(e.epoch, e.train_loss);
      va.points.emplace_back(e.epoch, e.val_loss);
      w.points.emplace_back(e.epoch, e.val_wer);
    }
    loss.series.push_back(std::move(tr));
    loss.series.push_back(std::move(va));
    werc.series.push_back(std::move(w));
  }
  svg::write(loss, out_dir / "loss.svg");
  svg::write(werc, out_dir / "wer.svg");
}

/// Writes combined.csv, loss.svg, wer.svg and summary.csv into out_dir.
inline std::vector<SweepSummaryRow> write_sweep_report(const std::vector<SweepRun>& runs,
                                                       const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) raise(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  write_combined_csv(runs, out_dir / "combined.csv");
  write_sweep_charts(runs, out_dir);
  auto summary = summarize_sweep(runs);
  write_sweep_summary_csv(summary, out_dir / "summary.csv");
  return summary;
}

/// Trains one model per filter count under out_dir/filters_N. A failing run is
/// recorded with its partial history and the sweep carries on.
inline std::vector<SweepRun> run_sweep(const RunConfig& base, const std::vector<int>& filters,
                                       const std::filesystem::path& out_dir, bool parallel = false) {
  require_inputs_exist(base, true);
  std::vector<SweepRun> runs(filters.size());
  auto one = [&](std::size_t i) {
    SweepRun& run = runs[i];
    run.filters = filters[i];
    RunConfig rc = base;
    rc.model.conv_filters = filters[i];
    const auto dir = out_dir / ("filters_" + std::to_string(filters[i]));
    TrainOptions opt;
    opt.on_epoch = [&run](const EpochRecord& e, const ModelParams&) {
      run.history.push_back(e);
      return true;
    };
    try {
      train_from_config(rc, dir, opt);
      run.ok = true;
    } catch (const Error& e) {
      if (e.code() == Errc::DivergedLoss) {
        const auto partial = read_history_table(dir / "history.csv", filters[i]);
        if (!partial.empty()) run.history = partial.front().history;
      }
      run.error = e.what();
      log::error("filters=", filters[i], ": ", e.what());
    } catch (const std::exception& e) {
      run.error = e.what();
      log::error("filters=", filters[i], ": ", e.what());
    }
  };
  if (parallel) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < filters.size(); ++i) workers.emplace_back(one, i);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < filters.size(); ++i) one(i);
  }
  return runs;
}

}  // namespace ctcasr
