#pragma once

// Command-line front end. run_cli() is the whole program minus main(), so
// tests can drive it in-process.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 training diverged,
// 3 I/O error.

#include <filesystem>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctcasr/config.hpp"
#include "ctcasr/corpus.hpp"
#include "ctcasr/error.hpp"
#include "ctcasr/log.hpp"
#include "ctcasr/pipeline.hpp"
#include "ctcasr/sweep.hpp"
#include "ctcasr/wav.hpp"

namespace ctcasr {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitDiverged = 2, kExitIo = 3 };

inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::DivergedLoss: return kExitDiverged;
    case Errc::IoFailure:
    case Errc::UnsupportedFormat:
    case Errc::CorruptFile: return kExitIo;
    default: return kExitUsage;
  }
}

namespace cli_detail {

inline NamedManifest parse_test_arg(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
    raise(Errc::InvalidArgument, "--test expects name=manifest.csv, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

inline void print_test_set(std::ostream& out, const TestSetResult& r) {
  const auto& t = r.eval.report.totals;
  out << r.name << ": WER " << format_rate(r.eval.report.error_rate) << "% (S=" << t.substitutions
      << " D=" << t.deletions << " I=" << t.insertions << " N=" << t.ref_length << ")\n";
  for (const auto& g : r.grouped)
    for (const auto& sub : g.groups)
      out << "  " << g.group_key << "=" << sub.name << ": WER " << format_rate(sub.report.error_rate) << "% (N="
          << sub.report.totals.ref_length << ")\n";
  out << format_samples(r.eval.samples);
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ctcasr: CNN + bidirectional GRU speech recognizer trained with CTC"};
  app.require_subcommand(1);

  SynthSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic tone corpus (WAVs + manifest.csv)");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--alphabet", synth.alphabet, "Characters to render as tones")->capture_default_str();
  synth_cmd->add_option("--n", synth.num_utterances, "Number of utterances")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--min-chars", synth.min_chars)->capture_default_str();
  synth_cmd->add_option("--max-chars", synth.max_chars)->capture_default_str();
  synth_cmd->add_option("--sample-rate", synth.sample_rate)->capture_default_str();
  synth_cmd->add_option("--char-duration", synth.char_duration, "Seconds per character")->capture_default_str();
  synth_cmd->add_option("--base-freq", synth.base_freq, "Tone of the first character (Hz)")->capture_default_str();
  synth_cmd->add_option("--freq-step", synth.freq_step, "Spacing between character tones (Hz)")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise_amplitude, "Uniform noise amplitude")->capture_default_str();
  synth_cmd->add_option("--corpus-tag", synth.corpus_tag)->capture_default_str();
  synth_cmd->add_option("--speakers", synth.num_speakers)->capture_default_str();

  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> train_epochs;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("--config", train_config, "Run config (JSON)")->required();
  train_cmd->add_option("--out", train_out, "Override the config's out_dir");
  train_cmd->add_option("--seed", train_seed, "Override the seed");
  train_cmd->add_option("--epochs", train_epochs, "Override the epoch count");

  std::string eval_ckpt, eval_config, eval_out = "eval";
  std::vector<std::string> eval_tests, eval_groups;
  int eval_samples = 5;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one or more test manifests");
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--test", eval_tests, "name=manifest.csv (repeatable)");
  eval_cmd->add_option("--config", eval_config, "Take test sets from a run config");
  eval_cmd->add_option("--group", eval_groups, "gender | corpus_tag | speaker_id (repeatable)");
  eval_cmd->add_option("--samples", eval_samples, "Target/prediction pairs to print per set")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Directory for the CSV reports")->capture_default_str();

  std::string sweep_config, sweep_filters = "16,32,64", sweep_out = "sweep";
  bool sweep_parallel = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per conv filter count and compare");
  sweep_cmd->add_option("--config", sweep_config)->required();
  sweep_cmd->add_option("--filters", sweep_filters, "Comma-separated filter counts")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out)->capture_default_str();
  sweep_cmd->add_flag("--parallel", sweep_parallel, "Run the trainings concurrently");

  std::string decode_ckpt;
  std::vector<std::string> decode_wavs;
  auto* decode_cmd = app.add_subcommand("decode", "Greedy-decode WAV files with a checkpoint");
  decode_cmd->add_option("--checkpoint", decode_ckpt)->required();
  decode_cmd->add_option("--wav", decode_wavs)->required();

  std::string report_in, report_out;
  int report_filters = 0;
  auto* report_cmd = app.add_subcommand("report", "Rebuild charts and summary from combined.csv or history.csv");
  report_cmd->add_option("--input", report_in)->required();
  report_cmd->add_option("--out", report_out, "Defaults to the input's directory");
  report_cmd->add_option("--filters", report_filters, "Label for a single history.csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) {
      const Manifest m = generate_synthetic_corpus(synth, synth_out);
      out << "wrote " << m.size() << " utterances to " << (std::filesystem::path(synth_out) / "manifest.csv").string()
          << "\n";
    } else if (*train_cmd) {
      RunConfig rc = load_run_config(train_config);
      if (!train_out.empty()) rc.out_dir = train_out;
      if (train_seed) rc.train.seed = *train_seed;
      if (train_epochs) {
        if (*train_epochs < 1) raise(Errc::InvalidArgument, "--epochs must be positive");
        rc.train.epochs = *train_epochs;
      }
      const TrainResult r = train_from_config(rc, rc.out_dir);
      const auto& last = r.history.back();
      out << "trained " << last.epoch << " epochs; val_wer " << format_rate(last.val_wer) << "%; model at "
          << (rc.out_dir / "model.ckpt").string() << "\n";
    } else if (*eval_cmd) {
      std::vector<NamedManifest> sets;
      if (!eval_config.empty()) {
        const RunConfig rc = load_run_config(eval_config);
        sets = rc.test_sets;
      }
      for (const auto& t : eval_tests) sets.push_back(cli_detail::parse_test_arg(t));
      if (sets.empty()) raise(Errc::InvalidArgument, "no test sets: pass --test name=manifest.csv or --config");
      for (const auto& s : sets)
        if (!std::filesystem::exists(s.path))
          raise(Errc::ConfigError, "test set '" + s.name + "' manifest not found: " + s.path.string());
      std::vector<GroupKey> keys;
      for (const auto& g : eval_groups) keys.push_back(parse_group_key(g));
      if (keys.empty()) keys.push_back(GroupKey::gender);
      const ModelBundle bundle = load_bundle(eval_ckpt);
      for (const auto& s : sets) cli_detail::print_test_set(out, evaluate_test_set(bundle, s, keys, eval_samples, eval_out));
    } else if (*sweep_cmd) {
      const std::vector<int> filters = parse_int_list(sweep_filters);
      const RunConfig rc = load_run_config(sweep_config);
      const auto runs = run_sweep(rc, filters, sweep_out, sweep_parallel);
      const auto summary = write_sweep_report(runs, sweep_out);
      out << format_summary_table(summary);
      out << "wrote " << (std::filesystem::path(sweep_out) / "combined.csv").string() << ", loss.svg, wer.svg, summary.csv\n";
    } else if (*decode_cmd) {
      const ModelBundle bundle = load_bundle(decode_ckpt);
      for (const auto& w : decode_wavs) {
        const std::string text = transcribe(bundle, read_wav(w));
        if (decode_wavs.size() > 1) out << w << '\t';
        out << text << '\n';
      }
    } else if (*report_cmd) {
      const std::filesystem::path in(report_in);
      const std::filesystem::path dir = report_out.empty() ? in.parent_path() : std::filesystem::path(report_out);
      const auto runs = read_history_table(in, report_filters);
      std::error_code ec;
      std::filesystem::create_directories(dir.empty() ? "." : dir, ec);
      write_sweep_charts(runs, dir.empty() ? "." : dir);
      const auto summary = summarize_sweep(runs);
      write_sweep_summary_csv(summary, (dir.empty() ? std::filesystem::path(".") : dir) / "summary.csv");
      out << format_summary_table(summary);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace ctcasr
