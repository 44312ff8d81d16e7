#include "kbae/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "kbae/binary_io.hpp"
#include "kbae/channel.hpp"
#include "kbae/checkpoint.hpp"
#include "kbae/codebook.hpp"
#include "kbae/dataset.hpp"
#include "kbae/errors.hpp"
#include "kbae/heatmap.hpp"
#include "kbae/models.hpp"
#include "kbae/pipeline.hpp"

namespace kbae {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Pulls `--config FILE` out of args and splices the file's key=value pairs in
// after the subcommand, skipping keys already given on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file path");
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config) return args;

  std::ifstream in(*config);
  if (!in) throw FilesystemError("cannot open config file " + *config);
  std::vector<std::string> extra;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + " is not key=value");
    }
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key[0] == '-') key.erase(0, 1);
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) extra.push_back(flag + "=" + trim(line.substr(eq + 1)));
  }
  const auto at = args.empty() ? args.end() : args.begin() + 1;
  args.insert(at, extra.begin(), extra.end());
  return args;
}

PhaseShiftMatrix pick_sample(const std::string& path, std::size_t index) {
  auto samples = read_dataset(path);
  if (index >= samples.size()) {
    throw RangeError("sample index " + std::to_string(index) + " out of range for " +
                     std::to_string(samples.size()) + " samples in " + path);
  }
  return samples[index];
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string grouped(std::uint64_t v) {
  std::string digits = std::to_string(v);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(i, ",");
  return digits;
}

std::string against(std::uint64_t value, double reference) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "(reference %s, %+.2f%%)",
                grouped(static_cast<std::uint64_t>(reference)).c_str(),
                100.0 * (static_cast<double>(value) - reference) / reference);
  return buf;
}

struct Reference {
  double params;
  double flops;
};

std::optional<Reference> published_counts(Variant variant, std::size_t c) {
  if (variant == Variant::psfnet) {
    if (c == 64) return Reference{173251, 9703000};
    if (c == 32) return Reference{43619, 2593000};
    if (c == 16) return Reference{11059, 733184};
  } else {
    if (c == 8) return Reference{6645, 983232};
    if (c == 4) return Reference{4915, 777360};
  }
  return std::nullopt;
}

void print_report(std::ostream& out, const ModelConfig& cfg) {
  ModelBundle model = build_model(cfg, 0);
  const auto stats = compression_stats(cfg.side * cfg.side, cfg.c, cfg.z);
  const auto ref = published_counts(cfg.variant, cfg.c);
  const std::uint64_t params = count_params(model);
  const std::uint64_t flops = count_flops(model);
  out << "model " << to_string(cfg.variant);
  if (cfg.variant == Variant::psfnet_h) {
    out << (cfg.decoder_second_garb ? " (2+2 GARB)" : " (2+1 GARB)");
  }
  out << " M=" << cfg.side << " C=" << cfg.c << " K=" << cfg.k << " Z=" << cfg.z
      << " gamma=" << stats.ratio << " q=" << stats.q << " B=" << stats.bits << "\n";
  out << "params " << grouped(params);
  if (ref) out << " " << against(params, ref->params);
  out << "\nflops " << grouped(flops);
  if (ref) out << " " << against(flops, ref->flops);
  out << "\ncodebook " << grouped(std::uint64_t{cfg.z} * cfg.k) << " (Z*K, not in params)\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-base autoencoder feedback for RIS phase-shift matrices", "kbae"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate normalized optimal phase matrices");
  std::size_t gen_m = 32, gen_count = 0;
  std::uint64_t gen_seed = 0;
  std::vector<std::size_t> gen_paths{3, 2};
  std::string gen_out, gen_split;
  gen->add_option("--m", gen_m, "RIS side M (N = M*M)")->capture_default_str();
  gen->add_option("--count", gen_count, "Number of samples")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--paths", gen_paths, "Paths per link: one value, or UE-RIS,RIS-BS")
      ->delimiter(',')
      ->expected(1, 2);
  gen->add_option("--out", gen_out, "Output dataset file")->required();
  gen->add_option("--split", gen_split,
                  "Also write train:val:test parts as OUT.train / OUT.val / OUT.test, e.g. 10:1:1");

  // train
  auto* tr = app.add_subcommand("train", "Train encoder, decoder and knowledge base");
  std::string tr_data, tr_val, tr_variant = "psfnet", tr_out;
  std::size_t tr_c = 16, tr_z = 256, tr_k0 = 2, tr_epochs = 30, tr_batch = 100, tr_m = 32;
  double tr_beta = -1.0, tr_lr_max = 0.002, tr_lr_min = 0.0;
  std::uint64_t tr_t_max = 20, tr_seed = 1;
  bool tr_no_kb = false;
  tr->add_option("--data", tr_data, "Training dataset")->required();
  tr->add_option("--val", tr_val, "Validation dataset");
  tr->add_option("--variant", tr_variant, "psfnet or psfnet-h")->capture_default_str();
  tr->add_option("--m", tr_m, "Matrix side M")->capture_default_str();
  tr->add_option("--c", tr_c, "Feature channels C")->capture_default_str();
  tr->add_option("--z", tr_z, "Codebook size Z")->capture_default_str();
  tr->add_option("--k0", tr_k0, "Attention reduction factor")->capture_default_str();
  tr->add_option("--beta", tr_beta, "Commitment weight (0.25 psfnet, 0.5 psfnet-h)");
  tr->add_option("--epochs", tr_epochs)->capture_default_str();
  tr->add_option("--batch", tr_batch)->capture_default_str();
  tr->add_option("--lr-max", tr_lr_max)->capture_default_str();
  tr->add_option("--lr-min", tr_lr_min)->capture_default_str();
  tr->add_option("--t-max", tr_t_max, "Cosine restart period in epochs")->capture_default_str();
  tr->add_option("--seed", tr_seed)->capture_default_str();
  tr->add_flag("--no-kb", tr_no_kb, "Drop the kb term from the loss");
  tr->add_option("--out", tr_out, "Checkpoint path; OUT.csv gets the per-epoch table")
      ->required();

  // eval
  auto* ev = app.add_subcommand("eval", "NMSE of a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_csv;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--csv", ev_csv, "Per-sample squared errors");

  // compress
  auto* cp = app.add_subcommand("compress", "Phase matrix -> feedback bitstream");
  std::string cp_ckpt, cp_in, cp_out;
  std::size_t cp_index = 0;
  cp->add_option("--ckpt", cp_ckpt)->required();
  cp->add_option("--in", cp_in, "Dataset file")->required();
  cp->add_option("--index", cp_index, "Sample within the dataset")->capture_default_str();
  cp->add_option("--out", cp_out, "Bitstream file")->required();

  // decompress
  auto* dc = app.add_subcommand("decompress", "Feedback bitstream -> phase matrix");
  std::string dc_ckpt, dc_in, dc_out;
  dc->add_option("--ckpt", dc_ckpt)->required();
  dc->add_option("--in", dc_in, "Bitstream file")->required();
  dc->add_option("--out", dc_out, "Single-sample dataset file")->required();

  // report
  auto* rp = app.add_subcommand("report", "Parameter and FLOP counts");
  std::string rp_variant = "psfnet";
  std::size_t rp_c = 64, rp_z = 256, rp_m = 32, rp_k0 = 2;
  rp->add_option("--variant", rp_variant)->capture_default_str();
  rp->add_option("--c", rp_c)->required();
  rp->add_option("--z", rp_z)->capture_default_str();
  rp->add_option("--m", rp_m)->capture_default_str();
  rp->add_option("--k0", rp_k0)->capture_default_str();

  // viz
  auto* vz = app.add_subcommand("viz", "Write a phase matrix as a PGM heatmap");
  std::string vz_in, vz_out, vz_pair;
  std::size_t vz_index = 0;
  vz->add_option("--in", vz_in, "Dataset file")->required();
  vz->add_option("--index", vz_index)->capture_default_str();
  vz->add_option("--pair", vz_pair, "Second dataset (e.g. a reconstruction) shown on the right");
  vz->add_option("--out", vz_out)->required();

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  try {
    if (gen->parsed()) {
      ChannelConfig cfg;
      cfg.side = gen_m;
      cfg.seed = gen_seed;
      cfg.paths_sr = gen_paths.at(0);
      cfg.paths_rd = gen_paths.size() > 1 ? gen_paths[1] : gen_paths[0];
      const auto samples = generate_phase_dataset(cfg, 0, gen_count);
      write_dataset(gen_out, samples);
      out << "wrote " << samples.size() << " samples (M=" << gen_m << ") to " << gen_out << "\n";
      if (!gen_split.empty()) {
        std::array<double, 3> weights{};
        char sep1 = 0, sep2 = 0;
        std::istringstream ss(gen_split);
        if (!(ss >> weights[0] >> sep1 >> weights[1] >> sep2 >> weights[2]) || sep1 != ':' ||
            sep2 != ':') {
          err << "usage error: --split expects a:b:c\n";
          return kExitUsage;
        }
        const auto counts = split_dataset(samples, weights,
                                          {gen_out + ".train", gen_out + ".val", gen_out + ".test"});
        out << "split " << counts[0] << "/" << counts[1] << "/" << counts[2] << "\n";
      }
    } else if (tr->parsed()) {
      TrainConfig cfg;
      const Variant variant = parse_variant(tr_variant);
      cfg.model = variant == Variant::psfnet ? ModelConfig::psfnet(tr_c, tr_z, tr_m)
                                             : ModelConfig::psfnet_h(tr_c, tr_z, tr_m);
      cfg.model.k0 = tr_k0;
      cfg.beta = tr_beta >= 0.0 ? tr_beta : (variant == Variant::psfnet ? 0.25 : 0.5);
      cfg.epochs = tr_epochs;
      cfg.batch = tr_batch;
      cfg.schedule.eta_max = tr_lr_max;
      cfg.schedule.eta_min = tr_lr_min;
      cfg.schedule.t_max = tr_t_max;
      cfg.seed = tr_seed;
      cfg.kb_loss = !tr_no_kb;
      cfg.train_data = tr_data;
      cfg.val_data = tr_val;
      cfg.checkpoint_out = tr_out;
      const TrainReport report = train(cfg);
      write_text_atomic(tr_out + ".csv", report.to_csv());
      out << report.to_text();
    } else if (ev->parsed()) {
      const EvalReport report = evaluate_nmse(ev_ckpt, ev_data);
      if (!ev_csv.empty()) write_text_atomic(ev_csv, report.to_csv());
      out << report.to_text();
    } else if (cp->parsed()) {
      ModelBundle model = load_checkpoint(cp_ckpt);
      const FeedbackBitstream bs = compress(model, pick_sample(cp_in, cp_index));
      write_bitstream(cp_out, bs);
      out << "indices=" << bs.c << " bits_per_index=" << model.codebook.bits_per_index()
          << " total_bits=" << bs.bit_count << "\n";
    } else if (dc->parsed()) {
      ModelBundle model = load_checkpoint(dc_ckpt);
      const PhaseShiftMatrix theta = decompress(model, read_bitstream(dc_in));
      const PhaseShiftMatrix stored = normalize(theta);
      write_dataset(dc_out, std::span(&stored, 1));
      out << "wrote " << theta.side() << "x" << theta.side() << " phase matrix to " << dc_out
          << "\n";
    } else if (rp->parsed()) {
      const Variant variant = parse_variant(rp_variant);
      ModelConfig cfg = variant == Variant::psfnet ? ModelConfig::psfnet(rp_c, rp_z, rp_m)
                                                   : ModelConfig::psfnet_h(rp_c, rp_z, rp_m);
      cfg.k0 = rp_k0;
      print_report(out, cfg);
      if (variant == Variant::psfnet_h) {
        cfg.decoder_second_garb = false;
        print_report(out, cfg);
      }
    } else if (vz->parsed()) {
      const PhaseShiftMatrix left = pick_sample(vz_in, vz_index);
      const HeatmapImage img =
          vz_pair.empty() ? heatmap(left) : heatmap_pair(left, pick_sample(vz_pair, vz_index));
      write_heatmap(vz_out, img);
      out << "wrote " << img.width << "x" << img.height << " heatmap to " << vz_out << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace kbae
