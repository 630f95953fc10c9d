// SPDX-License-Identifier: Apache-2.0
//
// qsam: inspect JPEG quantization tables, build multi-QF datasets, train
// and evaluate QABN models, and tabulate results.
//
// Exit codes: 0 success, 2 usage or input error, 3 internal error.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cli_support.hpp"
#include "qsam/byte_io.hpp"
#include "qsam/codec_sim.hpp"
#include "qsam/data.hpp"
#include "qsam/error.hpp"
#include "qsam/jpeg_io.hpp"
#include "qsam/parallel.hpp"
#include "qsam/qac.hpp"
#include "qsam/train.hpp"

namespace {

using nlohmann::json;
using namespace qsam;

constexpr int kExitInput = 2;
constexpr int kExitInternal = 3;

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ModeError:
    case ErrorCode::IndexOutOfRange:
      return kExitInternal;
    default:
      return kExitInput;
  }
}

void log(const std::string& msg) { std::cerr << "[qsam] " << msg << "\n"; }

std::string read_text(const std::string& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

json steps_json(std::span<const std::uint8_t> s) { return json(std::vector<int>(s.begin(), s.end())); }

Qst qst_from_hex(const std::string& hex) {
  if (hex.size() != 2 * kQstSize) fail(ErrorCode::BadContainer, "QST hex string has the wrong length");
  std::array<std::uint8_t, kQstSize> steps{};
  for (std::size_t i = 0; i < kQstSize; ++i) steps[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
  return Qst::from_steps(steps);
}

// ------------------------------------------------------------------ inspect

int cmd_inspect(const std::string& path, bool lenient) {
  const auto bytes = read_file(path);
  const auto tables = jpeg::parse_quant_tables(bytes);
  const auto frame = jpeg::read_frame_info(bytes);
  const auto assembled =
      jpeg::assemble_qst(tables, frame, lenient ? jpeg::ChromaMode::Lenient : jpeg::ChromaMode::Strict);
  const auto cls = jpeg::classify_qst(assembled.qst);

  json j;
  j["file"] = path;
  j["frame"] = {{"width", frame.width}, {"height", frame.height}, {"progressive", frame.progressive}};
  j["frame"]["components"] = json::array();
  for (const auto& c : frame.components) {
    j["frame"]["components"].push_back(
        {{"id", c.id}, {"quant_table", c.quant_table}, {"h_sampling", c.h_sampling}, {"v_sampling", c.v_sampling}});
  }
  j["tables"] = json::array();
  for (const auto& t : tables) {
    j["tables"].push_back({{"id", t.id},
                           {"precision", t.precision == jpeg::Precision::Bits8 ? 8 : 16},
                           {"offset", t.offset},
                           {"steps", std::vector<int>(t.steps.begin(), t.steps.end())}});
  }
  j["qst"] = {{"luma", steps_json(assembled.qst.channel(0))},
              {"chroma", steps_json(assembled.qst.channel(1))},
              {"clamped", assembled.clamped},
              {"hex", to_hex(assembled.qst)}};
  j["class"] = cls.qf ? json{{"kind", "DefaultQF"}, {"qf", *cls.qf}} : json{{"kind", "NonDefault"}, {"qf", nullptr}};
  j["qac"] = {{"raw", qac::qac(assembled.qst, {1.0, true})}, {"normalized", qac::qac(assembled.qst)}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_qac(const std::string& path) {
  const auto bytes = read_file(path);
  const auto assembled =
      jpeg::assemble_qst(jpeg::parse_quant_tables(bytes), jpeg::read_frame_info(bytes), jpeg::ChromaMode::Strict);
  json j;
  j["file"] = path;
  j["raw"] = qac::qac(assembled.qst, {1.0, true});
  j["normalized"] = qac::qac(assembled.qst);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ build-dataset

std::vector<int> parse_qf_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "quality factor '" + item + "' is not an integer");
    }
  }
  return out;
}

struct BuildArgs {
  std::string out, src_dir, cifar, qf;
  std::size_t synthetic = 0;
  std::uint64_t seed = 0;
};

int cmd_build(const BuildArgs& a) {
  const int sources = !a.src_dir.empty() + !a.cifar.empty() + (a.synthetic > 0);
  if (sources != 1) fail(ErrorCode::InvalidArgument, "give exactly one of --src-dir, --cifar, --synthetic");
  data::LabeledImages src;
  if (!a.src_dir.empty()) {
    src = data::load_image_folder(a.src_dir);
  } else if (!a.cifar.empty()) {
    src = data::read_cifar_binary(a.cifar);
  } else {
    src = data::generate_synthetic(data::desk_spec(a.synthetic, a.seed));
  }
  if (src.images.empty()) fail(ErrorCode::InvalidArgument, "source holds no images");
  const auto qfs = parse_qf_list(a.qf);
  log("building " + std::to_string(src.images.size()) + " images x " + std::to_string(qfs.size()) + " QFs");
  const auto ds = data::build_compressed_dataset(src, qfs);
  data::write_dataset(a.out, ds);
  log("wrote " + std::to_string(ds.records.size()) + " records to " + a.out);
  std::cout << data::qst_report(ds);
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string dataset, out, config, report, init;
  std::vector<std::string> sets;
  bool baseline = false, no_qac = false, second_order = false;
  std::optional<std::size_t> m, ite1, ite2;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  cli::TrainSettings s;
  if (!a.config.empty()) {
    for (const auto& [k, v] : cli::parse_config_text(read_text(a.config))) cli::apply_setting(s, k, v);
  }
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "--set expects key=value, got '" + kv + "'");
    cli::apply_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.baseline) s.baseline = true;
  if (a.no_qac) s.cfg.qac.enabled = false;
  if (a.second_order) s.cfg.second_order = true;
  if (a.m) s.cfg.M = *a.m;
  if (a.ite1) s.cfg.ite1 = *a.ite1;
  if (a.ite2) s.cfg.ite2 = *a.ite2;
  if (a.seed) s.cfg.seed = *a.seed;
  s.cfg.validate();
  std::cerr << "[qsam] resolved config:\n" << cli::describe(s);

  const auto ds = data::read_dataset(a.dataset);
  std::cout << train::metrics_csv_header(ds) << std::flush;
  auto on_epoch = [](const train::EpochMetrics& m) {
    std::cout << train::metrics_csv_row(m) << std::flush;
    log(m.phase + " epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.loss));
  };

  std::optional<TinyNet> init;
  if (!a.init.empty()) init.emplace(TinyNet::from_checkpoint(nn::read_checkpoint(a.init)));
  auto outcome = s.baseline ? train::train_baseline(ds, s.cfg, on_epoch)
                            : train::train_qam(ds, s.cfg, on_epoch, init ? &*init : nullptr);

  json extra;
  extra["seen_qsts"] = json::array();
  for (const auto& q : ds.qsts) extra["seen_qsts"].push_back(to_hex(q));
  extra["bases"] = json::array();
  for (const auto& q : outcome.bases.bases()) extra["bases"].push_back(to_hex(q));
  extra["baseline"] = s.baseline;
  extra["train_config"] = cli::describe(s);
  nn::write_checkpoint(a.out, outcome.model.to_checkpoint(extra.dump()));
  log("wrote checkpoint " + a.out);

  if (!a.report.empty()) {
    json rep;
    rep["config"] = cli::describe(s);
    rep["bases"] = json::array();
    for (std::size_t k = 0; k < outcome.bases.size(); ++k) {
      const auto f = outcome.model.meta().forward(outcome.bases[k]);
      double dist = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) dist += std::abs(f[i] - (i == k ? 1.0 : 0.0));
      rep["bases"].push_back({{"qst", data::qst_label(outcome.bases[k])}, {"f_meta", f}, {"l1_to_onehot", dist}});
    }
    rep["epochs"] = json::array();
    for (const auto& m : outcome.history) {
      json e{{"epoch", m.epoch}, {"phase", m.phase}, {"loss", m.loss}};
      if (m.l_inner) e["L_inner"] = *m.l_inner;
      if (m.l_out) e["L_out"] = *m.l_out;
      if (m.l_basis) e["L_basis"] = *m.l_basis;
      rep["epochs"].push_back(e);
    }
    const std::string text = rep.dump(2) + "\n";
    write_file(a.report, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return 0;
}

// ------------------------------------------------------------------ eval / gap

std::vector<Qst> seen_from_manifest(const nn::Checkpoint& ck) {
  std::vector<Qst> out;
  const json m = json::parse(ck.manifest, nullptr, false);
  if (m.is_object() && m.contains("seen_qsts")) {
    for (const auto& h : m["seen_qsts"]) out.push_back(qst_from_hex(h.get<std::string>()));
  }
  return out;
}

int cmd_eval(const std::string& dataset, const std::string& ckpt) {
  const auto ck = nn::read_checkpoint(ckpt);
  auto model = TinyNet::from_checkpoint(ck);
  const auto ds = data::read_dataset(dataset);
  if (ds.classes != model.config().classes) {
    fail(ErrorCode::ShapeMismatch, "dataset has " + std::to_string(ds.classes) + " classes, model " +
                                       std::to_string(model.config().classes));
  }
  const auto seen = seen_from_manifest(ck);
  std::cout << train::eval_csv(train::evaluate(model, ds, seen));
  return 0;
}

int cmd_gap(const std::string& dataset, const std::string& ckpt, int site, const std::string& point) {
  if (site < 1 || site > TinyNet::kSites) fail(ErrorCode::InvalidArgument, "--site must be 1 or 2");
  train::GapOptions opts;
  if (point == "input") opts.point = FeatureTap::Point::Input;
  else if (point == "output") opts.point = FeatureTap::Point::Output;
  else fail(ErrorCode::InvalidArgument, "--point must be input or output");
  auto model = TinyNet::from_checkpoint(nn::read_checkpoint(ckpt));
  const auto ds = data::read_dataset(dataset);
  const auto g = train::measure_distribution_gap(model, ds, site, opts);
  std::cout << "qst_a,qst_b,sym_kl,js\n";
  for (std::size_t a = 0; a < g.qsts.size(); ++a) {
    for (std::size_t b = 0; b < g.qsts.size(); ++b) {
      std::cout << g.labels[a] << ',' << g.labels[b] << ',' << g.kl[a][b] << ',' << g.js[a][b] << '\n';
    }
  }
  return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const std::vector<std::string>& runs) {
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& r : runs) {
    const auto eq = r.find('=');
    std::string name, path;
    if (eq == std::string::npos) {
      path = r;
      name = std::filesystem::path(r).stem().string();
    } else {
      name = r.substr(0, eq);
      path = r.substr(eq + 1);
    }
    named.emplace_back(name, read_text(path));
  }
  std::cout << cli::build_report(named);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"qsam: quantization-aware training toolkit"};
  app.require_subcommand(1);

  std::string inspect_path;
  bool lenient = false;
  auto* inspect = app.add_subcommand("inspect", "print JPEG quantization tables, QST, QF class and QAC as JSON");
  inspect->add_option("file", inspect_path, "JPEG file")->required();
  inspect->add_flag("--lenient", lenient, "use the first chroma table when chroma components disagree");

  std::string qac_path;
  auto* qc = app.add_subcommand("qac", "print raw and normalized QAC of a JPEG file as JSON");
  qc->add_option("file", qac_path, "JPEG file")->required();

  BuildArgs build;
  auto* bd = app.add_subcommand("build-dataset", "compress source images at several QFs into a dataset file");
  bd->add_option("--out", build.out, "output dataset path")->required();
  bd->add_option("--src-dir", build.src_dir, "directory of class folders holding PNG images");
  bd->add_option("--cifar", build.cifar, "CIFAR binary batch file");
  bd->add_option("--synthetic", build.synthetic, "synthetic images per class");
  bd->add_option("--qf", build.qf, "comma-separated quality factors")->required();
  bd->add_option("--seed", build.seed, "seed for synthetic images");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a QABN model (or the single-BN baseline); metrics CSV on stdout");
  t->add_option("--dataset", tr.dataset, "training dataset")->required();
  t->add_option("--out", tr.out, "output checkpoint")->required();
  t->add_option("--config", tr.config, "key = value config file");
  t->add_option("--set", tr.sets, "override one config key (key=value)");
  t->add_option("--report", tr.report, "write a JSON run report here");
  t->add_option("--init", tr.init, "single-BN checkpoint that seeds backbone and every base");
  t->add_flag("--baseline", tr.baseline, "single BN, no QAC, every sample");
  t->add_flag("--no-qac", tr.no_qac, "unit sample weights");
  t->add_flag("--second-order", tr.second_order, "differentiate through the inner update");
  t->add_option("--m", tr.m, "number of QST bases");
  t->add_option("--ite1", tr.ite1, "base epochs");
  t->add_option("--ite2", tr.ite2, "meta epochs");
  t->add_option("--seed", tr.seed, "seed for every random choice");

  std::string ev_dataset, ev_ckpt;
  auto* ev = app.add_subcommand("eval", "per-QST accuracy with Avg, Avg(S), Avg(U) as CSV");
  ev->add_option("--dataset", ev_dataset, "evaluation dataset")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();

  std::string gp_dataset, gp_ckpt, gp_point = "input";
  int gp_site = 1;
  auto* gp = app.add_subcommand("gap", "divergence between per-QST feature distributions at a QABN site");
  gp->add_option("--dataset", gp_dataset, "dataset")->required();
  gp->add_option("--ckpt", gp_ckpt, "checkpoint")->required();
  gp->add_option("--site", gp_site, "QABN site (1 or 2)");
  gp->add_option("--point", gp_point, "input or output of the site");

  std::vector<std::string> runs;
  auto* rp = app.add_subcommand("report", "tabulate eval or metrics CSVs: one row per QST, one column per run");
  rp->add_option("runs", runs, "CSV files, optionally name=path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*inspect) return cmd_inspect(inspect_path, lenient);
    if (*qc) return cmd_qac(qac_path);
    if (*bd) return cmd_build(build);
    if (*t) return cmd_train(tr);
    if (*ev) return cmd_eval(ev_dataset, ev_ckpt);
    if (*gp) return cmd_gap(gp_dataset, gp_ckpt, gp_site, gp_point);
    if (*rp) return cmd_report(runs);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: BadContainer: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
