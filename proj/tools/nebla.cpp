// SPDX-License-Identifier: Apache-2.0
//
// nebla: phantom generation, panoramic rendering, training, reconstruction
// and evaluation. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numerical failure, 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "nebla/config.hpp"
#include "nebla/error.hpp"
#include "nebla/io.hpp"
#include "nebla/metrics.hpp"
#include "nebla/model.hpp"
#include "nebla/projector.hpp"
#include "nebla/train.hpp"

#ifndef NEBLA_VERSION
#define NEBLA_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace nebla;
using json = nlohmann::json;

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", a.preset, "desk, micro or full (ignored when --config names one)");
  cmd->add_option("--set", a.overrides, "override a config key, e.g. --set train.epochs=20");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg;
  if (!a.file.empty()) {
    std::ifstream f(a.file);
    std::stringstream ss;
    ss << f.rdbuf();
    std::string text = ss.str();
    if (!a.preset.empty() && text.find("preset") == std::string::npos) text = "preset = " + a.preset + "\n" + text;
    cfg = parse_config(text);
  } else {
    cfg = preset_config(a.preset.empty() ? "desk" : a.preset);
  }
  apply_overrides(cfg, a.overrides);
  if (a.seed_set) {
    cfg.seed = a.seed;
    cfg.validate();
  }
  return cfg;
}

std::vector<std::string> list_volumes(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory " + dir + " does not exist");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vol") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .vol files in " + dir);
  return files;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig* cfg) {
    doc_["command"] = std::move(command);
    doc_["version"] = NEBLA_VERSION;
    if (cfg) {
      const auto text = echo_config(*cfg);
      doc_["config_hash"] = io::hex64(io::fnv1a(text.data(), text.size()));
      doc_["seed"] = cfg->seed;
    }
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }
  void input(const std::string& path) { doc_["inputs"].push_back(entry(path)); }
  void output(const std::string& path) { doc_["outputs"].push_back(entry(path)); }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void write(const std::string& path) const {
    std::ofstream os(path);
    os << doc_.dump(2) << '\n';
    if (!os) throw DataError("cannot write manifest " + path);
  }

 private:
  static json entry(const std::string& path) { return {{"path", path}, {"fnv1a", io::hex64(io::fnv1a_file(path))}}; }
  json doc_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (!os) throw DataError("cannot write " + path);
}

void write_mips(const Volume& v, const std::string& dir, const std::string& stem, Manifest& m) {
  for (Plane p : {Plane::Axial, Plane::Sagittal, Plane::Coronal}) {
    const auto path = (fs::path(dir) / (stem + "_mip_" + plane_name(p) + ".pgm")).string();
    io::write_pgm(path, mip(v, p));
    m.output(path);
  }
}

std::vector<Example> load_examples(const RunConfig& cfg, const std::vector<std::string>& files, const SamplePlan& plan,
                                   Manifest& m) {
  std::vector<Example> out;
  for (const auto& f : files) {
    out.push_back(make_example(fs::path(f).stem().string(), load_volume(f), cfg, plan));
    m.input(f);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  ConfigArgs cfg;
  std::uint64_t seed = 0;
  std::string dims, out, out_dir, export_pgm;
  std::size_t count = 1;
};

int cmd_phantom(const PhantomArgs& a) {
  RunConfig cfg = resolve_config(a.cfg);
  if (!a.dims.empty()) {
    std::size_t h = 0, w = 0, d = 0;
    char x1 = 0, x2 = 0;
    std::istringstream is(a.dims);
    if (!(is >> h >> x1 >> w >> x2 >> d) || x1 != 'x' || x2 != 'x' || is.peek() != EOF) {
      throw ConfigError("--dims expects HxWxD, got '" + a.dims + "'");
    }
    apply_overrides(cfg, {"volume.height=" + std::to_string(h), "volume.width=" + std::to_string(w),
                          "volume.depth=" + std::to_string(d)});
  }
  if (a.out.empty() == a.out_dir.empty()) throw ConfigError("phantom: give exactly one of --out or --out-dir");
  std::vector<std::pair<std::uint64_t, std::string>> jobs;
  if (!a.out.empty()) {
    if (a.count != 1) throw ConfigError("phantom: --count needs --out-dir");
    jobs.emplace_back(a.seed, a.out);
  } else {
    fs::create_directories(a.out_dir);
    for (std::size_t i = 0; i < a.count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "phantom_%03zu.vol", i);
      jobs.emplace_back(a.seed + i, (fs::path(a.out_dir) / name).string());
    }
  }
  Manifest m("phantom", &cfg);
  for (const auto& [seed, path] : jobs) {
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    const Volume v = make_phantom(cfg.phantom_spec(seed));
    save_volume(v, path);
    m.output(path);
    if (!a.export_pgm.empty()) {
      fs::create_directories(a.export_pgm);
      export_slices_pgm(v, (fs::path(a.export_pgm) / fs::path(path).stem()).string());
    }
    std::cout << path << " seed " << seed << '\n';
  }
  m.write(a.out.empty() ? (fs::path(a.out_dir) / "manifest.json").string() : a.out + ".manifest.json");
  return 0;
}

struct RenderArgs {
  ConfigArgs cfg;
  std::string vol, out;
  bool preprocess = false;
};

int cmd_render(const RenderArgs& a) {
  const RunConfig cfg = resolve_config(a.cfg);
  const auto rays = build_rays(cfg.trajectory);
  const auto report = validate_no_intersection(rays);
  fs::create_directories(a.out);
  write_text((fs::path(a.out) / "intersection.txt").string(),
             std::string(report.pass ? "pass" : "FAIL") + " pairs_checked=" + std::to_string(report.pairs_checked) +
                 (report.pass ? "" : " " + report.message) + "\n");
  if (!report.pass) throw ConfigError("trajectory rays intersect inside the horseshoe: " + report.message);
  Volume v = load_volume(a.vol);
  if (a.preprocess) v = preprocess(v, cfg.preprocess);
  const Shape expect{1, cfg.height, cfg.width, cfg.depth};
  if (v.data.shape() != expect) {
    throw DataError("volume " + a.vol + " has shape " + shape_str(v.data.shape()) + ", config expects " +
                    shape_str(expect));
  }
  Manifest m("render-px", &cfg);
  m.input(a.vol);
  const auto samples = build_samples(cfg.trajectory);
  const double mu = resolve_mu_scale(cfg.mu_scale, samples);
  const auto px_path = (fs::path(a.out) / "px.pgm").string();
  io::write_pgm(px_path, render_px(v, samples, mu));
  m.output(px_path);
  write_mips(v, a.out, "volume", m);
  m.set("mu_scale", mu);
  m.set("intersection_pairs_checked", report.pairs_checked);
  m.write((fs::path(a.out) / "manifest.json").string());
  std::cout << "rendered " << cfg.trajectory.rows << "x" << cfg.trajectory.cols << " panoramic image, mu_scale " << mu
            << ", " << report.pairs_checked << " ray pairs checked\n";
  return 0;
}

struct TrainArgs {
  ConfigArgs cfg;
  std::string data_dir, out;
  bool resume = false, dry_run = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a.cfg);
  Reconstructor<float> model(cfg);
  if (a.dry_run) {
    std::map<std::string, std::size_t> groups;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      const auto& p = model.params()[i];
      const auto group = p.name.substr(0, p.name.find('.'));
      if (!groups.count(group)) order.push_back(group);
      groups[group] += p.value.size();
    }
    std::cout << "config ok (preset " << cfg.preset << ")\n";
    for (const auto& g : order) std::cout << "  " << g << ": " << groups[g] << '\n';
    std::cout << "  total: " << model.params().scalar_count() << " parameters in " << model.params().size()
              << " tensors\n  samples per image: " << model.plan()->points() << '\n';
    return 0;
  }
  if (a.out.empty()) throw ConfigError("train: --out is required");
  Manifest m("train", &cfg);
  const auto files = list_volumes(a.data_dir);
  const auto examples = load_examples(cfg, files, *model.plan(), m);
  const auto split = split_dataset(examples.size());
  std::vector<const Example*> train, val;
  for (auto i : split.train) train.push_back(&examples[i]);
  for (auto i : split.val) val.push_back(&examples[i]);
  fs::create_directories(a.out);
  write_text((fs::path(a.out) / "config.txt").string(), echo_config(cfg));
  std::string split_text;
  for (auto [name, idx] : {std::pair{"train", &split.train}, {"val", &split.val}, {"test", &split.test}})
    for (auto i : *idx) split_text += std::string(name) + "," + examples[i].name + "\n";
  write_text((fs::path(a.out) / "split.csv").string(), split_text);

  model.init(cfg.seed);
  Trainer trainer(model, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  FitOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.on_epoch = [&](const EpochRecord& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "epoch %zu  train %.6g  val %.6g  lr %.3g  %.0fs%s\n", r.epoch, r.train.total, r.val, r.lr, s,
                 r.improved ? "  *" : "");
  };
  const auto records = fit(trainer, train, val, opts);
  for (const char* f : {"config.txt", "split.csv", "metrics.csv", "last.ckpt", "best.ckpt"}) {
    const auto p = (fs::path(a.out) / f).string();
    if (fs::exists(p)) m.output(p);
  }
  m.set("epochs_run", records.size());
  m.set("stopped_early", trainer.stopped_early());
  m.write((fs::path(a.out) / "manifest.json").string());
  std::cout << "trained " << trainer.epoch() << " epochs, " << trainer.steps() << " steps"
            << (trainer.stopped_early() ? " (early stop)" : "") << '\n';
  return 0;
}

struct ReconArgs {
  std::string ckpt, px, out;
};

int cmd_reconstruct(const ReconArgs& a) {
  if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
  const RunConfig cfg = read_checkpoint_config(a.ckpt);
  Reconstructor<float> model(cfg);
  load_checkpoint_params(a.ckpt, model.params());
  const auto px = io::read_pgm(a.px);
  Graph<float> g;
  const auto out = model.forward(g, px);
  fs::create_directories(a.out);
  Manifest m("reconstruct", &cfg);
  m.input(a.ckpt);
  m.input(a.px);
  const Volume coarse(out.coarse.value()), refined(out.refined.value());
  const auto cpath = (fs::path(a.out) / "coarse.vol").string(), rpath = (fs::path(a.out) / "refined.vol").string();
  const auto mpath = (fs::path(a.out) / "coarse.mask").string();
  save_volume(coarse, cpath);
  save_volume(refined, rpath);
  {
    std::ofstream os(mpath, std::ios::binary);
    const auto& mask = model.plan()->mask;
    os.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
    if (!os) throw DataError("cannot write " + mpath);
  }
  for (const auto& p : {cpath, rpath, mpath}) m.output(p);
  write_mips(coarse, a.out, "coarse", m);
  write_mips(refined, a.out, "refined", m);
  m.write((fs::path(a.out) / "manifest.json").string());
  std::cout << "wrote " << cpath << " and " << rpath << '\n';
  return 0;
}

struct EvalArgs {
  ConfigArgs cfg;
  std::string ckpt, data_dir, out;
  bool oracle = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.ckpt.empty() && !a.oracle) throw ConfigError("eval: --ckpt is required");
  const RunConfig cfg = a.oracle ? resolve_config(a.cfg) : read_checkpoint_config(a.ckpt);
  Reconstructor<float> model(cfg);
  Manifest m("eval", &cfg);
  if (!a.oracle) {
    load_checkpoint_params(a.ckpt, model.params());
    m.input(a.ckpt);
  }
  const auto files = list_volumes(a.data_dir);
  const auto examples = load_examples(cfg, files, *model.plan(), m);
  const auto split = split_dataset(examples.size());
  if (split.test.empty()) {
    throw DataError("test split is empty: " + std::to_string(examples.size()) + " volumes give none at 8:1:1");
  }
  const auto sopts = fit_window({}, cfg.height, cfg.width);
  if (sopts.window != SsimOptions{}.window) {
    std::cerr << "note: SSIM window reduced to " << sopts.window << " for " << cfg.height << "x" << cfg.width
              << " slices\n";
  }
  MetricReport report;
  for (auto i : split.test) {
    const auto& ex = examples[i];
    Volume pred;
    if (a.oracle) {
      pred = ex.volume;
    } else {
      Graph<float> g;
      pred = Volume(model.forward(g, ex.px).refined.value());
    }
    report.add({ex.name, psnr(pred, ex.volume), ssim(pred, ex.volume, sopts)});
  }
  report.finalize();
  std::cout << report.csv() << report.table() << '\n';
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    const auto path = (fs::path(a.out) / "report.csv").string();
    write_text(path, report.csv());
    write_text((fs::path(a.out) / "report.txt").string(), report.table() + "\n");
    m.output(path);
    m.write((fs::path(a.out) / "manifest.json").string());
  }
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Panoramic X-ray to 3-D volume reconstruction"};
  app.set_version_flag("--version", NEBLA_VERSION);
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "generate procedural jaw phantoms");
  add_config_options(phantom, ph.cfg);
  phantom->add_option("--seed", ph.seed, "phantom seed (first seed with --count)");
  phantom->add_option("--dims", ph.dims, "volume dims HxWxD, overriding the config");
  phantom->add_option("--out", ph.out, "output .vol file");
  phantom->add_option("--out-dir", ph.out_dir, "output directory for --count phantoms")->envname("NEBLA_DATA_DIR");
  phantom->add_option("--count", ph.count, "number of phantoms with consecutive seeds");
  phantom->add_option("--export-pgm", ph.export_pgm, "also write one PGM per height slice into this directory");

  RenderArgs rd;
  auto* render = app.add_subcommand("render-px", "render the panoramic image and MIPs of a volume");
  add_config_options(render, rd.cfg);
  render->add_option("--vol", rd.vol, "input .vol file")->required();
  render->add_option("--out", rd.out, "output directory")->required()->envname("NEBLA_OUT_DIR");
  render->add_flag("--preprocess", rd.preprocess, "clip and rescale the volume before rendering");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train on a directory of .vol files (8:1:1 split)");
  add_config_options(train, tr.cfg);
  train->add_option("--data-dir", tr.data_dir, "directory of .vol files")->envname("NEBLA_DATA_DIR");
  train->add_option("--out", tr.out, "run directory")->envname("NEBLA_OUT_DIR");
  train->add_flag("--resume", tr.resume, "continue from <out>/last.ckpt");
  train->add_flag("--dry-run", tr.dry_run, "validate the config and print parameter counts");

  ReconArgs rc;
  auto* recon = app.add_subcommand("reconstruct", "reconstruct coarse and refined volumes from one PGM image");
  recon->add_option("--ckpt", rc.ckpt, "checkpoint")->required();
  recon->add_option("--px", rc.px, "panoramic image (PGM)")->required()->check(CLI::ExistingFile);
  recon->add_option("--out", rc.out, "output directory")->required()->envname("NEBLA_OUT_DIR");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "PSNR and SSIM over the test split");
  add_config_options(eval, ev.cfg);
  eval->add_option("--ckpt", ev.ckpt, "checkpoint");
  eval->add_option("--data-dir", ev.data_dir, "directory of .vol files")->required()->envname("NEBLA_DATA_DIR");
  eval->add_option("--out", ev.out, "write report.csv and report.txt here")->envname("NEBLA_OUT_DIR");
  eval->add_flag("--oracle", ev.oracle, "score ground truth against itself (harness check)");

  for (auto* cmd : {phantom, render, train, eval}) {
    ConfigArgs* ca = cmd == phantom ? &ph.cfg : cmd == render ? &rd.cfg : cmd == train ? &tr.cfg : &ev.cfg;
    if (cmd != phantom) cmd->add_option("--seed", ca->seed, "master seed")->each([ca](const std::string&) { ca->seed_set = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (phantom->parsed()) return cmd_phantom(ph);
  if (render->parsed()) return cmd_render(rd);
  if (train->parsed()) {
    if (!tr.dry_run && tr.data_dir.empty()) throw ConfigError("train: --data-dir is required");
    return cmd_train(tr);
  }
  if (recon->parsed()) return cmd_reconstruct(rc);
  return cmd_eval(ev);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
