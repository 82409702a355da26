// SPDX-License-Identifier: Apache-2.0
#include "nebla/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nebla/config.hpp"
#include "nebla/error.hpp"
#include "nebla/io.hpp"
#include "nebla/projector.hpp"

namespace nebla {

namespace {

constexpr char kMagic[16] = "VNBLACKPT1";
constexpr std::uint32_t kVersion = 1;

LossValues values_of(const LossTerms<float>& t) {
  return {t.mse.value()[0], t.proj.value()[0], t.perc.value()[0], t.total.value()[0]};
}

void require_finite(const LossValues& v, std::uint64_t step) {
  const std::pair<const char*, double> parts[] = {
      {"L_MSE", v.mse}, {"L_proj", v.proj}, {"L_perc", v.perc}, {"L_total", v.total}};
  for (const auto& [name, x] : parts) {
    if (!std::isfinite(x)) throw NumericalError(std::string("non-finite ") + name + " at step " + std::to_string(step));
  }
}

void accumulate(LossValues& acc, const LossValues& v, double w) {
  acc.mse += w * v.mse;
  acc.proj += w * v.proj;
  acc.perc += w * v.perc;
  acc.total += w * v.total;
}

struct CheckpointHeader {
  std::string config;
  std::uint64_t epoch = 0, steps = 0, adam_steps = 0;
  double lr = 0, sched_best = 0, early_best = 0;
  std::uint64_t sched_bad = 0, early_bad = 0, stopped = 0;
};

std::ifstream open_checkpoint(const std::string& path, CheckpointHeader& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[16] = {};
  is.read(magic, 16);
  if (!is || std::string(magic, 10) != "VNBLACKPT1") throw DataError(path + " is not a checkpoint (bad magic)");
  const auto version = io::read_u32(is, "checkpoint version");
  if (version != kVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kVersion) + ")");
  }
  h.config = io::read_string(is, "checkpoint config");
  h.epoch = io::read_u64(is, "epoch");
  h.steps = io::read_u64(is, "steps");
  h.adam_steps = io::read_u64(is, "adam steps");
  h.lr = io::read_f64(is, "lr");
  h.sched_best = io::read_f64(is, "scheduler best");
  h.sched_bad = io::read_u64(is, "scheduler counter");
  h.early_best = io::read_f64(is, "early stop best");
  h.early_bad = io::read_u64(is, "early stop counter");
  h.stopped = io::read_u64(is, "stopped flag");
  return is;
}

// Reads the tensor table; `sink(i, value, m, v)` receives each entry after
// the name and shape were checked against `params`.
template <typename Sink>
void read_tensors(std::istream& is, const std::string& path, const ParameterStore<float>& params, Sink sink) {
  const auto count = io::read_u32(is, "tensor count");
  for (std::size_t i = 0; i < std::max<std::size_t>(count, params.size()); ++i) {
    if (i >= count || i >= params.size()) {
      const std::string name = i < params.size() ? params[i].name : "(extra tensors in file)";
      throw ConfigError("checkpoint " + path + " does not match the model at tensor " + name + ": file has " +
                        std::to_string(count) + " tensors, model has " + std::to_string(params.size()));
    }
    const auto name = io::read_string(is, "tensor name", 4096);
    const auto rank = io::read_u32(is, "tensor rank");
    if (rank > 8) throw DataError("checkpoint tensor " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = io::read_u32(is, "tensor dim");
    const auto& p = params[i];
    if (name != p.name || shape != p.value.shape()) {
      throw ConfigError("checkpoint " + path + " does not match the model at tensor " + p.name + ": file has " + name +
                        " " + shape_str(shape) + ", model expects " + shape_str(p.value.shape()));
    }
    const std::size_t n = shape_numel(shape);
    std::vector<float> value(n), m(n), v(n);
    io::read_f32_array(is, value.data(), n, "tensor values");
    io::read_f32_array(is, m.data(), n, "first moments");
    io::read_f32_array(is, v.data(), n, "second moments");
    sink(i, std::move(value), std::move(m), std::move(v));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint " + path + " has trailing bytes");
}

}  // namespace

Example make_example(const std::string& name, const Volume& raw, const RunConfig& cfg, const SamplePlan& plan) {
  const Shape expect{1, cfg.height, cfg.width, cfg.depth};
  if (raw.data.shape() != expect) {
    throw DataError("volume " + name + " has shape " + shape_str(raw.data.shape()) + ", config expects " +
                    shape_str(expect));
  }
  Example ex;
  ex.name = name;
  ex.volume = preprocess(raw, cfg.preprocess);
  ex.px = render_px(ex.volume, plan.samples, resolve_mu_scale(cfg.mu_scale, plan.samples));
  return ex;
}

DatasetSplit split_dataset(std::size_t n) {
  if (n == 0) throw DataError("dataset is empty");
  DatasetSplit s;
  const std::size_t held = n / 10;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n - 2 * held) s.train.push_back(i);
    else if (i < n - held) s.val.push_back(i);
    else s.test.push_back(i);
  }
  return s;
}

std::string csv_header() { return "epoch,L_MSE,L_proj,L_perc,L_total,lr"; }

std::string csv_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.train.mse, r.train.proj, r.train.perc,
                r.train.total, r.lr);
  return buf;
}

Trainer::Trainer(Reconstructor<float>& model, const RunConfig& cfg)
    : model_(model),
      cfg_(cfg),
      perc_(cfg.perc),
      adam_(model.params(), cfg.adam),
      scheduler_(cfg.scheduler),
      early_(cfg.train.early_stop_patience) {}

LossValues Trainer::train_step(const Example& ex) {
  Graph<float> g(true, cfg_.seed * 0x100000001B3ULL + steps_);
  const auto out = model_.forward(g, ex.px);
  const auto terms = loss_total(out.refined, g.constant(ex.volume.data), cfg_.loss, perc_);
  const auto v = values_of(terms);
  require_finite(v, steps_);
  model_.params().zero_grad();
  g.backward(terms.total);
  adam_.step();
  ++steps_;
  return v;
}

LossValues Trainer::evaluate(const Example& ex) const {
  Graph<float> g(false);
  const auto out = model_.forward(g, ex.px);
  const auto v = values_of(loss_total(out.refined, g.constant(ex.volume.data), cfg_.loss, perc_));
  require_finite(v, steps_);
  return v;
}

EpochRecord Trainer::run_epoch(const std::vector<const Example*>& train, const std::vector<const Example*>& val) {
  if (train.empty()) throw DataError("training split is empty");
  EpochRecord r;
  r.epoch = epoch_;
  r.lr = adam_.lr();
  std::size_t done = 0;
  for (const Example* ex : train) {
    if (cfg_.train.max_steps && steps_ >= cfg_.train.max_steps) break;
    accumulate(r.train, train_step(*ex), 1.0);
    ++done;
  }
  if (done) {
    const double inv = 1.0 / static_cast<double>(done);
    r.train = {r.train.mse * inv, r.train.proj * inv, r.train.perc * inv, r.train.total * inv};
  }
  const auto& held = val.empty() ? train : val;
  for (const Example* ex : held) r.val += evaluate(*ex).total / static_cast<double>(held.size());
  adam_.set_lr(scheduler_.step(r.val, adam_.lr()));
  stopped_early_ = early_.step(r.val);
  r.improved = early_.improved();
  ++epoch_;
  return r;
}

bool Trainer::finished() const {
  return stopped_early_ || epoch_ >= cfg_.train.epochs || (cfg_.train.max_steps && steps_ >= cfg_.train.max_steps);
}

void Trainer::save_checkpoint(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + path);
    os.write(kMagic, 16);
    io::write_u32(os, kVersion);
    io::write_string(os, echo_config(cfg_));
    io::write_u64(os, epoch_);
    io::write_u64(os, steps_);
    io::write_u64(os, adam_.steps());
    io::write_f64(os, adam_.lr());
    io::write_f64(os, scheduler_.best);
    io::write_u64(os, scheduler_.bad_epochs);
    io::write_f64(os, early_.best);
    io::write_u64(os, early_.bad_epochs);
    io::write_u64(os, stopped_early_ ? 1 : 0);
    const auto& params = model_.params();
    io::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      io::write_string(os, p.name);
      io::write_u32(os, static_cast<std::uint32_t>(p.value.rank()));
      for (auto d : p.value.shape()) io::write_u32(os, static_cast<std::uint32_t>(d));
      io::write_f32_array(os, p.value.ptr(), p.value.size());
      io::write_f32_array(os, adam_.first_moments()[i].data(), p.value.size());
      io::write_f32_array(os, adam_.second_moments()[i].data(), p.value.size());
    }
    if (!os) throw DataError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  CheckpointHeader h;
  auto is = open_checkpoint(path, h);
  auto& params = model_.params();
  // Stage everything so a failed load leaves the trainer untouched.
  std::vector<std::vector<float>> values(params.size()), ms(params.size()), vs(params.size());
  read_tensors(is, path, params, [&](std::size_t i, std::vector<float> v, std::vector<float> m, std::vector<float> s) {
    values[i] = std::move(v);
    ms[i] = std::move(m);
    vs[i] = std::move(s);
  });
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].value.storage() = std::move(values[i]);
    adam_.first_moments()[i] = std::move(ms[i]);
    adam_.second_moments()[i] = std::move(vs[i]);
  }
  epoch_ = h.epoch;
  steps_ = h.steps;
  adam_.set_steps(h.adam_steps);
  adam_.set_lr(h.lr);
  scheduler_.best = h.sched_best;
  scheduler_.bad_epochs = h.sched_bad;
  early_.best = h.early_best;
  early_.bad_epochs = h.early_bad;
  stopped_early_ = h.stopped != 0;
}

RunConfig read_checkpoint_config(const std::string& path) {
  CheckpointHeader h;
  open_checkpoint(path, h);
  return parse_config(h.config);
}

void load_checkpoint_params(const std::string& path, ParameterStore<float>& params) {
  CheckpointHeader h;
  auto is = open_checkpoint(path, h);
  std::vector<std::vector<float>> values(params.size());
  read_tensors(is, path, params, [&](std::size_t i, std::vector<float> v, std::vector<float>, std::vector<float>) {
    values[i] = std::move(v);
  });
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value.storage() = std::move(values[i]);
}

std::vector<EpochRecord> fit(Trainer& trainer, const std::vector<const Example*>& train,
                             const std::vector<const Example*>& val, const FitOptions& opts) {
  namespace fs = std::filesystem;
  std::ofstream csv;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    const auto last = fs::path(opts.out_dir) / "last.ckpt";
    const auto csv_path = fs::path(opts.out_dir) / "metrics.csv";
    if (opts.resume) {
      if (!fs::exists(last)) throw DataError("cannot resume: " + last.string() + " does not exist");
      trainer.load_checkpoint(last.string());
      csv.open(csv_path, std::ios::app);
    } else {
      csv.open(csv_path, std::ios::trunc);
      csv << csv_header() << '\n';
    }
    if (!csv) throw DataError("cannot write " + csv_path.string());
  }
  std::vector<EpochRecord> records;
  while (!trainer.finished()) {
    const auto r = trainer.run_epoch(train, val);
    records.push_back(r);
    if (!opts.out_dir.empty()) {
      csv << csv_row(r) << '\n' << std::flush;
      if (r.improved) trainer.save_checkpoint((fs::path(opts.out_dir) / "best.ckpt").string());
      trainer.save_checkpoint((fs::path(opts.out_dir) / "last.ckpt").string());
    }
    if (opts.on_epoch) opts.on_epoch(r);
  }
  return records;
}

}  // namespace nebla
