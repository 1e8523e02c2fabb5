#include "lspd/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <png.h>

#include "lspd/binary_io.hpp"
#include "lspd/checkpoint.hpp"
#include "lspd/fbp.hpp"
#include "lspd/metrics.hpp"
#include "lspd/theory.hpp"
#include "lspd/train.hpp"

namespace lspd {

LinearOperator make_operator(ScanGeometry const &geom, int subsets, PartitionScheme scheme)
{
  auto op = assemble_projector(geom);
  if (subsets > 1) { op = op.with_partition(partition(op, subsets, scheme)); }
  return op;
}

double default_op_scale(LinearOperator const &op)
{
  double const n = operator_norm(op, 100);
  if (!(n > 0.0)) { throw std::runtime_error("operator norm is zero"); }
  return 1.0 / n;
}

// ---------------------------------------------------------------------------

std::vector<EvalSummary> EvalTable::summary() const
{
  std::vector<EvalSummary> out;
  std::map<std::string, std::size_t> at;
  for (auto const &r : rows) {
    auto it = at.find(r.method);
    if (it == at.end()) {
      it = at.emplace(r.method, out.size()).first;
      out.push_back({r.method, 0, 0.0, 0.0, 0.0});
    }
    auto &s = out[it->second];
    ++s.count;
    s.psnr += r.psnr;
    s.ssim += r.ssim;
    s.operator_calls += r.operator_calls;
  }
  for (auto &s : out) {
    s.psnr /= s.count;
    s.ssim /= s.count;
    s.operator_calls /= s.count;
  }
  return out;
}

EvalSummary EvalTable::summary(std::string const &method) const
{
  for (auto const &s : summary()) {
    if (s.method == method) { return s; }
  }
  throw std::invalid_argument("no rows for method " + method);
}

void EvalTable::write_csv(std::filesystem::path const &path) const
{
  std::ofstream f(path);
  if (!f) { throw std::runtime_error("cannot write " + path.string()); }
  f.precision(10);
  f << "# psnr peak = max(ref) - min(ref); operator_calls in full-operator equivalents\n";
  f << "method,image,psnr,ssim,operator_calls\n";
  for (auto const &r : rows) {
    f << r.method << ',' << r.image << ',' << r.psnr << ',' << r.ssim << ',' << r.operator_calls << '\n';
  }
  for (auto const &s : summary()) {
    f << s.method << ",mean," << s.psnr << ',' << s.ssim << ',' << s.operator_calls << '\n';
  }
  if (!f) { throw std::runtime_error("failed writing " + path.string()); }
}

EvalTable evaluate(std::vector<Method> const &methods, LinearOperator const &op, std::vector<Sample> const &samples,
                   std::optional<std::uint64_t> seed, std::vector<std::vector<Vec>> *outputs)
{
  int const N = op.domain_height();
  for (auto const &s : samples) {
    if (s.b.size() != std::size_t(op.rows()) || s.x0.size() != std::size_t(op.cols())) {
      throw std::invalid_argument("evaluate: geometry mismatch between operator and samples");
    }
    if (!s.truth) { throw std::invalid_argument("evaluate: samples need ground truth"); }
  }
  std::size_t const M = methods.size();
  std::size_t const S = samples.size();
  std::vector<EvalRow> rows(M * S);
  if (outputs) { outputs->assign(M, std::vector<Vec>(S)); }
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < S; ++i) {
    try {
      auto const &s = samples[i];
      for (std::size_t k = 0; k < M; ++k) {
        CallCounter counter;
        counter.rows_per_call = op.rows();
        Vec x;
        double calls = 0.0;
        if (methods[k].net) {
          ForwardOptions fo;
          fo.seed = seed.value_or(0) + i;
          x = methods[k].net->reconstruct(op, s.b, s.x0, fo, &counter);
          calls = counter.total_equivalents();
        } else {
          x = s.x0;
          calls = 1.0;
        }
        auto &r = rows[k * S + i];
        r.method = methods[k].name;
        r.image = int(i);
        r.psnr = psnr(x, *s.truth);
        r.ssim = ssim(x, *s.truth, N, op.domain_width());
        r.operator_calls = calls;
        if (outputs) { (*outputs)[k][i] = std::move(x); }
      }
    } catch (std::exception const &e) {
#pragma omp critical(lspd_eval_error)
      error = e.what();
    }
  }
  if (!error.empty()) { throw std::runtime_error(error); }
  EvalTable t;
  t.rows = std::move(rows);
  return t;
}

// ---------------------------------------------------------------------------

void write_png16(std::filesystem::path const &path, std::span<const float> image, int height, int width, double lo,
                 double hi)
{
  if (image.size() != std::size_t(height) * width) { throw std::invalid_argument("write_png16: size mismatch"); }
  if (!(hi > lo)) { throw std::invalid_argument("write_png16: empty display range"); }
  std::FILE *fp = std::fopen(path.c_str(), "wb");
  if (!fp) { throw std::runtime_error("cannot write " + path.string()); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 2);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      double v = (image[std::size_t(i) * width + j] - lo) / (hi - lo);
      v = std::clamp(v, 0.0, 1.0);
      auto const q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      row[2 * j] = png_byte(q >> 8); // big-endian samples
      row[2 * j + 1] = png_byte(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Vec read_png16(std::filesystem::path const &path, int *height, int *width)
{
  std::FILE *fp = std::fopen(path.c_str(), "rb");
  if (!fp) { throw std::runtime_error("cannot read " + path.string()); }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  int const w = int(png_get_image_width(png, info));
  int const h = int(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path.string() + " is not a 16-bit grayscale PNG");
  }
  Vec out(static_cast<std::size_t>(w) * h);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (int i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (int j = 0; j < w; ++j) { out[std::size_t(i) * w + j] = float(((row[2 * j] << 8) | row[2 * j + 1]) / 65535.0); }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (height) { *height = h; }
  if (width) { *width = w; }
  return out;
}

void write_image_block(std::filesystem::path const &path, std::span<const float> image, int height, int width)
{
  std::uint32_t const dims[2] = {std::uint32_t(height), std::uint32_t(width)};
  io::atomic_write(path, [&](std::ostream &os) { io::write_array(os, dims, image); });
}

// ---------------------------------------------------------------------------

namespace {

Dataset load_checked(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  auto const path = opt.dataset.value_or(opt.out / "dataset.bin");
  auto ds = load_dataset(path);
  if (!(ds.geometry == cfg.geometry)) { throw std::runtime_error("geometry mismatch between config and dataset"); }
  return ds;
}

void check_geometry(Checkpoint const &ck, ScanGeometry const &g)
{
  if (ck.meta.contains("geometry") && !(geometry_from_json(ck.meta.at("geometry")) == g)) {
    throw std::runtime_error("geometry mismatch between checkpoint and config");
  }
}

std::string method_name(UnrolledNet const &net) { return to_string(net.config().variant); }

} // namespace

ExperimentConfig apply_overrides(ExperimentConfig cfg, CommandOptions const &opt)
{
  if (opt.seed) {
    cfg.dataset.seed = *opt.seed;
    cfg.train.cfg.seed = *opt.seed;
    cfg.model.init_seed = *opt.seed;
    cfg.eval.seed = *opt.seed;
    if (cfg.theory) { cfg.theory->base_seed = *opt.seed; }
  }
  if (opt.variant) {
    cfg.model.unroll.variant = *opt.variant;
    cfg.model.unroll.validate();
  }
  return cfg;
}

UnrolledNet make_network(ExperimentConfig const &cfg, LinearOperator const &op)
{
  UnrollConfig u = cfg.model.unroll;
  if (cfg.model.auto_op_scale) { u.op_scale = default_op_scale(op); }
  return UnrolledNet(u, cfg.model.init_seed);
}

std::string cmd_simulate(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  std::filesystem::create_directories(opt.out);
  auto const op = make_operator(cfg.geometry, 1);
  auto const ds = build_dataset(dataset_spec(cfg), op);
  save_dataset(ds, opt.out / "dataset.bin");
  std::ostringstream s;
  s << "wrote " << ds.items.size() << " items to " << (opt.out / "dataset.bin").string();
  return s.str();
}

std::string cmd_train(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  std::filesystem::create_directories(opt.out);
  auto const ds = load_checked(cfg, opt);
  auto const op = make_operator(cfg.geometry, cfg.model.unroll.effective_subsets(), cfg.model.partition);
  auto net = make_network(cfg, op);
  TrainConfig tc = cfg.train.cfg;
  tc.out_dir = opt.out;
  TrainResult res;
  if (cfg.train.mode == "supervised") {
    if (!ds.has_truth()) { throw std::runtime_error("supervised training needs ground truth"); }
    res = supervised_train(net, op, ds.split("train"), ds.split("val"), tc);
  } else {
    FilteredBackprojection const fbp(cfg.geometry, ds.filter);
    res = ei_train(net, op, fbp, ds.measurements("train"), tc);
  }
  auto ck = net.to_checkpoint();
  ck.meta["geometry"] = to_json(cfg.geometry);
  ck.meta["train_mode"] = cfg.train.mode;
  save_checkpoint(opt.out / "model.ckpt", ck);
  res.write_csv(opt.out / "train_log.csv");
  std::ostringstream s;
  s << "trained " << method_name(net) << " (" << cfg.train.mode << ") for " << res.epochs.size() << " epochs";
  if (!res.epochs.empty() && std::isfinite(res.epochs.back().val_psnr)) {
    s << ", val psnr " << res.epochs.back().val_psnr;
  }
  return s.str();
}

std::string cmd_reconstruct(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  if (opt.checkpoints.empty()) { throw std::invalid_argument("reconstruct needs --checkpoint"); }
  std::filesystem::create_directories(opt.out);
  auto const ds = load_checked(cfg, opt);
  if (opt.index < 0 || opt.index >= int(ds.items.size())) { throw std::out_of_range("item index out of range"); }
  auto const ck = load_checkpoint(opt.checkpoints.front());
  check_geometry(ck, cfg.geometry);
  auto const net = UnrolledNet::from_checkpoint(ck);
  auto const op = make_operator(cfg.geometry, net.config().effective_subsets(), cfg.model.partition);
  auto const &item = ds.items[std::size_t(opt.index)];
  ForwardOptions fo;
  fo.seed = cfg.eval.seed + std::uint64_t(opt.index);
  auto const x = net.reconstruct(op, item.b, item.x0, fo);
  int const N = cfg.geometry.image_size;
  write_image_block(opt.out / "recon.f32", x, N, N);
  write_png16(opt.out / "recon.png", x, N, N);
  std::ostringstream s;
  s << "wrote " << (opt.out / "recon.png").string();
  if (item.truth) { s << ", psnr " << psnr(x, *item.truth); }
  return s.str();
}

std::string cmd_eval(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  std::filesystem::create_directories(opt.out);
  auto const ds = load_checked(cfg, opt);
  auto const samples = ds.split(cfg.eval.split);
  if (samples.empty()) { throw std::runtime_error("split '" + cfg.eval.split + "' is empty"); }
  std::vector<std::unique_ptr<UnrolledNet>> nets;
  int m = 1;
  for (auto const &p : opt.checkpoints) {
    auto const ck = load_checkpoint(p);
    check_geometry(ck, cfg.geometry);
    nets.push_back(std::make_unique<UnrolledNet>(UnrolledNet::from_checkpoint(ck)));
    int const mi = nets.back()->config().effective_subsets();
    if (mi > 1 && m > 1 && mi != m) { throw std::runtime_error("checkpoints disagree on the subset count"); }
    m = std::max(m, mi);
  }
  auto const op = make_operator(cfg.geometry, m, cfg.model.partition);
  std::vector<Method> methods{{"fbp", nullptr}};
  std::map<std::string, int> seen;
  for (auto const &n : nets) {
    std::string name = method_name(*n);
    if (seen[name]++) { name += "_" + std::to_string(seen[name]); }
    methods.push_back({name, n.get()});
  }
  std::vector<std::vector<Vec>> outputs;
  auto const table = evaluate(methods, op, samples, cfg.eval.seed, &outputs);
  table.write_csv(opt.out / "eval.csv");
  int const N = cfg.geometry.image_size;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    for (int i = 0; i < std::min<int>(cfg.eval.png_count, int(samples.size())); ++i) {
      write_png16(opt.out / (methods[k].name + "_" + std::to_string(i) + ".png"), outputs[k][i], N, N);
    }
  }
  std::ostringstream s;
  for (auto const &r : table.summary()) {
    s << r.method << ": psnr " << r.psnr << " ssim " << r.ssim << " calls " << r.operator_calls << '\n';
  }
  return s.str();
}

std::string cmd_adapt(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  if (opt.checkpoints.empty()) { throw std::invalid_argument("adapt needs --checkpoint"); }
  std::filesystem::create_directories(opt.out);
  auto const ds = load_checked(cfg, opt);
  auto const items = ds.split(cfg.adapt.split);
  int const idx = opt.index > 0 ? opt.index : cfg.adapt.index;
  if (idx >= int(items.size())) { throw std::out_of_range("adapt index out of range"); }
  auto const ck = load_checkpoint(opt.checkpoints.front());
  check_geometry(ck, cfg.geometry);
  auto const net = UnrolledNet::from_checkpoint(ck);
  auto const op = make_operator(cfg.geometry, net.config().effective_subsets(), cfg.model.partition);
  FilteredBackprojection const fbp(cfg.geometry, ds.filter);
  Sample item = items[std::size_t(idx)];
  if (cfg.adapt.noise) {
    // Re-measure the same object under the mismatched noise level.
    if (!item.truth) { throw std::runtime_error("a noise override needs the ground-truth image"); }
    item.b = simulate_measurement(*item.truth, op, *cfg.adapt.noise, cfg.train.cfg.seed + 7919);
    item.x0 = fbp.apply<float>(item.b);
  }
  auto const ref = item.truth ? std::span<const float>(*item.truth) : std::span<const float>();
  auto const res = instance_adapt(net, op, fbp, item.b, item.x0, cfg.train.cfg, ref);
  res.write_csv(opt.out / "adapt_trace.csv");
  auto out_ck = res.net.to_checkpoint();
  out_ck.meta["geometry"] = to_json(cfg.geometry);
  save_checkpoint(opt.out / "adapted.ckpt", out_ck);
  int const N = cfg.geometry.image_size;
  write_png16(opt.out / "adapted.png", res.output, N, N);
  std::ostringstream s;
  s << "adapted " << res.trace.size() - 1 << " steps";
  if (item.truth) { s << ", psnr " << res.trace.front().psnr << " -> " << res.trace.back().psnr; }
  return s.str();
}

std::string cmd_theory(ExperimentConfig const &cfg, CommandOptions const &opt)
{
  if (!cfg.theory) { throw std::invalid_argument("config has no theory section"); }
  std::filesystem::create_directories(opt.out);
  auto const rep = simplified_lspd_experiment(*cfg.theory);
  {
    std::ofstream f(opt.out / "report.json");
    f << rep.to_json().dump(2) << '\n';
    if (!f) { throw std::runtime_error("failed writing report.json"); }
  }
  rep.write_csv(opt.out / "curves.csv");
  std::ostringstream s;
  s << "alpha " << rep.alpha << ", thm31_holds " << (rep.thm31_holds ? "true" : "false") << ", final relative error "
    << rep.final_relative_error;
  return s.str();
}

} // namespace lspd
