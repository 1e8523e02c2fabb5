#include "lspd/config.hpp"

#include <fstream>
#include <set>

namespace lspd {

namespace {

void check_keys(nlohmann::json const &j, std::set<std::string> const &allowed, std::string const &where)
{
  if (!j.is_object()) { throw ConfigError(where + ": expected an object"); }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) { throw ConfigError(where + ": unknown key '" + it.key() + "'"); }
  }
}

template <typename T>
void read(nlohmann::json const &j, char const *key, T &dst, std::string const &where)
{
  if (!j.contains(key)) { return; }
  try {
    dst = j.at(key).get<T>();
  } catch (nlohmann::json::exception const &e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T parse_enum(nlohmann::json const &j, char const *key, T fallback, T (*conv)(std::string const &),
             std::string const &where)
{
  if (!j.contains(key)) { return fallback; }
  try {
    return conv(j.at(key).get<std::string>());
  } catch (std::exception const &e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

ScanGeometry parse_geometry(nlohmann::json const &j)
{
  std::string const w = "geometry";
  check_keys(j, {"mode", "image_size", "n_angles", "n_rays", "angle_range", "source_distance", "detector_spacing"}, w);
  ScanGeometry g;
  g.mode = parse_enum(j, "mode", g.mode, beam_mode_from_string, w);
  read(j, "image_size", g.image_size, w);
  read(j, "n_angles", g.n_angles, w);
  read(j, "n_rays", g.n_rays, w);
  read(j, "angle_range", g.angle_range, w);
  read(j, "source_distance", g.source_distance, w);
  read(j, "detector_spacing", g.detector_spacing, w);
  return g;
}

NoiseModel parse_noise(nlohmann::json const &j, std::string const &w)
{
  check_keys(j, {"kind", "I0", "sigma", "attenuation_scale"}, w);
  NoiseModel n;
  n.kind = parse_enum(j, "kind", n.kind, noise_kind_from_string, w);
  read(j, "I0", n.I0, w);
  read(j, "sigma", n.sigma, w);
  read(j, "attenuation_scale", n.attenuation_scale, w);
  return n;
}

DatasetSection parse_dataset(nlohmann::json const &j)
{
  std::string const w = "dataset";
  check_keys(j, {"phantom", "count", "seed", "val_fraction", "test_fraction", "with_truth", "filter"}, w);
  DatasetSection d;
  d.phantom = parse_enum(j, "phantom", d.phantom, phantom_kind_from_string, w);
  read(j, "count", d.count, w);
  read(j, "seed", d.seed, w);
  read(j, "val_fraction", d.val_fraction, w);
  read(j, "test_fraction", d.test_fraction, w);
  read(j, "with_truth", d.with_truth, w);
  d.filter = parse_enum(j, "filter", d.filter, fbp_filter_from_string, w);
  if (d.count < 1) { throw ConfigError("dataset.count must be positive"); }
  if (d.val_fraction < 0 || d.test_fraction < 0 || d.val_fraction + d.test_fraction >= 1.0) {
    throw ConfigError("dataset: split fractions must be non-negative and sum below 1");
  }
  return d;
}

ModelSection parse_model(nlohmann::json const &j)
{
  std::string const w = "model";
  check_keys(j,
             {"variant", "layers", "subsets", "hidden", "kernel", "schedule", "reset_dual", "op_scale", "prelu_init",
              "partition", "init_seed"},
             w);
  ModelSection m;
  auto &u = m.unroll;
  u.variant = parse_enum(j, "variant", u.variant, variant_from_string, w);
  read(j, "layers", u.layers, w);
  read(j, "subsets", u.subsets, w);
  read(j, "hidden", u.hidden, w);
  read(j, "kernel", u.kernel, w);
  u.schedule = parse_enum(j, "schedule", u.schedule, subset_schedule_from_string, w);
  read(j, "reset_dual", u.reset_dual, w);
  if (j.contains("op_scale")) {
    if (j.at("op_scale").is_string() && j.at("op_scale").get<std::string>() == "auto") {
      m.auto_op_scale = true;
    } else {
      read(j, "op_scale", u.op_scale, w);
      m.auto_op_scale = false;
    }
  }
  read(j, "prelu_init", u.prelu_init, w);
  m.partition = parse_enum(j, "partition", m.partition, partition_scheme_from_string, w);
  read(j, "init_seed", m.init_seed, w);
  return m;
}

TrainSection parse_train(nlohmann::json const &j)
{
  std::string const w = "train";
  check_keys(j,
             {"mode", "epochs", "lr", "cosine_decay", "lambda_ei", "lambda_adapt", "adapt_lr", "adapt_steps",
              "freeze_dual", "seed", "checkpoint_every"},
             w);
  TrainSection t;
  read(j, "mode", t.mode, w);
  if (t.mode != "supervised" && t.mode != "ei") { throw ConfigError("train.mode must be supervised or ei"); }
  auto &c = t.cfg;
  read(j, "epochs", c.epochs, w);
  read(j, "lr", c.lr, w);
  read(j, "cosine_decay", c.cosine_decay, w);
  read(j, "lambda_ei", c.lambda_ei, w);
  read(j, "lambda_adapt", c.lambda_adapt, w);
  read(j, "adapt_lr", c.adapt_lr, w);
  read(j, "adapt_steps", c.adapt_steps, w);
  read(j, "freeze_dual", c.freeze_dual, w);
  read(j, "seed", c.seed, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  return t;
}

EvalSection parse_eval(nlohmann::json const &j)
{
  std::string const w = "eval";
  check_keys(j, {"split", "png_count", "seed"}, w);
  EvalSection e;
  read(j, "split", e.split, w);
  read(j, "png_count", e.png_count, w);
  read(j, "seed", e.seed, w);
  return e;
}

AdaptSection parse_adapt(nlohmann::json const &j)
{
  std::string const w = "adapt";
  check_keys(j, {"split", "index", "noise"}, w);
  AdaptSection a;
  read(j, "split", a.split, w);
  read(j, "index", a.index, w);
  if (j.contains("noise")) { a.noise = parse_noise(j.at("noise"), "adapt.noise"); }
  if (a.index < 0) { throw ConfigError("adapt.index must be non-negative"); }
  return a;
}

} // namespace

nlohmann::json to_json(UnrollConfig const &u)
{
  return {{"variant", to_string(u.variant)},   {"layers", u.layers},         {"subsets", u.subsets},
          {"hidden", u.hidden},                {"kernel", u.kernel},         {"schedule", to_string(u.schedule)},
          {"reset_dual", u.reset_dual},        {"op_scale", u.op_scale},     {"prelu_init", u.prelu_init}};
}

nlohmann::json to_json(TrainConfig const &t)
{
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"cosine_decay", t.cosine_decay},
          {"lambda_ei", t.lambda_ei},
          {"lambda_adapt", t.lambda_adapt},
          {"adapt_lr", t.adapt_lr},
          {"adapt_steps", t.adapt_steps},
          {"freeze_dual", t.freeze_dual},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every}};
}

nlohmann::json ExperimentConfig::to_json() const
{
  nlohmann::json j;
  j["geometry"] = lspd::to_json(geometry);
  j["noise"] = lspd::to_json(noise);
  j["dataset"] = {{"phantom", to_string(dataset.phantom)},
                  {"count", dataset.count},
                  {"seed", dataset.seed},
                  {"val_fraction", dataset.val_fraction},
                  {"test_fraction", dataset.test_fraction},
                  {"with_truth", dataset.with_truth},
                  {"filter", to_string(dataset.filter)}};
  j["model"] = lspd::to_json(model.unroll);
  j["model"]["partition"] = to_string(model.partition);
  j["model"]["init_seed"] = model.init_seed;
  if (model.auto_op_scale) { j["model"]["op_scale"] = "auto"; }
  j["train"] = lspd::to_json(train.cfg);
  j["train"]["mode"] = train.mode;
  j["eval"] = {{"split", eval.split}, {"png_count", eval.png_count}, {"seed", eval.seed}};
  j["adapt"] = {{"split", adapt.split}, {"index", adapt.index}};
  if (adapt.noise) { j["adapt"]["noise"] = lspd::to_json(*adapt.noise); }
  if (theory) { j["theory"] = theory->to_json(); }
  return j;
}

ExperimentConfig parse_config(nlohmann::json const &j)
{
  check_keys(j, {"geometry", "noise", "dataset", "model", "train", "eval", "adapt", "theory"}, "config");
  ExperimentConfig c;
  try {
    if (j.contains("geometry")) { c.geometry = parse_geometry(j.at("geometry")); }
    if (j.contains("noise")) { c.noise = parse_noise(j.at("noise"), "noise"); }
    if (j.contains("dataset")) { c.dataset = parse_dataset(j.at("dataset")); }
    if (j.contains("model")) { c.model = parse_model(j.at("model")); }
    if (j.contains("train")) { c.train = parse_train(j.at("train")); }
    if (j.contains("eval")) { c.eval = parse_eval(j.at("eval")); }
    if (j.contains("adapt")) { c.adapt = parse_adapt(j.at("adapt")); }
    if (j.contains("theory")) { c.theory = TheoryScenario::from_json(j.at("theory")); }
    c.geometry.validate();
    c.noise.validate();
    if (c.adapt.noise) { c.adapt.noise->validate(); }
    c.model.unroll.validate();
    c.train.cfg.validate();
  } catch (ConfigError const &) {
    throw;
  } catch (std::exception const &e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(std::filesystem::path const &path)
{
  std::ifstream f(path);
  if (!f) { throw ConfigError("cannot open config " + path.string()); }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (nlohmann::json::exception const &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

DatasetSpec dataset_spec(ExperimentConfig const &cfg)
{
  DatasetSpec s;
  s.geometry = cfg.geometry;
  s.noise = cfg.noise;
  s.filter = cfg.dataset.filter;
  s.phantom = cfg.dataset.phantom;
  s.count = cfg.dataset.count;
  s.seed = cfg.dataset.seed;
  s.val_fraction = cfg.dataset.val_fraction;
  s.test_fraction = cfg.dataset.test_fraction;
  s.with_truth = cfg.dataset.with_truth;
  return s;
}

} // namespace lspd
