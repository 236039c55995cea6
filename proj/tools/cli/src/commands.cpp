#include "trajdiff/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "trajdiff/cli/checkpoint.hpp"
#include "trajdiff/cli/manifest.hpp"
#include "trajdiff/cli/pipeline.hpp"
#include "trajdiff/cli/svg.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/error.hpp"
#include "trajdiff/metrics.hpp"
#include "trajdiff/synth_city.hpp"
#include "trajdiff/version.hpp"

namespace trajdiff::cli {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Options registered here can also come from a JSON config file. Flags given
// on the command line win over the file, which wins over built-in defaults.
class Bindings {
 public:
  explicit Bindings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values (flags take precedence)");
  }

  template <class T>
  CLI::Option* option(const std::string& name, T& var, const std::string& desc) {
    CLI::Option* opt = app_->add_option("--" + name, var, desc)->capture_default_str();
    items_.push_back({name, opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& desc) {
    CLI::Option* opt = app_->add_flag("--" + name, var, desc);
    items_.push_back({name, opt, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return json(var); }});
    return opt;
  }

  void apply_config() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw DataError("cannot open config '" + config_path_ + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("config '" + config_path_ + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError("config '" + config_path_ + "' must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto it = std::find_if(items_.begin(), items_.end(), [&](const Item& b) { return b.key == key; });
      if (it == items_.end()) throw ArgumentError("unknown config key '" + key + "'");
      if (it->opt->count() > 0) continue;
      try {
        it->load(value);
      } catch (const json::exception& e) {
        throw ArgumentError("config key '" + key + "' has the wrong type: " + e.what());
      }
      from_config_.push_back(key);
    }
  }

  // True when the value came from the command line or the config file.
  [[nodiscard]] bool explicitly_set(const std::string& name) const {
    for (const auto& b : items_) {
      if (b.key == name && b.opt->count() > 0) return true;
    }
    return std::find(from_config_.begin(), from_config_.end(), name) != from_config_.end();
  }

  [[nodiscard]] json resolved() const {
    json j = json::object();
    for (const auto& b : items_) j[b.key] = b.dump();
    if (!config_path_.empty()) j["config"] = config_path_;
    return j;
  }

 private:
  struct Item {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> load;
    std::function<json()> dump;
  };

  CLI::App* app_;
  std::string config_path_;
  std::vector<Item> items_;
  std::vector<std::string> from_config_;
};

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
  unsigned long rows = 0, cols = 0;
  char x = 0, tail = 0;
  if (std::sscanf(text.c_str(), "%lu%c%lu%c", &rows, &x, &cols, &tail) != 3 || (x != 'x' && x != 'X') || rows == 0 ||
      cols == 0 || rows > 4096 || cols > 4096) {
    throw ArgumentError("grid must look like 16x16, got '" + text + "'");
  }
  return {rows, cols};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void print_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

Dataset load_checked(const std::string& path, const LoadOptions& options, std::ostream& err) {
  LoadReport report;
  Dataset ds = load_dataset(path, options, &report);
  for (const auto& w : report.warnings) err << "warning: " << path << ": " << w << '\n';
  return ds;
}

// ---- synth ------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t n = 2000;
  std::string city_spec;
  std::string manifest;
};

void register_synth(CLI::App& sub, SynthOptions& o, Bindings& b) {
  b.option("out", o.out, "Output dataset (JSON lines)")->required();
  b.option("seed", o.seed, "Random seed");
  b.option("n", o.n, "Number of trajectories");
  b.option("city-spec", o.city_spec, "JSON city specification (defaults when omitted)");
  sub.add_option("--manifest", o.manifest, "Manifest path (default <out>.manifest.json)");
}

int cmd_synth(const SynthOptions& o, const Bindings& b, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  CitySpec spec;
  RunManifest m;
  if (!o.city_spec.empty()) {
    std::ifstream in(o.city_spec);
    if (!in) throw DataError("cannot open city spec '" + o.city_spec + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("city spec is not valid JSON: " + std::string(e.what()));
    }
    spec = city_spec_from_json(j);
    m.inputs.emplace_back(o.city_spec);
  }
  const Dataset ds = synth_city(o.seed, o.n, spec);
  save_dataset(o.out, ds);
  err << "wrote " << ds.trajectories.size() << " trajectories to " << o.out << '\n';

  m.command = "synth";
  m.flags = b.resolved();
  m.seed = o.seed;
  m.outputs.emplace_back(o.out);
  m.wall_time_s = seconds_since(t0);
  m.extra = json{{"city", to_json(spec)}, {"output_fnv1a64", file_hash(o.out)}};
  write_manifest(o.manifest.empty() ? manifest_path_for(o.out) : std::filesystem::path(o.manifest), m);
  out << o.out << '\n';
  return kExitOk;
}

// ---- train ------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string out;
  std::string preset = "desk";
  std::size_t steps = 3000;
  std::size_t batch = 64;
  std::size_t T = 100;
  std::size_t length = 64;
  std::size_t base_channels = 16;
  double beta_start = 5e-4;
  double beta_end = 0.25;
  double lr = 2e-4;
  double cond_dropout = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::string grid = "16x16";
  std::size_t min_points = 120;
  bool skip_bad = false;
  std::string distance = "haversine";
  bool no_departure = false;
  std::size_t log_every = 100;
  std::string loss_csv;
  std::string manifest;
};

void register_train(CLI::App& sub, TrainOptions& o, Bindings& b) {
  b.option("data", o.data, "Training dataset (JSON lines)")->required();
  b.option("out", o.out, "Output checkpoint")->required();
  b.option("preset", o.preset, "Defaults for unset options: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  b.option("steps", o.steps, "Optimizer steps");
  b.option("batch", o.batch, "Mini-batch size");
  b.option("T", o.T, "Diffusion steps");
  b.option("length", o.length, "Resampled trajectory length");
  b.option("base-channels", o.base_channels, "UNet base channel count");
  b.option("beta-start", o.beta_start, "First beta of the linear schedule");
  b.option("beta-end", o.beta_end, "Last beta of the linear schedule");
  b.option("lr", o.lr, "Adam learning rate");
  b.option("cond-dropout", o.cond_dropout, "Probability of training on the null condition");
  b.option("clip-norm", o.clip_norm, "Global gradient-norm clip (0 disables)");
  b.option("seed", o.seed, "Random seed (initialization and batches)");
  b.option("grid", o.grid, "Grid for origin/destination cells, ROWSxCOLS");
  b.option("min-points", o.min_points, "Drop trajectories with fewer points");
  b.flag("skip-bad", o.skip_bad, "Skip malformed lines instead of failing");
  b.option("distance", o.distance, "Distance for attributes: haversine or euclidean")
      ->check(CLI::IsMember({"haversine", "euclidean"}));
  b.flag("no-departure", o.no_departure, "Allow trajectories without t0 (departure slot 0)");
  b.option("log-every", o.log_every, "Progress interval in steps (0 silences)");
  b.option("loss-csv", o.loss_csv, "Loss curve CSV (default <out>.loss.csv)");
  sub.add_option("--manifest", o.manifest, "Manifest path (default <out>.manifest.json)");
}

void apply_paper_preset(TrainOptions& o, const Bindings& b) {
  if (o.preset != "paper") return;
  auto set = [&](const char* name, auto& var, auto value) {
    if (!b.explicitly_set(name)) var = value;
  };
  set("batch", o.batch, std::size_t{1024});
  set("T", o.T, std::size_t{500});
  set("length", o.length, std::size_t{200});
  set("base-channels", o.base_channels, std::size_t{64});
  set("beta-start", o.beta_start, 1e-4);
  set("beta-end", o.beta_end, 0.05);
}

// Every training step allocates and frees the same few hundred activation
// buffers. Keeping them on the heap instead of fresh mmap/munmap pairs saves
// roughly a fifth of the wall time at larger batches.
void keep_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

int cmd_train(TrainOptions& o, const Bindings& b, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  keep_freed_memory();
  apply_paper_preset(o, b);
  const auto [rows, cols] = parse_grid(o.grid);

  AttributeOptions attrs;
  attrs.distance = parse_distance(o.distance);
  attrs.require_departure = !o.no_departure;

  TrajUNetConfig mc = o.preset == "paper" ? TrajUNetConfig::paper() : TrajUNetConfig::desk();
  mc.length = o.length;
  mc.base_channels = o.base_channels;
  mc.grid_cells = rows * cols;
  mc.validate();

  ScheduleParams sp{o.T, o.beta_start, o.beta_end};
  const NoiseSchedule sched = sp.build();

  TrainConfig tc;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.steps = o.steps;
  tc.cond_dropout_prob = o.cond_dropout;
  tc.seed = o.seed;
  tc.clip_norm = o.clip_norm;
  tc.validate();

  const Dataset ds = load_checked(o.data, LoadOptions{o.min_points, o.skip_bad}, err);
  if (ds.trajectories.empty()) throw DataError("no usable trajectories in '" + o.data + "'");
  const GridSpec grid{dataset_box(ds), rows, cols};
  const PreparedData prep = prepare_training(ds.trajectories, grid, o.length, attrs);

  TrajUNet model(mc, o.seed);
  err << "training on " << ds.trajectories.size() << " trajectories, " << model.params().total_elements()
      << " parameters, " << o.steps << " steps\n";
  const TrainResult result = train(model, prep.set, tc, sched, [&](std::size_t step, double loss) {
    if (o.log_every > 0 && (step % o.log_every == 0 || step == o.steps)) {
      err << "step " << step << "/" << o.steps << "  loss " << std::fixed << std::setprecision(4) << loss << "  "
          << std::setprecision(1) << seconds_since(t0) << "s\n" << std::defaultfloat;
    }
  });

  CheckpointMeta meta;
  meta.model = mc;
  meta.schedule = sp;
  meta.norm = prep.norm;
  meta.grid = grid;
  meta.attributes = attrs;
  meta.train_steps = o.steps;
  meta.seed = o.seed;
  save_checkpoint(o.out, meta, model.params());

  const std::string csv_path = o.loss_csv.empty() ? o.out + ".loss.csv" : o.loss_csv;
  std::ostringstream csv;
  csv << "step,loss\n" << std::setprecision(9);
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) csv << (i + 1) << ',' << result.loss_history[i] << '\n';
  write_text(csv_path, csv.str());

  RunManifest m;
  m.command = "train";
  m.flags = b.resolved();
  m.seed = o.seed;
  m.inputs.emplace_back(o.data);
  m.outputs = {o.out, csv_path};
  m.wall_time_s = seconds_since(t0);
  m.extra = json{{"trajectories", ds.trajectories.size()},
                 {"parameters", model.params().total_elements()},
                 {"final_loss", result.loss_history.empty() ? json(nullptr) : json(result.loss_history.back())}};
  write_manifest(o.manifest.empty() ? manifest_path_for(o.out) : std::filesystem::path(o.manifest), m);
  out << o.out << '\n';
  return kExitOk;
}

// ---- generate ---------------------------------------------------------------------

struct GenerateOptions {
  std::string ckpt;
  std::string out;
  std::size_t n = 0;
  std::size_t steps = 0;
  double eta = 0.0;
  double omega = 3.0;
  double clip_x0 = 1.0;
  std::string cond_file;
  bool uncond = false;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::size_t batch = 64;
  bool keep_length = false;
  std::size_t min_points = 2;
  std::string manifest;
};

void register_generate(CLI::App& sub, GenerateOptions& o, Bindings& b) {
  b.option("ckpt", o.ckpt, "Checkpoint to sample from")->required();
  b.option("out", o.out, "Output trajectories (JSON lines, degrees)")->required();
  b.option("n", o.n, "Number of trajectories (default: one per condition)");
  b.option("steps", o.steps, "Sampling steps S (default T/5)");
  b.option("eta", o.eta, "Stochasticity: 0 deterministic, 1 ancestral");
  b.option("omega", o.omega, "Classifier-free guidance scale");
  b.option("clip-x0", o.clip_x0, "Clamp the predicted clean trajectory to [-c, c] while sampling (0 disables)");
  b.option("cond-file", o.cond_file, "Dataset whose trajectories supply the conditions");
  b.flag("uncond", o.uncond, "Sample with the null condition only");
  b.option("seed", o.seed, "Random seed");
  b.option("workers", o.workers, "Worker threads (0 = all cores; capped by TRAJDIFF_THREADS)");
  b.option("batch", o.batch, "Samples per model call");
  b.flag("keep-length", o.keep_length, "Keep the model length instead of each condition's point count");
  b.option("min-points", o.min_points, "Minimum points for condition trajectories");
  sub.add_option("--manifest", o.manifest, "Manifest path (default <out>.manifest.json)");
}

int cmd_generate(const GenerateOptions& o, const Bindings& b, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  if (o.uncond == !o.cond_file.empty()) throw ArgumentError("give exactly one of --cond-file or --uncond");

  const LoadedCheckpoint ckpt = load_checkpoint(o.ckpt);
  const TrajUNet model = restore_model(ckpt);
  const NoiseSchedule sched = ckpt.meta.schedule.build();
  const std::size_t T = sched.steps();

  SamplerConfig sc;
  sc.sample_steps = o.steps > 0 ? o.steps : std::max<std::size_t>(1, T / 5);
  sc.eta = o.eta;
  sc.guidance_scale = o.uncond ? 0.0 : o.omega;
  sc.seed = o.seed;
  sc.workers = resolve_workers(o.workers);
  sc.batch_size = o.batch;
  sc.clip_x0 = o.clip_x0;
  sc.validate(T);

  RunManifest m;
  std::vector<ConditionVector> conds;
  std::vector<RawTrajectory> templates;
  if (o.uncond) {
    if (o.n == 0) throw ArgumentError("--uncond needs --n");
    conds.assign(o.n, ConditionVector::null());
  } else {
    const Dataset cd = load_checked(o.cond_file, LoadOptions{o.min_points, false}, err);
    if (cd.trajectories.empty()) throw DataError("condition file '" + o.cond_file + "' has no trajectories");
    m.inputs.emplace_back(o.cond_file);
    const std::size_t n = o.n > 0 ? o.n : cd.trajectories.size();
    templates.reserve(n);
    for (std::size_t i = 0; i < n; ++i) templates.push_back(cd.trajectories[i % cd.trajectories.size()]);
    conds = conditions_for(templates, ckpt.meta.grid, ckpt.meta.norm, ckpt.meta.attributes);
  }

  const SampleResult res = sample(model, conds, sc, sched, ckpt.meta.model.length, ckpt.meta.model.in_channels);
  std::vector<RawTrajectory> gen =
      to_trajectories(res.trajectories, ckpt.meta.norm,
                      o.keep_length ? std::span<const RawTrajectory>{} : std::span<const RawTrajectory>(templates));
  if (o.keep_length) {
    for (std::size_t i = 0; i < templates.size(); ++i) {
      gen[i].t0 = templates[i].t0;
      gen[i].interval_s = templates[i].interval_s;
    }
  }

  const std::size_t outside = count_outside(gen, ckpt.meta.norm.box, 0.05);
  if (outside > 0) {
    err << "warning: " << outside << " generated points fall outside the checkpoint bounding box (5% margin)\n";
  }

  Dataset ds;
  DatasetHeader header;
  header.bbox = ckpt.meta.norm.box;
  header.extra = json{{"generator", "trajdiff generate"}, {"seed", o.seed}, {"count", gen.size()}};
  ds.header = std::move(header);
  ds.trajectories = std::move(gen);
  save_dataset(o.out, ds);
  err << "generated " << ds.trajectories.size() << " trajectories with " << sc.sample_steps << " steps, "
      << res.model_evals << " model evaluations\n";

  m.command = "generate";
  m.flags = b.resolved();
  m.flags["steps"] = sc.sample_steps;
  m.flags["workers"] = sc.workers;
  m.flags["omega"] = sc.guidance_scale;
  m.seed = o.seed;
  m.inputs.insert(m.inputs.begin(), std::filesystem::path(o.ckpt));
  m.outputs.emplace_back(o.out);
  m.wall_time_s = seconds_since(t0);
  m.extra = json{{"model_evals", res.model_evals},
                 {"sample_steps", sc.sample_steps},
                 {"guided", sc.guidance_scale != 0.0},
                 {"outside_points", outside},
                 {"output_fnv1a64", file_hash(o.out)}};
  write_manifest(o.manifest.empty() ? manifest_path_for(o.out) : std::filesystem::path(o.manifest), m);
  out << o.out << '\n';
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------------

struct EvalOptions {
  std::string gen;
  std::string real;
  std::string out;
  std::string grid = "16x16";
  std::size_t topn = kDefaultTopN;
  std::size_t bins = kDefaultLengthBins;
  std::string distance = "haversine";
  std::size_t min_points = 2;
  bool skip_bad = false;
  std::string manifest;
};

void register_eval(CLI::App& sub, EvalOptions& o, Bindings& b) {
  b.option("gen", o.gen, "Generated trajectories")->required();
  b.option("real", o.real, "Reference trajectories")->required();
  b.option("out", o.out, "Metric report (JSON)")->required();
  b.option("grid", o.grid, "Evaluation grid, ROWSxCOLS");
  b.option("topn", o.topn, "Cells compared by the pattern score");
  b.option("bins", o.bins, "Length-histogram bins");
  b.option("distance", o.distance, "Trajectory length: haversine or euclidean")
      ->check(CLI::IsMember({"haversine", "euclidean"}));
  b.option("min-points", o.min_points, "Drop trajectories with fewer points");
  b.flag("skip-bad", o.skip_bad, "Skip malformed lines instead of failing");
  sub.add_option("--manifest", o.manifest, "Manifest path (default <out>.manifest.json)");
}

int cmd_eval(const EvalOptions& o, const Bindings& b, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const auto [rows, cols] = parse_grid(o.grid);
  if (o.topn == 0) throw ArgumentError("--topn must be positive");
  if (o.bins == 0) throw ArgumentError("--bins must be positive");
  const LoadOptions lo{o.min_points, o.skip_bad};
  const Dataset gen = load_checked(o.gen, lo, err);
  const Dataset real = load_checked(o.real, lo, err);
  if (gen.trajectories.empty()) throw DataError("generated set '" + o.gen + "' is empty");
  if (real.trajectories.empty()) throw DataError("reference set '" + o.real + "' is empty");

  MetricConfig mc;
  mc.grid = GridSpec{dataset_box(real), rows, cols};
  mc.top_n = o.topn;
  mc.length_bins = o.bins;
  mc.distance = parse_distance(o.distance);
  const MetricReport report = evaluate(gen.trajectories, real.trajectories, mc);
  print_warnings(err, report.warnings);
  write_text(o.out, to_json(report).dump(2) + "\n");

  out << std::left << std::setw(16) << "metric" << "value\n";
  out << std::fixed << std::setprecision(6);
  out << std::setw(16) << "density_error" << report.density_error << '\n';
  out << std::setw(16) << "trip_error" << report.trip_error << '\n';
  out << std::setw(16) << "length_error" << report.length_error << '\n';
  out << std::setw(16) << "pattern_score" << report.pattern_score << '\n';
  out << std::defaultfloat << "(" << report.gen_count << " generated vs " << report.real_count << " reference, grid "
      << rows << "x" << cols << ", top-" << o.topn << ")\n";

  RunManifest m;
  m.command = "eval";
  m.flags = b.resolved();
  m.inputs = {o.gen, o.real};
  m.outputs.emplace_back(o.out);
  m.wall_time_s = seconds_since(t0);
  write_manifest(o.manifest.empty() ? manifest_path_for(o.out) : std::filesystem::path(o.manifest), m);
  return kExitOk;
}

// ---- plot -------------------------------------------------------------------------

struct PlotOptions {
  std::string data;
  std::string out;
  std::string mode = "lines";
  std::string grid = "16x16";
  double width = 800.0;
  std::size_t max_trajs = 0;
  std::size_t min_points = 2;
  std::string manifest;
};

void register_plot(CLI::App& sub, PlotOptions& o, Bindings& b) {
  b.option("data", o.data, "Trajectories to draw")->required();
  b.option("out", o.out, "Output SVG")->required();
  b.option("mode", o.mode, "lines or heatmap")->check(CLI::IsMember({"lines", "heatmap"}));
  b.option("grid", o.grid, "Heatmap grid, ROWSxCOLS");
  b.option("width", o.width, "Canvas width in pixels");
  b.option("max-trajs", o.max_trajs, "Draw at most this many trajectories (0 = all)");
  b.option("min-points", o.min_points, "Drop trajectories with fewer points");
  sub.add_option("--manifest", o.manifest, "Manifest path (default <out>.manifest.json)");
}

int cmd_plot(const PlotOptions& o, const Bindings& b, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  if (!(o.width > 0.0)) throw ArgumentError("--width must be positive");
  const auto [rows, cols] = parse_grid(o.grid);
  Dataset ds = load_checked(o.data, LoadOptions{o.min_points, false}, err);
  if (ds.trajectories.empty()) throw DataError("dataset '" + o.data + "' is empty");
  if (o.max_trajs > 0 && ds.trajectories.size() > o.max_trajs) ds.trajectories.resize(o.max_trajs);
  const BoundingBox box = dataset_box(ds);
  SvgOptions so;
  so.width = o.width;
  std::string svg;
  if (o.mode == "lines") {
    svg = render_lines(ds.trajectories, box, so);
  } else {
    const GridSpec grid{box, rows, cols};
    svg = render_heatmap(grid_density(ds.trajectories, grid), grid, so);
  }
  write_text(o.out, svg);

  RunManifest m;
  m.command = "plot";
  m.flags = b.resolved();
  m.inputs.emplace_back(o.data);
  m.outputs.emplace_back(o.out);
  m.wall_time_s = seconds_since(t0);
  write_manifest(o.manifest.empty() ? manifest_path_for(o.out) : std::filesystem::path(o.manifest), m);
  out << o.out << '\n';
  return kExitOk;
}

}  // namespace

std::size_t resolve_workers(std::size_t requested) {
  std::size_t n = requested > 0 ? requested : std::max(1U, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("TRAJDIFF_THREADS"); cap != nullptr && *cap != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(cap, &end, 10);
    if (end != nullptr && *end == '\0' && v > 0) n = std::min<std::size_t>(n, v);
  }
  return n;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"trajdiff: conditional diffusion models for GPS trajectories", "trajdiff"};
  app.set_version_flag("--version", std::string("trajdiff ") + kVersion);
  app.require_subcommand(1);

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic lattice-city dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "Train a trajectory diffusion model");
  CLI::App* generate = app.add_subcommand("generate", "Sample trajectories from a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "Compare generated and reference trajectories");
  CLI::App* plot = app.add_subcommand("plot", "Render trajectories as SVG");

  SynthOptions so;
  TrainOptions to;
  GenerateOptions go;
  EvalOptions eo;
  PlotOptions po;
  Bindings sb(synth), tb(train_cmd), gb(generate), eb(eval), pb(plot);
  register_synth(*synth, so, sb);
  register_train(*train_cmd, to, tb);
  register_generate(*generate, go, gb);
  register_eval(*eval, eo, eb);
  register_plot(*plot, po, pb);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      sb.apply_config();
      return cmd_synth(so, sb, out, err);
    }
    if (train_cmd->parsed()) {
      tb.apply_config();
      return cmd_train(to, tb, out, err);
    }
    if (generate->parsed()) {
      gb.apply_config();
      return cmd_generate(go, gb, out, err);
    }
    if (eval->parsed()) {
      eb.apply_config();
      return cmd_eval(eo, eb, out, err);
    }
    if (plot->parsed()) {
      pb.apply_config();
      return cmd_plot(po, pb, out, err);
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace trajdiff::cli
