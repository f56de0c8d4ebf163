#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "streetgen/archive.hpp"
#include "streetgen/codec.hpp"
#include "streetgen/evalsuite.hpp"
#include "streetgen/genserve.hpp"
#include "streetgen/geo_ingest.hpp"
#include "streetgen/sampler.hpp"
#include "streetgen/synthcity.hpp"
#include "streetgen/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace streetgen;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<geo::PatternType> parse_patterns(const std::string& list) {
  std::vector<geo::PatternType> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = geo::parse_pattern_type(item);
    if (!t || *t == geo::PatternType::unlabeled) throw Error("unknown pattern type '" + item + "'");
    out.push_back(*t);
  }
  if (out.empty()) throw Error("no pattern types given");
  return out;
}

struct IngestArgs {
  std::string streets, patterns, dem, out;
  double dem_lo = 0.0, dem_hi = 1000.0, resolution = 2.0, origin_x = 0.0, origin_y = 0.0;
  double flat_elevation = 0.0;
  int width = 0, height = 0;
  bool binary = false, bare = false;
};

int run_ingest(const IngestArgs& a) {
  geo::Frame frame;
  frame.origin = {a.origin_x, a.origin_y};
  frame.resolution = a.resolution;
  FloatGrid elevation;
  if (!a.dem.empty()) {
    elevation = geo::load_dem_png(a.dem, a.dem_lo, a.dem_hi);
    frame.width = a.width ? a.width : elevation.width();
    frame.height = a.height ? a.height : elevation.height();
    if (elevation.width() != frame.width || elevation.height() != frame.height) {
      throw Error("DEM is " + std::to_string(elevation.width()) + "x" + std::to_string(elevation.height()) +
                  " but the frame is " + std::to_string(frame.width) + "x" + std::to_string(frame.height));
    }
  } else {
    frame.width = a.width;
    frame.height = a.height;
    frame.validate();
    elevation = FloatGrid(frame.width, frame.height, static_cast<float>(a.flat_elevation));
  }
  frame.validate();
  geo::RasterOptions options = a.bare ? geo::RasterOptions::bare_lines() : geo::RasterOptions{};
  options.binary = a.binary;
  const auto segments = geo::streets_from_geojson(read_json(a.streets));
  std::vector<geo::PatternPolygon> polygons;
  if (!a.patterns.empty()) polygons = geo::patterns_from_geojson(read_json(a.patterns));
  auto streets = geo::rasterize_streets(segments, frame, options);
  auto aspect = geo::compute_aspect(elevation, frame.resolution);
  auto pattern = geo::rasterize_pattern_annotation(polygons, frame);
  auto map = geo::assemble_map(std::move(streets), std::move(elevation), std::move(aspect), std::move(pattern), frame,
                               options);
  geo::save_map(map, a.out);
  std::printf("wrote %s (%dx%d px, %zu segments, %zu pattern polygons)\n", a.out.c_str(), frame.width, frame.height,
              segments.size(), polygons.size());
  return 0;
}

struct SynthArgs {
  std::string spec, out, patterns = "orthogonal_grid,irregular_grid";
  double extent = 2000.0, resolution = 2.0;
  int rows = 2, cols = 2;
  std::uint64_t seed = 0;
  bool binary = false;
};

int run_synth(const SynthArgs& a, bool seed_given) {
  synth::SynthSpec spec;
  if (!a.spec.empty()) {
    spec = synth::spec_from_json(read_json(a.spec));
    if (seed_given) spec.seed = a.seed;
  } else {
    synth::TiledLayout layout;
    layout.width = layout.height = a.extent;
    layout.resolution = a.resolution;
    layout.rows = a.rows;
    layout.cols = a.cols;
    layout.patterns = parse_patterns(a.patterns);
    layout.seed = a.seed;
    spec = synth::make_tiled_spec(layout);
  }
  const auto out = synth::synth_map(spec);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_text(dir / "spec.json", synth::spec_to_json(spec).dump(2));
  write_text(dir / "streets.geojson", geo::streets_to_geojson(out.streets).dump());
  write_text(dir / "patterns.geojson", geo::patterns_to_geojson(out.patterns).dump());

  float lo = out.elevation.values()[0], hi = lo;
  for (float v : out.elevation.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi <= lo) hi = lo + 1.0f;
  const auto png = codec::encode_png(codec::quantize16(out.elevation, hi - lo, lo));
  write_file_bytes(dir / "elevation.png", png);
  write_text(dir / "elevation.json", json{{"lo", lo},
                                          {"hi", hi},
                                          {"origin", {out.frame.origin.x, out.frame.origin.y}},
                                          {"resolution", out.frame.resolution},
                                          {"width", out.frame.width},
                                          {"height", out.frame.height}}
                                         .dump(2));
  geo::RasterOptions options;
  options.binary = a.binary;
  geo::save_map(synth::render_map(out, options), dir / "map.bin");
  std::printf("wrote %s: %zu street pieces, %zu districts, %dx%d px map\n", dir.c_str(), out.streets.size(),
              out.patterns.size(), out.frame.width, out.frame.height);
  return 0;
}

struct SampleArgs {
  std::string map, out, retention = "rand";
  std::size_t count = 100;
  int size = 256, model_level = 1;
  double area_lo = 0.1, area_hi = 0.7;
  bool hierarchy = false, no_dilate = false;
  std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
  const auto map = geo::load_map(a.map);
  sampling::DatasetConfig config;
  config.count = a.count;
  config.size = a.size;
  config.model_level = a.model_level;
  config.retention = sampling::Retention::parse(a.retention);
  config.mask.area = {a.area_lo, a.area_hi};
  config.sample.binary_streets = !a.hierarchy;
  config.sample.dilate_junctions = !a.no_dilate;
  config.seed = a.seed;
  const auto hash = codec::sha256_hex(read_file_bytes(a.map));
  sampling::write_dataset(map, hash, config, a.out);
  std::printf("wrote %zu samples of %dx%d to %s\n", a.count, a.size, a.size, a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string dataset, out, resume;
  int model_level = 0, epochs = 1, batch = 8, base = 64, d_base = 64;
  double alpha = 0.01, lr = 2e-4, d_lr = 0.0, lr_final = 1.0;
  std::uint64_t max_iterations = 0, checkpoint_every = 500, seed = 0;
  bool saturating = false, masked_real = false, unnormalized = false, quiet = false;
};

int run_train(const TrainArgs& a) {
  auto data = sampling::Dataset::load(a.dataset);
  const int level = a.model_level ? a.model_level : data.model_level();
  if (level != data.model_level()) {
    throw Error("dataset is model level " + std::to_string(data.model_level()) + ", not " + std::to_string(level));
  }
  nn::Checkpoint ckpt;
  if (!a.resume.empty()) {
    ckpt = nn::Checkpoint::load(a.resume);
  } else {
    const int size = data.manifest.at("size").get<int>();
    ckpt = nn::Checkpoint::fresh(nn::GeneratorSpec::standard(level, a.base), nn::DiscriminatorSpec::standard(a.d_base, size),
                                 a.seed);
  }
  if (ckpt.model_level != level) throw Error("checkpoint is model level " + std::to_string(ckpt.model_level));
  train::RunConfig config;
  config.epochs = a.epochs;
  config.batch_size = a.batch;
  config.max_iterations = a.max_iterations;
  config.checkpoint_every = a.checkpoint_every;
  config.out_dir = a.out;
  config.seed = a.seed;
  config.loss.alpha = a.alpha;
  config.loss.saturating = a.saturating;
  config.loss.masked_real = a.masked_real;
  if (a.unnormalized) config.loss.mse_normalization = train::MseNormalization::unnormalized;
  config.g_adam.lr = config.d_adam.lr = a.lr;
  if (a.d_lr > 0.0) config.d_adam.lr = a.d_lr;
  config.lr_final_fraction = a.lr_final;
  if (!a.quiet) {
    config.on_iteration = [](const train::LossRecord& r) {
      if (r.iteration % 50 == 0) {
        std::printf("iter %6llu  mse %.5f  g_adv %.4f  d_loss %.4f\n", static_cast<unsigned long long>(r.iteration),
                    r.mse, r.g_adv, r.d_loss);
        std::fflush(stdout);
      }
    };
  }
  train::Trainer trainer(std::move(ckpt), config);
  const auto history = trainer.run(data.samples);
  std::printf("%zu iterations, checkpoints in %s\n", history.size(), a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, retention = "rand", out = "report.json", label;
  std::uint64_t seed = 0;
  int batch = 8;
  bool quiet = false;
};

int run_eval(const EvalArgs& a) {
  const auto ckpt = nn::Checkpoint::load(a.checkpoint);
  const auto data = sampling::Dataset::load(a.dataset);
  eval::ExperimentOptions options;
  options.retention = sampling::Retention::parse(a.retention);
  options.seed = a.seed;
  options.batch_size = a.batch;
  options.label = a.label.empty() ? "model" + std::to_string(ckpt.model_level) + "-" + options.retention.label()
                                  : a.label;
  const auto report = eval::run_experiment(ckpt, data.samples, options);
  fs::path out = a.out;
  write_text(out, report.to_json().dump(2));
  fs::path csv = out, hist = out;
  csv.replace_extension(".csv");
  hist.replace_filename(out.stem().string() + "_histogram.csv");
  report.write_csv(csv);
  report.write_histogram_csv(hist);
  if (!a.quiet) std::fputs(report.render().c_str(), stdout);
  std::printf("%s: mean l1 %.4f  mean l2 %.4f over %zu samples\n", report.label.c_str(), report.mean_l1,
              report.mean_l2, report.results.size());
  return 0;
}

struct ServeArgs {
  std::string checkpoint, map, host = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 0;
};

int run_serve(const ServeArgs& a) {
  auto ckpt = nn::Checkpoint::load(a.checkpoint);
  std::optional<geo::MultiChannelMap> map;
  if (!a.map.empty()) map = geo::load_map(a.map);
  serve::Service service(std::move(ckpt), std::move(map));
  serve::HttpServer server(service);
  std::printf("serving model level %d (%s) on http://%s:%d\n", service.checkpoint().model_level,
              service.checkpoint_hash().substr(0, 12).c_str(), a.host.c_str(), a.port);
  std::fflush(stdout);
  server.run(a.host, a.port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Street network infill: data pipeline, training, evaluation and serving"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ci = app.add_subcommand("ingest", "Rasterize vector streets, patterns and a DEM into a map container");
  ci->add_option("--streets", ingest.streets, "Street FeatureCollection")->required();
  ci->add_option("--patterns", ingest.patterns, "Pattern FeatureCollection");
  ci->add_option("--dem", ingest.dem, "16-bit grayscale DEM PNG");
  ci->add_option("--dem-lo", ingest.dem_lo, "Elevation of DEM sample 0");
  ci->add_option("--dem-hi", ingest.dem_hi, "Elevation of DEM sample 65535");
  ci->add_option("--flat-elevation", ingest.flat_elevation, "Elevation used without a DEM");
  ci->add_option("--resolution", ingest.resolution, "Meters per pixel");
  ci->add_option("--origin-x", ingest.origin_x, "West edge in meters");
  ci->add_option("--origin-y", ingest.origin_y, "North edge in meters");
  ci->add_option("--width", ingest.width, "Width in pixels (default: DEM width)");
  ci->add_option("--height", ingest.height, "Height in pixels (default: DEM height)");
  ci->add_flag("--binary", ingest.binary, "Collapse street hierarchy to 1.0");
  ci->add_flag("--bare-lines", ingest.bare, "No dilation");
  ci->add_option("--out", ingest.out, "Output map container")->required();
  std::uint64_t ingest_seed = 0;
  ci->add_option("--seed", ingest_seed, "Unused; accepted for uniformity");

  SynthArgs synth_args;
  auto* cs = app.add_subcommand("synth", "Generate a labeled synthetic city");
  cs->add_option("--spec", synth_args.spec, "SynthSpec JSON (default: a tiled layout)");
  cs->add_option("--out", synth_args.out, "Output directory")->required();
  cs->add_option("--extent", synth_args.extent, "Tiled layout side in meters");
  cs->add_option("--resolution", synth_args.resolution, "Meters per pixel");
  cs->add_option("--rows", synth_args.rows, "Tiled layout district rows");
  cs->add_option("--cols", synth_args.cols, "Tiled layout district columns");
  cs->add_option("--patterns", synth_args.patterns, "Comma-separated pattern types for the tiled layout");
  cs->add_flag("--binary", synth_args.binary, "Binary street channel in map.bin");
  auto* synth_seed = cs->add_option("--seed", synth_args.seed, "Random seed");

  SampleArgs sample;
  auto* cp = app.add_subcommand("sample", "Cut a training or test dataset from a map");
  cp->add_option("--map", sample.map, "Map container")->required();
  cp->add_option("--out", sample.out, "Dataset directory")->required();
  cp->add_option("--count", sample.count, "Number of patches");
  cp->add_option("--size", sample.size, "Patch size in pixels");
  cp->add_option("--model-level", sample.model_level, "1, 2 or 3")->check(CLI::Range(1, 3));
  cp->add_option("--retention", sample.retention, "rand, 30, 60, 90 or a fraction");
  cp->add_option("--area-lo", sample.area_lo, "Minimum mask area fraction");
  cp->add_option("--area-hi", sample.area_hi, "Maximum mask area fraction");
  cp->add_flag("--hierarchy", sample.hierarchy, "Keep hierarchy intensities instead of binary streets");
  cp->add_flag("--no-dilate", sample.no_dilate, "Render junctions as single pixels");
  cp->add_option("--seed", sample.seed, "Random seed");

  TrainArgs tr;
  auto* ct = app.add_subcommand("train", "Train a generator and discriminator");
  ct->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  ct->add_option("--out", tr.out, "Checkpoint directory")->required();
  ct->add_option("--model-level", tr.model_level, "1, 2 or 3 (default: the dataset's)")->check(CLI::Range(0, 3));
  ct->add_option("--epochs", tr.epochs, "Epochs");
  ct->add_option("--batch", tr.batch, "Batch size");
  ct->add_option("--alpha", tr.alpha, "Adversarial weight");
  ct->add_option("--lr", tr.lr, "Adam learning rate for both networks");
  ct->add_option("--d-lr", tr.d_lr, "Discriminator learning rate (default: --lr)");
  ct->add_option("--lr-final", tr.lr_final, "Fraction of the learning rates reached at --max-iterations")
      ->check(CLI::Range(0.0, 1.0));
  ct->add_option("--max-iterations", tr.max_iterations, "Stop after this many iterations (0: no limit)");
  ct->add_option("--checkpoint-every", tr.checkpoint_every, "Iterations between checkpoints");
  ct->add_option("--base", tr.base, "Generator base width (64 is full size)");
  ct->add_option("--d-base", tr.d_base, "Discriminator base width");
  ct->add_option("--resume", tr.resume, "Start from this checkpoint");
  ct->add_flag("--saturating", tr.saturating, "Generator minimizes log(1 - D(fake))");
  ct->add_flag("--masked-real", tr.masked_real, "Discriminator compares masked images");
  ct->add_flag("--unnormalized-mse", tr.unnormalized, "Raw squared norm instead of per-pixel mean");
  ct->add_flag("--quiet", tr.quiet, "No progress lines");
  ct->add_option("--seed", tr.seed, "Random seed");

  EvalArgs ev;
  auto* ce = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ce->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  ce->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  ce->add_option("--retention", ev.retention, "rand, 30, 60 or 90");
  ce->add_option("--out", ev.out, "Report JSON; CSVs are written next to it");
  ce->add_option("--label", ev.label, "Experiment label");
  ce->add_option("--batch", ev.batch, "Inference batch size");
  ce->add_flag("--quiet", ev.quiet, "Skip the histogram plot");
  ce->add_option("--seed", ev.seed, "Random seed for retention draws");

  ServeArgs sv;
  auto* cv = app.add_subcommand("serve", "Serve a checkpoint over HTTP");
  cv->add_option("--checkpoint", sv.checkpoint, "Checkpoint file")->required();
  cv->add_option("--port", sv.port, "TCP port");
  cv->add_option("--host", sv.host, "Bind address");
  cv->add_option("--map", sv.map, "Map container for map_origin requests");
  cv->add_option("--seed", sv.seed, "Unused; requests carry their own seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ci) return run_ingest(ingest);
    if (*cs) return run_synth(synth_args, synth_seed->count() > 0);
    if (*cp) return run_sample(sample);
    if (*ct) return run_train(tr);
    if (*ce) return run_eval(ev);
    if (*cv) return run_serve(sv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
