// dlpr: simulate coherent diffraction of phase objects, build paired
// datasets, train the retrieval network, and run the analysis suite.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dlpr/config.hpp"
#include "dlpr/datasets.hpp"
#include "dlpr/experiments.hpp"
#include "dlpr/image_io.hpp"
#include "dlpr/network.hpp"
#include "dlpr/optics.hpp"
#include "dlpr/training.hpp"

namespace fs = std::filesystem;
using namespace dlpr;

namespace {

struct GlobalOpts {
  cfg::KeyValues kv;
  int threads = 0;
};

// Flags override config-file values; config values override built-in
// defaults.
template <typename T>
T resolve(const CLI::Option* opt, T cli_value, const cfg::KeyValues& kv,
          const std::string& key, T fallback) {
  if (opt && opt->count() > 0) return cli_value;
  if constexpr (std::is_same_v<T, double>)
    return kv.get_double(key, fallback);
  else if constexpr (std::is_same_v<T, int>)
    return kv.get_int(key, fallback);
  else if constexpr (std::is_same_v<T, unsigned>)
    return kv.get_unsigned(key, fallback);
  else
    return kv.get(key, fallback);
}

fs::path resolve_out(const CLI::Option* opt, const std::string& cli_value,
                     const std::string& leaf) {
  if (opt && opt->count() > 0) return cli_value;
  if (const char* root = std::getenv("DLPR_OUT"))
    return fs::path(root) / leaf;
  throw UsageError("--out is required (or set DLPR_OUT)");
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw UsageError("--values: empty list");
  return out;
}

// "0..15", "0-15", or "0,3,7"
std::vector<int> parse_filters(const std::string& s) {
  std::vector<int> out;
  const auto dots = s.find("..");
  const auto dash = s.find('-');
  if (dots != std::string::npos || dash != std::string::npos) {
    const size_t pos = dots != std::string::npos ? dots : dash;
    const size_t skip = dots != std::string::npos ? 2 : 1;
    const int lo = std::stoi(s.substr(0, pos));
    const int hi = std::stoi(s.substr(pos + skip));
    for (int f = lo; f <= hi; ++f) out.push_back(f);
  } else {
    for (double v : parse_values(s)) out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw UsageError("--filters: empty list");
  return out;
}

optics::PropagationConfig optics_from(const cfg::KeyValues& kv,
                                      const CLI::Option* od, double distance,
                                      const CLI::Option* ow, double wavelength,
                                      const CLI::Option* op, double pitch,
                                      const CLI::Option* og, int grid,
                                      const CLI::Option* of, int pad) {
  optics::PropagationConfig cfg;
  cfg.distance = resolve(od, distance, kv, "optics.distance", 0.375);
  cfg.wavelength = resolve(ow, wavelength, kv, "optics.wavelength", 632.8e-9);
  cfg.pixel_pitch = resolve(op, pitch, kv, "optics.pixel_pitch", 20e-6);
  cfg.grid = resolve(og, grid, kv, "optics.grid", 64);
  cfg.pad_factor = resolve(of, pad, kv, "optics.pad_factor", 2);
  cfg.validate();
  return cfg;
}

void echo_optics(cfg::KeyValues& eff, const optics::PropagationConfig& c) {
  eff.set("optics.distance", std::to_string(c.distance));
  eff.set("optics.wavelength", std::to_string(c.wavelength));
  eff.set("optics.pixel_pitch", std::to_string(c.pixel_pitch));
  eff.set("optics.grid", std::to_string(c.grid));
  eff.set("optics.pad_factor", std::to_string(c.pad_factor));
  eff.set("optics.digest", c.digest());
}

net::ModelF load_model(const std::string& ckpt) {
  return net::ModelF::load_checkpoint(ckpt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dlpr - lensless phase retrieval laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  GlobalOpts glob;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--threads", glob.threads, "worker thread cap (1 = deterministic)");

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "propagate one object image");
  std::string sim_input, sim_out;
  double sim_d = 0.375, sim_wl = 632.8e-9, sim_pitch = 20e-6;
  int sim_grid = 64, sim_pad = 2;
  double sim_noise = 0.0;
  bool sim_quant = false;
  unsigned sim_nseed = 0;
  sim->add_option("--input", sim_input, "grayscale PGM/PNG")->required();
  auto* sim_out_opt = sim->add_option("--out", sim_out, "output tensor file");
  auto* sim_d_opt = sim->add_option("--distance", sim_d, "propagation distance [m]");
  auto* sim_wl_opt = sim->add_option("--wavelength", sim_wl);
  auto* sim_p_opt = sim->add_option("--pitch", sim_pitch);
  auto* sim_g_opt = sim->add_option("--grid", sim_grid);
  auto* sim_f_opt = sim->add_option("--pad-factor", sim_pad);
  sim->add_option("--noise-sigma", sim_noise);
  sim->add_option("--noise-seed", sim_nseed);
  sim->add_flag("--quantize", sim_quant, "8-bit quantized view");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "build a paired dataset");
  std::string gen_source, gen_kind, gen_out;
  int gen_count = 100, gen_margin = 0;
  double gen_split = 0.9, gen_d = 0.375, gen_wl = 632.8e-9, gen_pitch = 20e-6;
  int gen_grid = 64, gen_pad = 2;
  unsigned gen_seed = 0, gen_nseed = 0;
  double gen_noise = 0.0;
  auto* gen_src_opt = gen->add_option("--source", gen_source, "directory of images");
  auto* gen_kind_opt = gen->add_option("--procedural", gen_kind,
                                       "blobs|gratings|digits-like|characters-like|null");
  auto* gen_count_opt = gen->add_option("--count", gen_count);
  auto* gen_split_opt = gen->add_option("--split", gen_split, "train fraction");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed);
  auto* gen_margin_opt = gen->add_option("--margin", gen_margin);
  auto* gen_out_opt = gen->add_option("--out", gen_out);
  auto* gen_d_opt = gen->add_option("--distance", gen_d);
  auto* gen_wl_opt = gen->add_option("--wavelength", gen_wl);
  auto* gen_p_opt = gen->add_option("--pitch", gen_pitch);
  auto* gen_g_opt = gen->add_option("--grid", gen_grid);
  auto* gen_f_opt = gen->add_option("--pad-factor", gen_pad);
  gen->add_option("--noise-sigma", gen_noise);
  gen->add_option("--noise-seed", gen_nseed);

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train the retrieval network");
  std::string tr_data, tr_spec, tr_out;
  int tr_epochs = 20, tr_batch = 16, tr_eval_every = 1;
  double tr_lr = 1e-3, tr_b1 = 0.9, tr_b2 = 0.999, tr_eps = 1e-8;
  unsigned tr_seed = 0;
  bool tr_fp64 = false, tr_quiet = false;
  tr->add_option("--data", tr_data)->required();
  auto* tr_spec_opt = tr->add_option("--spec", tr_spec, "network spec file");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs);
  auto* tr_batch_opt = tr->add_option("--batch-size", tr_batch);
  auto* tr_lr_opt = tr->add_option("--lr", tr_lr);
  auto* tr_b1_opt = tr->add_option("--beta1", tr_b1);
  auto* tr_b2_opt = tr->add_option("--beta2", tr_b2);
  auto* tr_eps_opt = tr->add_option("--eps", tr_eps);
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed);
  auto* tr_ee_opt = tr->add_option("--eval-every", tr_eval_every);
  auto* tr_out_opt = tr->add_option("--out", tr_out);
  tr->add_flag("--fp64", tr_fp64, "train in 64-bit arithmetic");
  tr->add_flag("--quiet", tr_quiet);

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "MAE table over test sets");
  std::string ev_ckpt, ev_out;
  std::vector<std::string> ev_data;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required()->expected(-1);
  auto* ev_out_opt = ev->add_option("--out", ev_out);

  // ---- sweep ----
  auto* sw = app.add_subcommand("sweep", "distance/shift/rotation sensitivity");
  std::string sw_ckpt, sw_data, sw_axis, sw_values, sw_out;
  sw->add_option("--checkpoint", sw_ckpt)->required();
  sw->add_option("--data", sw_data)->required();
  sw->add_option("--axis", sw_axis, "distance|shift|rotation")->required();
  sw->add_option("--values", sw_values)->required();
  auto* sw_out_opt = sw->add_option("--out", sw_out);

  // ---- maps ----
  auto* mp = app.add_subcommand("maps", "maximally-activated patterns");
  std::string mp_ckpt, mp_filters = "0..15", mp_out;
  int mp_layer = 0, mp_steps = 100, mp_size = 16;
  double mp_step_size = 0.1;
  unsigned mp_seed = 0;
  mp->add_option("--checkpoint", mp_ckpt)->required();
  mp->add_option("--layer", mp_layer, "flat conv-layer index");
  mp->add_option("--filters", mp_filters, "range (0..15) or list");
  mp->add_option("--steps", mp_steps);
  mp->add_option("--step-size", mp_step_size);
  mp->add_option("--input-size", mp_size);
  mp->add_option("--seed", mp_seed);
  auto* mp_out_opt = mp->add_option("--out", mp_out);

  // ---- grid ----
  auto* gr = app.add_subcommand("grid", "reconstruction panel");
  std::string gr_ckpt, gr_data, gr_ids, gr_out;
  int gr_count = 4;
  gr->add_option("--checkpoint", gr_ckpt)->required();
  gr->add_option("--data", gr_data)->required();
  gr->add_option("--ids", gr_ids, "comma-separated sample ids");
  gr->add_option("--count", gr_count, "first N test samples when --ids absent");
  auto* gr_out_opt = gr->add_option("--out", gr_out, "output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::cout.precision(12);
  try {
    if (!config_path.empty()) glob.kv = cfg::KeyValues::load(config_path);
    const int threads = glob.threads > 0
                            ? glob.threads
                            : glob.kv.get_int("run.threads", 0);
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    if (sim->parsed()) {
      const auto cfg = optics_from(glob.kv, sim_d_opt, sim_d, sim_wl_opt, sim_wl,
                                   sim_p_opt, sim_pitch, sim_g_opt, sim_grid,
                                   sim_f_opt, sim_pad);
      const fs::path out = resolve_out(sim_out_opt, sim_out, "simulate/raw.dlt");
      optics::NoiseSpec noise;
      noise.gaussian_sigma = sim_noise;
      noise.quantize_8bit = sim_quant;
      noise.seed = sim_nseed;
      const auto img = io::read_image(sim_input);
      const auto raw = optics::simulate_measurement(img, cfg, noise);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      std::vector<float> f32(raw.intensity.begin(), raw.intensity.end());
      data::write_tensor_f32(out, {cfg.grid, cfg.grid}, f32.data());
      double mx = 1e-300;
      for (double v : raw.intensity) mx = std::max(mx, v);
      optics::GrayImage preview(cfg.grid, cfg.grid);
      for (size_t i = 0; i < raw.intensity.size(); ++i)
        preview.pixels[i] = static_cast<std::uint8_t>(
            std::lround(255.0 * raw.intensity[i] / mx));
      io::write_pgm(out.string() + ".pgm", preview);
      cfg::KeyValues eff;
      echo_optics(eff, cfg);
      eff.set("simulate.input", sim_input);
      eff.set("simulate.noise_sigma", std::to_string(noise.gaussian_sigma));
      eff.set("simulate.quantize", noise.quantize_8bit ? "1" : "0");
      if (out.has_parent_path())
        eff.write_resolved(out.parent_path() / "resolved-config.txt");
      std::cout << "wrote " << out.string() << " and preview\n";
      return 0;
    }

    if (gen->parsed()) {
      const auto cfg = optics_from(glob.kv, gen_d_opt, gen_d, gen_wl_opt, gen_wl,
                                   gen_p_opt, gen_pitch, gen_g_opt, gen_grid,
                                   gen_f_opt, gen_pad);
      const fs::path out = resolve_out(gen_out_opt, gen_out, "dataset");
      const std::string kind =
          resolve<std::string>(gen_kind_opt, gen_kind, glob.kv, "dataset.kind", "");
      const std::string source =
          resolve<std::string>(gen_src_opt, gen_source, glob.kv, "dataset.source", "");
      if (kind.empty() == source.empty())
        throw UsageError("gen-data: give exactly one of --procedural or --source");
      data::GenerateOptions gopt;
      gopt.grid = cfg.grid;
      gopt.split_ratio = resolve(gen_split_opt, gen_split, glob.kv, "dataset.split", 0.9);
      gopt.seed = resolve(gen_seed_opt, gen_seed, glob.kv, "dataset.seed", 0u);
      optics::NoiseSpec noise;
      noise.gaussian_sigma = gen_noise;
      noise.seed = gen_nseed;

      data::Manifest manifest;
      if (!kind.empty()) {
        const int count = resolve(gen_count_opt, gen_count, glob.kv, "dataset.count", 100);
        manifest = data::generate_procedural(data::kind_from_string(kind), count,
                                             gopt, out);
      } else {
        data::IngestOptions iopt;
        iopt.grid = cfg.grid;
        iopt.margin = resolve(gen_margin_opt, gen_margin, glob.kv, "dataset.margin", 0);
        iopt.split_ratio = gopt.split_ratio;
        iopt.seed = gopt.seed;
        int skipped = 0;
        manifest = data::ingest(source, out, iopt, &skipped);
        if (skipped > 0)
          std::cerr << "warning: skipped " << skipped << " non-image files\n";
      }
      data::synthesize(manifest, out, cfg, noise);
      int n_train = 0, n_test = 0;
      for (const auto& r : manifest.records)
        (r.split == "train" ? n_train : n_test)++;
      cfg::KeyValues eff;
      echo_optics(eff, cfg);
      eff.set("dataset.kind", kind.empty() ? "ingest:" + source : kind);
      eff.set("dataset.count", std::to_string(manifest.records.size()));
      eff.set("dataset.split", std::to_string(gopt.split_ratio));
      eff.set("dataset.seed", std::to_string(gopt.seed));
      eff.write_resolved(out / "resolved-config.txt");
      std::cout << "generated " << n_train << "/" << n_test << "\n";
      return 0;
    }

    if (tr->parsed()) {
      train::TrainConfig tc;
      tc.epochs = resolve(tr_epochs_opt, tr_epochs, glob.kv, "train.epochs", 20);
      tc.batch_size = resolve(tr_batch_opt, tr_batch, glob.kv, "train.batch_size", 16);
      tc.learning_rate = resolve(tr_lr_opt, tr_lr, glob.kv, "train.learning_rate", 1e-3);
      tc.beta1 = resolve(tr_b1_opt, tr_b1, glob.kv, "train.beta1", 0.9);
      tc.beta2 = resolve(tr_b2_opt, tr_b2, glob.kv, "train.beta2", 0.999);
      tc.epsilon = resolve(tr_eps_opt, tr_eps, glob.kv, "train.epsilon", 1e-8);
      tc.seed = resolve(tr_seed_opt, tr_seed, glob.kv, "train.seed", 0u);
      tc.eval_every = resolve(tr_ee_opt, tr_eval_every, glob.kv, "train.eval_every", 1);
      tc.validate();

      const fs::path out = resolve_out(tr_out_opt, tr_out, "train");
      fs::create_directories(out);
      auto ds = data::load_dataset(tr_data);
      net::NetworkSpec spec;
      const std::string spec_file =
          resolve<std::string>(tr_spec_opt, tr_spec, glob.kv, "network.spec", "");
      if (!spec_file.empty()) spec = net::NetworkSpec::load_file(spec_file);
      spec.input_size = ds.grid;
      spec.validate();

      cfg::KeyValues eff;
      echo_optics(eff, ds.cfg);
      eff.set("train.epochs", std::to_string(tc.epochs));
      eff.set("train.batch_size", std::to_string(tc.batch_size));
      eff.set("train.learning_rate", std::to_string(tc.learning_rate));
      eff.set("train.beta1", std::to_string(tc.beta1));
      eff.set("train.beta2", std::to_string(tc.beta2));
      eff.set("train.epsilon", std::to_string(tc.epsilon));
      eff.set("train.seed", std::to_string(tc.seed));
      eff.set("train.fp64", tr_fp64 ? "1" : "0");
      eff.write_resolved(out / "resolved-config.txt");
      std::ofstream spec_echo(out / "spec.txt");
      spec_echo << spec.serialize();

      double final_test = 0;
      const double null_mae = train::null_baseline(ds);
      if (tr_fp64) {
        auto model = net::ModelD::build(spec, tc.seed);
        auto res = train::train(model, ds, tc, out, !tr_quiet);
        final_test = res.history.epochs.back().test_l1;
      } else {
        auto model = net::ModelF::build(spec, tc.seed);
        auto res = train::train(model, ds, tc, out, !tr_quiet);
        final_test = res.history.epochs.back().test_l1;
      }
      std::cout << "final test_l1 " << final_test << " null_baseline " << null_mae
                << "\n";
      return 0;
    }

    if (ev->parsed()) {
      auto model = load_model(ev_ckpt);
      std::vector<fs::path> dirs(ev_data.begin(), ev_data.end());
      auto rows = exp::cross_domain_eval(model, dirs);
      for (const auto& r : rows)
        std::cout << r.tag << "," << r.mae << "," << r.n << "\n";
      if (ev_out_opt->count() > 0) {
        fs::create_directories(ev_out);
        exp::save_mae_table(fs::path(ev_out) / "mae_table.csv", rows);
      }
      return 0;
    }

    if (sw->parsed()) {
      auto model = load_model(sw_ckpt);
      auto ds = data::load_dataset(sw_data);
      const fs::path out = resolve_out(sw_out_opt, sw_out, "sweep");
      fs::create_directories(out);
      const auto before = model.parameter_digest();
      exp::SweepResult res;
      if (sw_axis == "distance") {
        res = exp::distance_sweep(model, ds, parse_values(sw_values));
      } else if (sw_axis == "shift" || sw_axis == "rotation") {
        if (!model.meta().optics_digest.empty() &&
            model.meta().optics_digest != ds.digest)
          throw ArtifactMismatch("sweep: dataset optics digest " + ds.digest +
                                 " does not match the checkpoint's " +
                                 model.meta().optics_digest);
        std::vector<int> vals;
        for (double v : parse_values(sw_values)) vals.push_back(static_cast<int>(v));
        res = (sw_axis == "shift") ? exp::shift_sweep(model, ds, vals)
                                   : exp::rotation_sweep(model, ds, vals);
      } else {
        throw UsageError("sweep: unknown axis '" + sw_axis + "'");
      }
      if (model.parameter_digest() != before)
        throw Error("sweep mutated the model (parameter digest changed)");
      res.save_csv(out / ("sweep_" + sw_axis + ".csv"));
      for (const auto& r : res.rows)
        std::cout << res.axis << "," << r.value << "," << r.mae << "," << r.n << "\n";
      return 0;
    }

    if (mp->parsed()) {
      auto model = load_model(mp_ckpt);
      const fs::path out = resolve_out(mp_out_opt, mp_out, "maps");
      fs::create_directories(out);
      for (int f : parse_filters(mp_filters)) {
        auto res = exp::max_activation_pattern(model, mp_layer, f, mp_steps,
                                               mp_step_size, mp_size, mp_seed);
        double lo = res.image[0], hi = res.image[0];
        for (double v : res.image) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        optics::GrayImage img(mp_size, mp_size);
        const double span = std::max(hi - lo, 1e-12);
        for (size_t i = 0; i < res.image.size(); ++i)
          img.pixels[i] = static_cast<std::uint8_t>(
              std::lround(255.0 * (res.image[i] - lo) / span));
        char name[64];
        std::snprintf(name, sizeof(name), "map_L%d_F%02d", mp_layer, f);
        io::write_pgm(out / (std::string(name) + ".pgm"), img);
        std::ofstream trace(out / (std::string(name) + "_trace.csv"));
        trace << "step,activation\n";
        for (size_t t = 0; t < res.trace.size(); ++t)
          trace << t << "," << res.trace[t] << "\n";
        std::cout << name << " final " << res.trace.back() << " noise "
                  << res.noise_activation << "\n";
      }
      return 0;
    }

    if (gr->parsed()) {
      auto model = load_model(gr_ckpt);
      auto ds = data::load_dataset(gr_data);
      const fs::path out = resolve_out(gr_out_opt, gr_out, "grid/grid.pgm");
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      std::vector<std::string> ids;
      if (!gr_ids.empty()) {
        std::string cur;
        for (char c : gr_ids + ",") {
          if (c == ',') {
            if (!cur.empty()) ids.push_back(cur);
            cur.clear();
          } else {
            cur += c;
          }
        }
      } else {
        for (int i = 0; i < gr_count && i < static_cast<int>(ds.test.size()); ++i)
          ids.push_back(ds.test[static_cast<size_t>(i)].id);
      }
      auto l1s = exp::reconstruct_grid(model, ds, ids, out);
      for (size_t i = 0; i < ids.size(); ++i)
        std::cout << ids[i] << " l1 " << l1s[i] << "\n";
      return 0;
    }

    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
