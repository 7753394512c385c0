// prodat: train / compress / decompress / evaluate / rd-sweep / synth-data
//
// Exit codes: 0 ok, 2 parse error, 3 config/argument error, 4 model error,
// 5 I/O error.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "prodat/bitstream.hpp"
#include "prodat/checkpoint.hpp"
#include "prodat/config.hpp"
#include "prodat/metrics.hpp"
#include "prodat/trainer.hpp"

namespace {

using namespace prodat;

config::KvMap make_kv(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  config::KvMap kv;
  if (!config_path.empty()) kv = config::parse_config_file(config_path);
  for (const auto& o : overrides) config::apply_override(kv, o);
  return kv;
}

PointCloud load_normalized(const std::string& path) {
  const PointCloud raw = io::load_pointcloud(path, io::guess_format(path));
  return io::normalize_to_unit_cube(raw).first;
}

struct EvalRow {
  double alpha = 0.0;
  int k_z = 0;
  int k_xyz = 0;
  double entropy_bpp = 0.0;
  double file_bpp = 0.0;
  double cd = 0.0;
  double psnr_d1 = 0.0;
  double psnr_d2 = 0.0;
  double n_prime = 0.0;
};

EvalRow evaluate_alpha(const codec::ProdatModel& model,
                       const bitstream::ProgressiveBitstream& full,
                       const PointCloud& original, double alpha) {
  EvalRow row;
  row.alpha = alpha;
  const bitstream::ProgressiveBitstream cut = bitstream::truncate(full, alpha);
  const bitstream::DecodedLatent latent = bitstream::decode_latent(cut, model);
  row.k_z = static_cast<int>(latent.retained_z.size());
  row.k_xyz = static_cast<int>(latent.retained_xyz.size());
  const std::vector<std::uint8_t> bytes = cut.to_bytes();
  row.file_bpp = 8.0 * static_cast<double>(bytes.size()) /
                 static_cast<double>(original.size());
  row.entropy_bpp = entropy::estimate_bpp(
      latent.quantized, model.entropy_z(), model.entropy_xyz(), model.params(),
      latent.retained_z, latent.retained_xyz, original.size(),
      8 * (4 + 2 * static_cast<std::size_t>(cut.m_latent)));
  const PointCloud rec = model.decode(latent.quantized.zq,
                                      latent.quantized.zxyzq, latent.d);
  row.n_prime = static_cast<double>(rec.size());
  row.cd = metrics::chamfer_distance(original, rec);
  row.psnr_d1 = metrics::psnr_d(original, rec, metrics::PsnrMode::D1);
  row.psnr_d2 = metrics::psnr_d(original, rec, metrics::PsnrMode::D2);
  return row;
}

int cmd_synth_data(const std::string& out_dir, const config::KvMap& kv) {
  const config::DataSpec spec = config::data_spec_from(kv);
  std::filesystem::create_directories(out_dir);
  for (std::size_t i = 0; i < spec.cloud_count; ++i) {
    const PointCloud pc = io::generate_synthetic(
        spec.shape, spec.points, spec.density_contrast, spec.seed + i);
    std::ostringstream name;
    name << out_dir << "/cloud_" << i << ".ply";
    io::save_pointcloud(pc, name.str(), io::CloudFormat::ply_ascii);
  }
  std::cout << "wrote " << spec.cloud_count << " clouds to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& out_path, const std::string& log_path,
              const config::KvMap& kv) {
  const train::RunConfig cfg = config::run_config_from(kv);
  const std::string warning = cfg.validate();
  if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
  std::vector<PointCloud> dataset =
      config::load_dataset(config::data_spec_from(kv));
  train::Trainer trainer(cfg, std::move(dataset));

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw IoError("cannot write " + log_path);
    log = &log_file;
  }
  const bool ok = trainer.run(log);
  train::save_checkpoint(out_path, trainer.checkpoint());
  if (!ok) {
    std::cerr << "training diverged; last good checkpoint written to "
              << out_path << "\n";
    return 4;
  }
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_compress(const std::string& ckpt_path, const std::string& in_path,
                 const std::string& out_path) {
  const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  const codec::ProdatModel model = ckpt.make_model();
  const PointCloud pc = load_normalized(in_path);
  const bool feature_only =
      ckpt.run.drop_strategy == train::DropStrategy::feature_only;
  const bitstream::ProgressiveBitstream bs =
      bitstream::compress_cloud(model, pc, feature_only, ckpt.run.beta);
  const std::vector<std::uint8_t> bytes = bs.to_bytes();
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw IoError("cannot write " + out_path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + out_path);

  std::vector<int> all_z(static_cast<std::size_t>(bs.channels_z()));
  std::vector<int> all_xyz(static_cast<std::size_t>(bs.channels_xyz()));
  for (std::size_t i = 0; i < all_z.size(); ++i) all_z[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < all_xyz.size(); ++i)
    all_xyz[i] = static_cast<int>(i);
  const codec::LatentCode code = model.encode(pc);
  const entropy::QuantizedLatent q =
      entropy::QuantizedLatent::from(code.z, code.z_xyz);
  const double entropy_bpp = entropy::estimate_bpp(
      q, model.entropy_z(), model.entropy_xyz(), model.params(), all_z, all_xyz,
      pc.size(), 8 * (4 + 2 * static_cast<std::size_t>(bs.m_latent)));
  const double file_bpp =
      8.0 * static_cast<double>(bytes.size()) / static_cast<double>(pc.size());
  std::cout << "N=" << pc.size() << " M=" << bs.m_latent << " entropy-bpp="
            << entropy_bpp << " file-bpp=" << file_bpp << "\n";
  return 0;
}

int cmd_decompress(const std::string& ckpt_path, const std::string& in_path,
                   double alpha, const std::string& out_path) {
  const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  const codec::ProdatModel model = ckpt.make_model();
  std::ifstream f(in_path, std::ios::binary);
  if (!f) throw IoError("cannot open " + in_path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  const bitstream::ProgressiveBitstream bs =
      bitstream::ProgressiveBitstream::from_bytes(bytes);
  const int c = bs.channels_z();
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ArgumentError("--pr must lie in (0, 1]");
  const double grid = std::ceil(alpha * c - 1e-9) / c;
  if (std::abs(grid - alpha) > 1e-9) {
    std::cerr << "warning: --pr " << alpha << " is off the 1/" << c
              << " grid; rounding up to " << grid << "\n";
    alpha = grid;
  }
  const bitstream::ProgressiveBitstream cut = bitstream::truncate(bs, alpha);
  const bitstream::DecodedLatent latent = bitstream::decode_latent(cut, model);
  std::cout << "consumed " << latent.retained_z.size() << " feature and "
            << latent.retained_xyz.size() << " coordinate layers\n";
  const PointCloud rec = model.decode(latent.quantized.zq,
                                      latent.quantized.zxyzq, latent.d);
  io::save_pointcloud(rec, out_path, io::CloudFormat::ply_ascii);
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& in_path,
                 double alpha) {
  const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  const codec::ProdatModel model = ckpt.make_model();
  const PointCloud pc = load_normalized(in_path);
  const bool feature_only =
      ckpt.run.drop_strategy == train::DropStrategy::feature_only;
  const bitstream::ProgressiveBitstream bs =
      bitstream::compress_cloud(model, pc, feature_only, ckpt.run.beta);
  const EvalRow row = evaluate_alpha(model, bs, pc, alpha);
  std::cout << "alpha=" << row.alpha << " k_z=" << row.k_z << " k_xyz="
            << row.k_xyz << " entropy-bpp=" << row.entropy_bpp << " file-bpp="
            << row.file_bpp << " cd=" << row.cd << " psnr-d1=" << row.psnr_d1
            << " psnr-d2=" << row.psnr_d2 << " n'=" << row.n_prime << "\n";
  return 0;
}

int cmd_rd_sweep(const std::vector<std::string>& ckpt_paths,
                 const std::string& out_csv, const config::KvMap& kv) {
  std::ofstream csv(out_csv);
  if (!csv) throw IoError("cannot write " + out_csv);
  csv << "lambda,strategy,alpha,k_z,k_xyz,entropy_bpp,file_bpp,cd,psnr_d1,"
         "psnr_d2,n_prime\n";
  csv.precision(10);

  struct Curve {
    double lambda = 0.0;
    train::DropStrategy strategy = train::DropStrategy::combined;
    std::vector<metrics::RDPoint> points;  // quality = mean PSNR-D2
  };
  std::vector<Curve> curves;

  const std::vector<PointCloud> dataset =
      config::load_dataset(config::data_spec_from(kv));
  for (const auto& ckpt_path : ckpt_paths) {
    const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
    const codec::ProdatModel model = ckpt.make_model();
    const bool feature_only =
        ckpt.run.drop_strategy == train::DropStrategy::feature_only;
    const int c = ckpt.run.model.feature_channels;
    Curve curve;
    curve.lambda = ckpt.run.weights.lambda;
    curve.strategy = ckpt.run.drop_strategy;

    std::vector<bitstream::ProgressiveBitstream> streams;
    for (const auto& pc : dataset)
      streams.push_back(
          bitstream::compress_cloud(model, pc, feature_only, ckpt.run.beta));
    for (int j = 1; j <= c; ++j) {
      const double alpha = static_cast<double>(j) / c;
      EvalRow mean;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        const EvalRow r = evaluate_alpha(model, streams[i], dataset[i], alpha);
        mean.k_z = r.k_z;
        mean.k_xyz = r.k_xyz;
        mean.entropy_bpp += r.entropy_bpp;
        mean.file_bpp += r.file_bpp;
        mean.cd += r.cd;
        mean.psnr_d1 += r.psnr_d1;
        mean.psnr_d2 += r.psnr_d2;
        mean.n_prime += r.n_prime;
      }
      const double inv = 1.0 / static_cast<double>(dataset.size());
      csv << curve.lambda << "," << train::strategy_name(curve.strategy) << ","
          << alpha << "," << mean.k_z << "," << mean.k_xyz << ","
          << mean.entropy_bpp * inv << "," << mean.file_bpp * inv << ","
          << mean.cd * inv << "," << mean.psnr_d1 * inv << ","
          << mean.psnr_d2 * inv << "," << mean.n_prime * inv << "\n";
      metrics::RDPoint pt;
      pt.bpp = mean.file_bpp * inv;
      pt.quality = mean.psnr_d2 * inv;
      pt.label = train::strategy_name(curve.strategy);
      curve.points.push_back(pt);
    }
    curves.push_back(std::move(curve));
  }

  // BD-rate between strategy pairs at matching lambda, when both exist.
  for (const auto& a : curves) {
    if (a.strategy != train::DropStrategy::combined) continue;
    for (const auto& b : curves) {
      if (b.strategy != train::DropStrategy::feature_only ||
          b.lambda != a.lambda)
        continue;
      try {
        const double bd = metrics::bd_rate(b.points, a.points);
        csv << "# bdrate lambda=" << a.lambda
            << " combined-vs-feature_only=" << bd << "\n";
        std::cout << "BD-rate (combined vs feature_only, lambda=" << a.lambda
                  << "): " << bd << "%\n";
      } catch (const ArgumentError& e) {
        csv << "# bdrate lambda=" << a.lambda << " unavailable: " << e.what()
            << "\n";
      }
    }
  }
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prodat: progressive density-aware point-cloud codec"};
  app.require_subcommand(1);

  // PRODAT_DETERMINISTIC selects strict CI mode: per-op finiteness checks
  // stay on. Everything is single-threaded either way.
  const char* det = std::getenv("PRODAT_DETERMINISTIC");
  prodat::nn::g_check_finite = det != nullptr && det[0] != '\0' && det[0] != '0';

  std::string config_path, out_path, log_path, ckpt_path, in_path;
  std::vector<std::string> overrides, ckpt_paths;
  double alpha = 1.0;

  auto* synth = app.add_subcommand("synth-data", "generate synthetic clouds");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--config", config_path, "config file");
  synth->allow_extras();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--out", out_path, "checkpoint output path")->required();
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--log", log_path, "epoch log path");
  tr->allow_extras();

  auto* co = app.add_subcommand("compress", "compress a cloud");
  co->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  co->add_option("--input", in_path, "input cloud")->required();
  co->add_option("--output", out_path, "output bitstream")->required();

  auto* de = app.add_subcommand("decompress", "decode a bitstream");
  de->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  de->add_option("--input", in_path, "input bitstream")->required();
  de->add_option("--output", out_path, "output PLY")->required();
  de->add_option("--pr", alpha, "progressive ratio in (0,1]");

  auto* ev = app.add_subcommand("evaluate", "compress + decode + metrics");
  ev->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  ev->add_option("--input", in_path, "input cloud")->required();
  ev->add_option("--pr", alpha, "progressive ratio in (0,1]");

  auto* rd = app.add_subcommand("rd-sweep", "rate-distortion sweep");
  rd->add_option("--checkpoint", ckpt_paths, "checkpoints (one per lambda)")
      ->required();
  rd->add_option("--out", out_path, "output CSV")->required();
  rd->add_option("--config", config_path, "dataset config file");
  rd->allow_extras();

  try {
    app.parse(argc, argv);
    for (auto* sub : {synth, tr, rd})
      if (*sub)
        for (const auto& extra : sub->remaining()) overrides.push_back(extra);
    const prodat::config::KvMap kv = make_kv(config_path, overrides);
    if (*synth) return cmd_synth_data(out_path, kv);
    if (*tr) return cmd_train(out_path, log_path, kv);
    if (*co) return cmd_compress(ckpt_path, in_path, out_path);
    if (*de) return cmd_decompress(ckpt_path, in_path, alpha, out_path);
    if (*ev) return cmd_evaluate(ckpt_path, in_path, alpha);
    if (*rd) return cmd_rd_sweep(ckpt_paths, out_path, kv);
    return 3;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 3;
  } catch (const prodat::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const prodat::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const prodat::ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 4;
  } catch (const prodat::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  }
}
