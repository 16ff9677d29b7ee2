#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opcc/opcc.hpp"

namespace {

using namespace opcc;

// Flat run configuration. File form is `key = value` lines, `#` comments.
// Values here are the documented defaults (desk scale; the full-scale
// reference setting is window=1024, step=1024, d_occ=128).
struct RunConfig {
  int depth = 10;
  int window = 128;
  int step = 128;
  int ancestors = 4;
  int layers = 2;
  int d_occ = 32;
  int d_lvl = 6;
  int d_oct = 4;
  int d_head = 32;
  int d_ff = 256;
  int d_mlp = 256;
  int max_level = 16;
  int epochs = 8;
  int batch = 32;
  double lr = 1e-3;
  uint64_t seed = 1;
  double val_fraction = 0.1;
  double peak = 1.0;
  int normal_k = 16;

  std::set<std::string> keys;  // which keys were given explicitly
  bool was_set(const std::string& k) const { return keys.count(k) > 0; }
};

int64_t parse_int(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected a number, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  const char* ws = " \t\r";
  const size_t b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const size_t e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

void set_key(RunConfig& rc, const std::string& key, const std::string& val,
             const std::string& where) {
  if (key == "depth")
    rc.depth = static_cast<int>(parse_int(val, where));
  else if (key == "window")
    rc.window = static_cast<int>(parse_int(val, where));
  else if (key == "step")
    rc.step = static_cast<int>(parse_int(val, where));
  else if (key == "ancestors")
    rc.ancestors = static_cast<int>(parse_int(val, where));
  else if (key == "layers")
    rc.layers = static_cast<int>(parse_int(val, where));
  else if (key == "d_occ")
    rc.d_occ = static_cast<int>(parse_int(val, where));
  else if (key == "d_lvl")
    rc.d_lvl = static_cast<int>(parse_int(val, where));
  else if (key == "d_oct")
    rc.d_oct = static_cast<int>(parse_int(val, where));
  else if (key == "d_head")
    rc.d_head = static_cast<int>(parse_int(val, where));
  else if (key == "d_ff")
    rc.d_ff = static_cast<int>(parse_int(val, where));
  else if (key == "d_mlp")
    rc.d_mlp = static_cast<int>(parse_int(val, where));
  else if (key == "max_level")
    rc.max_level = static_cast<int>(parse_int(val, where));
  else if (key == "epochs")
    rc.epochs = static_cast<int>(parse_int(val, where));
  else if (key == "batch")
    rc.batch = static_cast<int>(parse_int(val, where));
  else if (key == "lr")
    rc.lr = parse_real(val, where);
  else if (key == "seed")
    rc.seed = static_cast<uint64_t>(parse_int(val, where));
  else if (key == "val_fraction")
    rc.val_fraction = parse_real(val, where);
  else if (key == "peak")
    rc.peak = parse_real(val, where);
  else if (key == "normal_k")
    rc.normal_k = static_cast<int>(parse_int(val, where));
  else
    throw ParseError(where + ": unknown key '" + key + "'");
  rc.keys.insert(key);
}

void load_config(const std::string& path, RunConfig& rc) {
  std::ifstream f(path);
  if (!f) throw ParseError(path + ": cannot open config file");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError(where + ": expected key = value");
    set_key(rc, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where);
  }
}

ModelConfig to_model_cfg(const RunConfig& rc) {
  ModelConfig c;
  c.d_occ = rc.d_occ;
  c.d_lvl = rc.d_lvl;
  c.d_oct = rc.d_oct;
  c.n_ancestors = rc.ancestors;
  c.max_level = rc.max_level;
  c.d_head = rc.d_head;
  c.d_ff = rc.d_ff;
  c.d_mlp = rc.d_mlp;
  c.n_layers = rc.layers;
  c.window = rc.window;
  c.step = rc.step;
  c.validate();
  return c;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(path + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(path + ": write failed");
}

std::vector<std::string> corpus_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ParseError(dir + ": not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".ply" || ext == ".xyz" || ext == ".txt" || ext == ".bin")
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ParseError(dir + ": no point-cloud files found");
  return out;
}

QuantizedCloud quantize_input(const PointCloud& pc, int depth, double qs,
                              const std::vector<double>& offset) {
  if (!offset.empty() && offset.size() != 3)
    throw ParseError("--offset needs exactly three comma-separated values");
  if (!offset.empty() && qs <= 0.0)
    throw ParseError("--offset requires --qs");
  if (qs > 0.0 && !offset.empty())
    return quantize(pc, depth, qs, Vec3{offset[0], offset[1], offset[2]});
  if (qs > 0.0) return quantize(pc, depth, qs);
  return quantize(pc, depth);
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

std::string psnr_str(double v) {
  return std::isinf(v) ? std::string("inf") : fmt("%.4f", v);
}

RDPoint make_rd(const RunConfig& rc, const PointCloud& ref,
                const PointCloud& rec, int depth, double bpp) {
  RDPoint r;
  r.depth = depth;
  r.bpp = bpp;
  r.d1_psnr = d1_psnr(ref, rec, rc.peak);
  const D2Result d2 = d2_psnr(ref, rec, rc.peak, rc.normal_k);
  r.d2_psnr = d2.psnr;
  r.d2_degenerate = d2.degenerate;
  r.chamfer = chamfer(ref, rec);
  return r;
}

void write_rd_csv(std::ostream& os, const std::vector<RDPoint>& rows) {
  os << "depth,bpp,d1_psnr,d2_psnr,chamfer,d2_degenerate\n";
  for (const auto& r : rows)
    os << r.depth << ',' << fmt("%.6f", r.bpp) << ',' << psnr_str(r.d1_psnr)
       << ',' << psnr_str(r.d2_psnr) << ',' << fmt("%.9g", r.chamfer) << ','
       << r.d2_degenerate << '\n';
}

// writes to the named file, or stdout when the name is empty
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(path + ": cannot open for writing");
  f << text;
  if (!f) throw Error(path + ": write failed");
}

std::vector<double> embed_row(const EvalModel& m, const FeatureRow& r) {
  std::vector<float> buf(static_cast<size_t>(m.cfg.d_model()));
  embed_row_f(m, r, buf.data());
  return std::vector<double>(buf.begin(), buf.end());
}

double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

struct CommonVals {
  std::string config;
  RunConfig v;  // CLI-bound values; copied into the run config when set
};

// Adds shared tuning flags to a subcommand. Only flags actually given on the
// command line override the config file, which overrides the defaults.
void add_tuning(CLI::App* s, CommonVals& c, bool model_dims) {
  s->add_option("--config", c.config, "key = value configuration file");
  s->add_option("--depth", c.v.depth, "octree depth L");
  s->add_option("--window", c.v.window, "context window length N");
  s->add_option("--step", c.v.step, "targets per propagation N0");
  s->add_option("--seed", c.v.seed, "deterministic seed");
  if (model_dims) {
    s->add_option("--ancestors", c.v.ancestors, "context slots per row K");
    s->add_option("--layers", c.v.layers, "attention layers");
    s->add_option("--d-occ", c.v.d_occ, "occupancy embedding width");
    s->add_option("--d-lvl", c.v.d_lvl, "level embedding width");
    s->add_option("--d-oct", c.v.d_oct, "octant embedding width");
    s->add_option("--d-head", c.v.d_head, "per-head width");
    s->add_option("--d-ff", c.v.d_ff, "feed-forward width");
    s->add_option("--d-mlp", c.v.d_mlp, "output head width");
    s->add_option("--max-level", c.v.max_level, "deepest supported level");
  }
}

RunConfig resolve(CLI::App* s, const CommonVals& c) {
  RunConfig rc;
  if (!c.config.empty()) load_config(c.config, rc);
  static const std::pair<const char*, const char*> kMap[] = {
      {"--depth", "depth"},         {"--window", "window"},
      {"--step", "step"},           {"--seed", "seed"},
      {"--ancestors", "ancestors"}, {"--layers", "layers"},
      {"--d-occ", "d_occ"},         {"--d-lvl", "d_lvl"},
      {"--d-oct", "d_oct"},         {"--d-head", "d_head"},
      {"--d-ff", "d_ff"},           {"--d-mlp", "d_mlp"},
      {"--max-level", "max_level"}, {"--epochs", "epochs"},
      {"--batch", "batch"},         {"--lr", "lr"},
      {"--val-fraction", "val_fraction"},
      {"--peak", "peak"},           {"--normal-k", "normal_k"},
  };
  for (const auto& [flag, key] : kMap) {
    auto* o = s->get_option_no_throw(flag);
    if (!o || o->count() == 0) continue;
    std::string repr = o->results().back();
    set_key(rc, key, repr, std::string("flag ") + flag);
  }
  return rc;
}

int run_encode(const RunConfig& rc, const std::string& in,
               const std::string& out, const std::string& model_path,
               bool baseline, double qs, const std::vector<double>& offset) {
  if (baseline != model_path.empty())
    throw ParseError("encode: give exactly one of --model or --baseline");
  const PointCloud pc = load_point_cloud(in);
  const QuantizedCloud q = quantize_input(pc, rc.depth, qs, offset);
  const auto t0 = std::chrono::steady_clock::now();
  EncodedStream es;
  if (baseline) {
    es = encode_quantized_baseline(q);
  } else {
    const EvalModel m = load_model(model_path);
    es = encode_quantized(q, m, rc.was_set("window") ? rc.window : 0,
                          rc.was_set("step") ? rc.step : 0);
  }
  const double ms = ms_since(t0);
  write_bytes(out, es.bytes);
  std::printf("nodes=%llu payload_bytes=%llu bpp=%.6f time_ms=%.1f\n",
              static_cast<unsigned long long>(es.stats.node_count),
              static_cast<unsigned long long>(es.stats.payload_bytes),
              es.stats.bpp(), ms);
  return 0;
}

int run_decode(const std::string& in, const std::string& out,
               const std::string& model_path) {
  const auto bytes = read_bytes(in);
  const StreamHeader h = peek_header(bytes, in);
  QuantizedCloud q;
  if (h.baseline) {
    q = decode_stream(bytes, nullptr, in);
  } else {
    if (model_path.empty())
      throw ModelMismatchError(in + ": attention stream, --model required");
    const EvalModel m = load_model(model_path);
    q = decode_stream(bytes, &m, in);
  }
  save_point_cloud(out, dequantize(q));
  std::printf("points=%zu depth=%d -> %s\n", q.pts.size(), q.levels,
              out.c_str());
  return 0;
}

int run_train(const RunConfig& rc, const std::string& corpus, bool use_synth,
              int scenes, int points, const std::string& out, bool verbose) {
  if (use_synth != corpus.empty())
    throw ParseError("train: give exactly one of --corpus or --synth");
  std::vector<PointCloud> clouds;
  if (use_synth) {
    clouds = synth_corpus(scenes, static_cast<size_t>(points), rc.seed);
  } else {
    for (const auto& f : corpus_files(corpus))
      clouds.push_back(load_point_cloud(f));
  }
  std::vector<NodeSequence> ns;
  ns.reserve(clouds.size());
  for (const auto& c : clouds) ns.push_back(build_octree(quantize(c, rc.depth)));

  ModelParams p = init_params(to_model_cfg(rc), rc.seed);
  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.batch = rc.batch;
  opt.lr = rc.lr;
  opt.seed = rc.seed;
  opt.val_fraction = rc.val_fraction;
  opt.verbose = verbose;
  const auto stats = train(p, ns, opt);
  save_model(out, p);
  const auto& last = stats.back();
  std::printf("epochs=%zu train_bits_per_node=%.4f val_bits_per_node=%.4f -> %s\n",
              stats.size(), last.train_bits_per_node, last.val_bits_per_node,
              out.c_str());
  return 0;
}

int run_eval(const RunConfig& rc, const std::string& ref_path,
             const std::string& bitstream, const std::string& rec_path,
             const std::vector<int>& depths, const std::string& model_path,
             bool baseline, const std::string& out_csv) {
  const PointCloud ref = load_point_cloud(ref_path);
  std::vector<RDPoint> rows;

  if (!bitstream.empty()) {
    const auto bytes = read_bytes(bitstream);
    const StreamHeader h = peek_header(bytes, bitstream);
    QuantizedCloud q;
    if (h.baseline) {
      q = decode_stream(bytes, nullptr, bitstream);
    } else {
      if (model_path.empty())
        throw ModelMismatchError(bitstream +
                                 ": attention stream, --model required");
      const EvalModel m = load_model(model_path);
      q = decode_stream(bytes, &m, bitstream);
    }
    const double bpp = 8.0 * static_cast<double>(h.payload_size) /
                       static_cast<double>(h.source_count);
    rows.push_back(make_rd(rc, ref, dequantize(q), h.levels, bpp));
  } else if (!rec_path.empty()) {
    rows.push_back(make_rd(rc, ref, load_point_cloud(rec_path), 0, 0.0));
  } else {
    if (depths.empty())
      throw ParseError("eval: need --bitstream, --rec, or --depths");
    if (baseline != model_path.empty())
      throw ParseError("eval: give exactly one of --model or --baseline");
    EvalModel m;
    if (!baseline) m = load_model(model_path);
    for (int d : depths) {
      const QuantizedCloud q = quantize(ref, d);
      const EncodedStream es =
          baseline ? encode_quantized_baseline(q)
                   : encode_quantized(q, m, rc.was_set("window") ? rc.window : 0,
                                      rc.was_set("step") ? rc.step : 0);
      const QuantizedCloud dq =
          decode_stream(es.bytes, baseline ? nullptr : &m, "<memory>");
      rows.push_back(make_rd(rc, ref, dequantize(dq), d, es.stats.bpp()));
    }
  }

  std::ostringstream os;
  write_rd_csv(os, rows);
  emit(out_csv, os.str());
  return 0;
}

int run_ablate(const RunConfig& rc, const std::string& input,
               const std::string& corpus, const std::string& model_path,
               std::vector<int> windows, std::vector<int> steps,
               const std::string& out_csv, bool no_timing) {
  std::vector<PointCloud> clouds;
  if (!input.empty()) clouds.push_back(load_point_cloud(input));
  if (!corpus.empty())
    for (const auto& f : corpus_files(corpus))
      clouds.push_back(load_point_cloud(f));
  if (clouds.empty()) throw ParseError("ablate: need --input or --corpus");
  const EvalModel m = load_model(model_path);
  std::vector<QuantizedCloud> qs;
  qs.reserve(clouds.size());
  for (const auto& c : clouds) qs.push_back(quantize(c, rc.depth));

  if (windows.empty()) windows = {8, 16, 64};
  if (steps.empty()) steps = {1, 4, 16, 64};
  std::sort(windows.begin(), windows.end());
  const int wmax = windows.back();

  struct Row {
    const char* mode;
    int window, step;
    double bpp, ms1000;
  };
  std::vector<Row> rows;
  auto sweep = [&](const char* mode, int w, int s) {
    uint64_t bits = 0, src = 0, nodes = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& q : qs) {
      const EncodedStream es = encode_quantized(q, m, w, s);
      bits += es.stats.payload_bytes * 8;
      src += es.stats.source_count;
      nodes += es.stats.node_count;
    }
    const double ms = ms_since(t0);
    rows.push_back({mode, w, s, static_cast<double>(bits) / static_cast<double>(src),
                    ms / static_cast<double>(nodes) * 1000.0});
  };
  for (int w : windows) sweep("window", w, w);
  for (int s : steps) {
    if (s > wmax)
      throw ParseError("ablate: step " + std::to_string(s) +
                       " exceeds the largest window");
    sweep("step", wmax, s);
  }

  std::ostringstream os;
  os << (no_timing ? "mode,window,step,bpp"
                   : "mode,window,step,bpp,ms_per_1000_nodes")
     << '\n';
  for (const auto& r : rows) {
    os << r.mode << ',' << r.window << ',' << r.step << ','
       << fmt("%.6f", r.bpp);
    if (!no_timing) os << ',' << fmt("%.3f", r.ms1000);
    os << '\n';
  }
  emit(out_csv, os.str());
  return 0;
}

int run_export(const RunConfig& rc, const std::string& model_path,
               const std::string& input, const std::string& out_csv,
               int components) {
  if (components < 1 || components > 8)
    throw ParseError("export-embeddings: components must be in 1..8");
  const EvalModel m = load_model(model_path);
  const PointCloud pc = load_point_cloud(input);
  const QuantizedCloud q = quantize(pc, rc.depth);
  if (q.levels > m.cfg.max_level)
    throw ModelMismatchError("export-embeddings: depth exceeds the model");
  const NodeSequence ns = build_octree(q);
  const std::vector<Vec3> centers = node_cell_centers(ns, q.levels);

  std::vector<std::vector<double>> feats;
  feats.reserve(ns.size());
  for (size_t i = 0; i < ns.size(); ++i)
    feats.push_back(embed_row(
        m, assemble_row(ns, static_cast<int64_t>(i), m.cfg.n_ancestors, false)));
  const PcaResult pca = pca_project(feats, components);

  std::ostringstream os;
  os << "cx,cy,cz";
  for (int c = 1; c <= components; ++c) os << ",pc" << c;
  os << '\n';
  for (size_t i = 0; i < ns.size(); ++i) {
    Vec3 w;
    for (int d = 0; d < 3; ++d) w[d] = q.offset[d] + centers[i][d] * q.qs;
    os << fmt("%.9g", w[0]) << ',' << fmt("%.9g", w[1]) << ','
       << fmt("%.9g", w[2]);
    for (int c = 0; c < components; ++c) os << ',' << fmt("%.9g", pca.coords[i][c]);
    os << '\n';
  }
  emit(out_csv, os.str());
  return 0;
}

int run_synth(const RunConfig& rc, const std::string& kind, int points,
              const std::string& output, const std::string& corpus_dir,
              int scenes) {
  if (points < 1) throw ParseError("synth: points must be positive");
  if (!corpus_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(corpus_dir);
    const auto clouds =
        synth_corpus(scenes, static_cast<size_t>(points), rc.seed);
    static const char* kKinds[] = {"plane", "sphere", "rings"};
    for (size_t i = 0; i < clouds.size(); ++i) {
      const std::string f = corpus_dir + "/" + kKinds[i % 3] + "_" +
                            std::to_string(i / 3) + ".ply";
      save_point_cloud(f, clouds[i]);
    }
    std::printf("wrote %zu scenes to %s\n", clouds.size(), corpus_dir.c_str());
    return 0;
  }
  if (output.empty()) throw ParseError("synth: need --output or --corpus-dir");
  PointCloud pc;
  const size_t n = static_cast<size_t>(points);
  if (kind == "plane")
    pc = synth_plane(n, rc.seed);
  else if (kind == "sphere")
    pc = synth_sphere(n, rc.seed);
  else if (kind == "rings")
    pc = synth_rings(n, rc.seed);
  else if (kind == "uniform")
    pc = synth_uniform(n, rc.seed);
  else
    throw ParseError("synth: unknown kind '" + kind + "'");
  save_point_cloud(output, pc);
  std::printf("wrote %zu points to %s\n", pc.size(), output.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lossless octree point-cloud codec with an attention entropy model"};
  app.require_subcommand(1);

  CommonVals cv;

  auto* enc = app.add_subcommand("encode", "compress a point cloud");
  std::string enc_in, enc_out, enc_model;
  bool enc_baseline = false;
  double enc_qs = 0.0;
  std::vector<double> enc_offset;
  enc->add_option("--input", enc_in, "point cloud (.ply/.xyz/.txt/.bin)")
      ->required();
  enc->add_option("--output", enc_out, "bitstream file")->required();
  enc->add_option("--model", enc_model, "model file");
  enc->add_flag("--baseline", enc_baseline, "adaptive order-0 coder");
  enc->add_option("--qs", enc_qs, "quantization step override");
  enc->add_option("--offset", enc_offset, "quantization offset x,y,z")
      ->delimiter(',');
  add_tuning(enc, cv, false);

  auto* dec = app.add_subcommand("decode", "decompress a bitstream");
  std::string dec_in, dec_out, dec_model;
  dec->add_option("--input", dec_in, "bitstream file")->required();
  dec->add_option("--output", dec_out, "point cloud output (.ply/.xyz)")
      ->required();
  dec->add_option("--model", dec_model, "model file");

  auto* trn = app.add_subcommand("train", "fit the context model");
  std::string trn_corpus, trn_out;
  bool trn_synth = false, trn_verbose = false;
  int trn_scenes = 6, trn_points = 4096;
  trn->add_option("--corpus", trn_corpus, "directory of point-cloud files");
  trn->add_flag("--synth", trn_synth, "use a generated synthetic corpus");
  trn->add_option("--scenes", trn_scenes, "synthetic scenes per shape kind");
  trn->add_option("--points", trn_points, "points per synthetic scene");
  trn->add_option("--output", trn_out, "model file to write")->required();
  trn->add_flag("--verbose", trn_verbose, "epoch progress on stderr");
  trn->add_option("--epochs", cv.v.epochs, "training epochs");
  trn->add_option("--batch", cv.v.batch, "windows per optimizer step");
  trn->add_option("--lr", cv.v.lr, "Adam learning rate");
  trn->add_option("--val-fraction", cv.v.val_fraction,
                  "fraction of scenes held out");
  add_tuning(trn, cv, true);

  auto* evl = app.add_subcommand("eval", "rate-distortion metrics as CSV");
  std::string evl_ref, evl_bits, evl_rec, evl_model, evl_out;
  bool evl_baseline = false;
  std::vector<int> evl_depths;
  evl->add_option("--input", evl_ref, "reference point cloud")->required();
  evl->add_option("--bitstream", evl_bits, "decode this bitstream and score it");
  evl->add_option("--rec", evl_rec, "score an already-decoded cloud");
  evl->add_option("--depths", evl_depths, "encode/decode at these depths")
      ->delimiter(',');
  evl->add_option("--model", evl_model, "model file");
  evl->add_flag("--baseline", evl_baseline, "adaptive order-0 coder");
  evl->add_option("--output", evl_out, "CSV file (default stdout)");
  evl->add_option("--peak", cv.v.peak, "PSNR peak value r");
  evl->add_option("--normal-k", cv.v.normal_k, "neighbors for normals");
  add_tuning(evl, cv, false);

  auto* abl = app.add_subcommand("ablate", "window/step sweeps as CSV");
  std::string abl_in, abl_corpus, abl_model, abl_out;
  std::vector<int> abl_windows, abl_steps;
  bool abl_notiming = false;
  abl->add_option("--input", abl_in, "held-out point cloud");
  abl->add_option("--corpus", abl_corpus, "directory of point-cloud files");
  abl->add_option("--model", abl_model, "model file")->required();
  abl->add_option("--windows", abl_windows, "window sizes (N=N0)")
      ->delimiter(',');
  abl->add_option("--steps", abl_steps, "step sizes at the largest window")
      ->delimiter(',');
  abl->add_option("--output", abl_out, "CSV file (default stdout)");
  abl->add_flag("--no-timing", abl_notiming,
                "omit the timing column for comparable outputs");
  add_tuning(abl, cv, false);

  auto* exp = app.add_subcommand("export-embeddings",
                                 "per-node features as PCA-reduced CSV");
  std::string exp_model, exp_in, exp_out;
  int exp_components = 3;
  exp->add_option("--model", exp_model, "model file")->required();
  exp->add_option("--input", exp_in, "point cloud")->required();
  exp->add_option("--output", exp_out, "CSV file (default stdout)");
  exp->add_option("--components", exp_components, "principal components");
  add_tuning(exp, cv, false);

  auto* syn = app.add_subcommand("synth", "generate synthetic point clouds");
  std::string syn_kind = "plane", syn_out, syn_dir;
  int syn_points = 4096, syn_scenes = 6;
  syn->add_option("--kind", syn_kind, "plane|sphere|rings|uniform");
  syn->add_option("--points", syn_points, "points per cloud");
  syn->add_option("--output", syn_out, "single cloud file");
  syn->add_option("--corpus-dir", syn_dir, "write a whole corpus here");
  syn->add_option("--scenes", syn_scenes, "scenes per shape kind");
  add_tuning(syn, cv, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    const RunConfig rc = resolve(active, cv);
    if (active == enc)
      return run_encode(rc, enc_in, enc_out, enc_model, enc_baseline, enc_qs,
                        enc_offset);
    if (active == dec) return run_decode(dec_in, dec_out, dec_model);
    if (active == trn)
      return run_train(rc, trn_corpus, trn_synth, trn_scenes, trn_points,
                       trn_out, trn_verbose);
    if (active == evl)
      return run_eval(rc, evl_ref, evl_bits, evl_rec, evl_depths, evl_model,
                      evl_baseline, evl_out);
    if (active == abl)
      return run_ablate(rc, abl_in, abl_corpus, abl_model, abl_windows,
                        abl_steps, abl_out, abl_notiming);
    if (active == exp)
      return run_export(rc, exp_model, exp_in, exp_out, exp_components);
    if (active == syn)
      return run_synth(rc, syn_kind, syn_points, syn_out, syn_dir, syn_scenes);
    throw Error("unreachable subcommand");
  } catch (const ModelMismatchError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DecodeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
