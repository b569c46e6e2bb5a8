// misground: one binary for the decoder side (build-neighbors, serve, step)
// and the benchmark side (synth, gen, render, stub-respond, eval).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "misground/evaluator.hpp"
#include "misground/nifti.hpp"
#include "misground/overlay.hpp"
#include "misground/qa_generator.hpp"
#include "misground/synth.hpp"
#include "semsam/bytes.hpp"
#include "semsam/decoder.hpp"
#include "semsam/embedding_io.hpp"
#include "semsam/neighbor_table.hpp"
#include "semsam/protocol.hpp"
#include "semsam/vocab_partition.hpp"

namespace fs = std::filesystem;
using namespace misground;

namespace {

constexpr const char* kVersion = "0.1.0";

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("misground");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("SEMSAM_LOG")) {
    auto lvl = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept a real "off"
    if (lvl != spdlog::level::off || std::string_view(env) == "off")
      spdlog::set_level(lvl);
    else
      spdlog::warn("SEMSAM_LOG={} is not a log level, keeping info", env);
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

/// Decoder over a saved table; the partition is sized by --v-emb, defaulting
/// to the tokenizer's own vocabulary size.
semsam::Decoder load_decoder(const fs::path& table, const fs::path& vocab, std::optional<std::uint64_t> v_emb) {
  auto meta = semsam::load_tokenizer_meta(vocab);
  auto part = semsam::build_partition(meta, v_emb.value_or(meta.v_tok));
  return semsam::Decoder(semsam::load_table(table), std::move(part));
}

std::pair<std::string, std::uint16_t> split_host_port(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError(fmt::format("--listen expects host:port, got {}", addr));
  std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw ValidationError(fmt::format("bad port in {}", addr));
  return {host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port)};
}

// ---------------------------------------------------------------------------
// render: one frame, optionally with a prompt around one structure

struct RenderArgs {
  fs::path volume, labels, out;
  std::string direction = "axial", mode = "standard_view", prompt = "bbox", letter;
  std::optional<std::int64_t> frame;
  std::int32_t structure = 0;
  int color = 0;
  bool white = false, ras_most_origin = true;
  double level = 40, width = 400;
  bool percentile = false;
};

OverlaySpec structure_overlay(const RenderFrame& label_frame, std::int32_t label, PromptKind kind, int color,
                              std::optional<char> letter) {
  const auto& g = label_frame.image;
  OverlaySpec o;
  o.kind = kind;
  o.color_index = color;
  o.letter = letter;
  o.mask.assign(g.pixels.size(), 0);
  PixelBox box{g.width, g.height, -1, -1};
  double sx = 0, sy = 0, n = 0;
  for (std::int64_t y = 0; y < g.height; ++y)
    for (std::int64_t x = 0; x < g.width; ++x) {
      if (g.at(x, y) != label) continue;
      o.mask[static_cast<std::size_t>(y * g.width + x)] = 1;
      box = {std::min(box.x0, x), std::min(box.y0, y), std::max(box.x1, x), std::max(box.y1, y)};
      sx += x;
      sy += y;
      n += 1;
    }
  if (n == 0) throw ValidationError(fmt::format("label {} does not appear on this frame", label));
  o.box = box;
  // nearest labelled pixel to the centroid, so the point sits on the structure
  double cx = sx / n, cy = sy / n, best = 1e300;
  for (std::int64_t y = box.y0; y <= box.y1; ++y)
    for (std::int64_t x = box.x0; x <= box.x1; ++x) {
      if (!o.mask[static_cast<std::size_t>(y * g.width + x)]) continue;
      double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d < best) {
        best = d;
        o.point = {x, y};
      }
    }
  return o;
}

void run_render(const RenderArgs& a) {
  auto dir = parse_slice_direction(a.direction);
  auto mode = parse_orientation_mode(a.mode);
  if (!dir) throw ValidationError(fmt::format("unknown slice direction {}", a.direction));
  if (!mode) throw ValidationError(fmt::format("unknown orientation mode {}", a.mode));
  auto kind = parse_prompt_kind(a.prompt);
  if (!kind) throw ValidationError(fmt::format("unknown prompt kind {}", a.prompt));
  std::optional<char> letter;
  if (!a.letter.empty()) {
    if (a.letter.size() != 1 || a.letter[0] < 'A' || a.letter[0] > 'F')
      throw ValidationError("--letter must be one of A-F");
    letter = a.letter[0];
  }
  if (a.structure != 0 && a.labels.empty()) throw ValidationError("--structure needs --labels");
  WindowSpec w = a.percentile ? WindowSpec::percentile() : WindowSpec::hu(a.level, a.width);
  w.validate();

  auto vol = reorient_to_ras(parse_nifti(a.volume), a.ras_most_origin);
  auto frames = extract_frames(vol, *mode, *dir, w);
  auto n_frames = static_cast<std::int64_t>(frames.size());

  std::vector<RenderFrame> label_frames;
  if (a.structure != 0) {
    auto lm = reorient_to_ras(parse_label_nifti(a.labels), a.ras_most_origin);
    if (lm.geom.dims != vol.geom.dims) throw ValidationError("label map and volume grids differ");
    // labels travel through the byte path, so ids must fit in a byte here
    if (a.structure < 0 || a.structure > 255) throw ValidationError("--structure must be in 1..255");
    ByteVolume bytes{lm.geom, {}};
    bytes.values.reserve(lm.labels.size());
    for (auto v : lm.labels) bytes.values.push_back(v == a.structure ? static_cast<std::uint8_t>(a.structure) : 0);
    label_frames = extract_frames(bytes, *mode, *dir);
  }

  // default: the frame where the marked structure is largest, else the middle one
  std::int64_t f = n_frames / 2;
  if (a.frame) {
    f = *a.frame;
  } else if (!label_frames.empty()) {
    std::int64_t best = 0;
    for (std::int64_t i = 0; i < n_frames; ++i) {
      const auto& px = label_frames[static_cast<std::size_t>(i)].image.pixels;
      auto area = std::count(px.begin(), px.end(), static_cast<std::uint8_t>(a.structure));
      if (area > best) best = area, f = i;
    }
  }
  if (f < 0 || f >= n_frames) throw ValidationError(fmt::format("frame {} outside [0, {})", f, n_frames));

  std::vector<OverlaySpec> overlays;
  if (!label_frames.empty())
    overlays.push_back(structure_overlay(label_frames[static_cast<std::size_t>(f)], a.structure, *kind, a.color, letter));
  std::vector<std::string> notes;
  auto img = render_frame(frames[static_cast<std::size_t>(f)].image, overlays,
                          a.white ? Background::white : Background::image, {}, &notes);
  for (const auto& n : notes) spdlog::warn("{}", n);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_png(img, a.out);
  spdlog::info("frame {} of {} ({} x {}) -> {}", f, frames.size(), img.width, img.height, a.out.string());
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Semantic-neighbor decoding server and medical-image grounding benchmark tools"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // build-neighbors
  fs::path bn_emb, bn_vocab, bn_out;
  semsam::NeighborBuildConfig bn_cfg;
  auto* bn = app.add_subcommand("build-neighbors", "Precompute top-K cosine neighbors over content tokens");
  bn->add_option("--embeddings", bn_emb, "SEMB embedding matrix")->required()->check(CLI::ExistingFile);
  bn->add_option("--vocab", bn_vocab, "tokenizer metadata JSON")->required()->check(CLI::ExistingFile);
  bn->add_option("--k", bn_cfg.k, "neighbors per row, self included")->required()->check(CLI::PositiveNumber);
  bn->add_option("--epsilon", bn_cfg.epsilon, "row-normalization damping")->check(CLI::NonNegativeNumber);
  bn->add_option("--block-size", bn_cfg.block_size)->check(CLI::PositiveNumber);
  bn->add_option("--workers", bn_cfg.workers)->check(CLI::PositiveNumber);
  bn->add_option("--out", bn_out, "SEMN table")->required();

  // serve / step
  fs::path dec_table, dec_vocab, step_request;
  std::optional<std::uint64_t> dec_v_emb;
  std::string listen;
  bool use_stdio = false;
  auto* serve = app.add_subcommand("serve", "Answer JSON-lines decode requests");
  serve->add_option("--table", dec_table)->required()->check(CLI::ExistingFile);
  serve->add_option("--vocab", dec_vocab)->required()->check(CLI::ExistingFile);
  serve->add_option("--v-emb", dec_v_emb, "embedding rows (default: tokenizer vocabulary size)");
  auto* stdio_flag = serve->add_flag("--stdio", use_stdio, "read stdin, write stdout (default)");
  serve->add_option("--listen", listen, "host:port for TCP")->excludes(stdio_flag);

  auto* step = app.add_subcommand("step", "Run one decode request from a JSON file and print the outcome");
  step->add_option("--table", dec_table)->required()->check(CLI::ExistingFile);
  step->add_option("--vocab", dec_vocab)->required()->check(CLI::ExistingFile);
  step->add_option("--v-emb", dec_v_emb);
  step->add_option("--request", step_request)->required()->check(CLI::ExistingFile);

  // synth
  fs::path synth_out;
  std::optional<std::uint64_t> synth_seed;
  SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "Write a synthetic CT-like volume, label map and names");
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--dims", synth_cfg.dims)->delimiter(',');
  synth->add_option("--spacing", synth_cfg.spacing)->delimiter(',');
  synth->add_option("--signs", synth_cfg.axis_signs, "index direction per RAS axis, +1 or -1")->delimiter(',');
  synth->add_option("--structures", synth_cfg.structures)->check(CLI::Range(1, 64));
  synth->add_option("--out", synth_out, "directory for volume.nii, labels.nii, names.json")->required();

  // gen
  fs::path gen_volume, gen_labels, gen_names, gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_scan_id;
  auto* gen = app.add_subcommand("gen", "Generate questions and rendered media for one scan");
  gen->add_option("--volume", gen_volume)->required()->check(CLI::ExistingFile);
  gen->add_option("--labels", gen_labels)->required()->check(CLI::ExistingFile);
  gen->add_option("--names", gen_names, "JSON object of label id -> structure name")->required()->check(CLI::ExistingFile);
  gen->add_option("--config", gen_config, "TOML generator config (defaults when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--scan-id", gen_scan_id, "overrides the config's scan_id");
  gen->add_option("--out", gen_out, "output directory")->required();

  // render
  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render one frame to PNG, optionally with a prompt");
  render->add_option("--volume", ra.volume)->required()->check(CLI::ExistingFile);
  render->add_option("--direction", ra.direction)->check(CLI::IsMember({"axial", "coronal", "sagittal"}));
  render->add_option("--mode", ra.mode)->check(CLI::IsMember({"standard_view", "ras_storage"}));
  render->add_option("--frame", ra.frame, "frame index (default: middle)");
  render->add_option("--labels", ra.labels)->check(CLI::ExistingFile);
  render->add_option("--structure", ra.structure, "label id to mark");
  render->add_option("--prompt", ra.prompt)->check(CLI::IsMember({"point", "bbox", "mask"}));
  render->add_option("--color", ra.color, "palette index")->check(CLI::Range(0, 5));
  render->add_option("--letter", ra.letter, "A-F");
  render->add_flag("--white", ra.white, "blank background");
  render->add_option("--level", ra.level);
  render->add_option("--width", ra.width);
  render->add_flag("--percentile", ra.percentile, "0.5-99.5 percentile window instead of HU");
  render->add_flag("!--lps-origin", ra.ras_most_origin, "keep index order growing toward R/A/S");
  render->add_option("--out", ra.out)->required();

  // stub-respond
  fs::path sr_questions, sr_out;
  double sr_error = 0.0;
  std::optional<std::uint64_t> sr_seed;
  auto* stub = app.add_subcommand("stub-respond", "Answer questions with a controlled error rate");
  stub->add_option("--questions", sr_questions)->required()->check(CLI::ExistingFile);
  stub->add_option("--error-rate", sr_error)->required()->check(CLI::Range(0.0, 1.0));
  stub->add_option("--seed", sr_seed)->required();
  stub->add_option("--out", sr_out)->required();

  // eval
  fs::path ev_questions, ev_responses, ev_out, ev_synonyms;
  std::string ev_mode = "synonym", ev_prior = "uniform";
  double ev_mass = 0.95;
  auto* eval = app.add_subcommand("eval", "Score responses and report accuracy with credible intervals");
  eval->add_option("--questions", ev_questions)->required()->check(CLI::ExistingFile);
  eval->add_option("--responses", ev_responses)->required()->check(CLI::ExistingFile);
  eval->add_option("--match-mode", ev_mode)->check(CLI::IsMember({"exact", "synonym"}));
  eval->add_option("--synonyms", ev_synonyms, "replacement synonym table JSON")->check(CLI::ExistingFile);
  eval->add_option("--prior", ev_prior)->check(CLI::IsMember({"uniform", "jeffreys"}));
  eval->add_option("--mass", ev_mass, "credible mass")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--out", ev_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*bn) {
      auto e = semsam::load_embeddings(bn_emb);
      auto meta = semsam::load_tokenizer_meta(bn_vocab);
      auto part = semsam::build_partition(meta, e.rows);
      spdlog::info("{} rows x {} dims, {} content tokens, k={}", e.rows, e.dim, part.content_ids().size(), bn_cfg.k);
      auto table = semsam::build_neighbor_table(e, part, bn_cfg);
      if (bn_out.has_parent_path()) fs::create_directories(bn_out.parent_path());
      semsam::save_table(table, bn_out);
    } else if (*serve) {
      auto decoder = load_decoder(dec_table, dec_vocab, dec_v_emb);
      if (listen.empty()) {
        spdlog::info("serving on stdio, v_emb={}", decoder.v_emb());
        std::ios::sync_with_stdio(false);
        semsam::serve_stream(std::cin, std::cout, decoder);
      } else {
        auto [host, port] = split_host_port(listen);
        semsam::SocketServer server(decoder, host, port);
        spdlog::info("listening on {}:{}, v_emb={}", host, server.port(), decoder.v_emb());
        server.run();
      }
    } else if (*step) {
      auto decoder = load_decoder(dec_table, dec_vocab, dec_v_emb);
      nlohmann::json req;
      try {
        req = nlohmann::json::parse(semsam::bytes::read_text_file(step_request));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", step_request.string(), e.what()));
      }
      auto line = semsam::handle_request_line(req.dump(), decoder);
      std::cout << line << '\n';
      if (nlohmann::json::parse(line).contains("error")) return 1;
    } else if (*synth) {
      synth_cfg.seed = *synth_seed;
      auto scan = make_synthetic_scan(synth_cfg);
      fs::create_directories(synth_out);
      write_nifti(scan.volume, synth_out / "volume.nii");
      write_label_nifti(scan.labels, synth_out / "labels.nii");
      nlohmann::json names = nlohmann::json::object();
      for (const auto& [id, name] : scan.labels.names) names[std::to_string(id)] = name;
      write_json(names, synth_out / "names.json");
      spdlog::info("{} structures -> {}", scan.labels.names.size(), synth_out.string());
    } else if (*gen) {
      GenConfig cfg = gen_config.empty() ? GenConfig{} : load_gen_config(gen_config);
      cfg.seed = *gen_seed;
      if (!gen_scan_id.empty()) cfg.scan_id = gen_scan_id;
      cfg.validate();
      auto volume = parse_nifti(gen_volume);
      auto labels = parse_label_nifti(gen_labels);
      labels.names = load_label_names(gen_names);
      DirectorySink sink(gen_out);
      auto result = generate(volume, labels, cfg, sink);
      write_generation(result, gen_out);
      for (const auto& w : result.coverage.value("warnings", nlohmann::json::array())) spdlog::warn("{}", w.dump());
      spdlog::info("{} questions -> {}", result.items.size(), gen_out.string());
    } else if (*render) {
      run_render(ra);
    } else if (*stub) {
      auto items = read_items(sr_questions);
      auto responses = stub_respond(items, sr_error, *sr_seed);
      if (sr_out.has_parent_path()) fs::create_directories(sr_out.parent_path());
      write_responses(responses, sr_out);
      spdlog::info("{} responses -> {}", responses.size(), sr_out.string());
    } else if (*eval) {
      EvalOptions opts;
      opts.scoring.mode = *parse_match_mode(ev_mode);
      if (!ev_synonyms.empty()) opts.scoring.synonyms = SynonymTable::parse(semsam::bytes::read_text_file(ev_synonyms));
      opts.prior = ev_prior == "jeffreys" ? BetaPrior::jeffreys() : BetaPrior::uniform();
      opts.mass = ev_mass;
      auto report = aggregate(read_items(ev_questions), read_responses(ev_responses), opts);
      write_json(report.to_json(), ev_out);
      const auto& o = report.overall;
      spdlog::info("accuracy {} over {} scored ({} omitted, {} missing, {} unmatched)",
                   o.accuracy ? fmt::format("{:.4f}", *o.accuracy) : std::string("n/a"), o.n_scored, o.n_omitted,
                   o.n_missing, report.unmatched.size());
    }
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const semsam::DecodeError& e) {
    spdlog::error("{}: {}", e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
