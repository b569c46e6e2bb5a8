#include "misground/qa_generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "misground/embedded_data.hpp"
#include "semsam/rng.hpp"

namespace misground {

namespace {

using Voxel = std::array<std::int64_t, 3>;

const nlohmann::json& templates() {
  static const nlohmann::json t = nlohmann::json::parse(embedded::templates_json);
  return t;
}

std::string text(const nlohmann::json& j) { return j.get<std::string>(); }

/// Replaces {key} placeholders; every placeholder must be bound.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '{') {
      out += tmpl[i++];
      continue;
    }
    auto close = tmpl.find('}', i);
    if (close == std::string_view::npos) throw ValidationError("unterminated template placeholder");
    std::string key(tmpl.substr(i + 1, close - i - 1));
    auto it = vars.find(key);
    if (it == vars.end()) throw ValidationError(fmt::format("template placeholder {{{}}} is unbound", key));
    out += it->second;
    i = close + 1;
  }
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

bool is_relation(TargetType t) {
  return t == TargetType::relation_anatomical || t == TargetType::relation_colloquial;
}

std::optional<PromptKind> prompt_kind(VisualPrompt v) {
  switch (v) {
    case VisualPrompt::point: return PromptKind::point;
    case VisualPrompt::bbox: return PromptKind::bbox;
    case VisualPrompt::mask: return PromptKind::mask;
    case VisualPrompt::none: break;
  }
  return std::nullopt;
}

/// Why a (prompt, reference, target) combination cannot produce questions.
std::optional<std::string> invalid_reason(VisualPrompt prompt, TextRef ref, TargetType target) {
  bool prompted = prompt != VisualPrompt::none;
  if (!prompted && ref != TextRef::name) return "reference_needs_prompt";
  switch (target) {
    case TargetType::structure_name:
      if (!prompted) return "target_needs_prompt";
      if (ref == TextRef::name) return "answer_in_question";
      break;
    case TargetType::label:
      if (!prompted) return "target_needs_prompt";
      // colours pair one-to-one with letters, so only names leave it open
      if (ref != TextRef::name) return "answer_in_question";
      break;
    default: break;
  }
  return std::nullopt;
}

struct Mark {
  std::size_t structure = 0;
  PromptKind kind = PromptKind::point;
  int color = 0;
  std::optional<char> letter;
};

struct RenderRequest {
  MediaKind media = MediaKind::volume_3d;
  SliceDirection dir = SliceDirection::axial;
  OrientationMode mode = OrientationMode::standard_view;
  std::optional<std::int64_t> frame;  // slice_2d only
  Background background = Background::image;
  std::vector<Mark> marks;
};

/// Projection of one structure into one frame stack.
struct Footprint {
  std::int64_t f0 = 0, f1 = -1;      // frame range holding voxels
  PixelBox box;                       // union of pixel extents
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, std::int64_t>>> pixels;  // per frame
};

struct PairCandidate {
  std::size_t i = 0, j = 0;
  std::optional<std::int64_t> array_slice;
};

struct Structure {
  StructureAnnotation ann;
  std::vector<Voxel> voxels;
};

struct SliceTable {
  // per array slice along the direction's normal axis
  std::vector<std::map<std::int32_t, std::size_t>> area;
  std::vector<std::vector<StructureAnnotation>> ann;
};

}  // namespace

struct Generator::Impl {
  GenConfig cfg;
  MediaSink& sink;
  semsam::Xoshiro256 rng;
  Volume volume;
  LabelMap labels;
  StorageSigns signs{};
  std::vector<StructureAnnotation> annotations;
  std::vector<Structure> structures;
  std::map<std::int32_t, std::size_t> by_label;
  ByteVolume window_bytes;

  std::map<std::pair<int, int>, std::vector<RenderFrame>> frames;
  std::map<int, SliceTable> slices;
  std::map<std::tuple<int, int, bool>, std::vector<PairCandidate>> candidates;
  std::set<std::string> rendered;
  nlohmann::json manifest = nlohmann::json::object();

  nlohmann::json cells = nlohmann::json::array();
  std::map<std::string, std::set<std::string>> skipped_combinations;
  std::map<std::string, std::map<std::string, std::size_t>> ablation_skips;
  std::map<std::string, std::size_t> ablation_emitted;
  std::vector<std::string> warnings;
  std::size_t render_notes = 0;
  bool no_pairs = false;

  Impl(const Volume& v, const LabelMap& lm, GenConfig c, MediaSink& s)
      : cfg(std::move(c)), sink(s), rng(scan_seed(cfg.seed, cfg.scan_id)) {
    cfg.validate();
    if (!(v.geom == lm.geom)) throw ValidationError("volume and label map geometries differ");
    Volume vol = v;
    LabelMap lab = lm;
    if (cfg.isotropic_spacing) {
      double sp = *cfg.isotropic_spacing;
      vol = resample_mpr(vol, SliceDirection::axial, {sp, sp, sp});
      lab = resample_mpr_labels(lab, SliceDirection::axial, {sp, sp, sp});
    }
    volume = reorient_to_ras(vol, cfg.ras_most_origin);
    labels = reorient_to_ras(lab, cfg.ras_most_origin);
    signs = storage_signs(labels.geom.affine);
    annotations = annotate_structures(labels);
    window_bytes = apply_window(volume, cfg.window);

    for (std::size_t n = 0; n < annotations.size(); ++n) {
      by_label[annotations[n].label] = n;
      structures.push_back({annotations[n], {}});
    }
    const auto& d = labels.geom.dims;
    std::size_t idx = 0;
    for (std::int64_t k = 0; k < d[2]; ++k)
      for (std::int64_t j = 0; j < d[1]; ++j)
        for (std::int64_t i = 0; i < d[0]; ++i) {
          auto l = labels.labels[idx++];
          if (l != 0) structures[by_label.at(l)].voxels.push_back({i, j, k});
        }

    no_pairs = true;
    for (std::size_t i = 0; i < annotations.size() && no_pairs; ++i)
      for (std::size_t j = i + 1; j < annotations.size() && no_pairs; ++j)
        if (any_determinate(annotations[i], annotations[j], -1)) no_pairs = false;
    if (no_pairs)
      warnings.push_back(annotations.size() < 2 ? "fewer than two labelled structures; no questions generated"
                                                : "no structure pair is separated by the margin; no questions generated");
  }

  bool any_determinate(const StructureAnnotation& a, const StructureAnnotation& b, int skip_axis) const {
    for (int axis = 0; axis < 3; ++axis)
      if (axis != skip_axis && anatomical_relation(a, b, static_cast<PatientAxis>(axis), cfg.margin, signs)) return true;
    return false;
  }

  FrameMapping mapping(SliceDirection dir, OrientationMode mode) const {
    return frame_mapping(dir, mode, signs, cfg.view);
  }

  FrameAxes axes(SliceDirection dir, OrientationMode mode) const {
    return FrameAxes::from(mapping(dir, mode), signs, labels.geom);
  }

  const std::vector<RenderFrame>& frames_for(SliceDirection dir, OrientationMode mode) {
    auto key = std::make_pair(static_cast<int>(dir), static_cast<int>(mode));
    auto it = frames.find(key);
    if (it == frames.end()) it = frames.emplace(key, extract_frames(window_bytes, mode, dir, cfg.view)).first;
    return it->second;
  }

  const SliceTable& slice_table(SliceDirection dir) {
    int key = static_cast<int>(dir);
    auto it = slices.find(key);
    if (it != slices.end()) return it->second;
    int axis = slice_axis_of(dir);
    SliceTable t;
    std::int64_t n = labels.geom.dims[axis];
    t.area.resize(static_cast<std::size_t>(n));
    t.ann.resize(static_cast<std::size_t>(n));
    for (std::int64_t s = 0; s < n; ++s) {
      t.ann[static_cast<std::size_t>(s)] = annotate_slice(labels, axis, s);
      for (const auto& a : t.ann[static_cast<std::size_t>(s)]) t.area[static_cast<std::size_t>(s)][a.label] = a.voxel_count;
    }
    return slices.emplace(key, std::move(t)).first->second;
  }

  const StructureAnnotation* slice_annotation(SliceDirection dir, std::int64_t array_slice, std::int32_t label) {
    for (const auto& a : slice_table(dir).ann[static_cast<std::size_t>(array_slice)])
      if (a.label == label) return &a;
    return nullptr;
  }

  /// Pairs usable for a (media, direction, relation-or-not) cell. Slice media
  /// use the slice where both structures cover the most voxels (lowest index
  /// on ties), among slices where a relation is determinate when one is needed.
  const std::vector<PairCandidate>& pair_candidates(MediaKind media, SliceDirection dir, bool relation) {
    auto key = std::make_tuple(static_cast<int>(media), media == MediaKind::slice_2d ? static_cast<int>(dir) : -1, relation);
    auto it = candidates.find(key);
    if (it != candidates.end()) return it->second;
    std::vector<PairCandidate> out;
    for (std::size_t i = 0; i < annotations.size(); ++i)
      for (std::size_t j = i + 1; j < annotations.size(); ++j) {
        if (annotations[i].name == annotations[j].name) continue;
        if (media == MediaKind::volume_3d) {
          if (!relation || any_determinate(annotations[i], annotations[j], -1)) out.push_back({i, j, std::nullopt});
          continue;
        }
        const auto& t = slice_table(dir);
        int axis = slice_axis_of(dir);
        std::optional<std::int64_t> best;
        std::size_t best_area = 0;
        for (std::size_t s = 0; s < t.area.size(); ++s) {
          auto ai = t.area[s].find(annotations[i].label);
          auto aj = t.area[s].find(annotations[j].label);
          if (ai == t.area[s].end() || aj == t.area[s].end()) continue;
          std::size_t area = ai->second + aj->second;
          if (best && area <= best_area) continue;
          if (relation) {
            auto si = static_cast<std::int64_t>(s);
            if (!any_determinate(*slice_annotation(dir, si, annotations[i].label),
                                 *slice_annotation(dir, si, annotations[j].label), axis))
              continue;
          }
          best = static_cast<std::int64_t>(s);
          best_area = area;
        }
        if (best) out.push_back({i, j, best});
      }
    return candidates.emplace(key, std::move(out)).first->second;
  }

  std::int64_t frame_of_array_slice(const FrameAxes& fa, std::int64_t s) const {
    return fa.flip[2] ? fa.extent[2] - 1 - s : s;
  }

  std::int64_t array_slice_of_frame(const FrameAxes& fa, std::int64_t f) const {
    return fa.flip[2] ? fa.extent[2] - 1 - f : f;
  }

  double slice_position_mm(SliceDirection dir, std::int64_t array_slice) const {
    int a = slice_axis_of(dir);
    return labels.geom.affine[a][a] * static_cast<double>(array_slice) + labels.geom.affine[a][3];
  }

  // ---------------------------------------------------------------------------
  // Prompt geometry

  Footprint footprint(std::size_t structure, const FrameAxes& fa, std::optional<std::int64_t> only_frame) const {
    Footprint fp;
    bool first = true;
    for (const auto& v : structures[structure].voxels) {
      auto img = fa.to_image({static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2])});
      auto x = static_cast<std::int64_t>(img[0]), y = static_cast<std::int64_t>(img[1]),
           f = static_cast<std::int64_t>(img[2]);
      if (only_frame && f != *only_frame) continue;
      fp.pixels[f].push_back({x, y});
      if (first) {
        fp.box = {x, y, x, y};
        fp.f0 = fp.f1 = f;
        first = false;
      }
      fp.box.x0 = std::min(fp.box.x0, x);
      fp.box.y0 = std::min(fp.box.y0, y);
      fp.box.x1 = std::max(fp.box.x1, x);
      fp.box.y1 = std::max(fp.box.y1, y);
      fp.f0 = std::min(fp.f0, f);
      fp.f1 = std::max(fp.f1, f);
    }
    return fp;
  }

  /// Structure voxel nearest the centroid (of the slice, for slice media).
  std::array<std::int64_t, 3> point_of(const Footprint& fp) const {
    long double sx = 0, sy = 0, sf = 0, n = 0;
    for (const auto& [f, px] : fp.pixels)
      for (const auto& [x, y] : px) {
        sx += x;
        sy += y;
        sf += f;
        n += 1;
      }
    double cx = static_cast<double>(sx / n), cy = static_cast<double>(sy / n), cf = static_cast<double>(sf / n);
    std::array<std::int64_t, 3> best{};
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [f, px] : fp.pixels)
      for (const auto& [x, y] : px) {
        double d = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (f - cf) * (f - cf);
        std::array<std::int64_t, 3> p{x, y, f};
        if (d < best_d || (d == best_d && std::tie(p[2], p[1], p[0]) < std::tie(best[2], best[1], best[0]))) {
          best_d = d;
          best = p;
        }
      }
    return best;
  }

  struct PlacedMark {
    Mark mark;
    Footprint fp;
    std::array<std::int64_t, 3> point{};
  };

  std::vector<PlacedMark> place(const RenderRequest& req) const {
    FrameAxes fa = axes(req.dir, req.mode);
    std::vector<PlacedMark> out;
    for (const auto& m : req.marks) {
      PlacedMark p{m, footprint(m.structure, fa, req.frame), {}};
      if (p.fp.pixels.empty()) throw ValidationError("prompted structure is absent from the rendered frames");
      p.point = point_of(p.fp);
      out.push_back(std::move(p));
    }
    return out;
  }

  nlohmann::json records(const std::vector<PlacedMark>& placed) const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : placed) {
      const auto& s = structures[p.mark.structure].ann;
      nlohmann::json r{{"kind", to_string(p.mark.kind)},
                       {"color_index", p.mark.color},
                       {"color", palette_name(p.mark.color)},
                       {"letter", p.mark.letter ? nlohmann::json(std::string(1, *p.mark.letter)) : nlohmann::json(nullptr)},
                       {"label", s.label},
                       {"name", s.name}};
      if (p.mark.kind == PromptKind::point) {
        r["frames"] = {p.point[2], p.point[2]};
        r["point"] = {p.point[0], p.point[1]};
      } else {
        r["frames"] = {p.fp.f0, p.fp.f1};
        r["box"] = {p.fp.box.x0, p.fp.box.y0, p.fp.box.x1, p.fp.box.y1};
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  std::vector<OverlaySpec> overlays_on(const std::vector<PlacedMark>& placed, std::int64_t frame, std::int64_t width,
                                       std::int64_t height) const {
    std::vector<OverlaySpec> out;
    for (const auto& p : placed) {
      OverlaySpec o;
      o.kind = p.mark.kind;
      o.color_index = p.mark.color;
      o.letter = p.mark.letter;
      switch (p.mark.kind) {
        case PromptKind::point:
          if (p.point[2] != frame) continue;
          o.point = {p.point[0], p.point[1]};
          break;
        case PromptKind::bbox:
          if (frame < p.fp.f0 || frame > p.fp.f1) continue;
          o.box = p.fp.box;
          break;
        case PromptKind::mask: {
          auto it = p.fp.pixels.find(frame);
          if (it == p.fp.pixels.end()) continue;
          o.mask.assign(static_cast<std::size_t>(width * height), 0);
          for (const auto& [x, y] : it->second) o.mask[static_cast<std::size_t>(y * width + x)] = 1;
          break;
        }
      }
      out.push_back(std::move(o));
    }
    return out;
  }

  nlohmann::json render_style_json() const { return cfg.to_json()["render"]; }

  /// Renders (once per distinct request) and returns the media reference.
  std::string render(const RenderRequest& req, const nlohmann::json& prompt_records) {
    nlohmann::json spec{{"media", to_string(req.media)},
                        {"slice_direction", to_string(req.dir)},
                        {"orientation_mode", to_string(req.mode)},
                        {"frame", req.frame ? nlohmann::json(*req.frame) : nlohmann::json(nullptr)},
                        {"background", req.background == Background::white ? "white" : "image"},
                        {"prompts", prompt_records},
                        {"window", cfg.to_json()["window"]},
                        {"render", render_style_json()}};
    std::string key = fmt::format("{:016x}", semsam::fnv1a64(spec.dump()));
    std::string ref = req.media == MediaKind::slice_2d ? fmt::format("media/{}.png", key) : fmt::format("media/{}", key);
    if (rendered.count(ref)) return ref;

    auto placed = place(req);
    const auto& stack = frames_for(req.dir, req.mode);
    std::vector<std::int64_t> order;
    if (req.frame)
      order.push_back(*req.frame);
    else
      for (std::int64_t f = 0; f < static_cast<std::int64_t>(stack.size()); ++f) order.push_back(f);

    nlohmann::json files = nlohmann::json::array();
    for (std::int64_t f : order) {
      const Gray8& img = stack[static_cast<std::size_t>(f)].image;
      std::vector<std::string> notes;
      RgbImage rgb = render_frame(img, overlays_on(placed, f, img.width, img.height), req.background, cfg.style, &notes);
      render_notes += notes.size();
      std::string path = req.frame ? ref : fmt::format("{}/frame_{:03d}.png", ref, f);
      sink.put(path, encode_png(rgb));
      files.push_back(path);
    }
    spec.erase("window");
    spec.erase("render");
    spec["frame_files"] = files;
    spec["frame_order"] = "slice index ascending";
    manifest[ref] = spec;
    rendered.insert(ref);
    return ref;
  }

  // ---------------------------------------------------------------------------
  // Question text

  std::string intro(std::optional<MediaKind> media, VisualPrompt prompt, bool lettered) const {
    const auto& t = templates();
    std::string s = text(t["intro"][media ? std::string(to_string(*media)) : "text_only"]);
    if (prompt != VisualPrompt::none) {
      std::string nouns = text(t["prompt_plural"][std::string(to_string(prompt))]);
      s += " " + fill(text(t["prompt_intro"][lettered ? "lettered" : "plain"]), {{"nouns", nouns}});
    }
    return s;
  }

  std::string reference(TextRef ref, VisualPrompt prompt, const std::string& name, int color,
                        std::optional<char> letter) const {
    const auto& t = templates();
    std::string noun = prompt == VisualPrompt::none ? "" : text(t["prompt_noun"][std::string(to_string(prompt))]);
    switch (ref) {
      case TextRef::name: return fill(text(t["reference"]["name"]), {{"name", name}});
      case TextRef::color:
        return fill(text(t["reference"]["color"]), {{"color", std::string(palette_name(color))}, {"noun", noun}});
      case TextRef::letter:
        return fill(text(t["reference"]["letter"]), {{"noun", noun}, {"letter", std::string(1, letter.value_or('?'))}});
    }
    return name;
  }

  std::string marker(TextRef ref, VisualPrompt prompt, int color, std::optional<char> letter) const {
    const auto& t = templates();
    std::string noun = text(t["prompt_noun"][std::string(to_string(prompt))]);
    if (ref == TextRef::color)
      return fill(text(t["marker"]["color"]), {{"color", std::string(palette_name(color))}, {"noun", noun}});
    return fill(text(t["marker"]["letter"]), {{"noun", noun}, {"letter", std::string(1, letter.value_or('?'))}});
  }

  static std::map<std::string, std::string> common(const std::string& intro_text) {
    const auto& t = templates();
    return {{"intro", intro_text}, {"instruction", text(t["answer_instruction"])}, {"closed", text(t["closed_instruction"])}};
  }

  std::string relation_text(const std::string& intro_text, Vocabulary vocab, const std::string& a, const std::string& b,
                            const std::string& axis_name, QuestionType qt, std::optional<RelationTerm> asserted) const {
    const auto& t = templates();
    auto vars = common(intro_text);
    vars["context"] = text(t["relation_context"][std::string(to_string(vocab))]);
    vars["a"] = a;
    vars["b"] = b;
    vars["a_cap"] = capitalize(a);
    if (qt == QuestionType::open) {
      vars["choices"] = text(t["axis_choices"][axis_name]);
      return fill(text(t["open"]["relation"]), vars);
    }
    vars["phrase"] = text(t["relation_phrase"][std::string(to_string(asserted.value()))]);
    return fill(text(t["closed"]["relation"]), vars);
  }

  // ---------------------------------------------------------------------------
  // Items

  struct Instance {
    MediaKind media = MediaKind::volume_3d;
    SliceDirection dir = SliceDirection::axial;
    OrientationMode mode = OrientationMode::standard_view;
    VisualPrompt prompt = VisualPrompt::none;
    std::optional<TextRef> ref;
    TargetType target = TargetType::relation_anatomical;
    std::vector<std::size_t> subjects;  // A then B
    std::vector<int> colors;
    std::vector<std::optional<char>> letters;
    std::optional<std::int64_t> array_slice;
    std::optional<std::int64_t> frame;
    std::optional<RelationTerm> truth;
    std::string axis_name;
    bool cross_slice = false;
    SliceDirection claimed_direction = SliceDirection::axial;
  };

  nlohmann::json base_params(const Instance& in, QuestionType qt) const {
    nlohmann::json structs = nlohmann::json::array();
    for (auto s : in.subjects) structs.push_back({{"label", structures[s].ann.label}, {"name", structures[s].ann.name}});
    return {{"scan_id", cfg.scan_id},
            {"media", to_string(in.media)},
            {"slice_direction", to_string(in.dir)},
            {"orientation_mode", to_string(in.mode)},
            {"visual_prompt", to_string(in.prompt)},
            {"text_ref", in.ref ? nlohmann::json(to_string(*in.ref)) : nlohmann::json(nullptr)},
            {"target_type", to_string(in.target)},
            {"question_type", to_string(qt)},
            {"structures", structs},
            {"relation_axis", in.axis_name.empty() ? nlohmann::json(nullptr) : nlohmann::json(in.axis_name)},
            {"asserted", nullptr},
            {"frame_index", in.frame ? nlohmann::json(*in.frame) : nlohmann::json(nullptr)},
            {"slice_position_mm",
             in.array_slice ? nlohmann::json(slice_position_mm(in.dir, *in.array_slice)) : nlohmann::json(nullptr)},
            {"margin", cfg.margin},
            {"ras_most_origin", cfg.ras_most_origin},
            {"ablation", nullptr}};
  }

  RenderRequest request_of(const Instance& in) const {
    RenderRequest req{in.media, in.dir, in.mode, in.frame, Background::image, {}};
    if (auto kind = prompt_kind(in.prompt))
      for (std::size_t n = 0; n < in.subjects.size(); ++n) req.marks.push_back({in.subjects[n], *kind, in.colors[n], in.letters[n]});
    return req;
  }

  std::vector<std::string> tags_of(const Instance& in) const {
    std::vector<std::string> tags;
    if (in.target == TargetType::slice_direction || in.cross_slice) tags.push_back("RQ1");
    if (is_relation(in.target)) tags.push_back("RQ2");
    if (in.prompt != VisualPrompt::none) tags.push_back("RQ3");
    return tags;
  }

  void emit(const Instance& in, std::vector<QAItem>& out) {
    std::optional<std::string> media_ref;
    nlohmann::json recs = nlohmann::json::array();
    RenderRequest req = request_of(in);
    if (!req.marks.empty()) recs = records(place(req));
    media_ref = render(req, recs);

    const auto& A = structures[in.subjects.empty() ? 0 : in.subjects[0]].ann;
    bool lettered = in.prompt != VisualPrompt::none && (in.ref == TextRef::letter || in.target == TargetType::label);
    std::string intro_text = intro(in.media, in.prompt, lettered);
    const auto& t = templates();

    for (QuestionType qt : cfg.question_types) {
      QAItem q;
      q.media_ref = media_ref;
      q.question_type = qt;
      q.target_type = in.target;
      q.category_tags = tags_of(in);
      q.params = base_params(in, qt);
      q.prompt_records = recs;
      auto vars = common(intro_text);
      std::string truth_value, asserted;

      switch (in.target) {
        case TargetType::relation_anatomical:
        case TargetType::relation_colloquial: {
          const auto& B = structures[in.subjects[1]].ann;
          std::string a = reference(*in.ref, in.prompt, A.name, in.colors[0], in.letters[0]);
          std::string b = reference(*in.ref, in.prompt, B.name, in.colors[1], in.letters[1]);
          RelationTerm claim = qt == QuestionType::closed_inverted ? opposite(*in.truth) : *in.truth;
          Vocabulary vocab = vocabulary_of(*in.truth);
          q.question = relation_text(intro_text, vocab, a, b, in.axis_name, qt,
                                     qt == QuestionType::open ? std::nullopt : std::optional(claim));
          truth_value = std::string(to_string(*in.truth));
          asserted = std::string(to_string(claim));
          q.distractors = {std::string(to_string(opposite(*in.truth)))};
          break;
        }
        case TargetType::structure_name: {
          const auto& B = structures[in.subjects[1]].ann;
          std::string m = marker(*in.ref, in.prompt, in.colors[0], in.letters[0]);
          vars["marker"] = m;
          vars["marker_cap"] = capitalize(m);
          asserted = qt == QuestionType::closed_inverted ? B.name : A.name;
          vars["name"] = asserted;
          truth_value = A.name;
          for (const auto& s : structures)
            if (s.ann.name != A.name) q.distractors.push_back(s.ann.name);
          break;
        }
        case TargetType::label: {
          std::string a = reference(*in.ref, in.prompt, A.name, in.colors[0], in.letters[0]);
          vars["a"] = a;
          vars["a_cap"] = capitalize(a);
          truth_value = std::string(1, *in.letters[0]);
          asserted = std::string(1, qt == QuestionType::closed_inverted ? *in.letters[1] : *in.letters[0]);
          vars["letter"] = asserted;
          for (std::size_t n = 1; n < in.letters.size(); ++n) q.distractors.push_back(std::string(1, *in.letters[n]));
          break;
        }
        case TargetType::slice_direction: {
          vars["media_noun"] = text(t["media_noun"][std::string(to_string(in.media))]);
          truth_value = std::string(to_string(in.dir));
          asserted = std::string(to_string(qt == QuestionType::closed_inverted ? in.claimed_direction : in.dir));
          vars["direction"] = asserted;
          for (auto d : {SliceDirection::axial, SliceDirection::coronal, SliceDirection::sagittal})
            if (d != in.dir) q.distractors.push_back(std::string(to_string(d)));
          break;
        }
      }
      if (!is_relation(in.target)) {
        const char* group = qt == QuestionType::open ? "open" : "closed";
        q.question = fill(text(t[group][std::string(to_string(in.target))]), vars);
      }
      if (qt == QuestionType::open) {
        q.answer_key = truth_value;
      } else {
        q.answer_key = qt == QuestionType::closed_true ? "True" : "False";
        q.params["asserted"] = asserted;
        q.distractors = {qt == QuestionType::closed_true ? "False" : "True"};
      }
      out.push_back(std::move(q));
    }
  }

  /// Random distinct letters A-F; colour index follows the letter.
  void assign_marks(Instance& in) {
    auto picks = rng.sample_indices(6, in.subjects.size());
    bool lettered = in.prompt != VisualPrompt::none && (in.ref == TextRef::letter || in.target == TargetType::label);
    for (auto p : picks) {
      in.colors.push_back(static_cast<int>(p));
      in.letters.push_back(lettered ? std::optional<char>(static_cast<char>('A' + p)) : std::nullopt);
    }
  }

  bool choose_relation(Instance& in) {
    const StructureAnnotation* a = &structures[in.subjects[0]].ann;
    const StructureAnnotation* b = &structures[in.subjects[1]].ann;
    if (in.array_slice) {
      a = slice_annotation(in.dir, *in.array_slice, a->label);
      b = slice_annotation(in.dir, *in.array_slice, b->label);
    }
    FrameMapping f = mapping(in.dir, in.mode);
    std::vector<std::pair<RelationTerm, std::string>> options;
    for (int axis = 0; axis < 3; ++axis) {
      std::optional<RelationTerm> r;
      std::string name;
      if (in.target == TargetType::relation_anatomical) {
        r = anatomical_relation(*a, *b, static_cast<PatientAxis>(axis), cfg.margin, signs);
        name = std::string(to_string(static_cast<PatientAxis>(axis)));
      } else {
        r = colloquial_relation(*a, *b, f, static_cast<ImageAxis>(axis), cfg.margin, signs);
        name = std::string(to_string(static_cast<ImageAxis>(axis)));
      }
      if (r) options.emplace_back(*r, name);
    }
    if (options.empty()) return false;
    const auto& [term, name] = options[static_cast<std::size_t>(rng.below(options.size()))];
    in.truth = term;
    in.axis_name = name;
    if (in.media == MediaKind::volume_3d) {
      in.cross_slice = in.target == TargetType::relation_anatomical
                           ? name == to_string(static_cast<PatientAxis>(slice_axis_of(in.dir)))
                           : name == to_string(ImageAxis::slice);
    }
    return true;
  }

  nlohmann::json cell_record(const Instance& proto, std::size_t available, std::size_t emitted) const {
    return {{"media", to_string(proto.media)},
            {"slice_direction", to_string(proto.dir)},
            {"orientation_mode", to_string(proto.mode)},
            {"visual_prompt", to_string(proto.prompt)},
            {"text_ref", proto.ref ? nlohmann::json(to_string(*proto.ref)) : nlohmann::json(nullptr)},
            {"target_type", to_string(proto.target)},
            {"available", available},
            {"requested", proto.target == TargetType::slice_direction ? std::size_t{1} : cfg.pairs_per_cell},
            {"emitted_instances", emitted}};
  }

  void slice_direction_cell(MediaKind media, SliceDirection dir, OrientationMode mode, std::vector<QAItem>& out) {
    Instance in;
    in.media = media;
    in.dir = dir;
    in.mode = mode;
    in.target = TargetType::slice_direction;
    std::vector<SliceDirection> others;
    for (auto d : {SliceDirection::axial, SliceDirection::coronal, SliceDirection::sagittal})
      if (d != dir) others.push_back(d);
    in.claimed_direction = others[static_cast<std::size_t>(rng.below(others.size()))];
    if (media == MediaKind::slice_2d) {
      FrameAxes fa = axes(dir, mode);
      in.frame = fa.extent[2] / 2;
      in.array_slice = array_slice_of_frame(fa, *in.frame);
    }
    emit(in, out);
    cells.push_back(cell_record(in, 1, 1));
  }

  void pair_cell(Instance proto, std::vector<QAItem>& out) {
    bool relation = is_relation(proto.target);
    const auto& cands = pair_candidates(proto.media, proto.dir, relation);
    auto picks = rng.sample_indices(cands.size(), cfg.pairs_per_cell);
    std::size_t emitted = 0;
    FrameAxes fa = axes(proto.dir, proto.mode);
    for (auto p : picks) {
      const auto& c = cands[p];
      Instance in = proto;
      in.subjects = rng.below(2) ? std::vector<std::size_t>{c.j, c.i} : std::vector<std::size_t>{c.i, c.j};
      in.array_slice = c.array_slice;
      if (c.array_slice) in.frame = frame_of_array_slice(fa, *c.array_slice);
      assign_marks(in);
      if (relation && !choose_relation(in)) continue;
      emit(in, out);
      ++emitted;
    }
    cells.push_back(cell_record(proto, cands.size(), emitted));
  }

  std::vector<QAItem> base_items() {
    std::vector<QAItem> out;
    if (no_pairs) return out;
    for (auto prompt : cfg.visual_prompt_kinds)
      for (auto ref : cfg.text_ref_modes)
        for (auto target : cfg.target_types)
          if (target != TargetType::slice_direction)
            if (auto why = invalid_reason(prompt, ref, target))
              skipped_combinations[*why].insert(
                  fmt::format("{}/{}/{}", to_string(prompt), to_string(ref), to_string(target)));

    bool want_direction = std::find(cfg.target_types.begin(), cfg.target_types.end(), TargetType::slice_direction) !=
                          cfg.target_types.end();
    for (auto media : cfg.media)
      for (auto dir : cfg.slice_directions)
        for (auto mode : cfg.orientation_modes) {
          if (want_direction) slice_direction_cell(media, dir, mode, out);
          for (auto prompt : cfg.visual_prompt_kinds)
            for (auto ref : cfg.text_ref_modes)
              for (auto target : cfg.target_types) {
                if (target == TargetType::slice_direction || invalid_reason(prompt, ref, target)) continue;
                Instance proto;
                proto.media = media;
                proto.dir = dir;
                proto.mode = mode;
                proto.prompt = prompt;
                proto.ref = ref;
                proto.target = target;
                pair_cell(proto, out);
              }
        }
    return out;
  }

  // ---------------------------------------------------------------------------
  // Ablations

  void skip(Ablation a, const std::string& reason) { ++ablation_skips[std::string(to_string(a))][reason]; }

  std::vector<QAItem> ablation_items(const std::vector<QAItem>& base) {
    std::vector<QAItem> out;
    bool text_only = std::find(cfg.ablations.begin(), cfg.ablations.end(), Ablation::text_only) != cfg.ablations.end();
    bool blank = std::find(cfg.ablations.begin(), cfg.ablations.end(), Ablation::blank_background) != cfg.ablations.end();

    std::set<std::string> seen;
    if (text_only)
      for (const auto& q : base) {
        const auto& p = q.params;
        if (q.target_type != TargetType::relation_anatomical) {
          skip(Ablation::text_only, q.target_type == TargetType::relation_colloquial ? "viewer_terms_need_image"
                                                                                      : "not_a_relation");
          continue;
        }
        if (p["text_ref"] != "name") {
          skip(Ablation::text_only, "reference_needs_image");
          continue;
        }
        if (p["media"] != "volume_3d") {
          // slice-restricted centroids can disagree with whole-structure ones
          skip(Ablation::text_only, "slice_restricted_answer");
          continue;
        }
        QAItem t = q;
        t.media_ref.reset();
        t.prompt_records = nlohmann::json::array();
        t.category_tags = {"AB1"};
        t.params["ablation"] = "text_only";
        t.params["media"] = nullptr;
        t.params["slice_direction"] = nullptr;
        t.params["orientation_mode"] = nullptr;
        t.params["visual_prompt"] = "none";
        std::optional<RelationTerm> asserted;
        if (q.question_type != QuestionType::open) asserted = parse_relation_term(p["asserted"].get<std::string>());
        t.question = relation_text(intro(std::nullopt, VisualPrompt::none, false), Vocabulary::anatomical,
                                   reference(TextRef::name, VisualPrompt::none, p["structures"][0]["name"].get<std::string>(), 0, {}),
                                   reference(TextRef::name, VisualPrompt::none, p["structures"][1]["name"].get<std::string>(), 0, {}),
                                   p["relation_axis"].get<std::string>(), q.question_type, asserted);
        std::string dedupe = t.question + '\n' + t.answer_key;
        if (!seen.insert(dedupe).second) {
          skip(Ablation::text_only, "duplicate_question");
          continue;
        }
        out.push_back(std::move(t));
        ++ablation_emitted["text_only"];
      }

    if (blank)
      for (const auto& q : base) {
        const auto& p = q.params;
        if (q.prompt_records.empty()) {
          skip(Ablation::blank_background, "no_visual_prompt");
          continue;
        }
        if (!is_relation(q.target_type)) {
          skip(Ablation::blank_background, "answer_needs_anatomy");
          continue;
        }
        if (p["text_ref"] == "name") {
          skip(Ablation::blank_background, "reference_needs_anatomy");
          continue;
        }
        RenderRequest req;
        req.media = *parse_media_kind(p["media"].get<std::string>());
        req.dir = *parse_slice_direction(p["slice_direction"].get<std::string>());
        req.mode = *parse_orientation_mode(p["orientation_mode"].get<std::string>());
        if (!p["frame_index"].is_null()) req.frame = p["frame_index"].get<std::int64_t>();
        req.background = Background::white;
        for (const auto& r : q.prompt_records) {
          Mark m;
          m.structure = by_label.at(r["label"].get<std::int32_t>());
          m.kind = *parse_prompt_kind(r["kind"].get<std::string>());
          m.color = r["color_index"].get<int>();
          if (!r["letter"].is_null()) m.letter = r["letter"].get<std::string>().at(0);
          req.marks.push_back(m);
        }
        QAItem t = q;
        t.media_ref = render(req, q.prompt_records);
        t.category_tags = {"AB2"};
        t.params["ablation"] = "blank_background";
        out.push_back(std::move(t));
        ++ablation_emitted["blank_background"];
      }
    return out;
  }

  nlohmann::json coverage_json() const {
    nlohmann::json skipped = nlohmann::json::object();
    for (const auto& [reason, combos] : skipped_combinations) skipped[reason] = combos;
    nlohmann::json ab = nlohmann::json::object();
    for (auto a : cfg.ablations) {
      std::string name(to_string(a));
      nlohmann::json skips = nlohmann::json::object();
      if (auto it = ablation_skips.find(name); it != ablation_skips.end())
        for (const auto& [r, n] : it->second) skips[r] = n;
      auto e = ablation_emitted.find(name);
      ab[name] = {{"emitted", e == ablation_emitted.end() ? 0 : e->second}, {"skipped", skips}};
    }
    std::size_t short_cells = 0;
    for (const auto& c : cells)
      if (c["emitted_instances"].get<std::size_t>() < c["requested"].get<std::size_t>()) ++short_cells;
    nlohmann::json structs = nlohmann::json::array();
    for (const auto& a : annotations) structs.push_back({{"label", a.label}, {"name", a.name}, {"voxels", a.voxel_count}});
    return {{"scan_id", cfg.scan_id},
            {"config", cfg.to_json()},
            {"structures", structs},
            {"cells", cells},
            {"short_cells", short_cells},
            {"skipped_combinations", skipped},
            {"ablations", ab},
            {"warnings", warnings},
            {"render_notes", render_notes}};
  }
};

Generator::Generator(const Volume& volume, const LabelMap& labels, GenConfig cfg, MediaSink& sink)
    : impl_(std::make_unique<Impl>(volume, labels, std::move(cfg), sink)) {}
Generator::~Generator() = default;

std::vector<QAItem> Generator::base_items() { return impl_->base_items(); }
std::vector<QAItem> Generator::make_ablation_items(const std::vector<QAItem>& base) { return impl_->ablation_items(base); }
const LabelMap& Generator::labels() const { return impl_->labels; }
const std::vector<StructureAnnotation>& Generator::annotations() const { return impl_->annotations; }
nlohmann::json Generator::coverage() const { return impl_->coverage_json(); }
nlohmann::json Generator::media_manifest() const { return impl_->manifest; }

GenResult generate(const Volume& volume, const LabelMap& labels, const GenConfig& cfg, MediaSink& sink) {
  Generator g(volume, labels, cfg, sink);
  GenResult r;
  r.items = g.base_items();
  auto extra = g.make_ablation_items(r.items);
  r.items.insert(r.items.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  for (std::size_t n = 0; n < r.items.size(); ++n) r.items[n].id = fmt::format("{}-{:05d}", cfg.scan_id, n);
  r.coverage = g.coverage();
  r.coverage["items"] = r.items.size();
  r.media_manifest = g.media_manifest();
  return r;
}

void write_generation(const GenResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  write_items(result.items, dir / "questions.jsonl");
  for (const auto& [name, doc] : {std::pair{"coverage.json", &result.coverage}, std::pair{"media_manifest.json", &result.media_manifest}}) {
    std::ofstream out(dir / name, std::ios::binary);
    out << doc->dump(2) << '\n';
    if (!out) throw IoError(fmt::format("write failed for {}", (dir / name).string()));
  }
}

}  // namespace misground
