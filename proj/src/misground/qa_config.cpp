#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <toml.hpp>

#include "misground/qa_generator.hpp"
#include "semsam/rng.hpp"

namespace misground {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(E e, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return "?";
}

constexpr std::array<std::pair<VisualPrompt, std::string_view>, 4> kPrompts{
    {{VisualPrompt::none, "none"}, {VisualPrompt::point, "point"}, {VisualPrompt::bbox, "bbox"}, {VisualPrompt::mask, "mask"}}};
constexpr std::array<std::pair<TextRef, std::string_view>, 3> kRefs{
    {{TextRef::name, "name"}, {TextRef::color, "color"}, {TextRef::letter, "letter"}}};
constexpr std::array<std::pair<TargetType, std::string_view>, 5> kTargets{
    {{TargetType::structure_name, "structure_name"},
     {TargetType::label, "label"},
     {TargetType::relation_anatomical, "relation_anatomical"},
     {TargetType::relation_colloquial, "relation_colloquial"},
     {TargetType::slice_direction, "slice_direction"}}};
constexpr std::array<std::pair<QuestionType, std::string_view>, 3> kQuestions{
    {{QuestionType::open, "open"}, {QuestionType::closed_true, "closed_true"}, {QuestionType::closed_inverted, "closed_inverted"}}};
constexpr std::array<std::pair<MediaKind, std::string_view>, 2> kMedia{
    {{MediaKind::volume_3d, "volume_3d"}, {MediaKind::slice_2d, "slice_2d"}}};
constexpr std::array<std::pair<Ablation, std::string_view>, 2> kAblations{
    {{Ablation::text_only, "text_only"}, {Ablation::blank_background, "blank_background"}}};

template <typename E>
void check_selection(const std::vector<E>& v, std::string_view what) {
  if (v.empty()) throw ValidationError(fmt::format("{} must not be empty", what));
  std::set<E> seen(v.begin(), v.end());
  if (seen.size() != v.size()) throw ValidationError(fmt::format("{} lists a value twice", what));
}

template <typename E, typename Parse>
std::vector<E> read_list(const toml::table& t, std::string_view key, Parse parse, std::vector<E> fallback) {
  const toml::node* node = t.get(key);
  if (!node) return fallback;
  const toml::array* arr = node->as_array();
  if (!arr) throw ValidationError(fmt::format("{} must be an array of strings", key));
  std::vector<E> out;
  for (const auto& el : *arr) {
    auto s = el.value<std::string>();
    if (!s) throw ValidationError(fmt::format("{} must be an array of strings", key));
    auto e = parse(*s);
    if (!e) throw ValidationError(fmt::format("{}: unknown value \"{}\"", key, *s));
    out.push_back(*e);
  }
  return out;
}

double read_number(const toml::table& t, std::string_view key, double fallback) {
  const toml::node* node = t.get(key);
  if (!node) return fallback;
  if (auto d = node->value<double>()) return *d;
  throw ValidationError(fmt::format("{} must be a number", key));
}

template <typename E, std::size_t N>
nlohmann::json names(const std::vector<E>& v, const std::array<std::pair<E, std::string_view>, N>& table) {
  nlohmann::json out = nlohmann::json::array();
  for (E e : v) out.push_back(name_of(e, table));
  return out;
}

}  // namespace

std::string_view to_string(VisualPrompt v) { return name_of(v, kPrompts); }
std::string_view to_string(TextRef v) { return name_of(v, kRefs); }
std::string_view to_string(TargetType v) { return name_of(v, kTargets); }
std::string_view to_string(QuestionType v) { return name_of(v, kQuestions); }
std::string_view to_string(MediaKind v) { return name_of(v, kMedia); }
std::string_view to_string(Ablation v) { return name_of(v, kAblations); }
std::optional<VisualPrompt> parse_visual_prompt(std::string_view s) { return lookup(s, kPrompts); }
std::optional<TextRef> parse_text_ref(std::string_view s) { return lookup(s, kRefs); }
std::optional<TargetType> parse_target_type(std::string_view s) { return lookup(s, kTargets); }
std::optional<QuestionType> parse_question_type(std::string_view s) { return lookup(s, kQuestions); }
std::optional<MediaKind> parse_media_kind(std::string_view s) { return lookup(s, kMedia); }
std::optional<Ablation> parse_ablation(std::string_view s) { return lookup(s, kAblations); }

void GenConfig::validate() const {
  check_selection(visual_prompt_kinds, "visual_prompt_kinds");
  check_selection(text_ref_modes, "text_ref_modes");
  check_selection(target_types, "target_types");
  check_selection(question_types, "question_types");
  check_selection(orientation_modes, "orientation_modes");
  check_selection(slice_directions, "slice_directions");
  check_selection(media, "media");
  std::set<Ablation> ab(ablations.begin(), ablations.end());
  if (ab.size() != ablations.size()) throw ValidationError("ablations lists a value twice");
  if (pairs_per_cell < 1) throw ValidationError("pairs_per_cell must be at least 1");
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ValidationError("margin must be a finite non-negative number");
  if (isotropic_spacing && !(*isotropic_spacing > 0.0 && std::isfinite(*isotropic_spacing)))
    throw ValidationError("isotropic_spacing must be positive");
  if (style.point_radius < 0 || style.stroke < 1 || style.font_scale < 1 || !(style.mask_alpha >= 0.0) ||
      style.mask_alpha > 1.0)
    throw ValidationError("render style out of range");
  if (scan_id.empty()) throw ValidationError("scan_id must not be empty");
  window.validate();
  for (const auto& f : view.standard)
    if (!f.valid()) throw ValidationError("view convention is not a signed permutation");
}

nlohmann::json GenConfig::to_json() const {
  nlohmann::json j;
  j["visual_prompt_kinds"] = names(visual_prompt_kinds, kPrompts);
  j["text_ref_modes"] = names(text_ref_modes, kRefs);
  j["target_types"] = names(target_types, kTargets);
  j["question_types"] = names(question_types, kQuestions);
  j["media"] = names(media, kMedia);
  j["ablations"] = names(ablations, kAblations);
  nlohmann::json modes = nlohmann::json::array(), dirs = nlohmann::json::array();
  for (auto m : orientation_modes) modes.push_back(to_string(m));
  for (auto d : slice_directions) dirs.push_back(to_string(d));
  j["orientation_modes"] = modes;
  j["slice_directions"] = dirs;
  j["pairs_per_cell"] = pairs_per_cell;
  j["seed"] = seed;
  j["margin"] = margin;
  j["ras_most_origin"] = ras_most_origin;
  j["isotropic_spacing"] = isotropic_spacing ? nlohmann::json(*isotropic_spacing) : nlohmann::json(nullptr);
  if (window.kind == WindowSpec::Kind::hu_window)
    j["window"] = {{"kind", "hu_window"}, {"level", window.level}, {"width", window.width}};
  else
    j["window"] = {{"kind", "percentile"}, {"low_pct", window.low_pct}, {"high_pct", window.high_pct}};
  j["render"] = {{"point_radius", style.point_radius},
                 {"stroke", style.stroke},
                 {"font_scale", style.font_scale},
                 {"mask_alpha", style.mask_alpha}};
  j["scan_id"] = scan_id;
  return j;
}

GenConfig parse_gen_config(std::string_view toml_text) {
  toml::table t;
  try {
    t = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw FormatError(fmt::format("config: {} (line {})", e.description(), e.source().begin.line));
  }
  GenConfig c;
  c.visual_prompt_kinds = read_list(t, "visual_prompt_kinds", parse_visual_prompt, c.visual_prompt_kinds);
  c.text_ref_modes = read_list(t, "text_ref_modes", parse_text_ref, c.text_ref_modes);
  c.target_types = read_list(t, "target_types", parse_target_type, c.target_types);
  c.question_types = read_list(t, "question_types", parse_question_type, c.question_types);
  c.orientation_modes = read_list(t, "orientation_modes", parse_orientation_mode, c.orientation_modes);
  c.slice_directions = read_list(t, "slice_directions", parse_slice_direction, c.slice_directions);
  c.media = read_list(t, "media", parse_media_kind, c.media);
  c.ablations = read_list(t, "ablations", parse_ablation, c.ablations);
  if (const toml::node* n = t.get("pairs_per_cell")) {
    auto v = n->value<std::int64_t>();
    if (!v || *v < 1) throw ValidationError("pairs_per_cell must be a positive integer");
    c.pairs_per_cell = static_cast<std::size_t>(*v);
  }
  c.margin = read_number(t, "margin", c.margin);
  if (const toml::node* n = t.get("ras_most_origin")) {
    auto v = n->value<bool>();
    if (!v) throw ValidationError("ras_most_origin must be a boolean");
    c.ras_most_origin = *v;
  }
  if (t.get("isotropic_spacing")) c.isotropic_spacing = read_number(t, "isotropic_spacing", 1.0);
  if (const toml::node* n = t.get("scan_id")) {
    auto v = n->value<std::string>();
    if (!v) throw ValidationError("scan_id must be a string");
    c.scan_id = *v;
  }
  if (const toml::table* w = t["window"].as_table()) {
    std::string kind = (*w)["kind"].value_or(std::string("hu_window"));
    if (kind == "hu_window")
      c.window = WindowSpec::hu(read_number(*w, "level", 40.0), read_number(*w, "width", 400.0));
    else if (kind == "percentile")
      c.window = WindowSpec::percentile(read_number(*w, "low_pct", 0.5), read_number(*w, "high_pct", 99.5));
    else
      throw ValidationError(fmt::format("window.kind: unknown value \"{}\"", kind));
  }
  if (const toml::table* r = t["render"].as_table()) {
    c.style.point_radius = static_cast<int>(read_number(*r, "point_radius", c.style.point_radius));
    c.style.stroke = static_cast<int>(read_number(*r, "stroke", c.style.stroke));
    c.style.font_scale = static_cast<int>(read_number(*r, "font_scale", c.style.font_scale));
    c.style.mask_alpha = read_number(*r, "mask_alpha", c.style.mask_alpha);
  }
  c.validate();
  return c;
}

GenConfig load_gen_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_gen_config(ss.str());
}

nlohmann::json QAItem::to_json() const {
  return {{"id", id},
          {"media_ref", media_ref ? nlohmann::json(*media_ref) : nlohmann::json(nullptr)},
          {"question", question},
          {"question_type", to_string(question_type)},
          {"target_type", to_string(target_type)},
          {"answer_key", answer_key},
          {"category_tags", category_tags},
          {"params", params},
          {"prompt_records", prompt_records},
          {"distractors", distractors}};
}

QAItem QAItem::from_json(const nlohmann::json& j) {
  try {
    QAItem q;
    q.id = j.at("id").get<std::string>();
    if (!j.at("media_ref").is_null()) q.media_ref = j.at("media_ref").get<std::string>();
    q.question = j.at("question").get<std::string>();
    auto qt = parse_question_type(j.at("question_type").get<std::string>());
    auto tt = parse_target_type(j.at("target_type").get<std::string>());
    if (!qt || !tt) throw FormatError("item has an unknown question or target type");
    q.question_type = *qt;
    q.target_type = *tt;
    q.answer_key = j.at("answer_key").get<std::string>();
    q.category_tags = j.at("category_tags").get<std::vector<std::string>>();
    q.params = j.at("params");
    q.prompt_records = j.at("prompt_records");
    q.distractors = j.value("distractors", std::vector<std::string>{});
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed item: {}", e.what()));
  }
}

std::string serialize_items(const std::vector<QAItem>& items) {
  std::string out;
  for (const auto& q : items) {
    out += q.to_json().dump();
    out += '\n';
  }
  return out;
}

std::vector<QAItem> parse_items(std::string_view jsonl) {
  std::vector<QAItem> out;
  std::size_t line_no = 0;
  while (!jsonl.empty()) {
    ++line_no;
    auto nl = jsonl.find('\n');
    std::string_view line = jsonl.substr(0, nl);
    jsonl = nl == std::string_view::npos ? std::string_view{} : jsonl.substr(nl + 1);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(fmt::format("questions line {}: invalid JSON", line_no));
    out.push_back(QAItem::from_json(j));
  }
  return out;
}

void write_items(const std::vector<QAItem>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << serialize_items(items);
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<QAItem> read_items(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_items(ss.str());
}

void DirectorySink::put(const std::string& relative_path, const std::vector<std::uint8_t>& bytes) {
  auto path = root_ / relative_path;
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", path.parent_path().string(), ec.message()));
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::uint64_t scan_seed(std::uint64_t root, std::string_view scan_id) { return root ^ semsam::fnv1a64(scan_id); }

}  // namespace misground
