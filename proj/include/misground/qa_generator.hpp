#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "misground/overlay.hpp"
#include "misground/relations.hpp"
#include "misground/volume.hpp"

namespace misground {

enum class VisualPrompt { none, point, bbox, mask };
enum class TextRef { name, color, letter };
enum class TargetType { structure_name, label, relation_anatomical, relation_colloquial, slice_direction };
enum class QuestionType { open, closed_true, closed_inverted };
enum class MediaKind { volume_3d, slice_2d };
enum class Ablation { text_only, blank_background };

std::string_view to_string(VisualPrompt v);
std::string_view to_string(TextRef v);
std::string_view to_string(TargetType v);
std::string_view to_string(QuestionType v);
std::string_view to_string(MediaKind v);
std::string_view to_string(Ablation v);
std::optional<VisualPrompt> parse_visual_prompt(std::string_view s);
std::optional<TextRef> parse_text_ref(std::string_view s);
std::optional<TargetType> parse_target_type(std::string_view s);
std::optional<QuestionType> parse_question_type(std::string_view s);
std::optional<MediaKind> parse_media_kind(std::string_view s);
std::optional<Ablation> parse_ablation(std::string_view s);

struct GenConfig {
  std::vector<VisualPrompt> visual_prompt_kinds{VisualPrompt::none, VisualPrompt::point, VisualPrompt::bbox,
                                                VisualPrompt::mask};
  std::vector<TextRef> text_ref_modes{TextRef::name, TextRef::color, TextRef::letter};
  std::vector<TargetType> target_types{TargetType::structure_name, TargetType::label, TargetType::relation_anatomical,
                                       TargetType::relation_colloquial, TargetType::slice_direction};
  std::vector<QuestionType> question_types{QuestionType::open, QuestionType::closed_true,
                                           QuestionType::closed_inverted};
  std::vector<OrientationMode> orientation_modes{OrientationMode::standard_view, OrientationMode::ras_storage};
  std::vector<SliceDirection> slice_directions{SliceDirection::axial, SliceDirection::coronal,
                                               SliceDirection::sagittal};
  std::vector<MediaKind> media{MediaKind::volume_3d, MediaKind::slice_2d};
  std::vector<Ablation> ablations{Ablation::text_only, Ablation::blank_background};
  std::size_t pairs_per_cell = 2;
  std::uint64_t seed = 0;

  /// Minimum centroid separation (voxels) for a relation to count.
  double margin = 3.0;
  bool ras_most_origin = true;
  /// Resample to this isotropic spacing (mm) before anything else.
  std::optional<double> isotropic_spacing;
  WindowSpec window = WindowSpec::hu();
  RenderStyle style;
  ViewConvention view = ViewConvention::defaults();
  std::string scan_id = "scan";

  /// Throws ValidationError on empty selections, duplicates or bad numbers.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Reads a TOML generator config. Keys absent from the file keep their
/// defaults; the seed is not read from the file.
GenConfig parse_gen_config(std::string_view toml_text);
GenConfig load_gen_config(const std::filesystem::path& path);

struct QAItem {
  std::string id;
  std::optional<std::string> media_ref;  // null for text-only items
  std::string question;
  QuestionType question_type = QuestionType::open;
  TargetType target_type = TargetType::relation_anatomical;
  std::string answer_key;
  std::vector<std::string> category_tags;
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json prompt_records = nlohmann::json::array();
  /// Well-formed wrong answers, used by the stub responder.
  std::vector<std::string> distractors;

  nlohmann::json to_json() const;
  static QAItem from_json(const nlohmann::json& j);
  bool operator==(const QAItem&) const = default;
};

/// One canonical (sorted-key) JSON object per line.
std::string serialize_items(const std::vector<QAItem>& items);
std::vector<QAItem> parse_items(std::string_view jsonl);
void write_items(const std::vector<QAItem>& items, const std::filesystem::path& path);
std::vector<QAItem> read_items(const std::filesystem::path& path);

/// Receives rendered media as (relative path, PNG bytes).
class MediaSink {
 public:
  virtual ~MediaSink() = default;
  virtual void put(const std::string& relative_path, const std::vector<std::uint8_t>& bytes) = 0;
};

class DirectorySink : public MediaSink {
 public:
  explicit DirectorySink(std::filesystem::path root) : root_(std::move(root)) {}
  void put(const std::string& relative_path, const std::vector<std::uint8_t>& bytes) override;

 private:
  std::filesystem::path root_;
};

class MemorySink : public MediaSink {
 public:
  void put(const std::string& relative_path, const std::vector<std::uint8_t>& bytes) override {
    files[relative_path] = bytes;
  }
  std::map<std::string, std::vector<std::uint8_t>> files;
};

class Generator {
 public:
  /// Reorients (and optionally resamples) the scan and annotates it.
  Generator(const Volume& volume, const LabelMap& labels, GenConfig cfg, MediaSink& sink);
  ~Generator();
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// Items for every parameter cell, in a fixed cell order; ids unassigned.
  std::vector<QAItem> base_items();
  /// Text-only and blank-background twins of base items, per cfg.ablations.
  std::vector<QAItem> make_ablation_items(const std::vector<QAItem>& base);

  /// The scan as questions see it (after reorientation).
  const LabelMap& labels() const;
  const std::vector<StructureAnnotation>& annotations() const;
  nlohmann::json coverage() const;
  nlohmann::json media_manifest() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct GenResult {
  std::vector<QAItem> items;
  nlohmann::json coverage;
  nlohmann::json media_manifest;
};

/// Base items plus ablations, with ids "<scan_id>-00000", ... in order.
GenResult generate(const Volume& volume, const LabelMap& labels, const GenConfig& cfg, MediaSink& sink);

/// Writes questions.jsonl, coverage.json and media_manifest.json into `dir`.
void write_generation(const GenResult& result, const std::filesystem::path& dir);

/// Per-scan seed derived from a root seed, stable across schedules.
std::uint64_t scan_seed(std::uint64_t root, std::string_view scan_id);

}  // namespace misground
