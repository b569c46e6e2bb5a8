#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "misground/volume.hpp"

namespace misground {

enum class AnnotationSource { mask, bbox };

struct StructureAnnotation {
  std::int32_t label = 0;
  std::string name;
  std::array<std::int64_t, 3> bbox_min{};  // inclusive voxel index box
  std::array<std::int64_t, 3> bbox_max{};
  std::array<double, 3> centroid{};  // mean voxel index
  AnnotationSource source = AnnotationSource::mask;
  std::size_t voxel_count = 0;
};

/// One annotation per non-zero label present, ordered by label id.
std::vector<StructureAnnotation> annotate_structures(const LabelMap& lm);

/// Annotations restricted to one slice (array axis `axis` fixed at `index`);
/// labels absent from the slice are omitted.
std::vector<StructureAnnotation> annotate_slice(const LabelMap& lm, int axis, std::int64_t index);

/// Box-only annotation (no mask available); centroid is the box centre.
StructureAnnotation annotation_from_bbox(std::int32_t label, std::string name, const std::array<std::int64_t, 3>& lo,
                                         const std::array<std::int64_t, 3>& hi);

enum class Vocabulary { anatomical, colloquial };

enum class RelationTerm {
  superior,
  inferior,
  anterior,
  posterior,
  left,
  right,
  above,
  below,
  left_of,
  right_of,
  in_front_of,  // earlier slice
  behind,       // later slice
};

inline constexpr std::array<RelationTerm, 12> kAllRelationTerms{
    RelationTerm::superior, RelationTerm::inferior, RelationTerm::anterior, RelationTerm::posterior,
    RelationTerm::left,     RelationTerm::right,    RelationTerm::above,    RelationTerm::below,
    RelationTerm::left_of,  RelationTerm::right_of, RelationTerm::in_front_of, RelationTerm::behind};

/// Answer-key spelling: "superior", "left of", "in front of", ...
std::string_view to_string(RelationTerm t);
std::optional<RelationTerm> parse_relation_term(std::string_view s);
Vocabulary vocabulary_of(RelationTerm t);
std::string_view to_string(Vocabulary v);
RelationTerm opposite(RelationTerm t);

/// Term for a positive or negative delta along a patient axis (R, A, S positive).
RelationTerm anatomical_term(PatientAxis axis, int sign);
/// Term for a positive or negative delta along an image axis (x right, y down,
/// slice index increasing later in the sequence).
RelationTerm colloquial_term(ImageAxis axis, int sign);

/// Patient-frame delta of a's centroid relative to b's, in voxel units.
std::array<double, 3> patient_delta(const StructureAnnotation& a, const StructureAnnotation& b, const StorageSigns& signs);

/// Relation of a to b along a patient axis ("a is <term> to b"); nullopt when
/// the centroids differ by less than `margin` voxels along that axis (with
/// 1e-9 slack for rounding in the centroid ratios).
std::optional<RelationTerm> anatomical_relation(const StructureAnnotation& a, const StructureAnnotation& b,
                                                PatientAxis axis, double margin, const StorageSigns& signs);

/// Same contract in the viewer's frame after mapping patient deltas to image axes.
std::optional<RelationTerm> colloquial_relation(const StructureAnnotation& a, const StructureAnnotation& b,
                                                const FrameMapping& mapping, ImageAxis axis, double margin,
                                                const StorageSigns& signs);

/// Colloquial term an anatomical term turns into under a frame mapping.
RelationTerm colloquial_equivalent(RelationTerm anatomical, const FrameMapping& mapping);

/// Term tables, opposites and the frame mappings for every slice direction and
/// orientation mode, for downstream audit.
nlohmann::json relation_audit(const ViewConvention& conv = ViewConvention::defaults());

}  // namespace misground
