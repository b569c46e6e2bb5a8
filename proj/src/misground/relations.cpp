#include "misground/relations.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace misground {

namespace {

struct Accumulator {
  std::array<std::int64_t, 3> lo{};
  std::array<std::int64_t, 3> hi{};
  std::array<double, 3> sum{};
  std::size_t count = 0;

  void add(std::int64_t i, std::int64_t j, std::int64_t k) {
    std::array<std::int64_t, 3> p{i, j, k};
    for (int a = 0; a < 3; ++a) {
      if (count == 0 || p[a] < lo[a]) lo[a] = p[a];
      if (count == 0 || p[a] > hi[a]) hi[a] = p[a];
      sum[a] += static_cast<double>(p[a]);
    }
    ++count;
  }
};

std::vector<StructureAnnotation> finish(const LabelMap& lm, const std::map<std::int32_t, Accumulator>& acc) {
  std::vector<StructureAnnotation> out;
  out.reserve(acc.size());
  for (const auto& [label, a] : acc) {
    StructureAnnotation s;
    s.label = label;
    s.name = lm.name_of(label);
    s.bbox_min = a.lo;
    s.bbox_max = a.hi;
    for (int d = 0; d < 3; ++d) s.centroid[d] = a.sum[d] / static_cast<double>(a.count);
    s.source = AnnotationSource::mask;
    s.voxel_count = a.count;
    out.push_back(std::move(s));
  }
  return out;
}

int sign_of(double v) { return v > 0 ? 1 : -1; }

// Centroids are ratios of voxel sums, so a separation of exactly `margin` can
// come out a rounding step short; accept it.
constexpr double kMarginSlack = 1e-9;

bool separated(double d, double margin) { return d != 0.0 && std::abs(d) >= margin - kMarginSlack; }

}  // namespace

std::vector<StructureAnnotation> annotate_structures(const LabelMap& lm) {
  std::map<std::int32_t, Accumulator> acc;
  const auto& d = lm.geom.dims;
  std::size_t idx = 0;
  for (std::int64_t k = 0; k < d[2]; ++k)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t i = 0; i < d[0]; ++i) {
        std::int32_t l = lm.labels[idx++];
        if (l != 0) acc[l].add(i, j, k);
      }
  return finish(lm, acc);
}

std::vector<StructureAnnotation> annotate_slice(const LabelMap& lm, int axis, std::int64_t index) {
  if (axis < 0 || axis > 2 || index < 0 || index >= lm.geom.dims[axis])
    throw ValidationError("slice index outside the label map");
  std::map<std::int32_t, Accumulator> acc;
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi = lm.geom.dims;
  lo[axis] = index;
  hi[axis] = index + 1;
  for (std::int64_t k = lo[2]; k < hi[2]; ++k)
    for (std::int64_t j = lo[1]; j < hi[1]; ++j)
      for (std::int64_t i = lo[0]; i < hi[0]; ++i) {
        std::int32_t l = lm.at(i, j, k);
        if (l != 0) acc[l].add(i, j, k);
      }
  return finish(lm, acc);
}

StructureAnnotation annotation_from_bbox(std::int32_t label, std::string name, const std::array<std::int64_t, 3>& lo,
                                         const std::array<std::int64_t, 3>& hi) {
  StructureAnnotation s;
  s.label = label;
  s.name = std::move(name);
  s.bbox_min = lo;
  s.bbox_max = hi;
  s.source = AnnotationSource::bbox;
  s.voxel_count = 1;
  for (int a = 0; a < 3; ++a) {
    if (lo[a] > hi[a]) throw ValidationError("bbox min exceeds max");
    s.centroid[a] = 0.5 * static_cast<double>(lo[a] + hi[a]);
    s.voxel_count *= static_cast<std::size_t>(hi[a] - lo[a] + 1);
  }
  return s;
}

std::string_view to_string(RelationTerm t) {
  switch (t) {
    case RelationTerm::superior: return "superior";
    case RelationTerm::inferior: return "inferior";
    case RelationTerm::anterior: return "anterior";
    case RelationTerm::posterior: return "posterior";
    case RelationTerm::left: return "left";
    case RelationTerm::right: return "right";
    case RelationTerm::above: return "above";
    case RelationTerm::below: return "below";
    case RelationTerm::left_of: return "left of";
    case RelationTerm::right_of: return "right of";
    case RelationTerm::in_front_of: return "in front of";
    case RelationTerm::behind: return "behind";
  }
  return "?";
}

std::optional<RelationTerm> parse_relation_term(std::string_view s) {
  for (RelationTerm t : kAllRelationTerms)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

Vocabulary vocabulary_of(RelationTerm t) {
  return static_cast<int>(t) < static_cast<int>(RelationTerm::above) ? Vocabulary::anatomical : Vocabulary::colloquial;
}

std::string_view to_string(Vocabulary v) { return v == Vocabulary::anatomical ? "anatomical" : "colloquial"; }

RelationTerm opposite(RelationTerm t) {
  // terms are declared in opposite pairs
  int i = static_cast<int>(t);
  return static_cast<RelationTerm>(i % 2 == 0 ? i + 1 : i - 1);
}

RelationTerm anatomical_term(PatientAxis axis, int sign) {
  switch (axis) {
    case PatientAxis::lr: return sign > 0 ? RelationTerm::right : RelationTerm::left;
    case PatientAxis::ap: return sign > 0 ? RelationTerm::anterior : RelationTerm::posterior;
    case PatientAxis::si: return sign > 0 ? RelationTerm::superior : RelationTerm::inferior;
  }
  return RelationTerm::superior;
}

RelationTerm colloquial_term(ImageAxis axis, int sign) {
  switch (axis) {
    case ImageAxis::x: return sign > 0 ? RelationTerm::right_of : RelationTerm::left_of;
    case ImageAxis::y: return sign > 0 ? RelationTerm::below : RelationTerm::above;
    case ImageAxis::slice: return sign > 0 ? RelationTerm::behind : RelationTerm::in_front_of;
  }
  return RelationTerm::above;
}

std::array<double, 3> patient_delta(const StructureAnnotation& a, const StructureAnnotation& b, const StorageSigns& signs) {
  std::array<double, 3> d{};
  for (int i = 0; i < 3; ++i) d[i] = signs[i] * (a.centroid[i] - b.centroid[i]);
  return d;
}

std::optional<RelationTerm> anatomical_relation(const StructureAnnotation& a, const StructureAnnotation& b,
                                                PatientAxis axis, double margin, const StorageSigns& signs) {
  double d = patient_delta(a, b, signs)[static_cast<int>(axis)];
  if (!separated(d, margin)) return std::nullopt;
  return anatomical_term(axis, sign_of(d));
}

std::optional<RelationTerm> colloquial_relation(const StructureAnnotation& a, const StructureAnnotation& b,
                                                const FrameMapping& mapping, ImageAxis axis, double margin,
                                                const StorageSigns& signs) {
  double d = mapping.apply(patient_delta(a, b, signs))[static_cast<int>(axis)];
  if (!separated(d, margin)) return std::nullopt;
  return colloquial_term(axis, sign_of(d));
}

RelationTerm colloquial_equivalent(RelationTerm anatomical, const FrameMapping& mapping) {
  if (vocabulary_of(anatomical) != Vocabulary::anatomical) throw ValidationError("expected an anatomical term");
  int idx = static_cast<int>(anatomical);
  // superior/inferior -> S, anterior/posterior -> A, left/right -> R
  PatientAxis axis = idx < 2 ? PatientAxis::si : idx < 4 ? PatientAxis::ap : PatientAxis::lr;
  int sign = anatomical_term(axis, 1) == anatomical ? 1 : -1;
  for (int r = 0; r < 3; ++r) {
    int g = mapping.m[r][static_cast<int>(axis)];
    if (g != 0) return colloquial_term(static_cast<ImageAxis>(r), g * sign);
  }
  throw ValidationError("frame mapping does not use every patient axis");
}

nlohmann::json relation_audit(const ViewConvention& conv) {
  nlohmann::json terms = nlohmann::json::array();
  for (RelationTerm t : kAllRelationTerms)
    terms.push_back({{"term", to_string(t)}, {"vocabulary", to_string(vocabulary_of(t))}, {"opposite", to_string(opposite(t))}});

  nlohmann::json anat = nlohmann::json::object();
  for (auto axis : {PatientAxis::lr, PatientAxis::ap, PatientAxis::si})
    anat[std::string(to_string(axis))] = {{"positive", to_string(anatomical_term(axis, 1))},
                                          {"negative", to_string(anatomical_term(axis, -1))}};
  nlohmann::json coll = nlohmann::json::object();
  for (auto axis : {ImageAxis::x, ImageAxis::y, ImageAxis::slice})
    coll[std::string(to_string(axis))] = {{"positive", to_string(colloquial_term(axis, 1))},
                                          {"negative", to_string(colloquial_term(axis, -1))}};

  nlohmann::json mappings = nlohmann::json::array();
  const std::array<std::pair<const char*, StorageSigns>, 2> storages{
      {{"index_toward_ras", {1, 1, 1}}, {"ras_most_origin", {-1, -1, -1}}}};
  for (auto dir : {SliceDirection::axial, SliceDirection::coronal, SliceDirection::sagittal})
    for (auto mode : {OrientationMode::standard_view, OrientationMode::ras_storage})
      for (const auto& [storage, signs] : storages) {
        FrameMapping f = frame_mapping(dir, mode, signs, conv);
        nlohmann::json equivalents = nlohmann::json::object();
        for (int i = 0; i < 6; ++i) {
          auto t = static_cast<RelationTerm>(i);
          equivalents[std::string(to_string(t))] = to_string(colloquial_equivalent(t, f));
        }
        mappings.push_back({{"slice_direction", to_string(dir)},
                            {"orientation_mode", to_string(mode)},
                            {"storage", storage},
                            {"rows", "x,y,slice"},
                            {"columns", "R,A,S"},
                            {"matrix", f.m},
                            {"anatomical_to_colloquial", equivalents}});
      }

  return {{"terms", terms},
          {"anatomical_axes", anat},
          {"colloquial_axes", coll},
          {"image_axes", "x grows rightward, y grows downward, slice index grows later in the sequence"},
          {"frame_mappings", mappings}};
}

}  // namespace misground
