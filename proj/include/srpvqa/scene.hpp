#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "srpvqa/tensor.hpp"

namespace srpvqa {

// Malformed or inconsistent structured data (scene graphs, dataset records, checkpoints).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<std::string_view, 4> kColors = {"red", "blue", "green", "yellow"};
inline constexpr std::array<std::string_view, 5> kShapes = {"ball", "cube", "cone", "cylinder", "pyramid"};

enum class Predicate : std::uint8_t { LeftOf = 0, RightOf, Above, Below, Near, On };
inline constexpr std::size_t kPredicateCount = 6;
inline constexpr std::array<std::string_view, kPredicateCount> kPredicateNames = {"left of", "right of", "above",
                                                                                  "below",   "near",     "on"};

inline std::string_view predicate_name(Predicate p) { return kPredicateNames[static_cast<std::size_t>(p)]; }

inline std::optional<Predicate> parse_predicate(std::string_view name) {
  for (std::size_t i = 0; i < kPredicateCount; ++i)
    if (kPredicateNames[i] == name) return static_cast<Predicate>(i);
  return std::nullopt;
}

inline bool is_directional(Predicate p) { return static_cast<std::size_t>(p) < 4; }

// Object labels are "<color> <shape>"; index = color * |shapes| + shape.
inline constexpr std::size_t kObjectLabelCount = kColors.size() * kShapes.size();

inline std::size_t object_label_index(std::size_t color, std::size_t shape) { return color * kShapes.size() + shape; }
inline std::string object_label_name(std::size_t label) {
  return std::string(kColors[label / kShapes.size()]) + " " + std::string(kShapes[label % kShapes.size()]);
}
inline std::optional<std::size_t> parse_object_label(std::string_view name) {
  for (std::size_t i = 0; i < kObjectLabelCount; ++i)
    if (object_label_name(i) == name) return i;
  return std::nullopt;
}

/// Axis-aligned box, (x0, y0) top-left and (x1, y1) bottom-right; y grows downward.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  std::array<double, 4> coords() const { return {x0, y0, x1, y1}; }

  Box normalized(double extent_w, double extent_h) const {
    return Box{x0 / extent_w, y0 / extent_h, x1 / extent_w, y1 / extent_h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline Box union_box(const Box& a, const Box& b) {
  return Box{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

/// Crisp spatial semantics, all thresholds as fractions of the image extent.
struct GeometryRules {
  double margin = 0.10;          // center offset needed for left/right/above/below
  double near_radius = 0.25;     // center distance below which objects are near
  double contact_tolerance = 0.05;  // |bottom(a) - top(b)| allowed for "on"
};

/// Whether `subject predicate object` holds for the given boxes in an extent_w x extent_h image.
inline bool predicate_holds(Predicate p, const Box& s, const Box& o, double extent_w, double extent_h,
                            const GeometryRules& rules = {}) {
  const double mx = rules.margin * extent_w;
  const double my = rules.margin * extent_h;
  switch (p) {
    case Predicate::LeftOf:
      return s.cx() + mx < o.cx();
    case Predicate::RightOf:
      return s.cx() > o.cx() + mx;
    case Predicate::Above:
      return s.cy() + my < o.cy();
    case Predicate::Below:
      return s.cy() > o.cy() + my;
    case Predicate::Near: {
      const double dx = (s.cx() - o.cx()) / extent_w;
      const double dy = (s.cy() - o.cy()) / extent_h;
      return std::sqrt(dx * dx + dy * dy) < rules.near_radius;
    }
    case Predicate::On: {
      const bool overlap_x = std::min(s.x1, o.x1) > std::max(s.x0, o.x0);
      const bool touching = std::abs(s.y1 - o.y0) <= rules.contact_tolerance * extent_h;
      return overlap_x && touching && s.cy() < o.cy();
    }
  }
  return false;
}

struct SceneObject {
  std::size_t shape = 0;
  std::size_t color = 0;
  Box box;
  Tensor feature;  // latent visual feature f_j, 1 x d_v

  std::size_t label() const { return object_label_index(color, shape); }
  std::string name() const { return object_label_name(label()); }

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Edge {
  std::size_t subject = 0;
  Predicate predicate = Predicate::LeftOf;
  std::size_t object = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge& a, const Edge& b) {
    if (auto c = a.subject <=> b.subject; c != 0) return c;
    if (auto c = a.predicate <=> b.predicate; c != 0) return c;
    return a.object <=> b.object;
  }
};

struct Scene {
  double width = 100.0;
  double height = 100.0;
  std::vector<SceneObject> objects;
  std::vector<Edge> graph;

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class QuestionType { Binary, Open };

enum class QuestionKind { Exists, Color, RelationVerify, RelationQuery };

struct QAPair {
  std::string question;
  std::string answer;
  QuestionType qtype = QuestionType::Binary;
  bool depends_on_relations = false;
  QuestionKind kind = QuestionKind::Exists;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

inline std::string_view question_kind_name(QuestionKind k) {
  switch (k) {
    case QuestionKind::Exists:
      return "exists";
    case QuestionKind::Color:
      return "color";
    case QuestionKind::RelationVerify:
      return "relation_verify";
    case QuestionKind::RelationQuery:
      return "relation_query";
  }
  return "exists";
}

inline QuestionKind parse_question_kind(std::string_view s) {
  if (s == "exists") return QuestionKind::Exists;
  if (s == "color") return QuestionKind::Color;
  if (s == "relation_verify") return QuestionKind::RelationVerify;
  if (s == "relation_query") return QuestionKind::RelationQuery;
  throw SchemaError("unknown question kind '" + std::string(s) + "'");
}

}  // namespace srpvqa
