#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "biascope/dataset.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/rng.hpp"
#include "biascope/text.hpp"

namespace biascope {

/// Planted-bias world: embedding = normalize(alpha * u_c + beta * v_a + eps),
/// with the class-aligned attribute (c mod B) drawn with probability rho.
struct SynthSpec {
  int num_classes = 2;
  int num_attributes = 2;
  int dim = 64;
  double correlation = 0.95;
  double class_strength = 0.7;
  double attribute_strength = 1.0;
  double noise_sigma = 0.3;
  int samples_per_class = 1000;
  int val_per_class = 250;
  int test_per_class = 500;
  int fillers_per_caption = 2;
  std::vector<std::string> class_tokens = {"waterbird", "landbird", "songbird", "seabird", "raptor",
                                           "parrot",    "penguin",  "owl",      "heron",   "finch"};
  std::vector<std::string> attribute_tokens = {"beach", "forest", "desert", "snow", "city",
                                               "meadow", "river", "cave",   "farm", "mountain"};
  std::vector<std::string> filler_tokens = {"sunny",   "day",     "picture",  "bright", "view",
                                            "outdoor", "scene",   "nature",   "colorful", "calm"};
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidSpec, m); };
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (num_attributes < 2) fail("num_attributes must be >= 2");
    if (dim < num_classes + num_attributes) fail("dim must be >= num_classes + num_attributes");
    if (!(correlation >= 0.0 && correlation <= 1.0)) fail("correlation must lie in [0, 1]");
    if (!(class_strength >= 0.0) || !(attribute_strength >= 0.0) || !(noise_sigma >= 0.0)) {
      fail("strengths and noise_sigma must be >= 0");
    }
    if (samples_per_class < 1 || val_per_class < 0 || test_per_class < 0) fail("bad per-class sample counts");
    if (fillers_per_caption < 0) fail("fillers_per_caption must be >= 0");
    if (static_cast<int>(class_tokens.size()) < num_classes) fail("not enough class tokens");
    if (static_cast<int>(attribute_tokens.size()) < num_attributes) fail("not enough attribute tokens");
    if (fillers_per_caption > 0 && filler_tokens.empty()) fail("filler_tokens is empty");
    std::set<std::string> seen;
    auto single = [&](const std::string& t) {
      auto toks = text::tokenize(t);
      if (toks.size() != 1 || toks[0] != t) fail("vocabulary token '" + t + "' must be one lowercase word");
      if (text::is_stop_word(t)) fail("vocabulary token '" + t + "' is a stop word");
      if (!seen.insert(t).second) fail("vocabulary token '" + t + "' is used twice");
    };
    for (int c = 0; c < num_classes; ++c) single(class_tokens[static_cast<std::size_t>(c)]);
    for (int a = 0; a < num_attributes; ++a) single(attribute_tokens[static_cast<std::size_t>(a)]);
    for (const auto& f : filler_tokens) single(f);
  }

  int aligned_attribute(int c) const { return c % num_attributes; }

  Json to_json() const {
    return Json{{"num_classes", num_classes},
                {"num_attributes", num_attributes},
                {"dim", dim},
                {"correlation", correlation},
                {"class_strength", class_strength},
                {"attribute_strength", attribute_strength},
                {"noise_sigma", noise_sigma},
                {"samples_per_class", samples_per_class},
                {"val_per_class", val_per_class},
                {"test_per_class", test_per_class},
                {"fillers_per_caption", fillers_per_caption},
                {"class_tokens", class_tokens},
                {"attribute_tokens", attribute_tokens},
                {"filler_tokens", filler_tokens},
                {"seed", seed}};
  }

  // Missing keys keep their defaults; unknown keys are rejected.
  static SynthSpec from_json(const Json& j) {
    SynthSpec s;
    io::require_only(j,
                     {"num_classes", "num_attributes", "dim", "correlation", "class_strength",
                      "attribute_strength", "noise_sigma", "samples_per_class", "val_per_class",
                      "test_per_class", "fillers_per_caption", "class_tokens", "attribute_tokens",
                      "filler_tokens", "seed"},
                     "synth spec");
    try {
      auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
      };
      get("num_classes", s.num_classes);
      get("num_attributes", s.num_attributes);
      get("dim", s.dim);
      get("correlation", s.correlation);
      get("class_strength", s.class_strength);
      get("attribute_strength", s.attribute_strength);
      get("noise_sigma", s.noise_sigma);
      get("samples_per_class", s.samples_per_class);
      get("val_per_class", s.val_per_class);
      get("test_per_class", s.test_per_class);
      get("fillers_per_caption", s.fillers_per_caption);
      get("class_tokens", s.class_tokens);
      get("attribute_tokens", s.attribute_tokens);
      get("filler_tokens", s.filler_tokens);
      get("seed", s.seed);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, std::string("synth spec: ") + e.what());
    }
    return s;
  }
};

/// Seeded class/attribute directions plus the text-embedding oracle that goes
/// with them. Class and attribute directions are Gram-Schmidt orthonormal.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(SynthSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(spec_.seed ^ 0x5eedd1ec7105ULL);
    const auto d = static_cast<std::size_t>(spec_.dim);
    std::vector<Vector> basis;
    const int total = spec_.num_classes + spec_.num_attributes;
    for (int k = 0; k < total; ++k) {
      Vector v(d);
      for (;;) {
        for (double& x : v) x = rng.normal();
        for (const Vector& b : basis) axpy(-dot(v, b), b, v);
        if (l2_norm(v) > 1e-6) break;
      }
      basis.push_back(normalize_embedding(v));
    }
    class_dirs_.assign(basis.begin(), basis.begin() + spec_.num_classes);
    attr_dirs_.assign(basis.begin() + spec_.num_classes, basis.end());
  }

  const SynthSpec& spec() const { return spec_; }
  const Vector& class_direction(int c) const { return class_dirs_.at(static_cast<std::size_t>(c)); }
  const Vector& attribute_direction(int a) const { return attr_dirs_.at(static_cast<std::size_t>(a)); }

  int class_of_token(std::string_view token) const {
    for (int c = 0; c < spec_.num_classes; ++c) {
      if (spec_.class_tokens[static_cast<std::size_t>(c)] == token) return c;
    }
    return -1;
  }
  int attribute_of_token(std::string_view token) const {
    for (int a = 0; a < spec_.num_attributes; ++a) {
      if (spec_.attribute_tokens[static_cast<std::size_t>(a)] == token) return a;
    }
    return -1;
  }

  /// Class/attribute tokens map to their planted directions; anything else to
  /// a unit vector seeded by the token text and orthogonal to every planted
  /// direction, so filler words carry no class or attribute signal.
  Vector token_vector(std::string_view token) const {
    if (int c = class_of_token(token); c >= 0) return class_direction(c);
    if (int a = attribute_of_token(token); a >= 0) return attribute_direction(a);
    Rng rng(fnv1a(token) ^ (spec_.seed * 0x9e3779b97f4a7c15ULL));
    Vector v(static_cast<std::size_t>(spec_.dim));
    for (;;) {
      for (double& x : v) x = rng.normal();
      for (const Vector& u : class_dirs_) axpy(-dot(v, u), u, v);
      for (const Vector& u : attr_dirs_) axpy(-dot(v, u), u, v);
      if (l2_norm(v) > 1e-6) break;
    }
    return normalize_embedding(v);
  }

  /// Normalized sum of the token vectors (repeats count).
  Vector embed_text(std::string_view phrase) const {
    const auto tokens = text::tokenize(phrase);
    if (tokens.empty()) throw Error(ErrorCode::ZeroVector, "cannot embed empty text");
    Vector sum(static_cast<std::size_t>(spec_.dim), 0.0);
    for (const auto& t : tokens) axpy(1.0, token_vector(t), sum);
    return normalize_embedding(sum);
  }

  /// Noise-free group mean direction, alpha * u_c + beta * v_a.
  Vector centroid(int c, int a) const {
    Vector v(static_cast<std::size_t>(spec_.dim), 0.0);
    axpy(spec_.class_strength, class_direction(c), v);
    axpy(spec_.attribute_strength, attribute_direction(a), v);
    return v;
  }

  /// One sample around the (c, a) centroid; `sigma` overrides the world noise.
  Vector sample(int c, int a, Rng& rng, std::optional<double> sigma = std::nullopt) const {
    Vector v = centroid(c, a);
    const double s = sigma.value_or(spec_.noise_sigma);
    for (double& x : v) x += s * rng.normal();
    return normalize_embedding(v);
  }

 private:
  SynthSpec spec_;
  std::vector<Vector> class_dirs_;
  std::vector<Vector> attr_dirs_;
};

class SyntheticEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit SyntheticEmbeddingProvider(SyntheticWorld world) : world_(std::move(world)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(world_.spec().dim); }
  bool contains(std::string_view text) const override { return !text::tokenize(text).empty(); }
  Vector embed(std::string_view text) const override { return world_.embed_text(text); }
  const SyntheticWorld& world() const { return world_; }

 private:
  SyntheticWorld world_;
};

/// Generates the full planted-bias dataset (train/val/test, captions and
/// bias_truth). Pure function of the spec, seed included.
inline Dataset synth_dataset(const SynthSpec& spec) {
  const SyntheticWorld world(spec);
  Rng rng(spec.seed);
  Dataset ds;
  ds.dim = static_cast<std::size_t>(spec.dim);
  for (int c = 0; c < spec.num_classes; ++c) ds.class_names.push_back(spec.class_tokens[static_cast<std::size_t>(c)]);
  ds.model = "synthetic-oracle";

  struct Part {
    Split split;
    int per_class;
  };
  const Part parts[] = {{Split::Train, spec.samples_per_class},
                        {Split::Val, spec.val_per_class},
                        {Split::Test, spec.test_per_class}};
  const auto B = static_cast<std::uint64_t>(spec.num_attributes);
  for (const Part& part : parts) {
    int counter = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int i = 0; i < part.per_class; ++i) {
        int attr;
        if (part.split == Split::Test) {
          attr = i % spec.num_attributes;  // exactly balanced groups
        } else {
          const int aligned = spec.aligned_attribute(c);
          if (rng.uniform() < spec.correlation) {
            attr = aligned;
          } else {
            auto k = static_cast<int>(rng.below(B - 1));
            attr = k >= aligned ? k + 1 : k;
          }
        }
        Sample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s-%06d", std::string(to_string(part.split)).c_str(), counter++);
        s.id = idbuf;
        s.split = part.split;
        s.label = c;
        s.bias_truth = attr;
        s.embedding = world.sample(c, attr, rng);
        std::string caption = "a photo of a " + spec.class_tokens[static_cast<std::size_t>(c)] + " in the " +
                              spec.attribute_tokens[static_cast<std::size_t>(attr)];
        std::vector<std::string> fillers;
        for (int f = 0; f < spec.fillers_per_caption; ++f) {
          fillers.push_back(spec.filler_tokens[rng.below(spec.filler_tokens.size())]);
        }
        if (!fillers.empty()) caption += " with " + text::join(fillers, " and ");
        s.caption = std::move(caption);
        ds.samples.push_back(std::move(s));
      }
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace biascope
