#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "defenses/transforms.hpp"
#include "core/tape.hpp"
#include "manifold/projection.hpp"

namespace advlab::defenses {

enum class PreKind {
  None,
  Thermometer,
  BitDepth,
  JpegProxy,
  TvMinimize,
  CropRescale,
  RescalePad,
  ManifoldProject,
};

const char* pre_kind_name(PreKind k);
std::optional<PreKind> pre_kind_from(const std::string& name);

/// One realization of a preprocessor's randomness.
struct PreDraw {
  std::vector<int> ints;
};

/// Backward substitute for a non-differentiable stage.
enum class Surrogate { None, Identity, TauHat };

const char* surrogate_name(Surrogate s);
std::optional<Surrogate> surrogate_from(const std::string& name);

/// A single input-transformation stage. Pure given an explicit draw; the
/// true forward is always used, gradients are a property of how the stage is
/// recorded (default rule vs installed surrogate).
struct Preprocessor {
  PreKind kind = PreKind::None;

  int levels = 10;            // thermometer
  int bits = 3;               // bit depth
  int quality = 75;           // jpeg proxy
  double keep_prob = 0.6;     // tv minimization Bernoulli(q)
  double tv_lambda = 0.05;    // tv weight
  int tv_steps = 30;          // tv inner budget
  double tv_step = 0.1;       // tv inner step size
  double crop_fraction = 0.75;
  int pad_to = 19;            // rescale_pad output side
  std::shared_ptr<const manifold::ProjectionDefense> projection;

  static Preprocessor thermometer(int levels);
  static Preprocessor bit_depth(int bits);
  static Preprocessor jpeg(int quality);
  static Preprocessor tv_minimize(double keep_prob, double lambda, int steps, double step);
  static Preprocessor crop_rescale(double fraction);
  static Preprocessor rescale_pad(int out_side);
  static Preprocessor manifold_project(std::shared_ptr<const manifold::ProjectionDefense> d);

  /// Randomized at evaluation time?
  bool stochastic() const;
  /// True gradient nonexistent or unusable (needs a surrogate under BPDA)?
  bool shattered() const;

  Shape output_shape(const Shape& in) const;

  PreDraw sample(const Shape& in, Rng& rng) const;
  /// Number of distinct draws when the randomness is finite; -1 otherwise.
  /// Deterministic kinds report 1 (the empty draw).
  int enumeration_count(const Shape& in) const;
  PreDraw draw_at(const Shape& in, int index) const;

  /// True forward transform under the given draw.
  Tensor apply(const Tensor& x, const PreDraw& draw) const;
  Tensor apply_sampled(const Tensor& x, Rng& rng) const;

  /// Record the true forward on the tape. Shattered kinds become one opaque
  /// node whose default backward is the zero rule; `surrogate` installs the
  /// BPDA override. Differentiable kinds are recorded as primitive ops and
  /// ignore the surrogate.
  Tensor record(Tape& tape, const Tensor& x_on_tape, const PreDraw& draw,
                Surrogate surrogate) const;

  std::string name() const { return pre_kind_name(kind); }
};

}  // namespace advlab::defenses
