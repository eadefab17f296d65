#include "defenses/preprocessor.hpp"

#include <cmath>

namespace advlab::defenses {

const char* pre_kind_name(PreKind k) {
  switch (k) {
    case PreKind::None: return "none";
    case PreKind::Thermometer: return "thermometer";
    case PreKind::BitDepth: return "bit_depth";
    case PreKind::JpegProxy: return "jpeg_proxy";
    case PreKind::TvMinimize: return "tv_minimize";
    case PreKind::CropRescale: return "crop_rescale";
    case PreKind::RescalePad: return "rescale_pad";
    case PreKind::ManifoldProject: return "manifold_project";
  }
  return "?";
}

std::optional<PreKind> pre_kind_from(const std::string& name) {
  for (PreKind k : {PreKind::None, PreKind::Thermometer, PreKind::BitDepth, PreKind::JpegProxy,
                    PreKind::TvMinimize, PreKind::CropRescale, PreKind::RescalePad,
                    PreKind::ManifoldProject})
    if (name == pre_kind_name(k)) return k;
  return std::nullopt;
}

const char* surrogate_name(Surrogate s) {
  switch (s) {
    case Surrogate::None: return "none";
    case Surrogate::Identity: return "identity";
    case Surrogate::TauHat: return "tau_hat";
  }
  return "?";
}

std::optional<Surrogate> surrogate_from(const std::string& name) {
  for (Surrogate s : {Surrogate::None, Surrogate::Identity, Surrogate::TauHat})
    if (name == surrogate_name(s)) return s;
  return std::nullopt;
}

Preprocessor Preprocessor::thermometer(int levels) {
  Preprocessor p;
  p.kind = PreKind::Thermometer;
  p.levels = levels;
  return p;
}
Preprocessor Preprocessor::bit_depth(int bits) {
  Preprocessor p;
  p.kind = PreKind::BitDepth;
  p.bits = bits;
  return p;
}
Preprocessor Preprocessor::jpeg(int quality) {
  Preprocessor p;
  p.kind = PreKind::JpegProxy;
  p.quality = quality;
  return p;
}
Preprocessor Preprocessor::tv_minimize(double keep_prob, double lambda, int steps, double step) {
  Preprocessor p;
  p.kind = PreKind::TvMinimize;
  p.keep_prob = keep_prob;
  p.tv_lambda = lambda;
  p.tv_steps = steps;
  p.tv_step = step;
  return p;
}
Preprocessor Preprocessor::crop_rescale(double fraction) {
  Preprocessor p;
  p.kind = PreKind::CropRescale;
  p.crop_fraction = fraction;
  return p;
}
Preprocessor Preprocessor::rescale_pad(int out_side) {
  Preprocessor p;
  p.kind = PreKind::RescalePad;
  p.pad_to = out_side;
  return p;
}
Preprocessor Preprocessor::manifold_project(
    std::shared_ptr<const manifold::ProjectionDefense> d) {
  Preprocessor p;
  p.kind = PreKind::ManifoldProject;
  p.projection = std::move(d);
  return p;
}

bool Preprocessor::stochastic() const {
  switch (kind) {
    case PreKind::TvMinimize:
    case PreKind::CropRescale:
    case PreKind::RescalePad:
      return true;
    default:
      return false;
  }
}

bool Preprocessor::shattered() const {
  switch (kind) {
    case PreKind::Thermometer:
    case PreKind::BitDepth:
    case PreKind::JpegProxy:
    case PreKind::TvMinimize:
    case PreKind::ManifoldProject:
      return true;
    default:
      return false;
  }
}

Shape Preprocessor::output_shape(const Shape& in) const {
  if (in.size() != 3) throw ShapeError(name() + std::string(": input must be H x W x C"));
  switch (kind) {
    case PreKind::Thermometer:
      return {in[0], in[1], in[2] * static_cast<std::size_t>(levels)};
    case PreKind::RescalePad:
      return {static_cast<std::size_t>(pad_to), static_cast<std::size_t>(pad_to), in[2]};
    default:
      return in;
  }
}

namespace {

struct CropGeom {
  int side_h, side_w, max_oy, max_ox;
};

CropGeom crop_geom(const Shape& in, double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw Error("crop_rescale: fraction must be in (0, 1]");
  CropGeom g;
  g.side_h = std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(in[0]))));
  g.side_w = std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(in[1]))));
  g.max_oy = static_cast<int>(in[0]) - g.side_h;
  g.max_ox = static_cast<int>(in[1]) - g.side_w;
  return g;
}

}  // namespace

PreDraw Preprocessor::sample(const Shape& in, Rng& rng) const {
  PreDraw d;
  switch (kind) {
    case PreKind::TvMinimize: {
      const std::size_t n = shape_numel(in);
      d.ints.resize(n);
      for (std::size_t i = 0; i < n; ++i) d.ints[i] = rng.chance(keep_prob) ? 1 : 0;
      break;
    }
    case PreKind::CropRescale: {
      const CropGeom g = crop_geom(in, crop_fraction);
      d.ints = {static_cast<int>(rng.below(g.max_oy + 1)),
                static_cast<int>(rng.below(g.max_ox + 1))};
      break;
    }
    case PreKind::RescalePad: {
      const int h = static_cast<int>(in[0]);
      if (pad_to <= h) throw Error("rescale_pad: output side must exceed input side");
      const int r = h + static_cast<int>(rng.below(pad_to - h));
      const int oy = static_cast<int>(rng.below(pad_to - r + 1));
      const int ox = static_cast<int>(rng.below(pad_to - r + 1));
      d.ints = {r, oy, ox};
      break;
    }
    default:
      break;
  }
  return d;
}

int Preprocessor::enumeration_count(const Shape& in) const {
  switch (kind) {
    case PreKind::TvMinimize:
      return -1;
    case PreKind::CropRescale: {
      const CropGeom g = crop_geom(in, crop_fraction);
      return (g.max_oy + 1) * (g.max_ox + 1);
    }
    case PreKind::RescalePad: {
      const int h = static_cast<int>(in[0]);
      int total = 0;
      for (int r = h; r < pad_to; ++r) total += (pad_to - r + 1) * (pad_to - r + 1);
      return total;
    }
    default:
      return 1;  // point mass: the empty draw
  }
}

PreDraw Preprocessor::draw_at(const Shape& in, int index) const {
  PreDraw d;
  switch (kind) {
    case PreKind::CropRescale: {
      const CropGeom g = crop_geom(in, crop_fraction);
      const int cols = g.max_ox + 1;
      if (index < 0 || index >= (g.max_oy + 1) * cols)
        throw Error("crop_rescale: enumeration index out of range");
      d.ints = {index / cols, index % cols};
      return d;
    }
    case PreKind::RescalePad: {
      const int h = static_cast<int>(in[0]);
      int at = index;
      for (int r = h; r < pad_to; ++r) {
        const int side = pad_to - r + 1;
        if (at < side * side) {
          d.ints = {r, at / side, at % side};
          return d;
        }
        at -= side * side;
      }
      throw Error("rescale_pad: enumeration index out of range");
    }
    case PreKind::TvMinimize:
      throw Error("tv_minimize: randomness is not enumerable");
    default:
      if (index != 0) throw Error(name() + std::string(": enumeration index out of range"));
      return d;
  }
}

Tensor Preprocessor::apply(const Tensor& x, const PreDraw& draw) const {
  switch (kind) {
    case PreKind::None:
      return x.detached();
    case PreKind::Thermometer: {
      Tensor t = thermometer_encode(x, levels);
      return Tensor(output_shape(x.shape), std::move(t.data));
    }
    case PreKind::BitDepth:
      return bit_depth_reduce(x, bits);
    case PreKind::JpegProxy:
      return jpeg_proxy(x, quality);
    case PreKind::TvMinimize: {
      if (draw.ints.size() != x.size())
        throw Error("tv_minimize: draw does not match input size");
      Tensor mask = Tensor::zeros(x.shape);
      for (std::size_t i = 0; i < x.size(); ++i) mask.data[i] = draw.ints[i] ? 1.0 : 0.0;
      return tv_minimize_masked(x, mask, tv_lambda, tv_steps, tv_step);
    }
    case PreKind::ManifoldProject: {
      if (!projection) throw Error("manifold_project: no projection defense attached");
      return projection->project(x).image;
    }
    case PreKind::CropRescale:
    case PreKind::RescalePad: {
      Tape tape;
      Tensor xl = tape.leaf(x);
      return record(tape, xl, draw, Surrogate::None).detached();
    }
  }
  throw Error("preprocessor: unknown kind");
}

Tensor Preprocessor::apply_sampled(const Tensor& x, Rng& rng) const {
  return apply(x, sample(x.shape, rng));
}

Tensor Preprocessor::record(Tape& tape, const Tensor& x_on_tape, const PreDraw& draw,
                            Surrogate surrogate) const {
  switch (kind) {
    case PreKind::None:
      return x_on_tape;

    case PreKind::CropRescale: {
      const CropGeom g = crop_geom(x_on_tape.shape, crop_fraction);
      if (draw.ints.size() != 2) throw Error("crop_rescale: bad draw");
      Tensor win = tape.slice(x_on_tape, draw.ints[0], draw.ints[1], g.side_h, g.side_w);
      return tape.resize_bilinear(win, static_cast<int>(x_on_tape.shape[0]),
                                  static_cast<int>(x_on_tape.shape[1]));
    }

    case PreKind::RescalePad: {
      if (draw.ints.size() != 3) throw Error("rescale_pad: bad draw");
      const int r = draw.ints[0], oy = draw.ints[1], ox = draw.ints[2];
      Tensor scaled = tape.resize_nearest(x_on_tape, r, r);
      return tape.pad(scaled, oy, pad_to - r - oy, ox, pad_to - r - ox);
    }

    case PreKind::Thermometer:
    case PreKind::BitDepth:
    case PreKind::JpegProxy:
    case PreKind::TvMinimize:
    case PreKind::ManifoldProject: {
      Tensor forward = apply(tape.value(tape.require_node(x_on_tape)), draw);
      Tensor out = tape.custom(name(), {x_on_tape}, std::move(forward), Tape::zero_rule());
      switch (surrogate) {
        case Surrogate::None:
          break;
        case Surrogate::Identity:
          tape.set_override(out.node, Tape::identity_rule());
          break;
        case Surrogate::TauHat:
          if (kind != PreKind::Thermometer)
            throw Error(name() + std::string(": tau_hat surrogate only fits thermometer"));
          tape.set_override(out.node, thermometer_tau_hat_rule(levels));
          break;
      }
      return out;
    }
  }
  throw Error("preprocessor: unknown kind");
}

}  // namespace advlab::defenses
