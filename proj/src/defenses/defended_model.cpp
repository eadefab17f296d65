#include "defenses/defended_model.hpp"

namespace advlab::defenses {

DefendedModel DefendedModel::bare(nn::Classifier c) {
  DefendedModel m;
  m.raw_input = c.input_shape;
  m.classifier = std::move(c);
  return m;
}

bool DefendedModel::stochastic() const {
  if (sap.enabled) return true;
  for (const Preprocessor& p : chain)
    if (p.stochastic()) return true;
  return false;
}

bool DefendedModel::has_shattered_stage() const {
  for (const Preprocessor& p : chain)
    if (p.shattered()) return true;
  return false;
}

void DefendedModel::validate() const {
  Shape s = raw_input;
  for (const Preprocessor& p : chain) s = p.output_shape(s);
  if (s != classifier.input_shape)
    throw Error("defended model '" + name + "': chain output " + shape_str(s) +
                " does not match classifier input " + shape_str(classifier.input_shape));
}

std::vector<PreDraw> DefendedModel::sample_draws(Rng& rng) const {
  std::vector<PreDraw> draws;
  Shape s = raw_input;
  for (const Preprocessor& p : chain) {
    draws.push_back(p.sample(s, rng));
    s = p.output_shape(s);
  }
  return draws;
}

int DefendedModel::enumeration_count() const {
  long total = 1;
  Shape s = raw_input;
  for (const Preprocessor& p : chain) {
    const int c = p.enumeration_count(s);
    if (c < 0) return -1;
    total *= c;
    s = p.output_shape(s);
  }
  return static_cast<int>(total);
}

std::vector<PreDraw> DefendedModel::draws_at(int index) const {
  std::vector<PreDraw> draws(chain.size());
  Shape s = raw_input;
  std::vector<int> counts;
  std::vector<Shape> shapes;
  for (const Preprocessor& p : chain) {
    shapes.push_back(s);
    counts.push_back(p.enumeration_count(s));
    s = p.output_shape(s);
  }
  for (std::size_t i = chain.size(); i-- > 0;) {
    draws[i] = chain[i].draw_at(shapes[i], index % counts[i]);
    index /= counts[i];
  }
  return draws;
}

Tensor DefendedModel::preprocess(const Tensor& x, const std::vector<PreDraw>& draws) const {
  if (draws.size() != chain.size()) throw Error("preprocess: draw count mismatch");
  Tensor h = x.detached();
  for (std::size_t i = 0; i < chain.size(); ++i) h = chain[i].apply(h, draws[i]);
  return h;
}

nn::ForwardOptions sap_forward_options(const SapConfig& sap, Rng& rng) {
  nn::ForwardOptions fo;
  if (!sap.enabled) return fo;
  const double ratio = sap.sample_ratio;
  fo.post_activation = [&rng, ratio](Tape& tape, const Tensor& h, int) {
    const std::size_t cols = h.rank() >= 2 ? h.size() / h.shape[0] : h.size();
    const std::size_t rows = h.size() / cols;
    const int samples = std::max(1, static_cast<int>(ratio * static_cast<double>(cols)));
    Tensor mask = Tensor::zeros(h.shape);
    Tensor keep = Tensor::zeros(h.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      auto [m, k] = sap_mask_keep(&h.data[r * cols], cols, samples, rng);
      for (std::size_t i = 0; i < cols; ++i) {
        mask.data[r * cols + i] = m[i];
        keep.data[r * cols + i] = k[i];
      }
    }
    return tape.div(tape.mul(h, mask), keep);
  };
  return fo;
}

Tensor DefendedModel::record_logits(Tape& tape, const Tensor& x_on_tape,
                                    const std::vector<PreDraw>& draws,
                                    const SurrogateRegistry* registry, Rng* sap_rng) const {
  if (draws.size() != chain.size()) throw Error("record_logits: draw count mismatch");
  Tensor h = x_on_tape;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const Surrogate s = registry ? registry->at(static_cast<int>(i)) : Surrogate::None;
    h = chain[i].record(tape, h, draws[i], s);
  }
  Tensor batch = tape.reshape(h, {1, h.shape[0], h.shape[1], h.shape[2]});

  nn::ForwardOptions fo;
  if (sap.enabled) {
    if (!sap_rng) throw Error("record_logits: SAP enabled but no rng supplied");
    fo = sap_forward_options(sap, *sap_rng);
  }
  return classifier.forward(tape, batch, fo);
}

int DefendedModel::classify_once(const Tensor& x, Rng& rng) const {
  Tape tape;
  Tensor xl = tape.leaf(x);
  std::vector<PreDraw> draws = sample_draws(rng);
  Tensor logits = record_logits(tape, xl, draws, nullptr, &rng);
  return nn::argmax_row(logits, 0);
}

std::vector<int> DefendedModel::classify_trials(const Tensor& x, int n, Rng& rng) const {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = classify_once(x, rng);
  return out;
}

bool DefendedModel::ever_correct(const Tensor& x, int label, int trials, Rng& rng) const {
  for (int i = 0; i < trials; ++i)
    if (classify_once(x, rng) == label) return true;
  return false;
}

}  // namespace advlab::defenses
