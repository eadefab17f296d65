#include "lid/lid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nn/checkpoint.hpp"

namespace advlab::lid {

double euclidean(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("lid distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double lid_from_knn(std::vector<double> dists) {
  if (dists.size() < 2) throw Error("lid: need at least 2 neighbor distances");
  const double rk = *std::max_element(dists.begin(), dists.end());
  for (double r : dists)
    if (r <= 0.0) throw Error("lid: zero distance to a neighbor (duplicate sample)");
  double s = 0.0;
  for (double r : dists) s += std::log(r / rk);
  if (s == 0.0) throw Error("lid: degenerate neighborhood (all neighbor distances equal)");
  return -static_cast<double>(dists.size()) / s;
}

double lid_estimate(const Tensor& x, const std::vector<Tensor>& minibatch, int k,
                    const DistanceFn& dist, int exclude_index) {
  if (k < 2) throw Error("lid: k must be >= 2");
  std::vector<double> dists;
  dists.reserve(minibatch.size());
  for (std::size_t j = 0; j < minibatch.size(); ++j) {
    if (static_cast<int>(j) == exclude_index) continue;
    dists.push_back(dist(x, minibatch[j]));
  }
  if (dists.size() <= static_cast<std::size_t>(k))
    throw Error("lid: minibatch must exceed k (" + std::to_string(dists.size()) +
                " candidates for k = " + std::to_string(k) + ")");
  std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
  dists.resize(k);
  return lid_from_knn(std::move(dists));
}

namespace {

// rows of one captured layer, flattened per sample
std::vector<Tensor> layer_rows(const Tensor& layer) {
  const std::size_t n = layer.shape[0];
  const std::size_t d = layer.size() / n;
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor r = Tensor::zeros({d});
    std::copy_n(layer.data.begin() + i * d, d, r.data.begin());
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

LidFeatures lid_features(const nn::Classifier& model, const Tensor& x, const Tensor& minibatch,
                         int k) {
  if (minibatch.rank() != 4) throw ShapeError("lid_features: minibatch must be N x H x W x C");
  const std::size_t n = minibatch.shape[0];

  // forward the minibatch with x appended as the last row
  Tensor all = Tensor::zeros({n + 1, minibatch.shape[1], minibatch.shape[2], minibatch.shape[3]});
  std::copy(minibatch.data.begin(), minibatch.data.end(), all.data.begin());
  std::copy(x.data.begin(), x.data.end(), all.data.begin() + n * x.size());

  Tape tape;
  std::vector<Tensor> captured;
  nn::ForwardOptions fo;
  fo.capture = &captured;
  (void)model.forward(tape, all, fo);

  LidFeatures out;
  for (std::size_t layer = 0; layer < captured.size(); ++layer) {
    std::vector<Tensor> rows = layer_rows(captured[layer]);
    Tensor mine = std::move(rows.back());
    rows.pop_back();
    try {
      out.per_layer.push_back(lid_estimate(mine, rows, k, euclidean));
    } catch (const Error& e) {
      throw Error("lid_features: layer " + std::to_string(layer) + ": " + e.what());
    }
  }
  return out;
}

double LidDetector::score(const LidFeatures& f) const {
  if (f.per_layer.size() != weights.size())
    throw Error("lid detector: feature length " + std::to_string(f.per_layer.size()) +
                " does not match " + std::to_string(weights.size()));
  double z = bias;
  for (std::size_t i = 0; i < weights.size(); ++i)
    z += weights[i] * (f.per_layer[i] - feat_mean[i]) / feat_std[i];
  return 1.0 / (1.0 + std::exp(-z));
}

double auc(const std::vector<double>& negatives, const std::vector<double>& positives) {
  if (negatives.empty() || positives.empty()) throw Error("auc: empty class");
  double wins = 0.0;
  for (double p : positives)
    for (double q : negatives) {
      if (p > q) wins += 1.0;
      else if (p == q) wins += 0.5;
    }
  return wins / (static_cast<double>(negatives.size()) * positives.size());
}

DetectorTrainResult train_detector(const std::vector<LidFeatures>& clean,
                                   const std::vector<LidFeatures>& adversarial,
                                   const DetectorTrainOptions& opt) {
  if (clean.empty() || adversarial.empty())
    throw Error("train_detector: both classes must be nonempty");
  const std::size_t dim = clean[0].per_layer.size();

  std::string bad;
  auto check = [&](const std::vector<LidFeatures>& fs, const char* tag) {
    for (std::size_t i = 0; i < fs.size(); ++i) {
      if (fs[i].per_layer.size() != dim) bad += std::string(" ") + tag + std::to_string(i);
      else
        for (double v : fs[i].per_layer)
          if (!std::isfinite(v)) {
            bad += std::string(" ") + tag + std::to_string(i);
            break;
          }
    }
  };
  check(clean, "clean#");
  check(adversarial, "adv#");
  if (!bad.empty()) throw Error("train_detector: degenerate features:" + bad);

  // deterministic holdout split per class
  auto split = [&](const std::vector<LidFeatures>& fs, std::uint64_t key) {
    std::vector<std::size_t> idx(fs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = Rng(opt.seed).split(key);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t hold = std::max<std::size_t>(1, fs.size() * opt.holdout_fraction);
    return std::pair(std::vector<std::size_t>(idx.begin(), idx.end() - hold),
                     std::vector<std::size_t>(idx.end() - hold, idx.end()));
  };
  auto [clean_tr, clean_ho] = split(clean, 1);
  auto [adv_tr, adv_ho] = split(adversarial, 2);
  if (clean_tr.empty() || adv_tr.empty()) throw Error("train_detector: train split is empty");

  LidDetector det;
  det.k = opt.k;
  det.trained_on = opt.trained_on;
  det.feat_mean.assign(dim, 0.0);
  det.feat_std.assign(dim, 0.0);
  const double ntr = static_cast<double>(clean_tr.size() + adv_tr.size());
  for (std::size_t j = 0; j < dim; ++j) {
    double m = 0.0;
    for (std::size_t i : clean_tr) m += clean[i].per_layer[j];
    for (std::size_t i : adv_tr) m += adversarial[i].per_layer[j];
    m /= ntr;
    double v = 0.0;
    for (std::size_t i : clean_tr) v += std::pow(clean[i].per_layer[j] - m, 2);
    for (std::size_t i : adv_tr) v += std::pow(adversarial[i].per_layer[j] - m, 2);
    det.feat_mean[j] = m;
    det.feat_std[j] = std::max(std::sqrt(v / ntr), 1e-9);
  }

  det.weights.assign(dim, 0.0);
  det.bias = 0.0;

  auto znorm = [&](const LidFeatures& f, std::size_t j) {
    return (f.per_layer[j] - det.feat_mean[j]) / det.feat_std[j];
  };

  // full-batch logistic regression
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    auto accumulate = [&](const LidFeatures& f, double label) {
      double z = det.bias;
      for (std::size_t j = 0; j < dim; ++j) z += det.weights[j] * znorm(f, j);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - label;
      for (std::size_t j = 0; j < dim; ++j) gw[j] += err * znorm(f, j);
      gb += err;
    };
    for (std::size_t i : clean_tr) accumulate(clean[i], 0.0);
    for (std::size_t i : adv_tr) accumulate(adversarial[i], 1.0);
    for (std::size_t j = 0; j < dim; ++j) det.weights[j] -= opt.lr * gw[j] / ntr;
    det.bias -= opt.lr * gb / ntr;
  }

  // threshold: clean train scores at the 95th percentile (about 5% clean
  // flagged adversarial)
  std::vector<double> clean_scores;
  for (std::size_t i : clean_tr) {
    LidFeatures f = clean[i];
    clean_scores.push_back(det.score(f));
  }
  std::sort(clean_scores.begin(), clean_scores.end());
  const std::size_t q = std::min(clean_scores.size() - 1,
                                 static_cast<std::size_t>(0.95 * clean_scores.size()));
  det.threshold = std::clamp(clean_scores[q] + 1e-9, 1e-6, 1.0 - 1e-6);

  std::vector<double> ho_neg, ho_pos;
  for (std::size_t i : clean_ho) ho_neg.push_back(det.score(clean[i]));
  for (std::size_t i : adv_ho) ho_pos.push_back(det.score(adversarial[i]));

  DetectorTrainResult res;
  res.detector = std::move(det);
  res.holdout_auc = auc(ho_neg, ho_pos);
  return res;
}

double detect(const LidDetector& det, const nn::Classifier& model, const Tensor& x,
              const Tensor& minibatch) {
  return det.score(lid_features(model, x, minibatch, det.k));
}

void save_detector(const std::string& path, const LidDetector& det) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("detector checkpoint: cannot open '" + path + "'");
  auto pod = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write(nn::kCheckpointMagic, 8);
  pod(nn::kCheckpointVersion);
  const std::uint32_t kind = static_cast<std::uint32_t>(nn::RecordKind::LidDetector);
  pod(kind);
  const std::uint32_t dim = static_cast<std::uint32_t>(det.weights.size());
  pod(dim);
  const std::int32_t k = det.k;
  pod(k);
  pod(det.bias);
  pod(det.threshold);
  const std::uint16_t len = static_cast<std::uint16_t>(det.trained_on.size());
  pod(len);
  out.write(det.trained_on.data(), len);
  out.write(reinterpret_cast<const char*>(det.weights.data()), dim * sizeof(double));
  out.write(reinterpret_cast<const char*>(det.feat_mean.data()), dim * sizeof(double));
  out.write(reinterpret_cast<const char*>(det.feat_std.data()), dim * sizeof(double));
  if (!out) throw IoError("detector checkpoint: short write to '" + path + "'");
}

LidDetector load_detector(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("detector checkpoint: cannot open '" + path + "'");
  auto pod = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (in.gcount() != sizeof(v)) throw IoError("detector checkpoint: truncated '" + path + "'");
  };
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, nn::kCheckpointMagic, 8) != 0)
    throw IoError("detector checkpoint: bad magic");
  std::uint32_t version, kind, dim;
  pod(version);
  if (version != nn::kCheckpointVersion) throw IoError("detector checkpoint: bad version");
  pod(kind);
  if (kind != static_cast<std::uint32_t>(nn::RecordKind::LidDetector))
    throw IoError("detector checkpoint: record is not a LID detector");
  pod(dim);
  LidDetector det;
  std::int32_t k;
  pod(k);
  det.k = k;
  pod(det.bias);
  pod(det.threshold);
  std::uint16_t len;
  pod(len);
  det.trained_on.resize(len);
  in.read(det.trained_on.data(), len);
  det.weights.resize(dim);
  det.feat_mean.resize(dim);
  det.feat_std.resize(dim);
  in.read(reinterpret_cast<char*>(det.weights.data()), dim * sizeof(double));
  in.read(reinterpret_cast<char*>(det.feat_mean.data()), dim * sizeof(double));
  in.read(reinterpret_cast<char*>(det.feat_std.data()), dim * sizeof(double));
  if (in.gcount() != static_cast<std::streamsize>(dim * sizeof(double)))
    throw IoError("detector checkpoint: truncated '" + path + "'");
  return det;
}

AdaptiveProbeResult adaptive_lid_probe(const nn::Classifier& model, const LidDetector& det,
                                       const nn::Dataset& samples, const Tensor& minibatch,
                                       const AdaptiveProbeOptions& opt) {
  AdaptiveProbeResult res;
  const std::size_t nb = minibatch.shape[0];
  const int k = det.k;

  for (std::size_t s = 0; s < samples.size(); ++s) {
    Tensor x0 = samples.image(s);
    const int y = samples.labels[s];
    Tensor x = x0;
    Tensor m1 = Tensor::zeros(x.shape), m2 = Tensor::zeros(x.shape);

    for (int t = 0; t < opt.iterations; ++t) {
      // freeze the neighbor assignment for this step
      std::vector<Tensor> captured_const;
      {
        Tape probe;
        Tensor all = Tensor::zeros(
            {nb + 1, minibatch.shape[1], minibatch.shape[2], minibatch.shape[3]});
        std::copy(minibatch.data.begin(), minibatch.data.end(), all.data.begin());
        std::copy(x.data.begin(), x.data.end(), all.data.begin() + nb * x.size());
        nn::ForwardOptions fo;
        fo.capture = &captured_const;
        (void)model.forward(probe, all, fo);
        for (Tensor& tleaf : captured_const) tleaf = tleaf.detached();
      }

      Tape tape;
      Tensor xl = tape.leaf(x);
      Tensor b1 = tape.reshape(xl, {1, x.shape[0], x.shape[1], x.shape[2]});
      std::vector<Tensor> acts;
      nn::ForwardOptions fo;
      fo.capture = &acts;
      Tensor logits = model.forward(tape, b1, fo);

      Tensor margin = tape.clamp(tape.cw_margin(logits, y, false), 0.0, 1e30);

      // differentiable LID with frozen k-NN assignment, via squared distances
      Tensor lid_total = Tensor::scalar(0.0);
      for (std::size_t layer = 0; layer < acts.size(); ++layer) {
        const Tensor& frozen = captured_const[layer];
        const std::size_t d = frozen.size() / (nb + 1);
        // my current activation row (the appended sample is recomputed on-tape)
        Tensor mine = tape.reshape(acts[layer], {d});

        std::vector<std::pair<double, std::size_t>> order;
        const Tensor my_frozen = [&] {
          Tensor r = Tensor::zeros({d});
          std::copy_n(frozen.data.begin() + nb * d, d, r.data.begin());
          return r;
        }();
        for (std::size_t j = 0; j < nb; ++j) {
          double sq = 0.0;
          for (std::size_t q = 0; q < d; ++q) {
            const double dd = my_frozen.data[q] - frozen.data[j * d + q];
            sq += dd * dd;
          }
          order.push_back({sq, j});
        }
        std::sort(order.begin(), order.end());

        // s = mean over i of 0.5 * (log r_i^2 - log r_k^2); lid = -1/s
        Tensor ssum = Tensor::scalar(0.0);
        Tensor rk2;
        for (int i = 0; i < k; ++i) {
          const std::size_t j = order[i].second;
          Tensor row = Tensor::zeros({d});
          std::copy_n(frozen.data.begin() + j * d, d, row.data.begin());
          Tensor diff = tape.sub(mine, row);
          Tensor sq = tape.sum(tape.mul(diff, diff));
          Tensor logsq = tape.log(tape.add(sq, Tensor::scalar(1e-30)));
          if (i == k - 1) rk2 = logsq;
          ssum = tape.add(ssum, logsq);
        }
        Tensor mean_log =
            tape.mul(Tensor::scalar(0.5 / k),
                     tape.sub(ssum, tape.mul(Tensor::scalar(static_cast<double>(k)), rk2)));
        Tensor lid_val = tape.div(Tensor::scalar(-1.0), mean_log);
        lid_total = tape.add(lid_total, lid_val);
      }

      Tensor xdiff = tape.sub(xl, x0.detached());
      Tensor recon = tape.sum(tape.mul(xdiff, xdiff));
      Tensor obj = tape.add(
          recon, tape.mul(Tensor::scalar(opt.alpha), tape.add(margin, lid_total)));

      GradientMap gm = tape.backward(obj, {xl});
      const Tensor& g = gm.at(xl);
      const double b1c = 0.9, b2c = 0.999;
      const double c1 = 1.0 - std::pow(b1c, t + 1), c2 = 1.0 - std::pow(b2c, t + 1);
      for (std::size_t i = 0; i < x.size(); ++i) {
        m1.data[i] = b1c * m1.data[i] + (1 - b1c) * g.data[i];
        m2.data[i] = b2c * m2.data[i] + (1 - b2c) * g.data[i] * g.data[i];
        x.data[i] =
            std::clamp(x.data[i] - opt.lr * (m1.data[i] / c1) / (std::sqrt(m2.data[i] / c2) + 1e-8),
                       0.0, 1.0);
      }
    }

    res.attempts++;
    const bool fooled = model.predict_one(x) != y;
    if (fooled) {
      res.adversarial++;
      if (!det.flags_adversarial(lid_features(model, x, minibatch, det.k))) res.evaded++;
    }
  }
  res.evasion_rate = res.attempts ? static_cast<double>(res.evaded) / res.attempts : 0.0;
  return res;
}

}  // namespace advlab::lid
