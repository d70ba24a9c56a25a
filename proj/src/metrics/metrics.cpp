#include "madiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "madiff/synthbench.hpp"

namespace madiff::metrics {

namespace {

void check_pair(const char* op, const Trajectory& a, const Trajectory& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(op) + ": empty trajectory");
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
}

double distance(geo::Point2 p, geo::Point2 g) {
  const double dx = p.u - g.u, dy = p.v - g.v;
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<std::size_t> unique_fixations(const SaliencyMap& map, std::vector<std::size_t> fix) {
  if (fix.empty()) throw std::invalid_argument("no fixations");
  std::sort(fix.begin(), fix.end());
  fix.erase(std::unique(fix.begin(), fix.end()), fix.end());
  if (fix.back() >= map.values.size())
    throw std::invalid_argument("fixation index " + std::to_string(fix.back()) + " outside a map of " +
                                std::to_string(map.values.size()) + " cells");
  return fix;
}

std::vector<double> normalized(const SaliencyMap& m) {
  const double s = m.sum();
  if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("saliency map must have a positive finite sum");
  std::vector<double> out(m.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m.values[i] < 0.0) throw std::invalid_argument("saliency map has a negative cell");
    out[i] = m.values[i] / s;
  }
  return out;
}

}  // namespace

double ade(const Trajectory& pred, const Trajectory& gt) {
  check_pair("ade", pred, gt);
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) acc += distance(pred[t], gt[t]);
  return (1.0 / static_cast<double>(pred.size())) * acc;
}

double fde(const Trajectory& pred, const Trajectory& gt) {
  check_pair("fde", pred, gt);
  return distance(pred.back(), gt.back());
}

std::vector<double> default_wde_weights(std::size_t n) {
  std::vector<double> w(n);
  const double total = 0.5 * static_cast<double>(n) * static_cast<double>(n + 1);
  for (std::size_t t = 0; t < n; ++t) w[t] = static_cast<double>(t + 1) * static_cast<double>(n) / total;
  return w;
}

double wde(const std::vector<Trajectory>& samples, const Trajectory& gt, std::vector<double> weights) {
  if (samples.empty()) throw std::invalid_argument("wde: no samples");
  const std::size_t n = gt.size();
  if (weights.empty()) weights = default_wde_weights(n);
  if (weights.size() != n)
    throw std::invalid_argument("wde: " + std::to_string(weights.size()) + " weights for " + std::to_string(n) +
                                " waypoints");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("wde: weights must be finite and nonnegative");
    wsum += w;
  }
  if (wsum == 0.0) throw std::invalid_argument("wde: all weights are zero");
  for (double& w : weights) w *= static_cast<double>(n) / wsum;

  double acc = 0.0;
  for (const auto& s : samples) {
    check_pair("wde", s, gt);
    double e = 0.0;
    for (std::size_t t = 0; t < n; ++t) e += weights[t] * distance(s[t], gt[t]);
    acc += e / static_cast<double>(n);
  }
  return acc / static_cast<double>(samples.size());
}

Trajectory mean_trajectory(const std::vector<Trajectory>& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_trajectory: no samples");
  Trajectory out(samples.front().size());
  for (const auto& s : samples) {
    if (s.size() != out.size()) throw std::invalid_argument("mean_trajectory: samples differ in length");
    for (std::size_t t = 0; t < s.size(); ++t) {
      out[t].u += s[t].u;
      out[t].v += s[t].v;
    }
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (auto& p : out) {
    p.u *= inv;
    p.v *= inv;
  }
  return out;
}

std::vector<geo::Point2> interaction_points(const std::vector<Trajectory>& samples, geo::Point2 center) {
  std::vector<geo::Point2> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.empty()) throw std::invalid_argument("interaction_points: empty trajectory");
    std::size_t best = 0;
    double best_d = distance(s[0], center);
    for (std::size_t t = 1; t < s.size(); ++t) {
      const double d = distance(s[t], center);
      if (d < best_d) {
        best_d = d;
        best = t;
      }
    }
    out.push_back(s[best]);
  }
  return out;
}

double SaliencyMap::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

std::size_t SaliencyMap::cell_of(geo::Point2 p) const {
  auto index = [](double c, std::size_t n) {
    const double k = std::floor(c * static_cast<double>(n));
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n - 1)));
  };
  return index(p.v, height) * width + index(p.u, width);
}

SaliencyMap affordance_map(const std::vector<geo::Point2>& points, double sigma, std::size_t resolution) {
  if (!(sigma > 0.0)) throw std::invalid_argument("affordance_map: sigma must be positive");
  if (resolution == 0) throw std::invalid_argument("affordance_map: resolution must be positive");
  if (points.empty()) throw std::invalid_argument("affordance_map: no points");
  SaliencyMap m(resolution, resolution);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < resolution; ++y)
    for (std::size_t x = 0; x < resolution; ++x) {
      const double cu = (static_cast<double>(x) + 0.5) / static_cast<double>(resolution);
      const double cv = (static_cast<double>(y) + 0.5) / static_cast<double>(resolution);
      double v = 0.0;
      for (const auto& p : points) {
        const double du = cu - p.u, dv = cv - p.v;
        v += std::exp(-(du * du + dv * dv) * inv2s2);
      }
      m.at(x, y) = v;
    }
  const double s = m.sum();
  if (!(s > 0.0)) throw std::invalid_argument("affordance_map: mixture vanishes on the grid");
  for (double& v : m.values) v /= s;
  return m;
}

double sim(const SaliencyMap& p, const SaliencyMap& q) {
  if (p.width != q.width || p.height != q.height) throw std::invalid_argument("sim: map shapes differ");
  const auto a = normalized(p), b = normalized(q);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return s;
}

double auc_judd(const SaliencyMap& map, const std::vector<std::size_t>& fixations) {
  const auto fix = unique_fixations(map, fixations);
  const std::size_t n_fix = fix.size(), n_other = map.values.size() - n_fix;
  if (n_other == 0) throw std::invalid_argument("auc_judd: every cell is fixated");
  std::vector<bool> fixated(map.values.size(), false);
  for (std::size_t i : fix) fixated[i] = true;

  std::vector<double> thresholds;
  for (std::size_t i : fix) thresholds.push_back(map.values[i]);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  double area = 0.0, prev_tp = 0.0, prev_fp = 0.0;
  for (double thr : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < map.values.size(); ++i)
      if (map.values[i] >= thr) ++(fixated[i] ? tp : fp);
    const double tpr = static_cast<double>(tp) / static_cast<double>(n_fix);
    const double fpr = static_cast<double>(fp) / static_cast<double>(n_other);
    area += 0.5 * (fpr - prev_fp) * (tpr + prev_tp);
    prev_tp = tpr;
    prev_fp = fpr;
  }
  area += 0.5 * (1.0 - prev_fp) * (1.0 + prev_tp);
  return area;
}

double nss(const SaliencyMap& map, const std::vector<std::size_t>& fixations) {
  const auto fix = unique_fixations(map, fixations);
  const double n = static_cast<double>(map.values.size());
  const double mean = map.sum() / n;
  double var = 0.0;
  for (double v : map.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) throw std::invalid_argument("nss: constant map has zero variance");
  double acc = 0.0;
  for (std::size_t i : fix) acc += (map.values[i] - mean) / sd;
  return acc / static_cast<double>(fix.size());
}

void write_pgm(const SaliencyMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const double hi = *std::max_element(map.values.begin(), map.values.end());
  out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  for (double v : map.values) {
    const double s = hi > 0.0 ? v / hi : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0))));
  }
}

SequenceResult evaluate_sequence(const std::vector<Trajectory>& samples, const Trajectory& gt,
                                 std::optional<geo::Point2> affordance, const EvalOptions& options) {
  SequenceResult r;
  const Trajectory point = mean_trajectory(samples);
  r.ade = ade(point, gt);
  r.fde = fde(point, gt);
  r.wde = wde(samples, gt, options.wde_weights);
  if (affordance) {
    const SaliencyMap pred = affordance_map(interaction_points(samples, *affordance), options.sigma, options.resolution);
    const SaliencyMap truth = affordance_map({*affordance}, options.sigma, options.resolution);
    const std::vector<std::size_t> fix{truth.cell_of(*affordance)};
    r.sim = sim(pred, truth);
    r.auc_judd = auc_judd(pred, fix);
    r.nss = nss(pred, fix);
  }
  return r;
}

namespace {

GroupStats aggregate(const std::string& label, const std::vector<const SequenceResult*>& rs) {
  GroupStats g;
  g.label = label;
  g.count = rs.size();
  double sim = 0, auc = 0, nss = 0;
  std::size_t n_aff = 0;
  for (const auto* r : rs) {
    g.ade += r->ade;
    g.fde += r->fde;
    g.wde += r->wde;
    if (r->sim && r->auc_judd && r->nss) {
      sim += *r->sim;
      auc += *r->auc_judd;
      nss += *r->nss;
      ++n_aff;
    }
  }
  const double n = static_cast<double>(rs.size());
  g.ade /= n;
  g.fde /= n;
  g.wde /= n;
  if (n_aff > 0) {
    const double k = static_cast<double>(n_aff);
    g.sim = sim / k;
    g.auc_judd = auc / k;
    g.nss = nss / k;
  }
  return g;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json group_json(const GroupStats& g) {
  return {{"label", g.label}, {"count", g.count},           {"ade", g.ade},
          {"fde", g.fde},     {"wde", g.wde},               {"sim", optional_json(g.sim)},
          {"auc_judd", optional_json(g.auc_judd)}, {"nss", optional_json(g.nss)}};
}

}  // namespace

MetricReport make_report(std::vector<SequenceResult> sequences, std::size_t samples, std::vector<std::uint64_t> seeds) {
  if (sequences.empty()) throw std::invalid_argument("make_report: no sequences");
  MetricReport rep;
  rep.samples = samples;
  rep.seeds = std::move(seeds);
  std::map<synth::Archetype, std::vector<const SequenceResult*>> groups;
  std::vector<const SequenceResult*> all;
  for (const auto& s : sequences) groups[synth::archetype_from_string(s.archetype)];
  rep.sequences = std::move(sequences);
  for (const auto& s : rep.sequences) {
    groups[synth::archetype_from_string(s.archetype)].push_back(&s);
    all.push_back(&s);
  }
  rep.overall = aggregate("all", all);
  for (synth::Archetype a : synth::kAllArchetypes) {
    const auto it = groups.find(a);
    if (it == groups.end() || it->second.empty()) {
      rep.warnings.push_back("no sequences for archetype " + synth::to_string(a));
      continue;
    }
    rep.per_archetype.push_back(aggregate(synth::to_string(a), it->second));
  }
  std::stable_sort(rep.per_archetype.begin(), rep.per_archetype.end(),
                   [](const GroupStats& x, const GroupStats& y) { return x.wde < y.wde; });
  return rep;
}

nlohmann::json report_to_json(const MetricReport& rep) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : rep.sequences)
    seqs.push_back({{"id", s.id},
                    {"archetype", s.archetype},
                    {"egomotion_heavy", s.egomotion_heavy},
                    {"ade", s.ade},
                    {"fde", s.fde},
                    {"wde", s.wde},
                    {"sim", optional_json(s.sim)},
                    {"auc_judd", optional_json(s.auc_judd)},
                    {"nss", optional_json(s.nss)}});
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : rep.per_archetype) groups.push_back(group_json(g));
  return {{"samples", rep.samples},   {"seeds", rep.seeds},        {"overall", group_json(rep.overall)},
          {"per_archetype", groups}, {"warnings", rep.warnings}, {"sequences", seqs}};
}

std::string per_archetype_csv(const MetricReport& rep) {
  std::ostringstream out;
  out.precision(17);
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream o;
    o.precision(17);
    if (v) o << *v;
    return o.str();
  };
  out << "archetype,count,ade,fde,wde,sim,auc_judd,nss\n";
  for (const auto& g : rep.per_archetype)
    out << g.label << ',' << g.count << ',' << g.ade << ',' << g.fde << ',' << g.wde << ',' << opt(g.sim) << ','
        << opt(g.auc_judd) << ',' << opt(g.nss) << '\n';
  return out.str();
}

}  // namespace madiff::metrics
