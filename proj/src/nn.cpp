#include "peghole/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "peghole/binio.hpp"

namespace peghole::net {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'H', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kKindKeypoint = 1;
constexpr std::uint32_t kKindOffset = 2;

// Three nearest neighbors of q in src with inverse-distance weights.
// Stable under input permutation: ties resolve by point coordinates before
// index.  Fewer than three source points pad with the nearest at weight 0.
void knn3(const PointCloud& src, const Vec3& q, std::array<int, 3>& nbr,
          std::array<double, 3>& w) {
  struct Entry {
    double d2;
    int idx;
  };
  std::vector<Entry> entries;
  entries.reserve(src.size());
  for (int i = 0; i < static_cast<int>(src.size()); ++i)
    entries.push_back({(src[i] - q).norm2(), i});
  auto closer = [&](const Entry& a, const Entry& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    const Vec3& pa = src[a.idx];
    const Vec3& pb = src[b.idx];
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    if (pa.z != pb.z) return pa.z < pb.z;
    return a.idx < b.idx;
  };
  const int take = std::min<int>(3, static_cast<int>(entries.size()));
  std::partial_sort(entries.begin(), entries.begin() + take, entries.end(),
                    closer);
  double sum = 0.0;
  for (int j = 0; j < 3; ++j) {
    if (j < take) {
      nbr[j] = entries[j].idx;
      w[j] = 1.0 / (std::sqrt(entries[j].d2) + 1e-9);
      sum += w[j];
    } else {
      nbr[j] = entries[0].idx;
      w[j] = 0.0;
    }
  }
  for (double& x : w) x /= sum;
}

void validate_backbone(const BackboneConfig& cfg, int n, bool per_point) {
  if (n < 1) throw EmptyCloud("network input cloud is empty");
  if (cfg.sa1.centers < 1 || cfg.sa2.centers < 1)
    throw CountOutOfRange("set-abstraction center counts must be positive");
  if (cfg.sa1.centers > n)
    throw CountOutOfRange("input cloud smaller than first sampling level");
  if (cfg.sa2.centers > cfg.sa1.centers)
    throw CountOutOfRange("second sampling level larger than first");
  if (cfg.sa1.group_k < 1 || cfg.sa2.group_k < 1)
    throw CountOutOfRange("group sizes must be positive");
  if (cfg.sa1.radius <= 0.0 || cfg.sa2.radius <= 0.0)
    throw CountOutOfRange("grouping radii must be positive");
  (void)per_point;
}

// Pads a ball-query result to exactly k entries by repeating the nearest.
void padded_ball(const PointCloud& pts, const Vec3& center, double radius,
                 int k, std::vector<int>& out) {
  std::vector<int> got = cloud::ball_query(pts, center, radius, k);
  for (int q = 0; q < k; ++q)
    out.push_back(q < static_cast<int>(got.size()) ? got[q] : got[0]);
}

int find_param(const std::vector<NamedTensor>& params, const std::string& n) {
  for (int i = 0; i < static_cast<int>(params.size()); ++i)
    if (params[i].name == n) return i;
  throw ShapeMismatch("unknown parameter name: " + n);
}

void he_init(Tensor& t, int fan_in, double scale, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in)) * scale;
  for (double& v : t.data) v = rng.normal(0.0, std);
}

// Declaration order is the serialization order; it must stay stable.
std::vector<NamedTensor> declare_backbone(const BackboneConfig& b) {
  const int h1 = b.sa1.hidden;
  const int h2 = b.sa2.hidden;
  std::vector<NamedTensor> p;
  p.push_back({"sa1.w1", Tensor::zeros({3, h1})});
  p.push_back({"sa1.b1", Tensor::zeros({1, h1})});
  p.push_back({"sa1.w2", Tensor::zeros({h1, h1})});
  p.push_back({"sa1.b2", Tensor::zeros({1, h1})});
  p.push_back({"sa2.w1", Tensor::zeros({3 + h1, h2})});
  p.push_back({"sa2.b1", Tensor::zeros({1, h2})});
  p.push_back({"sa2.w2", Tensor::zeros({h2, h2})});
  p.push_back({"sa2.b2", Tensor::zeros({1, h2})});
  return p;
}

struct BackboneVars {
  Var sa1_w1, sa1_b1, sa1_w2, sa1_b2;
  Var sa2_w1, sa2_b1, sa2_w2, sa2_b2;
};

// Shared encoder: two set-abstraction levels over a batch of clouds.
// `coords[b]` are the network-frame positions of sample b (already centered
// or tip-relative); plans index into those clouds.  Returns f1 [B*n1, h1]
// and f2 [B*n2, h2] plus the center positions needed downstream.
struct EncoderOut {
  Var f1, f2;
  std::vector<Vec3> sa1_pos;  // [B*n1], network frame
  std::vector<Vec3> sa2_pos;  // [B*n2]
};

EncoderOut encode(Tape& tape, const BackboneConfig& cfg,
                  const std::vector<std::vector<Vec3>>& coords,
                  const std::vector<SamplingPlan>& plans,
                  const BackboneVars& v) {
  const int B = static_cast<int>(coords.size());
  const int n1 = cfg.sa1.centers;
  const int n2 = cfg.sa2.centers;
  const int k1 = cfg.sa1.group_k;
  const int k2 = cfg.sa2.group_k;

  EncoderOut out;
  out.sa1_pos.resize(static_cast<std::size_t>(B) * n1);
  out.sa2_pos.resize(static_cast<std::size_t>(B) * n2);

  // Level 1: group raw points around sampled centers.
  Tensor loc1 = Tensor::zeros({B * n1 * k1, 3});
  for (int b = 0; b < B; ++b) {
    const auto& pts = coords[b];
    const auto& plan = plans[b];
    for (int i = 0; i < n1; ++i) {
      const Vec3 c = pts[plan.sa1_centers[i]];
      out.sa1_pos[static_cast<std::size_t>(b) * n1 + i] = c;
      for (int q = 0; q < k1; ++q) {
        const Vec3 d = pts[plan.sa1_neighbors[i * k1 + q]] - c;
        const int r = (b * n1 + i) * k1 + q;
        loc1.data[r * 3 + 0] = d.x / cfg.sa1.radius;
        loc1.data[r * 3 + 1] = d.y / cfg.sa1.radius;
        loc1.data[r * 3 + 2] = d.z / cfg.sa1.radius;
      }
    }
  }
  Var x1 = tape.leaf(loc1, false);
  Var h1 = tape.relu(tape.linear(x1, v.sa1_w1, v.sa1_b1));
  h1 = tape.relu(tape.linear(h1, v.sa1_w2, v.sa1_b2));
  out.f1 = tape.group_max(h1, B * n1, k1);

  // Level 2: group sa1 centers, carrying their features.
  Tensor loc2 = Tensor::zeros({B * n2 * k2, 3});
  std::vector<int> gather_idx(static_cast<std::size_t>(B) * n2 * k2);
  for (int b = 0; b < B; ++b) {
    const auto& plan = plans[b];
    for (int j = 0; j < n2; ++j) {
      const Vec3 c = out.sa1_pos[static_cast<std::size_t>(b) * n1 +
                                 plan.sa2_centers[j]];
      out.sa2_pos[static_cast<std::size_t>(b) * n2 + j] = c;
      for (int q = 0; q < k2; ++q) {
        const int nb = plan.sa2_neighbors[j * k2 + q];
        const Vec3 d =
            out.sa1_pos[static_cast<std::size_t>(b) * n1 + nb] - c;
        const int r = (b * n2 + j) * k2 + q;
        loc2.data[r * 3 + 0] = d.x / cfg.sa2.radius;
        loc2.data[r * 3 + 1] = d.y / cfg.sa2.radius;
        loc2.data[r * 3 + 2] = d.z / cfg.sa2.radius;
        gather_idx[r] = b * n1 + nb;
      }
    }
  }
  Var x2 = tape.concat_cols(tape.leaf(loc2, false),
                            tape.gather_rows(out.f1, gather_idx));
  Var h2 = tape.relu(tape.linear(x2, v.sa2_w1, v.sa2_b1));
  h2 = tape.relu(tape.linear(h2, v.sa2_w2, v.sa2_b2));
  out.f2 = tape.group_max(h2, B * n2, k2);
  return out;
}

BackboneVars leaf_backbone(Tape& tape, const std::vector<NamedTensor>& params,
                           bool rg, std::vector<Var>& leaves) {
  auto L = [&](const char* name) {
    Var v = tape.leaf(params[find_param(params, name)].tensor, rg);
    leaves.push_back(v);
    return v;
  };
  BackboneVars v;
  v.sa1_w1 = L("sa1.w1");
  v.sa1_b1 = L("sa1.b1");
  v.sa1_w2 = L("sa1.w2");
  v.sa1_b2 = L("sa1.b2");
  v.sa2_w1 = L("sa2.w1");
  v.sa2_b1 = L("sa2.b1");
  v.sa2_w2 = L("sa2.w2");
  v.sa2_b2 = L("sa2.b2");
  return v;
}

std::vector<std::pair<std::string, double>> config_kv(int n_points,
                                                      const BackboneConfig& b,
                                                      int head_hidden) {
  return {
      {"n_points", static_cast<double>(n_points)},
      {"sa1.centers", static_cast<double>(b.sa1.centers)},
      {"sa1.radius", b.sa1.radius},
      {"sa1.group_k", static_cast<double>(b.sa1.group_k)},
      {"sa1.hidden", static_cast<double>(b.sa1.hidden)},
      {"sa2.centers", static_cast<double>(b.sa2.centers)},
      {"sa2.radius", b.sa2.radius},
      {"sa2.group_k", static_cast<double>(b.sa2.group_k)},
      {"sa2.hidden", static_cast<double>(b.sa2.hidden)},
      {"fp1_out", static_cast<double>(b.fp1_out)},
      {"fp0_out", static_cast<double>(b.fp0_out)},
      {"global_hidden", static_cast<double>(b.global_hidden)},
      {"coord_scale", b.coord_scale},
      {"head_hidden", static_cast<double>(head_hidden)},
  };
}

void config_from_kv(const std::map<std::string, double>& kv, int& n_points,
                    BackboneConfig& b, int& head_hidden) {
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw CorruptFile(std::string("checkpoint config missing key: ") + key);
    return it->second;
  };
  n_points = static_cast<int>(get("n_points"));
  b.sa1.centers = static_cast<int>(get("sa1.centers"));
  b.sa1.radius = get("sa1.radius");
  b.sa1.group_k = static_cast<int>(get("sa1.group_k"));
  b.sa1.hidden = static_cast<int>(get("sa1.hidden"));
  b.sa2.centers = static_cast<int>(get("sa2.centers"));
  b.sa2.radius = get("sa2.radius");
  b.sa2.group_k = static_cast<int>(get("sa2.group_k"));
  b.sa2.hidden = static_cast<int>(get("sa2.hidden"));
  b.fp1_out = static_cast<int>(get("fp1_out"));
  b.fp0_out = static_cast<int>(get("fp0_out"));
  b.global_hidden = static_cast<int>(get("global_hidden"));
  b.coord_scale = get("coord_scale");
  head_hidden = static_cast<int>(get("head_hidden"));
}

void write_checkpoint(const std::string& path, std::uint32_t kind,
                      const std::vector<std::pair<std::string, double>>& kv,
                      const std::vector<NamedTensor>& params,
                      const CheckpointMeta& meta) {
  binio::Writer w;
  w.u32(kCheckpointVersion);
  w.u32(kind);
  w.f64(meta.eval_loss_at_save);
  w.i64(meta.epochs_trained);
  w.u32(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.str(k);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.shape.size()));
    for (int d : p.tensor.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(p.tensor.data.data(), p.tensor.data.size());
  }
  w.save(path, kCheckpointMagic);
}

struct CheckpointPayload {
  std::uint32_t kind = 0;
  CheckpointMeta meta;
  std::map<std::string, double> kv;
  std::vector<NamedTensor> params;
};

CheckpointPayload read_checkpoint(const std::string& path,
                                  std::uint32_t expected_kind) {
  binio::Reader r(path, kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch("unsupported checkpoint version " +
                          std::to_string(version));
  CheckpointPayload out;
  out.kind = r.u32();
  if (out.kind != expected_kind)
    throw CorruptFile("checkpoint holds a different model kind");
  out.meta.eval_loss_at_save = r.f64();
  out.meta.epochs_trained = static_cast<long>(r.i64());
  const std::uint32_t nk = r.u32();
  for (std::uint32_t i = 0; i < nk; ++i) {
    std::string key = r.str();
    out.kv[key] = r.f64();
  }
  const std::uint32_t np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 2) throw CorruptFile("parameter rank corrupt");
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(r.u32());
      if (d <= 0 || d > (1 << 24)) throw CorruptFile("parameter dim corrupt");
      numel *= static_cast<std::size_t>(d);
    }
    nt.tensor = Tensor::zeros(shape);
    r.f64s(nt.tensor.data.data(), numel);
    out.params.push_back(std::move(nt));
  }
  if (!r.exhausted()) throw CorruptFile("trailing bytes in checkpoint");
  return out;
}

void adopt_params(std::vector<NamedTensor>& declared,
                  std::vector<NamedTensor>& loaded) {
  if (declared.size() != loaded.size())
    throw CorruptFile("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < declared.size(); ++i) {
    if (declared[i].name != loaded[i].name)
      throw CorruptFile("checkpoint parameter order mismatch at " +
                        loaded[i].name);
    if (declared[i].tensor.shape != loaded[i].tensor.shape)
      throw CorruptFile("checkpoint shape mismatch for " + loaded[i].name);
    if (!loaded[i].tensor.all_finite())
      throw CorruptFile("checkpoint holds non-finite values in " +
                        loaded[i].name);
    declared[i].tensor.data = std::move(loaded[i].tensor.data);
  }
}

double cosine_lr(const TrainConfig& cfg, int epoch /*1-based*/) {
  const double floor = cfg.lr * cfg.lr_final_factor;
  if (cfg.epochs <= 1) return cfg.lr;
  const double t = static_cast<double>(epoch - 1) /
                   static_cast<double>(cfg.epochs - 1);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
}

void validate_train_config(const TrainConfig& cfg, std::size_t n_items) {
  if (n_items == 0) throw CountOutOfRange("training set is empty");
  if (cfg.epochs < 1) throw CountOutOfRange("epochs must be >= 1");
  if (cfg.batch < 1) throw CountOutOfRange("batch size must be >= 1");
  if (cfg.lr < 0.0) throw CountOutOfRange("learning rate must be >= 0");
}

void shuffle_indices(std::vector<int>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Sampling plan

SamplingPlan compute_sampling(const PointCloud& pts, const BackboneConfig& cfg,
                              bool per_point) {
  validate_backbone(cfg, static_cast<int>(pts.size()), per_point);
  SamplingPlan plan;

  plan.sa1_centers = cloud::farthest_point_sample_from(
      pts, cfg.sa1.centers, cloud::lexicographic_min_index(pts));
  PointCloud pos1;
  pos1.reserve(plan.sa1_centers.size());
  for (int idx : plan.sa1_centers) pos1.push_back(pts[idx]);
  plan.sa1_neighbors.reserve(static_cast<std::size_t>(cfg.sa1.centers) *
                             cfg.sa1.group_k);
  for (const Vec3& c : pos1)
    padded_ball(pts, c, cfg.sa1.radius, cfg.sa1.group_k, plan.sa1_neighbors);

  plan.sa2_centers = cloud::farthest_point_sample_from(
      pos1, cfg.sa2.centers, cloud::lexicographic_min_index(pos1));
  PointCloud pos2;
  pos2.reserve(plan.sa2_centers.size());
  for (int idx : plan.sa2_centers) pos2.push_back(pos1[idx]);
  plan.sa2_neighbors.reserve(static_cast<std::size_t>(cfg.sa2.centers) *
                             cfg.sa2.group_k);
  for (const Vec3& c : pos2)
    padded_ball(pos1, c, cfg.sa2.radius, cfg.sa2.group_k, plan.sa2_neighbors);

  if (per_point) {
    plan.fp1_nbr.resize(pos1.size());
    plan.fp1_w.resize(pos1.size());
    for (std::size_t i = 0; i < pos1.size(); ++i)
      knn3(pos2, pos1[i], plan.fp1_nbr[i], plan.fp1_w[i]);
    plan.fp0_nbr.resize(pts.size());
    plan.fp0_w.resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      knn3(pos1, pts[i], plan.fp0_nbr[i], plan.fp0_w[i]);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// KeypointNet

KeypointNet::KeypointNet(const KeypointNetConfig& cfg) : cfg_(cfg) {
  const BackboneConfig& b = cfg_.backbone;
  params_ = declare_backbone(b);
  params_.push_back({"fp1.w", Tensor::zeros({b.sa2.hidden + b.sa1.hidden,
                                             b.fp1_out})});
  params_.push_back({"fp1.b", Tensor::zeros({1, b.fp1_out})});
  params_.push_back({"fp0.w", Tensor::zeros({b.fp1_out + 3, b.fp0_out})});
  params_.push_back({"fp0.b", Tensor::zeros({1, b.fp0_out})});
  params_.push_back({"off.w1", Tensor::zeros({b.fp0_out, cfg_.head_hidden})});
  params_.push_back({"off.b1", Tensor::zeros({1, cfg_.head_hidden})});
  params_.push_back({"off.w2", Tensor::zeros({cfg_.head_hidden, 9})});
  params_.push_back({"off.b2", Tensor::zeros({1, 9})});
  params_.push_back({"conf.w1", Tensor::zeros({b.fp0_out, cfg_.head_hidden})});
  params_.push_back({"conf.b1", Tensor::zeros({1, cfg_.head_hidden})});
  params_.push_back({"conf.w2", Tensor::zeros({cfg_.head_hidden, 1})});
  params_.push_back({"conf.b2", Tensor::zeros({1, 1})});
}

void KeypointNet::init(Rng& rng) {
  for (auto& p : params_) {
    if (p.tensor.shape.size() == 2 && p.tensor.shape[0] > 1 &&
        p.name.find(".b") == std::string::npos) {
      const bool last = (p.name == "off.w2" || p.name == "conf.w2");
      he_init(p.tensor, p.tensor.shape[0], last ? 0.1 : 1.0, rng);
    } else {
      // Small positive hidden biases keep self-neighbor rows (relative
      // coordinates exactly zero) off the relu kink; output biases stay 0.
      const bool out = (p.name == "off.b2" || p.name == "conf.b2");
      std::fill(p.tensor.data.begin(), p.tensor.data.end(), out ? 0.0 : 0.01);
    }
  }
}

KeypointNetGraph KeypointNet::forward(
    Tape& tape, const std::vector<const PointCloud*>& batch,
    bool params_require_grad, const std::vector<SamplingPlan>* plans) const {
  if (batch.empty()) throw EmptyCloud("empty batch");
  const int B = static_cast<int>(batch.size());
  const int n = cfg_.n_points;
  for (const PointCloud* c : batch)
    if (static_cast<int>(c->size()) != n)
      throw ShapeMismatch("cloud size does not match network input size");
  if (plans && static_cast<int>(plans->size()) != B)
    throw ShapeMismatch("one sampling plan per cloud required");

  std::vector<SamplingPlan> local_plans;
  if (!plans) {
    local_plans.reserve(B);
    for (const PointCloud* c : batch)
      local_plans.push_back(compute_sampling(*c, cfg_.backbone, true));
    plans = &local_plans;
  }

  // Center each cloud on its centroid: votes become translation-equivariant.
  std::vector<std::vector<Vec3>> coords(B);
  for (int b = 0; b < B; ++b) {
    const Vec3 c = cloud::centroid(*batch[b]);
    coords[b].reserve(n);
    for (const Vec3& p : *batch[b]) coords[b].push_back(p - c);
  }

  KeypointNetGraph g;
  BackboneVars v = leaf_backbone(tape, params_, params_require_grad, g.params);
  auto L = [&](const char* name) {
    Var var = tape.leaf(params_[find_param(params_, name)].tensor,
                        params_require_grad);
    g.params.push_back(var);
    return var;
  };
  Var fp1_w = L("fp1.w"), fp1_b = L("fp1.b");
  Var fp0_w = L("fp0.w"), fp0_b = L("fp0.b");
  Var off_w1 = L("off.w1"), off_b1 = L("off.b1");
  Var off_w2 = L("off.w2"), off_b2 = L("off.b2");
  Var conf_w1 = L("conf.w1"), conf_b1 = L("conf.b1");
  Var conf_w2 = L("conf.w2"), conf_b2 = L("conf.b2");

  EncoderOut enc = encode(tape, cfg_.backbone, coords, *plans, v);
  const int n1 = cfg_.backbone.sa1.centers;
  const int n2 = cfg_.backbone.sa2.centers;

  // Propagate level-2 features back to level-1 centers.
  std::vector<std::array<int, 3>> nbr1;
  std::vector<std::array<double, 3>> w1;
  nbr1.reserve(static_cast<std::size_t>(B) * n1);
  w1.reserve(nbr1.capacity());
  for (int b = 0; b < B; ++b) {
    const auto& plan = (*plans)[b];
    for (int i = 0; i < n1; ++i) {
      std::array<int, 3> a = plan.fp1_nbr[i];
      for (int& x : a) x += b * n2;
      nbr1.push_back(a);
      w1.push_back(plan.fp1_w[i]);
    }
  }
  Var up1 = tape.interp_rows(enc.f2, std::move(nbr1), std::move(w1));
  Var g1 = tape.relu(
      tape.linear(tape.concat_cols(up1, enc.f1), fp1_w, fp1_b));

  // Propagate to every input point; concat scaled coordinates as skip input.
  std::vector<std::array<int, 3>> nbr0;
  std::vector<std::array<double, 3>> w0;
  nbr0.reserve(static_cast<std::size_t>(B) * n);
  w0.reserve(nbr0.capacity());
  Tensor skip = Tensor::zeros({B * n, 3});
  for (int b = 0; b < B; ++b) {
    const auto& plan = (*plans)[b];
    for (int i = 0; i < n; ++i) {
      std::array<int, 3> a = plan.fp0_nbr[i];
      for (int& x : a) x += b * n1;
      nbr0.push_back(a);
      w0.push_back(plan.fp0_w[i]);
      const Vec3& p = coords[b][i];
      const int r = b * n + i;
      skip.data[r * 3 + 0] = p.x * cfg_.backbone.coord_scale;
      skip.data[r * 3 + 1] = p.y * cfg_.backbone.coord_scale;
      skip.data[r * 3 + 2] = p.z * cfg_.backbone.coord_scale;
    }
  }
  Var up0 = tape.interp_rows(g1, std::move(nbr0), std::move(w0));
  Var pf = tape.relu(tape.linear(
      tape.concat_cols(up0, tape.leaf(skip, false)), fp0_w, fp0_b));

  Var oh = tape.relu(tape.linear(pf, off_w1, off_b1));
  g.offsets = tape.linear(oh, off_w2, off_b2);
  Var ch = tape.relu(tape.linear(pf, conf_w1, conf_b1));
  g.confidence = tape.sigmoid(tape.linear(ch, conf_w2, conf_b2));
  return g;
}

// ---------------------------------------------------------------------------
// OffsetNet

OffsetNet::OffsetNet(const OffsetNetConfig& cfg) : cfg_(cfg) {
  const BackboneConfig& b = cfg_.backbone;
  params_ = declare_backbone(b);
  params_.push_back({"glob.w", Tensor::zeros({b.sa2.hidden + 3,
                                              b.global_hidden})});
  params_.push_back({"glob.b", Tensor::zeros({1, b.global_hidden})});
  params_.push_back({"head.w1", Tensor::zeros({b.global_hidden,
                                               cfg_.head_hidden})});
  params_.push_back({"head.b1", Tensor::zeros({1, cfg_.head_hidden})});
  params_.push_back({"head.wt", Tensor::zeros({cfg_.head_hidden, 3})});
  params_.push_back({"head.bt", Tensor::zeros({1, 3})});
  params_.push_back({"head.wr", Tensor::zeros({cfg_.head_hidden, 3})});
  params_.push_back({"head.br", Tensor::zeros({1, 3})});
}

void OffsetNet::init(Rng& rng) {
  for (auto& p : params_) {
    if (p.tensor.shape.size() == 2 && p.tensor.shape[0] > 1 &&
        p.name.find(".b") == std::string::npos) {
      const bool last = (p.name == "head.wt" || p.name == "head.wr");
      he_init(p.tensor, p.tensor.shape[0], last ? 0.1 : 1.0, rng);
    } else {
      const bool out = (p.name == "head.bt" || p.name == "head.br");
      std::fill(p.tensor.data.begin(), p.tensor.data.end(), out ? 0.0 : 0.01);
    }
  }
}

OffsetNetGraph OffsetNet::forward(
    Tape& tape, const std::vector<const PointCloud*>& batch,
    bool params_require_grad, const std::vector<SamplingPlan>* plans) const {
  if (batch.empty()) throw EmptyCloud("empty batch");
  const int B = static_cast<int>(batch.size());
  const int n = cfg_.n_points;
  for (const PointCloud* c : batch)
    if (static_cast<int>(c->size()) != n)
      throw ShapeMismatch("cloud size does not match network input size");
  if (plans && static_cast<int>(plans->size()) != B)
    throw ShapeMismatch("one sampling plan per cloud required");

  std::vector<SamplingPlan> local_plans;
  if (!plans) {
    local_plans.reserve(B);
    for (const PointCloud* c : batch)
      local_plans.push_back(compute_sampling(*c, cfg_.backbone, false));
    plans = &local_plans;
  }

  // Offsets depend on where structure sits relative to the tool tip, so the
  // cloud is used as-is (it is already expressed relative to the tip).
  std::vector<std::vector<Vec3>> coords(B);
  for (int b = 0; b < B; ++b)
    coords[b].assign(batch[b]->begin(), batch[b]->end());

  OffsetNetGraph g;
  BackboneVars v = leaf_backbone(tape, params_, params_require_grad, g.params);
  auto L = [&](const char* name) {
    Var var = tape.leaf(params_[find_param(params_, name)].tensor,
                        params_require_grad);
    g.params.push_back(var);
    return var;
  };
  Var glob_w = L("glob.w"), glob_b = L("glob.b");
  Var head_w1 = L("head.w1"), head_b1 = L("head.b1");
  Var head_wt = L("head.wt"), head_bt = L("head.bt");
  Var head_wr = L("head.wr"), head_br = L("head.br");

  EncoderOut enc = encode(tape, cfg_.backbone, coords, *plans, v);
  const int n2 = cfg_.backbone.sa2.centers;

  Tensor pos = Tensor::zeros({B * n2, 3});
  for (int r = 0; r < B * n2; ++r) {
    pos.data[r * 3 + 0] = enc.sa2_pos[r].x * cfg_.backbone.coord_scale;
    pos.data[r * 3 + 1] = enc.sa2_pos[r].y * cfg_.backbone.coord_scale;
    pos.data[r * 3 + 2] = enc.sa2_pos[r].z * cfg_.backbone.coord_scale;
  }
  Var gx = tape.concat_cols(enc.f2, tape.leaf(pos, false));
  Var gh = tape.relu(tape.linear(gx, glob_w, glob_b));
  Var gfeat = tape.group_max(gh, B, n2);
  Var hh = tape.relu(tape.linear(gfeat, head_w1, head_b1));
  g.delta_t = tape.linear(hh, head_wt, head_bt);
  g.delta_r = tape.linear(hh, head_wr, head_br);
  return g;
}

// ---------------------------------------------------------------------------
// Inference wrappers

KeypointPrediction predict_keypoints(const KeypointNet& net,
                                     const PointCloud& cloud) {
  Tape tape;
  KeypointNetGraph g = net.forward(tape, {&cloud}, false);
  const Tensor& off = tape.value(g.offsets);
  const Tensor& conf = tape.value(g.confidence);
  const int n = static_cast<int>(cloud.size());
  KeypointPrediction out;
  out.candidates.resize(n);
  out.confidence.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.candidates[i][j] =
          cloud[i] + Vec3{off.data[i * 9 + 3 * j + 0],
                          off.data[i * 9 + 3 * j + 1],
                          off.data[i * 9 + 3 * j + 2]};
    }
    out.confidence[i] = conf.data[i];
  }
  return out;
}

OffsetPrediction predict_offset(const OffsetNet& net, const PointCloud& cloud) {
  Tape tape;
  OffsetNetGraph g = net.forward(tape, {&cloud}, false);
  const Tensor& dt = tape.value(g.delta_t);
  const Tensor& dr = tape.value(g.delta_r);
  OffsetPrediction out;
  out.delta_t = {dt.data[0], dt.data[1], dt.data[2]};
  out.delta_r = {dr.data[0], dr.data[1], dr.data[2]};
  return out;
}

// ---------------------------------------------------------------------------
// Losses

LossBreakdown loss_coarse(const Tensor& pred_offsets, const Tensor& pred_conf,
                          const Tensor& gt_offsets, const Tensor& gt_map,
                          int points_per_sample) {
  if (points_per_sample < 1)
    throw CountOutOfRange("points per sample must be positive");
  if (pred_offsets.rows() != pred_conf.rows() ||
      !pred_offsets.same_shape(gt_offsets) ||
      pred_conf.numel() != gt_map.numel())
    throw ShapeMismatch("coarse loss operand shapes disagree");
  if (pred_offsets.rows() % points_per_sample != 0)
    throw ShapeMismatch("rows not divisible by points per sample");

  Tape tape;
  Var po = tape.leaf(pred_offsets, false);
  Var pc = tape.leaf(pred_conf, false);
  Var lk = tape.loss_weighted_offsets(po, gt_offsets, gt_map);
  Var lm = tape.loss_blockwise_rmse(pc, gt_map, points_per_sample);
  LossBreakdown out;
  out.kpts = tape.value(lk).scalar_value();
  out.map = tape.value(lm).scalar_value();
  out.total = out.kpts + out.map;
  return out;
}

LossBreakdown loss_fine(const Tensor& pred_dt, const Tensor& pred_dr,
                        const Tensor& gt_dt, const Tensor& gt_dr) {
  if (!pred_dt.same_shape(gt_dt) || !pred_dr.same_shape(gt_dr) ||
      pred_dt.rows() != pred_dr.rows() || pred_dt.cols() != 3 ||
      pred_dr.cols() != 3)
    throw ShapeMismatch("fine loss operand shapes disagree");
  Tape tape;
  Var pt = tape.leaf(pred_dt, false);
  Var pr = tape.leaf(pred_dr, false);
  Var rmse_t = tape.loss_rowwise_rmse(pt, gt_dt);
  Var cos_t = tape.loss_cosine_gap(pt, gt_dt);
  Var rmse_r = tape.loss_rowwise_rmse(pr, gt_dr);
  LossBreakdown out;
  out.trans = tape.value(rmse_t).scalar_value() +
              tape.value(cos_t).scalar_value();
  out.rot = tape.value(rmse_r).scalar_value();
  out.total = out.trans + out.rot;
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct CoarseBatchTargets {
  std::vector<const PointCloud*> clouds;
  Tensor offsets;  // [bs*n, 9]
  Tensor map;      // [bs*n, 1]
};

CoarseBatchTargets coarse_targets(const std::vector<CoarseItem>& data,
                                  const std::vector<int>& order, int begin,
                                  int end, int n) {
  CoarseBatchTargets t;
  const int bs = end - begin;
  t.offsets = Tensor::zeros({bs * n, 9});
  t.map = Tensor::zeros({bs * n, 1});
  for (int s = 0; s < bs; ++s) {
    const CoarseItem& item = data[order[begin + s]];
    if (static_cast<int>(item.cloud->size()) != n ||
        static_cast<int>(item.gt_offsets->size()) != n ||
        static_cast<int>(item.gt_map->size()) != n)
      throw ShapeMismatch("training item size mismatch");
    t.clouds.push_back(item.cloud);
    for (int i = 0; i < n; ++i) {
      const int r = s * n + i;
      for (int j = 0; j < 3; ++j) {
        const Vec3& o = (*item.gt_offsets)[i][j];
        t.offsets.data[r * 9 + 3 * j + 0] = o.x;
        t.offsets.data[r * 9 + 3 * j + 1] = o.y;
        t.offsets.data[r * 9 + 3 * j + 2] = o.z;
      }
      t.map.data[r] = (*item.gt_map)[i];
    }
  }
  return t;
}

struct FineBatchTargets {
  std::vector<const PointCloud*> clouds;
  Tensor dt;  // [bs, 3]
  Tensor dr;
};

FineBatchTargets fine_targets(const std::vector<FineItem>& data,
                              const std::vector<int>& order, int begin,
                              int end) {
  FineBatchTargets t;
  const int bs = end - begin;
  t.dt = Tensor::zeros({bs, 3});
  t.dr = Tensor::zeros({bs, 3});
  for (int s = 0; s < bs; ++s) {
    const FineItem& item = data[order[begin + s]];
    t.clouds.push_back(&item.cloud);
    t.dt.data[s * 3 + 0] = item.delta_t.x;
    t.dt.data[s * 3 + 1] = item.delta_t.y;
    t.dt.data[s * 3 + 2] = item.delta_t.z;
    t.dr.data[s * 3 + 0] = item.delta_r.x;
    t.dr.data[s * 3 + 1] = item.delta_r.y;
    t.dr.data[s * 3 + 2] = item.delta_r.z;
  }
  return t;
}

}  // namespace

TrainResult train_keypoint_net(KeypointNet& net,
                               const std::vector<CoarseItem>& data,
                               const TrainConfig& cfg) {
  validate_train_config(cfg, data.size());
  const int n = net.config().n_points;
  const int N = static_cast<int>(data.size());
  Rng rng = Rng(cfg.seed).child(0xC0A5);
  AdamState state;
  TrainResult result;

  // Clouds never change across epochs, so the index structure is computed
  // once per record instead of once per visit.
  std::vector<SamplingPlan> plan_cache(N);
  for (int i = 0; i < N; ++i)
    plan_cache[i] = compute_sampling(*data[i].cloud, net.config().backbone,
                                     true);

  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    AdamConfig opt;
    opt.lr = cosine_lr(cfg, epoch);
    double sum_total = 0.0, sum_a = 0.0, sum_b = 0.0;
    int rejected = 0;
    for (int begin = 0; begin < N; begin += cfg.batch) {
      const int end = std::min(N, begin + cfg.batch);
      CoarseBatchTargets t = coarse_targets(data, order, begin, end, n);
      std::vector<SamplingPlan> plans;
      plans.reserve(end - begin);
      for (int s = begin; s < end; ++s) plans.push_back(plan_cache[order[s]]);
      Tape tape;
      KeypointNetGraph g = net.forward(tape, t.clouds, true, &plans);
      Var lk = tape.loss_weighted_offsets(g.offsets, t.offsets, t.map);
      Var lm = tape.loss_blockwise_rmse(g.confidence, t.map, n);
      Var total = tape.add(lk, lm);
      tape.backward(total);

      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (std::size_t i = 0; i < net.params().size(); ++i) {
        params.push_back(&net.params()[i].tensor);
        grads.push_back(&tape.grad(g.params[i]));
      }
      StepReport step = adam_step(params, grads, state, opt);
      if (!step.applied) ++rejected;

      const double bs = static_cast<double>(end - begin);
      sum_total += tape.value(total).scalar_value() * bs;
      sum_a += tape.value(lk).scalar_value() * bs;
      sum_b += tape.value(lm).scalar_value() * bs;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.total = sum_total / N;
    stats.part_a = sum_a / N;
    stats.part_b = sum_b / N;
    stats.rejected_steps = rejected;
    result.curve.push_back(stats);
    if (cfg.verbose)
      std::printf("epoch %3d  lr %.2e  loss %.6f  (kpts %.6f  map %.6f)\n",
                  epoch, opt.lr, stats.total, stats.part_a, stats.part_b);
  }
  result.final_eval_loss = eval_coarse_loss(net, data, cfg.batch);
  return result;
}

TrainResult train_offset_net(OffsetNet& net, const std::vector<FineItem>& data,
                             const TrainConfig& cfg) {
  validate_train_config(cfg, data.size());
  const int n = net.config().n_points;
  const int N = static_cast<int>(data.size());
  for (const FineItem& item : data)
    if (static_cast<int>(item.cloud.size()) != n)
      throw ShapeMismatch("training item size mismatch");
  Rng rng = Rng(cfg.seed).child(0xF19E);
  AdamState state;
  TrainResult result;

  std::vector<SamplingPlan> plan_cache(N);
  for (int i = 0; i < N; ++i)
    plan_cache[i] = compute_sampling(data[i].cloud, net.config().backbone,
                                     false);

  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    AdamConfig opt;
    opt.lr = cosine_lr(cfg, epoch);
    double sum_total = 0.0, sum_a = 0.0, sum_b = 0.0;
    int rejected = 0;
    for (int begin = 0; begin < N; begin += cfg.batch) {
      const int end = std::min(N, begin + cfg.batch);
      FineBatchTargets t = fine_targets(data, order, begin, end);
      std::vector<SamplingPlan> plans;
      plans.reserve(end - begin);
      for (int s = begin; s < end; ++s) plans.push_back(plan_cache[order[s]]);
      Tape tape;
      OffsetNetGraph g = net.forward(tape, t.clouds, true, &plans);
      Var l_trans = tape.add(tape.loss_rowwise_rmse(g.delta_t, t.dt),
                             tape.loss_cosine_gap(g.delta_t, t.dt));
      Var l_rot = tape.loss_rowwise_rmse(g.delta_r, t.dr);
      Var total = tape.add(l_trans, l_rot);
      tape.backward(total);

      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (std::size_t i = 0; i < net.params().size(); ++i) {
        params.push_back(&net.params()[i].tensor);
        grads.push_back(&tape.grad(g.params[i]));
      }
      StepReport step = adam_step(params, grads, state, opt);
      if (!step.applied) ++rejected;

      const double bs = static_cast<double>(end - begin);
      sum_total += tape.value(total).scalar_value() * bs;
      sum_a += tape.value(l_trans).scalar_value() * bs;
      sum_b += tape.value(l_rot).scalar_value() * bs;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.total = sum_total / N;
    stats.part_a = sum_a / N;
    stats.part_b = sum_b / N;
    stats.rejected_steps = rejected;
    result.curve.push_back(stats);
    if (cfg.verbose)
      std::printf("epoch %3d  lr %.2e  loss %.6f  (trans %.6f  rot %.6f)\n",
                  epoch, opt.lr, stats.total, stats.part_a, stats.part_b);
  }
  result.final_eval_loss = eval_fine_loss(net, data, cfg.batch);
  return result;
}

double eval_coarse_loss(const KeypointNet& net,
                        const std::vector<CoarseItem>& data, int batch) {
  if (data.empty()) throw CountOutOfRange("evaluation set is empty");
  if (batch < 1) throw CountOutOfRange("batch size must be >= 1");
  const int n = net.config().n_points;
  const int N = static_cast<int>(data.size());
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  for (int begin = 0; begin < N; begin += batch) {
    const int end = std::min(N, begin + batch);
    CoarseBatchTargets t = coarse_targets(data, order, begin, end, n);
    Tape tape;
    KeypointNetGraph g = net.forward(tape, t.clouds, false);
    Var lk = tape.loss_weighted_offsets(g.offsets, t.offsets, t.map);
    Var lm = tape.loss_blockwise_rmse(g.confidence, t.map, n);
    sum += (tape.value(lk).scalar_value() + tape.value(lm).scalar_value()) *
           (end - begin);
  }
  return sum / N;
}

double eval_fine_loss(const OffsetNet& net, const std::vector<FineItem>& data,
                      int batch) {
  if (data.empty()) throw CountOutOfRange("evaluation set is empty");
  if (batch < 1) throw CountOutOfRange("batch size must be >= 1");
  const int N = static_cast<int>(data.size());
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  for (int begin = 0; begin < N; begin += batch) {
    const int end = std::min(N, begin + batch);
    FineBatchTargets t = fine_targets(data, order, begin, end);
    Tape tape;
    OffsetNetGraph g = net.forward(tape, t.clouds, false);
    Var l = tape.add(tape.add(tape.loss_rowwise_rmse(g.delta_t, t.dt),
                              tape.loss_cosine_gap(g.delta_t, t.dt)),
                     tape.loss_rowwise_rmse(g.delta_r, t.dr));
    sum += tape.value(l).scalar_value() * (end - begin);
  }
  return sum / N;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_keypoint_net(const std::string& path, const KeypointNet& net,
                       const CheckpointMeta& meta) {
  write_checkpoint(path, kKindKeypoint,
                   config_kv(net.config().n_points, net.config().backbone,
                             net.config().head_hidden),
                   net.params(), meta);
}

void save_offset_net(const std::string& path, const OffsetNet& net,
                     const CheckpointMeta& meta) {
  write_checkpoint(path, kKindOffset,
                   config_kv(net.config().n_points, net.config().backbone,
                             net.config().head_hidden),
                   net.params(), meta);
}

KeypointNet load_keypoint_net(const std::string& path, CheckpointMeta* meta) {
  CheckpointPayload p = read_checkpoint(path, kKindKeypoint);
  KeypointNetConfig cfg;
  config_from_kv(p.kv, cfg.n_points, cfg.backbone, cfg.head_hidden);
  KeypointNet net(cfg);
  adopt_params(net.params(), p.params);
  if (meta) *meta = p.meta;
  return net;
}

OffsetNet load_offset_net(const std::string& path, CheckpointMeta* meta) {
  CheckpointPayload p = read_checkpoint(path, kKindOffset);
  OffsetNetConfig cfg;
  config_from_kv(p.kv, cfg.n_points, cfg.backbone, cfg.head_hidden);
  OffsetNet net(cfg);
  adopt_params(net.params(), p.params);
  if (meta) *meta = p.meta;
  return net;
}

}  // namespace peghole::net
