#include "entlab/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace entlab {

using nlohmann::json;

bool is_entmax_family(Mechanism m) {
  return m == Mechanism::Entmax || m == Mechanism::SEntmax || m == Mechanism::ASEntmax;
}

bool uses_scale_schedule(Mechanism m) {
  return m == Mechanism::ASEntmax || m == Mechanism::ASSMax;
}

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::Softmax: return "softmax";
    case Mechanism::SSMax: return "ssmax";
    case Mechanism::Entmax: return "entmax";
    case Mechanism::SEntmax: return "sentmax";
    case Mechanism::ASEntmax: return "asentmax";
    case Mechanism::ASSMax: return "assmax";
  }
  throw std::logic_error("mechanism_name: unknown mechanism");
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "softmax") return Mechanism::Softmax;
  if (name == "ssmax") return Mechanism::SSMax;
  if (name == "entmax") return Mechanism::Entmax;
  if (name == "sentmax") return Mechanism::SEntmax;
  if (name == "asentmax") return Mechanism::ASEntmax;
  if (name == "assmax") return Mechanism::ASSMax;
  throw std::invalid_argument("unknown attention mechanism: " + name);
}

std::string positional_name(Positional p) {
  switch (p) {
    case Positional::NoPE: return "nope";
    case Positional::ALiBi: return "alibi";
    case Positional::RoPE: return "rope";
    case Positional::NAPE: return "nape";
  }
  throw std::logic_error("positional_name: unknown positional encoding");
}

Positional positional_from_name(const std::string& name) {
  if (name == "nope") return Positional::NoPE;
  if (name == "alibi") return Positional::ALiBi;
  if (name == "rope") return Positional::RoPE;
  if (name == "nape") return Positional::NAPE;
  throw std::invalid_argument("unknown positional encoding: " + name);
}

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (heads < 1) throw std::invalid_argument("ModelConfig: heads must be >= 1");
  if (hidden % heads != 0)
    throw std::invalid_argument("ModelConfig: hidden must be divisible by heads");
  if (vocab < 2) throw std::invalid_argument("ModelConfig: vocab must be >= 2");
  if (is_entmax_family(mechanism) && alpha <= 1.0)
    throw std::invalid_argument("ModelConfig: alpha must be > 1 for the entmax family");
  if (positional == Positional::RoPE && (hidden / heads) % 2 != 0)
    throw std::invalid_argument("ModelConfig: RoPE needs an even per-head dimension");
  if (positional == Positional::NAPE && heads < 2)
    throw std::invalid_argument("ModelConfig: NAPE needs at least 2 heads");
  if (rope_factor < 1.0) throw std::invalid_argument("ModelConfig: rope_factor must be >= 1");
}

std::string ModelConfig::to_json() const {
  json j;
  j["layers"] = layers;
  j["heads"] = heads;
  j["hidden"] = hidden;
  j["ffn_dim"] = ffn_dim;
  j["vocab"] = vocab;
  j["mechanism"] = mechanism_name(mechanism);
  j["alpha"] = alpha;
  j["positional"] = positional_name(positional);
  j["rope_factor"] = rope_factor;
  j["rope_base"] = rope_base;
  j["alibi_policy"] = alibi_policy == AlibiSlopePolicy::Reciprocal ? "reciprocal" : "geometric";
  j["scaler_delta"] = scaler_delta;
  j["scaler_clamp"] = scaler_clamp;
  if (sentmax_gamma_fixed)
    j["sentmax_gamma_fixed"] = *sentmax_gamma_fixed;
  else
    j["sentmax_gamma_fixed"] = nullptr;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab = j.value("vocab", c.vocab);
  if (j.contains("mechanism")) c.mechanism = mechanism_from_name(j["mechanism"]);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("positional")) c.positional = positional_from_name(j["positional"]);
  c.rope_factor = j.value("rope_factor", c.rope_factor);
  c.rope_base = j.value("rope_base", c.rope_base);
  if (j.contains("alibi_policy"))
    c.alibi_policy = j["alibi_policy"] == "reciprocal" ? AlibiSlopePolicy::Reciprocal
                                                       : AlibiSlopePolicy::Geometric;
  c.scaler_delta = j.value("scaler_delta", c.scaler_delta);
  c.scaler_clamp = j.value("scaler_clamp", c.scaler_clamp);
  if (j.contains("sentmax_gamma_fixed") && !j["sentmax_gamma_fixed"].is_null())
    c.sentmax_gamma_fixed = j["sentmax_gamma_fixed"].get<double>();
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<double> cumulative_attention(const AttentionTrace& trace) {
  if (trace.layers == 0) throw std::invalid_argument("cumulative_attention: empty trace");
  const std::size_t n = trace.n;
  std::vector<double> cum(n * n, 0.0);
  std::vector<double> layer_avg(n * n);
  std::vector<double> next(n * n);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    std::fill(layer_avg.begin(), layer_avg.end(), 0.0);
    for (std::size_t h = 0; h < trace.heads; ++h) {
      const auto& p = trace.head_probs(l, h);
      if (p.size() != n * n)
        throw std::invalid_argument("cumulative_attention: trace dimension mismatch");
      for (std::size_t i = 0; i < n * n; ++i) layer_avg[i] += p[i];
    }
    const double inv = 1.0 / static_cast<double>(trace.heads);
    for (auto& v : layer_avg) v *= inv;
    if (l == 0) {
      cum = layer_avg;
      continue;
    }
    // next = P^(l) * cum
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk <= i; ++kk) {
        const double a = layer_avg[i * n + kk];
        if (a == 0.0) continue;
        for (std::size_t j = 0; j <= kk; ++j) next[i * n + j] += a * cum[kk * n + j];
      }
    cum.swap(next);
  }
  return cum;
}

// ---------------------------------------------------------------------------
// parameter initialization
// ---------------------------------------------------------------------------

namespace {

std::vector<PosEncoding> head_layout(const ModelConfig& cfg) {
  std::vector<PosEncoding> encs(cfg.heads);
  switch (cfg.positional) {
    case Positional::NoPE:
      break;
    case Positional::ALiBi:
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        encs[h].kind = PosKind::ALiBi;
        encs[h].alibi_slope = alibi_slope(h + 1, cfg.heads, cfg.alibi_policy);
      }
      break;
    case Positional::RoPE:
      for (auto& e : encs) {
        e.kind = PosKind::RoPE;
        e.rope_base = cfg.rope_base;
        e.rope_factor = cfg.rope_factor;
      }
      break;
    case Positional::NAPE:
      encs = nape_assign(cfg.heads);
      break;
  }
  return encs;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  head_encodings_ = head_layout(cfg_);
  Rng rng = Rng(cfg_.seed).substream("init");
  const std::size_t d = cfg_.hidden, H = cfg_.heads, F = cfg_.ffn_dim, V = cfg_.vocab;

  auto matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Parameter<T> p;
    p.name = name;
    p.shape = {rows, cols};
    p.value.resize(rows * cols);
    const double std = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& v : p.value) v = static_cast<T>(rng.normal(0.0, std));
    params_.push_back(std::move(p));
  };
  auto vector_param = [&](const std::string& name, std::size_t len, T fill) {
    Parameter<T> p;
    p.name = name;
    p.shape = {len};
    p.value.assign(len, fill);
    params_.push_back(std::move(p));
  };

  matrix("embed", V, d);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    vector_param(pre + "norm1.gain", d, T(1));
    vector_param(pre + "norm1.bias", d, T(0));
    matrix(pre + "wq", d, d);
    matrix(pre + "wk", d, d);
    matrix(pre + "wv", d, d);
    matrix(pre + "wo", d, d);
    if (uses_scale_schedule(cfg_.mechanism)) {
      vector_param(pre + "scaler.wbeta", H * d, T(0));
      params_.back().shape = {H, d};
      vector_param(pre + "scaler.wgamma", H * d, T(0));
      params_.back().shape = {H, d};
    } else if (cfg_.mechanism == Mechanism::SSMax) {
      vector_param(pre + "scaler.s", H, T(0.25));
    } else if (cfg_.mechanism == Mechanism::SEntmax) {
      vector_param(pre + "scaler.beta_raw", H, T(0));
      vector_param(pre + "scaler.gamma_raw", H, T(0));
    }
    vector_param(pre + "norm2.gain", d, T(1));
    vector_param(pre + "norm2.bias", d, T(0));
    matrix(pre + "ffn.w1", d, F);
    vector_param(pre + "ffn.b1", F, T(0));
    matrix(pre + "ffn.w2", F, d);
    vector_param(pre + "ffn.b2", d, T(0));
  }
  vector_param("norm3.gain", d, T(1));
  vector_param("norm3.bias", d, T(0));
  matrix("out_proj", d, V);
}

template <typename T>
std::size_t Model<T>::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::logic_error("Model: unknown parameter " + name);
}

template <typename T>
const Parameter<T>& Model<T>::param(const std::string& name) const {
  return params_[param_index(name)];
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.size();
  return total;
}

// ---------------------------------------------------------------------------
// fused multi-head attention node
// ---------------------------------------------------------------------------

namespace {

struct HeadScaleGrads {
  std::vector<double> grad_scale;  // per row
};

// everything the backward pass needs, stashed per attention node
template <typename T>
struct AttnStash {
  std::size_t n = 0, d = 0, heads = 0, dh = 0, layer = 0;
  Mechanism mech = Mechanism::Softmax;
  double alpha = 1.5, delta = 1.0, clamp = 4.0;
  std::optional<double> gamma_fixed;
  double inv_sqrt_dh = 1.0;
  std::vector<PosEncoding> encs;
  std::vector<double> rope_freqs;
  std::vector<std::vector<double>> qbuf, kbuf, vbuf;  // [head] n*dh, q/k rotated
  std::vector<std::vector<double>> zrows;             // [head] packed causal logits
  std::vector<std::vector<ProbDist>> dists;           // [head][row]
  std::vector<std::vector<double>> scales;            // [head][row]
  std::vector<ScaleSchedule> schedules;               // per head (asentmax/assmax)
  std::vector<double> normed;                         // n*d copy of h (scaler input)
  Node<T>* qn = nullptr;
  Node<T>* kn = nullptr;
  Node<T>* vn = nullptr;
  Node<T>* hn = nullptr;
  Node<T>* wbeta = nullptr;
  Node<T>* wgamma = nullptr;
  Node<T>* sraw = nullptr;
  Node<T>* braw = nullptr;
  Node<T>* graw = nullptr;
};

inline std::size_t tri_offset(std::size_t i) { return i * (i + 1) / 2; }

template <typename T>
void attention_backward(Node<T>* out, std::shared_ptr<AttnStash<T>> st) {
  const std::size_t n = st->n, d = st->d, dh = st->dh;
  auto up_all = out->grad_span();
  std::vector<double> up(n * dh), gq(n * dh), gk(n * dh), gv(n * dh);
  std::vector<double> gp, gs, gz;
  const bool entfam = is_entmax_family(st->mech);

  for (std::size_t h = 0; h < st->heads; ++h) {
    const auto& q = st->qbuf[h];
    const auto& k = st->kbuf[h];
    const auto& v = st->vbuf[h];
    const auto& zr = st->zrows[h];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c)
        up[i * dh + c] = static_cast<double>(up_all[i * d + h * dh + c]);
    std::fill(gq.begin(), gq.end(), 0.0);
    std::fill(gk.begin(), gk.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);
    std::vector<double> grad_scale(n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t m = i + 1;
      const ProbDist& dist = st->dists[h][i];
      const double* urow = up.data() + i * dh;
      gp.assign(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double p = dist.probs[j];
        gp[j] = kern::dot(urow, v.data() + j * dh, dh);
        if (p != 0.0) kern::axpy(p, urow, gv.data() + j * dh, dh);
      }
      gs = entfam ? entmax_vjp(dist, gp) : softmax_vjp(dist, gp);
      const double scale = st->scales[h][i];
      const double* zrow = zr.data() + tri_offset(i);
      double gscale = 0.0;
      gz.assign(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        gscale += gs[j] * zrow[j];
        gz[j] = gs[j] * scale;
      }
      grad_scale[i] = gscale;
      // z_ij = <q_i, k_j> / sqrt(dh) + bias
      const double* qi = q.data() + i * dh;
      double* gqi = gq.data() + i * dh;
      for (std::size_t j = 0; j < m; ++j) {
        const double gzj = gz[j] * st->inv_sqrt_dh;
        if (gzj == 0.0) continue;
        kern::axpy(gzj, k.data() + j * dh, gqi, dh);
        kern::axpy(gzj, qi, gk.data() + j * dh, dh);
      }
    }

    // un-rotate q/k gradients back into the projection domain
    if (st->encs[h].kind == PosKind::RoPE) {
      for (std::size_t i = 0; i < n; ++i) {
        rope_rotate_transpose_inplace({gq.data() + i * dh, dh}, i, st->rope_freqs,
                                      st->encs[h].rope_factor);
        rope_rotate_transpose_inplace({gk.data() + i * dh, dh}, i, st->rope_freqs,
                                      st->encs[h].rope_factor);
      }
    }

    if (st->qn->requires_grad) {
      auto g = st->qn->grad_span();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          g[i * d + h * dh + c] += static_cast<T>(gq[i * dh + c]);
    }
    if (st->kn->requires_grad) {
      auto g = st->kn->grad_span();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          g[i * d + h * dh + c] += static_cast<T>(gk[i * dh + c]);
    }
    if (st->vn->requires_grad) {
      auto g = st->vn->grad_span();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          g[i * d + h * dh + c] += static_cast<T>(gv[i * dh + c]);
    }

    // scaler parameter gradients
    if (uses_scale_schedule(st->mech)) {
      ScalerParams sp;
      sp.delta = st->delta;
      sp.s_clamp = st->clamp;
      auto wb = st->wbeta->values();
      auto wg = st->wgamma->values();
      sp.w_beta.resize(d);
      sp.w_gamma.resize(d);
      for (std::size_t j = 0; j < d; ++j) {
        sp.w_beta[j] = static_cast<double>(wb[h * d + j]);
        sp.w_gamma[j] = static_cast<double>(wg[h * d + j]);
      }
      const ScaleGradients sg = compute_scales_backward(st->normed, n, d, sp,
                                                        st->schedules[h], grad_scale);
      if (st->wbeta->requires_grad) {
        auto g = st->wbeta->grad_span();
        for (std::size_t j = 0; j < d; ++j) g[h * d + j] += static_cast<T>(sg.w_beta[j]);
      }
      if (st->wgamma->requires_grad) {
        auto g = st->wgamma->grad_span();
        for (std::size_t j = 0; j < d; ++j) g[h * d + j] += static_cast<T>(sg.w_gamma[j]);
      }
      if (st->hn->requires_grad) {
        auto g = st->hn->grad_span();
        for (std::size_t i = 0; i < n * d; ++i) g[i] += static_cast<T>(sg.x[i]);
      }
    } else if (st->mech == Mechanism::SSMax && st->sraw->requires_grad) {
      auto g = st->sraw->grad_span();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += grad_scale[i] * std::log(static_cast<double>(std::max<std::size_t>(i + 1, 2)));
      g[h] += static_cast<T>(acc);
    } else if (st->mech == Mechanism::SEntmax) {
      auto braw = st->braw->values();
      auto graw = st->graw->values();
      double db_total = 0.0, dg_total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (grad_scale[i] == 0.0) continue;
        double db = 0.0, dg = 0.0;
        const double graw_eff = st->gamma_fixed
                                    ? std::atanh(std::clamp(*st->gamma_fixed / st->clamp,
                                                            -0.999999, 0.999999))
                                    : static_cast<double>(graw[h]);
        sentmax_scale_grad(static_cast<double>(braw[h]), graw_eff, i + 1, st->clamp, &db, &dg);
        db_total += grad_scale[i] * db;
        dg_total += grad_scale[i] * dg;
      }
      if (st->braw->requires_grad) st->braw->grad_span()[h] += static_cast<T>(db_total);
      if (!st->gamma_fixed && st->graw->requires_grad)
        st->graw->grad_span()[h] += static_cast<T>(dg_total);
    }
  }
}

// q, k, v, normed: [n x d]; returns [n x d] context (pre output projection)
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const Tensor<T>& normed, const ModelConfig& cfg,
                         const std::vector<PosEncoding>& encs, std::size_t layer,
                         const Tensor<T>* wbeta, const Tensor<T>* wgamma,
                         const Tensor<T>* sraw, const Tensor<T>* braw,
                         const Tensor<T>* graw, AttentionTrace* trace) {
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  const std::size_t H = cfg.heads, dh = d / H;

  std::vector<std::shared_ptr<Node<T>>> parents = {q.node(), k.node(), v.node()};
  auto add_parent = [&](const Tensor<T>* t) {
    if (t && t->defined()) parents.push_back(t->node());
  };
  if (uses_scale_schedule(cfg.mechanism)) {
    parents.push_back(normed.node());
    add_parent(wbeta);
    add_parent(wgamma);
  }
  add_parent(sraw);
  add_parent(braw);
  add_parent(graw);

  auto out = detail::make_result<T>({n, d}, std::move(parents));
  auto st = std::make_shared<AttnStash<T>>();
  st->n = n;
  st->d = d;
  st->heads = H;
  st->dh = dh;
  st->layer = layer;
  st->mech = cfg.mechanism;
  st->alpha = cfg.alpha;
  st->delta = cfg.scaler_delta;
  st->clamp = cfg.scaler_clamp;
  st->gamma_fixed = cfg.sentmax_gamma_fixed;
  st->inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  st->encs = encs;
  st->qn = q.node().get();
  st->kn = k.node().get();
  st->vn = v.node().get();
  st->hn = normed.node().get();
  st->wbeta = wbeta ? wbeta->node().get() : nullptr;
  st->wgamma = wgamma ? wgamma->node().get() : nullptr;
  st->sraw = sraw ? sraw->node().get() : nullptr;
  st->braw = braw ? braw->node().get() : nullptr;
  st->graw = graw ? graw->node().get() : nullptr;

  bool any_rope = false;
  for (const auto& e : encs) any_rope |= (e.kind == PosKind::RoPE);
  if (any_rope) st->rope_freqs = rope_frequencies(dh, cfg.rope_base);

  st->qbuf.assign(H, std::vector<double>(n * dh));
  st->kbuf.assign(H, std::vector<double>(n * dh));
  st->vbuf.assign(H, std::vector<double>(n * dh));
  st->zrows.assign(H, std::vector<double>(tri_offset(n - 1) + n));
  st->dists.assign(H, {});
  st->scales.assign(H, std::vector<double>(n, 1.0));
  st->schedules.resize(H);

  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  auto hv = normed.data();
  if (uses_scale_schedule(cfg.mechanism)) {
    st->normed.resize(n * d);
    for (std::size_t i = 0; i < n * d; ++i) st->normed[i] = static_cast<double>(hv[i]);
  }
  auto ov = out->mutable_values();

  if (trace) {
    trace->n = n;
    trace->heads = H;
    trace->layers = std::max(trace->layers, layer + 1);
    trace->probs.resize(trace->layers * H);
    trace->scaled_logits.resize(trace->layers * H);
  }

  for (std::size_t h = 0; h < H; ++h) {
    auto& qb = st->qbuf[h];
    auto& kb = st->kbuf[h];
    auto& vb = st->vbuf[h];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        qb[i * dh + c] = static_cast<double>(qv[i * d + h * dh + c]);
        kb[i * dh + c] = static_cast<double>(kv[i * d + h * dh + c]);
        vb[i * dh + c] = static_cast<double>(vv[i * d + h * dh + c]);
      }
    const PosEncoding& enc = encs[h];
    if (enc.kind == PosKind::RoPE) {
      for (std::size_t i = 0; i < n; ++i) {
        rope_rotate_inplace({qb.data() + i * dh, dh}, i, st->rope_freqs, enc.rope_factor);
        rope_rotate_inplace({kb.data() + i * dh, dh}, i, st->rope_freqs, enc.rope_factor);
      }
    }

    // per-query temperature scales
    auto& scales = st->scales[h];
    if (uses_scale_schedule(cfg.mechanism)) {
      ScalerParams sp;
      sp.delta = cfg.scaler_delta;
      sp.s_clamp = cfg.scaler_clamp;
      sp.w_beta.resize(d);
      sp.w_gamma.resize(d);
      auto wb = wbeta->data();
      auto wg = wgamma->data();
      for (std::size_t j = 0; j < d; ++j) {
        sp.w_beta[j] = static_cast<double>(wb[h * d + j]);
        sp.w_gamma[j] = static_cast<double>(wg[h * d + j]);
      }
      st->schedules[h] = compute_scales(st->normed, n, d, sp);
      scales = st->schedules[h].scales;
    } else if (cfg.mechanism == Mechanism::SSMax) {
      const double s = static_cast<double>(sraw->data()[h]);
      for (std::size_t i = 0; i < n; ++i)
        scales[i] = s * std::log(static_cast<double>(std::max<std::size_t>(i + 1, 2)));
    } else if (cfg.mechanism == Mechanism::SEntmax) {
      const double b = static_cast<double>(braw->data()[h]);
      for (std::size_t i = 0; i < n; ++i) {
        if (cfg.sentmax_gamma_fixed) {
          const double L = std::log(static_cast<double>(std::max<std::size_t>(i + 1, 2)));
          scales[i] = cfg.scaler_delta + softplus(b) * std::pow(L, *cfg.sentmax_gamma_fixed);
        } else {
          scales[i] = sentmax_scale(b, static_cast<double>(graw->data()[h]), i + 1,
                                    cfg.scaler_delta, cfg.scaler_clamp);
        }
      }
    }

    auto& zr = st->zrows[h];
    auto& dists = st->dists[h];
    dists.reserve(n);
    std::vector<double> zscaled;
    std::vector<double> acc(dh);
    std::vector<double>* trace_p = nullptr;
    std::vector<double>* trace_z = nullptr;
    if (trace) {
      trace->probs[layer * H + h].assign(n * n, 0.0);
      trace->scaled_logits[layer * H + h].assign(n * n, 0.0);
      trace_p = &trace->probs[layer * H + h];
      trace_z = &trace->scaled_logits[layer * H + h];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t m = i + 1;
      double* zrow = zr.data() + tri_offset(i);
      const double* qi = qb.data() + i * dh;
      for (std::size_t j = 0; j < m; ++j) {
        double z = kern::dot(qi, kb.data() + j * dh, dh) * st->inv_sqrt_dh;
        if (enc.kind == PosKind::ALiBi) z += alibi_bias(i, j, enc.alibi_slope);
        if (!std::isfinite(z))
          throw std::runtime_error("attention: non-finite logit (layer " +
                                   std::to_string(layer) + ", head " + std::to_string(h) +
                                   ", row " + std::to_string(i) + ")");
        zrow[j] = z;
      }
      const double scale = scales[i];
      zscaled.assign(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) zscaled[j] = scale * zrow[j];
      ProbDist dist = is_entmax_family(cfg.mechanism) ? entmax_bisect(zscaled, cfg.alpha)
                                                      : softmax(zscaled);
      const double* vrow = vb.data();
      T* orow = ov.data() + i * d + h * dh;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int j : dist.support)
        kern::axpy(dist.probs[static_cast<std::size_t>(j)],
                   vrow + static_cast<std::size_t>(j) * dh, acc.data(), dh);
      for (std::size_t c = 0; c < dh; ++c) orow[c] = static_cast<T>(acc[c]);
      if (trace) {
        for (std::size_t j = 0; j < m; ++j) {
          (*trace_p)[i * n + j] = dist.probs[j];
          (*trace_z)[i * n + j] = zscaled[j];
        }
      }
      dists.push_back(std::move(dist));
    }
  }

  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward = [o, st] { attention_backward<T>(o, st); };
  }
  return Tensor<T>(out);
}

}  // namespace

// ---------------------------------------------------------------------------
// model forward
// ---------------------------------------------------------------------------

template <typename T>
typename Model<T>::Forward Model<T>::forward(std::span<const int> tokens, bool record_trace,
                                             bool keep_layer_inputs) const {
  if (tokens.empty()) throw std::invalid_argument("model_forward: empty token sequence");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab)
      throw std::invalid_argument("model_forward: token id out of range");

  Forward fwd;
  fwd.param_leaves.reserve(params_.size());
  std::unordered_map<std::string, Tensor<T>> leaf;
  for (const auto& p : params_) {
    Tensor<T> t = Tensor<T>::view(p.shape, p.value.data(), p.size(), true);
    fwd.param_leaves.push_back(t);
    leaf.emplace(p.name, t);
  }
  if (record_trace) fwd.trace = std::make_shared<AttentionTrace>();

  std::vector<int> ids(tokens.begin(), tokens.end());
  Tensor<T> v = embedding_lookup(leaf.at("embed"), ids);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    if (keep_layer_inputs) fwd.layer_inputs.push_back(v);
    const std::string pre = "layers." + std::to_string(l) + ".";
    Tensor<T> h = layer_norm(v, leaf.at(pre + "norm1.gain"), leaf.at(pre + "norm1.bias"));
    Tensor<T> q = matmul(h, leaf.at(pre + "wq"));
    Tensor<T> k = matmul(h, leaf.at(pre + "wk"));
    Tensor<T> val = matmul(h, leaf.at(pre + "wv"));
    const Tensor<T>* wbeta = nullptr;
    const Tensor<T>* wgamma = nullptr;
    const Tensor<T>* sraw = nullptr;
    const Tensor<T>* braw = nullptr;
    const Tensor<T>* graw = nullptr;
    if (uses_scale_schedule(cfg_.mechanism)) {
      wbeta = &leaf.at(pre + "scaler.wbeta");
      wgamma = &leaf.at(pre + "scaler.wgamma");
    } else if (cfg_.mechanism == Mechanism::SSMax) {
      sraw = &leaf.at(pre + "scaler.s");
    } else if (cfg_.mechanism == Mechanism::SEntmax) {
      braw = &leaf.at(pre + "scaler.beta_raw");
      graw = &leaf.at(pre + "scaler.gamma_raw");
    }
    Tensor<T> ctx = attention_core<T>(q, k, val, h, cfg_, head_encodings_, l, wbeta, wgamma,
                                      sraw, braw, graw, fwd.trace.get());
    Tensor<T> u = add(matmul(ctx, leaf.at(pre + "wo")), v);
    Tensor<T> f = layer_norm(u, leaf.at(pre + "norm2.gain"), leaf.at(pre + "norm2.bias"));
    v = add(ffn_forward(f, leaf.at(pre + "ffn.w1"), leaf.at(pre + "ffn.b1"),
                        leaf.at(pre + "ffn.w2"), leaf.at(pre + "ffn.b2")),
            u);
  }
  Tensor<T> y = layer_norm(v, leaf.at("norm3.gain"), leaf.at("norm3.bias"));
  fwd.logits = matmul(y, leaf.at("out_proj"));
  return fwd;
}

template <typename T>
PathCounts count_gradient_paths(const AttentionTrace& trace, Mechanism mechanism,
                                const std::vector<Tensor<T>>& layer_inputs) {
  PathCounts out;
  const double floor = is_entmax_family(mechanism) ? 0.0 : 1e-12;
  const std::size_t n = trace.n;
  for (std::size_t l = 0; l < trace.layers; ++l) {
    std::size_t cnt = 0;
    for (std::size_t h = 0; h < trace.heads; ++h) {
      const auto& p = trace.head_probs(l, h);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j)
          if (p[i * n + j] > floor) ++cnt;
    }
    out.nonzero_per_layer.push_back(cnt);
    out.total_per_layer.push_back(trace.heads * n * (n + 1) / 2);
  }
  for (const auto& t : layer_inputs) {
    double s = 0.0;
    for (auto g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    out.grad_norm_per_layer.push_back(std::sqrt(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// incremental decoding
// ---------------------------------------------------------------------------

namespace {

void matvec(std::span<const float> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < rows; ++j) {
    const double xj = x[j];
    const float* wrow = w.data() + j * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += xj * static_cast<double>(wrow[c]);
  }
}

void norm_row(std::span<const double> x, std::span<const float> gain,
              std::span<const float> bias, std::span<double> out) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double is = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = (x[j] - mean) * is * static_cast<double>(gain[j]) + static_cast<double>(bias[j]);
}

double gelu_scalar(double v) {
  return 0.5 * v * (1.0 + std::tanh(0.79788456080286535588 * (v + 0.044715 * v * v * v)));
}

}  // namespace

InferenceSession::InferenceSession(const Model<float>& model) : model_(model) {
  const auto& cfg = model_.config();
  cache_.resize(cfg.layers);
  for (auto& c : cache_) {
    c.k.assign(cfg.heads, {});
    c.v.assign(cfg.heads, {});
  }
  if (cfg.positional == Positional::RoPE)
    rope_freqs_ = rope_frequencies(cfg.hidden / cfg.heads, cfg.rope_base);
}

void InferenceSession::reset() {
  for (auto& c : cache_)
    for (std::size_t h = 0; h < c.k.size(); ++h) {
      c.k[h].clear();
      c.v[h].clear();
    }
  pos_ = 0;
}

int InferenceSession::feed(int token) {
  const auto& cfg = model_.config();
  const std::size_t d = cfg.hidden, H = cfg.heads, dh = d / H, V = cfg.vocab;
  if (token < 0 || static_cast<std::size_t>(token) >= V)
    throw std::invalid_argument("InferenceSession: token id out of range");
  const auto& params = model_.parameters();
  auto find = [&](const std::string& name) -> const Parameter<float>& {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw std::logic_error("InferenceSession: missing parameter " + name);
  };
  const std::vector<PosEncoding> encs = head_layout(cfg);

  const std::size_t i = pos_;
  const auto& embed = find("embed");
  std::vector<double> v(d), h(d), q(d), k(d), val(d), ctx(d), u(d), f(d), tmp(cfg.ffn_dim);
  for (std::size_t c = 0; c < d; ++c)
    v[c] = static_cast<double>(embed.value[static_cast<std::size_t>(token) * d + c]);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> z, probs_buf;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    norm_row(v, find(pre + "norm1.gain").value, find(pre + "norm1.bias").value, h);
    matvec(find(pre + "wq").value, d, d, h, q);
    matvec(find(pre + "wk").value, d, d, h, k);
    matvec(find(pre + "wv").value, d, d, h, val);
    auto& lc = cache_[l];
    for (std::size_t hd = 0; hd < H; ++hd) {
      std::span<double> qh(q.data() + hd * dh, dh);
      std::span<double> kh(k.data() + hd * dh, dh);
      const PosEncoding& enc = encs[hd];
      if (enc.kind == PosKind::RoPE) {
        rope_rotate_inplace(qh, i, rope_freqs_, enc.rope_factor);
        rope_rotate_inplace(kh, i, rope_freqs_, enc.rope_factor);
      }
      lc.k[hd].insert(lc.k[hd].end(), kh.begin(), kh.end());
      lc.v[hd].insert(lc.v[hd].end(), val.begin() + hd * dh, val.begin() + (hd + 1) * dh);

      // per-query temperature
      double scale = 1.0;
      const std::size_t n_i = i + 1;
      const double L = std::log(static_cast<double>(std::max<std::size_t>(n_i, 2)));
      if (uses_scale_schedule(cfg.mechanism)) {
        const auto& wb = find(pre + "scaler.wbeta").value;
        const auto& wg = find(pre + "scaler.wgamma").value;
        double tb = 0.0, tg = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          tb += h[c] * static_cast<double>(wb[hd * d + c]);
          tg += h[c] * static_cast<double>(wg[hd * d + c]);
        }
        scale = cfg.scaler_delta +
                softplus(tb) * std::pow(L, cfg.scaler_clamp * std::tanh(tg));
      } else if (cfg.mechanism == Mechanism::SSMax) {
        scale = static_cast<double>(find(pre + "scaler.s").value[hd]) * L;
      } else if (cfg.mechanism == Mechanism::SEntmax) {
        const double b = static_cast<double>(find(pre + "scaler.beta_raw").value[hd]);
        if (cfg.sentmax_gamma_fixed) {
          scale = cfg.scaler_delta + softplus(b) * std::pow(L, *cfg.sentmax_gamma_fixed);
        } else {
          const double g = static_cast<double>(find(pre + "scaler.gamma_raw").value[hd]);
          scale = sentmax_scale(b, g, n_i, cfg.scaler_delta, cfg.scaler_clamp);
        }
      }

      const std::size_t m = i + 1;
      z.assign(m, 0.0);
      const double* krows = lc.k[hd].data();
      for (std::size_t j = 0; j < m; ++j) {
        const double* kj = krows + j * dh;
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += qh[c] * kj[c];
        double zj = dot * inv_sqrt_dh;
        if (enc.kind == PosKind::ALiBi) zj += alibi_bias(i, j, enc.alibi_slope);
        if (!std::isfinite(zj))
          throw std::runtime_error("attention: non-finite logit (layer " + std::to_string(l) +
                                   ", head " + std::to_string(hd) + ", row " +
                                   std::to_string(i) + ")");
        z[j] = zj * scale;
      }
      const ProbDist dist =
          is_entmax_family(cfg.mechanism) ? entmax_bisect(z, cfg.alpha) : softmax(z);
      double* out = ctx.data() + hd * dh;
      std::fill(out, out + dh, 0.0);
      const double* vrows = lc.v[hd].data();
      for (int j : dist.support) {
        const double p = dist.probs[static_cast<std::size_t>(j)];
        const double* vj = vrows + static_cast<std::size_t>(j) * dh;
        for (std::size_t c = 0; c < dh; ++c) out[c] += p * vj[c];
      }
    }
    matvec(find(pre + "wo").value, d, d, ctx, u);
    for (std::size_t c = 0; c < d; ++c) u[c] += v[c];
    norm_row(u, find(pre + "norm2.gain").value, find(pre + "norm2.bias").value, f);
    matvec(find(pre + "ffn.w1").value, d, cfg.ffn_dim, f, tmp);
    const auto& b1 = find(pre + "ffn.b1").value;
    for (std::size_t c = 0; c < cfg.ffn_dim; ++c)
      tmp[c] = gelu_scalar(tmp[c] + static_cast<double>(b1[c]));
    matvec(find(pre + "ffn.w2").value, cfg.ffn_dim, d, tmp, v);
    const auto& b2 = find(pre + "ffn.b2").value;
    for (std::size_t c = 0; c < d; ++c) v[c] += static_cast<double>(b2[c]) + u[c];
  }
  norm_row(v, find("norm3.gain").value, find("norm3.bias").value, h);
  logits_.assign(V, 0.0);
  matvec(find("out_proj").value, d, V, h, logits_);
  ++pos_;
  int best = 0;
  for (std::size_t c = 1; c < V; ++c)
    if (logits_[c] > logits_[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  return best;
}

template class Model<float>;
template class Model<double>;
template PathCounts count_gradient_paths<float>(const AttentionTrace&, Mechanism,
                                                const std::vector<Tensor<float>>&);
template PathCounts count_gradient_paths<double>(const AttentionTrace&, Mechanism,
                                                 const std::vector<Tensor<double>>&);

}  // namespace entlab
