#include "splitbn/ssl.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace splitbn {

const char* to_string(SslMethod m) {
  switch (m) {
    case SslMethod::supervised: return "supervised";
    case SslMethod::mean_teacher: return "mean_teacher";
    case SslMethod::vat: return "vat";
  }
  return "?";
}

SslMethod parse_method(const std::string& s) {
  if (s == "supervised") return SslMethod::supervised;
  if (s == "mean_teacher" || s == "mt") return SslMethod::mean_teacher;
  if (s == "vat") return SslMethod::vat;
  throw std::invalid_argument(fmt::format("unknown ssl method '{}'", s));
}

const char* to_string(Ramp r) { return r == Ramp::linear ? "linear" : "sigmoid"; }

Ramp parse_ramp(const std::string& s) {
  if (s == "linear") return Ramp::linear;
  if (s == "sigmoid") return Ramp::sigmoid;
  throw std::invalid_argument(fmt::format("unknown warmup ramp '{}'", s));
}

void SslConfig::validate() const {
  if (method == SslMethod::supervised) return;
  if (warmup_steps < 0) throw std::invalid_argument(fmt::format("warmup_steps {} is negative", warmup_steps));
  if (!(max_coefficient >= 0.0)) throw std::invalid_argument("max_coefficient must be non-negative");
  if (method == SslMethod::mean_teacher && !(ema_decay > 0.0 && ema_decay < 1.0))
    throw std::invalid_argument(fmt::format("ema_decay {} outside (0, 1)", ema_decay));
  if (method == SslMethod::vat) {
    if (!(vat_epsilon > 0.0)) throw std::invalid_argument("vat_epsilon must be positive");
    if (!(vat_xi > 0.0)) throw std::invalid_argument("vat_xi must be positive");
    if (vat_power_iterations < 1) throw std::invalid_argument("vat_power_iterations must be at least 1");
  }
}

double warmup_coefficient(std::int64_t step, const SslConfig& cfg) {
  if (step < 0) throw std::invalid_argument(fmt::format("negative step {}", step));
  if (step >= cfg.warmup_steps) return cfg.max_coefficient;
  const double t = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (cfg.ramp == Ramp::linear) return cfg.max_coefficient * t;
  // exp(-5 (1 - t)^2), shifted and rescaled to start at exactly 0.
  const double floor = std::exp(-5.0);
  return cfg.max_coefficient * (std::exp(-5.0 * (1.0 - t) * (1.0 - t)) - floor) / (1.0 - floor);
}

template <class T>
void ema_update(const std::vector<StateEntry<T>>& teacher, const std::vector<StateEntry<T>>& student, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument(fmt::format("ema decay {} outside [0, 1]", decay));
  if (teacher.size() != student.size())
    throw std::invalid_argument(fmt::format("teacher has {} state entries, student {}", teacher.size(), student.size()));
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i].name != student[i].name || teacher[i].tensor->shape() != student[i].tensor->shape())
      throw ShapeError(fmt::format("teacher entry {} {} does not match student entry {} {}", teacher[i].name,
                                   shape_string(teacher[i].tensor->shape()), student[i].name,
                                   shape_string(student[i].tensor->shape())));
  }
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor<T>& t = *teacher[i].tensor;
    const Tensor<T>& s = *student[i].tensor;
    for (std::size_t k = 0; k < t.numel(); ++k) t[k] = a * t[k] + b * s[k];
  }
}

template <class T>
void ema_update(Model<T>& teacher, Model<T>& student, double decay) {
  ema_update(teacher.state(), student.state(), decay);
  auto tn = teacher.norm_layers(), sn = student.norm_layers();
  for (std::size_t i = 0; i < tn.size(); ++i)
    for (std::size_t p = 0; p < tn[i]->running.size(); ++p)
      tn[i]->running[p].updated = tn[i]->running[p].updated || sn[i]->running[p].updated;
}

template <class T>
Var<T> mt_loss(Var<T> student_logits, Var<T> teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape())
    throw ShapeError(fmt::format("mt_loss: student {} vs teacher {}", shape_string(student_logits.shape()),
                                 shape_string(teacher_logits.shape())));
  Tape<T>& tape = student_logits.tape();
  return mse(softmax(student_logits, 1), tape.constant(softmax(teacher_logits.value(), 1)));
}

template <class T>
LogitsFn<T> logits_fn(Model<T>& model, ForwardContext<T> ctx) {
  ctx.stats = StatsUpdate::suppress;
  return [&model, ctx](Tape<T>& tape, Var<T> x) { return model.forward(tape, x, ctx); };
}

namespace {

// Scales each row to unit L2 norm; rows with zero or non-finite norm are
// replaced by the matching row of `fallback` when given.
template <class T>
void normalize_rows(Tensor<T>& v, const Tensor<T>* fallback) {
  const std::size_t n = v.dim(0), per = v.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    T* row = v.data() + i * per;
    double sq = 0.0;
    for (std::size_t k = 0; k < per; ++k) sq += static_cast<double>(row[k]) * static_cast<double>(row[k]);
    const double norm = std::sqrt(sq);
    if (norm > 0.0 && std::isfinite(norm)) {
      for (std::size_t k = 0; k < per; ++k) row[k] = static_cast<T>(static_cast<double>(row[k]) / norm);
    } else if (fallback) {
      std::copy_n(fallback->data() + i * per, per, row);
    }
  }
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  Shape s = x.shape();
  const std::size_t per = x.numel() / s[0];
  s[0] = rows.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * per, per, out.data() + i * per);
  return out;
}

}  // namespace

template <class T>
Tensor<T> vat_perturbation(const LogitsFn<T>& f, const Tensor<T>& x, const SslConfig& cfg, Rng& rng) {
  if (x.rank() == 0 || x.dim(0) == 0) throw ShapeError("vat_perturbation: empty input");
  Tensor<T> p;
  {
    Tape<T> tape(ParameterMode::frozen);
    p = softmax(f(tape, tape.constant(x)).value(), 1);
  }
  Tensor<T> start(x.shape());
  for (auto& v : start.storage()) v = static_cast<T>(rng.normal());
  normalize_rows(start, static_cast<const Tensor<T>*>(nullptr));
  Tensor<T> d = start;
  const T xi = static_cast<T>(cfg.vat_xi);
  for (int it = 0; it < cfg.vat_power_iterations; ++it) {
    Tape<T> tape(ParameterMode::frozen);
    Tensor<T> r0 = d;
    for (auto& v : r0.storage()) v *= xi;
    Var<T> r = tape.variable(std::move(r0));
    Var<T> kl = kl_divergence_from_logits(tape.constant(p), f(tape, add(tape.constant(x), r)));
    tape.backward(kl);
    Tensor<T> g = tape.grad(r);
    normalize_rows(g, &start);
    d = std::move(g);
  }
  const T eps = static_cast<T>(cfg.vat_epsilon);
  for (auto& v : d.storage()) v *= eps;
  return d;
}

template <class T>
Var<T> vat_loss(Tape<T>& tape, const LogitsFn<T>& f, const Tensor<T>& x, const Tensor<T>& r_adv) {
  if (x.shape() != r_adv.shape())
    throw ShapeError(fmt::format("vat_loss: input {} vs perturbation {}", shape_string(x.shape()),
                                 shape_string(r_adv.shape())));
  Var<T> p = detach(softmax(f(tape, tape.constant(x)), 1));
  return kl_divergence_from_logits(p, f(tape, add(tape.constant(x), tape.constant(r_adv))));
}

template <class T>
LossResult<T> total_loss(Tape<T>& tape, Model<T>& student, Model<T>* teacher, const PartitionedBatch<T>& batch,
                         const SslConfig& cfg, std::int64_t step, const StepSeeds& seeds,
                         const Tensor<T>* teacher_view) {
  batch.validate();
  if (batch.count(Partition::labeled) == 0)
    throw std::invalid_argument("total_loss: batch has no labeled examples");
  ForwardContext<T> ctx;
  ctx.mode = Mode::train;
  ctx.partition = batch.partition;
  ctx.dropout_seed = seeds.student_dropout;
  Var<T> logits = student.forward(tape, tape.constant(batch.data), ctx);
  Var<T> ce = cross_entropy_from_logits(logits, std::span<const int>(batch.labels));

  LossResult<T> result{ce, {}};
  result.components.classification = static_cast<double>(ce.value().item());
  result.components.total = result.components.classification;
  if (cfg.method == SslMethod::supervised) return result;

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (cfg.consistency_on_all || batch.partition[i] == Partition::unlabeled) rows.push_back(i);
  const double coef = warmup_coefficient(step, cfg);
  result.components.coefficient = coef;
  if (rows.empty()) return result;
  const bool all_rows = rows.size() == batch.size();

  Var<T> aux;
  if (cfg.method == SslMethod::mean_teacher) {
    if (!teacher) throw std::invalid_argument("total_loss: mean_teacher needs a teacher model");
    ForwardContext<T> tctx = ctx;
    tctx.stats = StatsUpdate::suppress;
    tctx.dropout_seed = seeds.teacher_dropout;
    Tape<T> ttape(ParameterMode::frozen);
    const Tensor<T>& input = teacher_view ? *teacher_view : batch.data;
    Tensor<T> tl = teacher->forward(ttape, ttape.constant(input), tctx).value();
    Var<T> t = tape.constant(std::move(tl));
    aux = all_rows ? mt_loss(logits, t) : mt_loss(select_rows(logits, std::span<const std::size_t>(rows)),
                                                  select_rows(t, std::span<const std::size_t>(rows)));
  } else {
    std::vector<Partition> part;
    for (auto r : rows) part.push_back(batch.partition[r]);
    ForwardContext<T> vctx = ctx;
    vctx.partition = part;
    const Tensor<T> x = all_rows ? batch.data : gather_rows(batch.data, rows);
    LogitsFn<T> f = logits_fn(student, vctx);
    Rng rng(seeds.vat);
    const Tensor<T> r_adv = vat_perturbation(f, x, cfg, rng);
    // With every row present the clean prediction is the training forward itself.
    Var<T> p = all_rows ? detach(softmax(logits, 1)) : detach(softmax(f(tape, tape.constant(x)), 1));
    aux = kl_divergence_from_logits(p, f(tape, add(tape.constant(x), tape.constant(r_adv))));
  }
  result.components.auxiliary = static_cast<double>(aux.value().item());
  result.total = add(ce, scale(aux, static_cast<T>(coef)));
  result.components.total = static_cast<double>(result.total.value().item());
  return result;
}

#define SPLITBN_INSTANTIATE_SSL(T)                                                                          \
  template void ema_update(const std::vector<StateEntry<T>>&, const std::vector<StateEntry<T>>&, double); \
  template void ema_update(Model<T>&, Model<T>&, double);                                                 \
  template Var<T> mt_loss(Var<T>, Var<T>);                                                                \
  template LogitsFn<T> logits_fn(Model<T>&, ForwardContext<T>);                                           \
  template Tensor<T> vat_perturbation(const LogitsFn<T>&, const Tensor<T>&, const SslConfig&, Rng&);      \
  template Var<T> vat_loss(Tape<T>&, const LogitsFn<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template LossResult<T> total_loss(Tape<T>&, Model<T>&, Model<T>*, const PartitionedBatch<T>&, const SslConfig&, \
                                    std::int64_t, const StepSeeds&, const Tensor<T>*);

SPLITBN_INSTANTIATE_SSL(float)
SPLITBN_INSTANTIATE_SSL(double)

#undef SPLITBN_INSTANTIATE_SSL

}  // namespace splitbn
