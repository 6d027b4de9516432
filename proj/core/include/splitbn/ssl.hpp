#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "splitbn/models.hpp"

namespace splitbn {

enum class SslMethod { supervised, mean_teacher, vat };
enum class Ramp { linear, sigmoid };

const char* to_string(SslMethod m);
SslMethod parse_method(const std::string& s);
Ramp parse_ramp(const std::string& s);
const char* to_string(Ramp r);

struct SslConfig {
  SslMethod method = SslMethod::supervised;
  double max_coefficient = 8.0;
  std::int64_t warmup_steps = 50000;
  Ramp ramp = Ramp::linear;
  double ema_decay = 0.999;
  double vat_epsilon = 6.0;
  double vat_xi = 1e-6;
  int vat_power_iterations = 1;
  /// Consistency over every row of the batch; false restricts it to unlabeled rows.
  bool consistency_on_all = true;

  void validate() const;
};

/// 0 at step 0, max_coefficient from warmup_steps on, non-decreasing in between.
/// With warmup_steps == 0 the maximum applies from the start.
double warmup_coefficient(std::int64_t step, const SslConfig& cfg);

/// teacher <- decay * teacher + (1 - decay) * student, entry by entry.
/// Entries must agree in name and shape.
template <class T>
void ema_update(const std::vector<StateEntry<T>>& teacher, const std::vector<StateEntry<T>>& student, double decay);

/// Whole-model form: parameters and running statistics. A teacher statistic
/// counts as trained once the student's has been.
template <class T>
void ema_update(Model<T>& teacher, Model<T>& student, double decay);

/// Mean squared difference of the two softmax vectors; the teacher side carries no gradient.
template <class T>
Var<T> mt_loss(Var<T> student_logits, Var<T> teacher_logits);

/// Maps an input placed on a tape to logits.
template <class T>
using LogitsFn = std::function<Var<T>(Tape<T>& tape, Var<T> x)>;

/// Logits of `model` under `ctx` with running-statistic updates suppressed.
template <class T>
LogitsFn<T> logits_fn(Model<T>& model, ForwardContext<T> ctx);

/// Adversarial direction by power iteration; every row has L2 norm vat_epsilon.
/// Rows whose gradient vanishes keep the random start direction.
template <class T>
Tensor<T> vat_perturbation(const LogitsFn<T>& f, const Tensor<T>& x, const SslConfig& cfg, Rng& rng);

/// Mean over rows of KL(stop-grad p(x) || p(x + r_adv)); r_adv is a constant.
template <class T>
Var<T> vat_loss(Tape<T>& tape, const LogitsFn<T>& f, const Tensor<T>& x, const Tensor<T>& r_adv);

struct LossComponents {
  double classification = 0.0;
  double auxiliary = 0.0;
  double coefficient = 0.0;
  double total = 0.0;
};

template <class T>
struct LossResult {
  Var<T> total;
  LossComponents components;
};

/// Per-step randomness of one training objective.
struct StepSeeds {
  std::uint64_t student_dropout = 0;
  std::uint64_t teacher_dropout = 1;
  std::uint64_t vat = 2;
};

/// Cross-entropy on labeled rows plus warmup_coefficient(step) times the
/// method's auxiliary term. The student's forward is recorded on `tape` and
/// updates its running statistics; `teacher` is required for mean_teacher and
/// `teacher_view` optionally gives the teacher a differently augmented input.
template <class T>
LossResult<T> total_loss(Tape<T>& tape, Model<T>& student, Model<T>* teacher, const PartitionedBatch<T>& batch,
                         const SslConfig& cfg, std::int64_t step, const StepSeeds& seeds,
                         const Tensor<T>* teacher_view = nullptr);

}  // namespace splitbn
