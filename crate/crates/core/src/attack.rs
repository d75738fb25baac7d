//! Ensemble PGD attack against two-sample tests.
//!
//! The attack perturbs the second sample set within an l-infinity ball of
//! radius epsilon, taking signed-gradient steps that minimize a weighted sum
//! of test criteria. The step size starts at epsilon and is halved at
//! checkpoints when progress stalls:
//!
//! - condition 1: fewer than 75% of the steps since the previous checkpoint
//!   decreased the loss;
//! - condition 2: the step size and the running minimum are both unchanged
//!   since the previous checkpoint.
//!
//! On a halving the iterate restarts at the best point found so far. The
//! returned set is always the best iterate over the whole run, including the
//! unperturbed starting point, so the final loss never exceeds the initial
//! loss.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelModel;
use crate::location::{self, LocationTestModel};
use crate::mmd::{self, CriterionConfig};
use crate::ndmath::Matrix;

/// Identifier of one test in the ensemble. The order here is the canonical
/// column order of weight sets and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestId {
    MmdD,
    MmdG,
    C2stS,
    C2stL,
    Me,
    Scf,
    MmdRod,
}

impl TestId {
    pub const ALL_SIX: [TestId; 6] = [
        TestId::MmdD,
        TestId::MmdG,
        TestId::C2stS,
        TestId::C2stL,
        TestId::Me,
        TestId::Scf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestId::MmdD => "mmd-d",
            TestId::MmdG => "mmd-g",
            TestId::C2stS => "c2st-s",
            TestId::C2stL => "c2st-l",
            TestId::Me => "me",
            TestId::Scf => "scf",
            TestId::MmdRod => "mmd-rod",
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmd-d" => Ok(TestId::MmdD),
            "mmd-g" => Ok(TestId::MmdG),
            "c2st-s" => Ok(TestId::C2stS),
            "c2st-l" => Ok(TestId::C2stL),
            "me" => Ok(TestId::Me),
            "scf" => Ok(TestId::Scf),
            "mmd-rod" => Ok(TestId::MmdRod),
            other => Err(Error::config(format!("unknown test id '{other}'"))),
        }
    }
}

/// One differentiable test criterion the attack can minimize.
#[derive(Debug, Clone)]
pub enum CriterionKind {
    Mmd {
        model: KernelModel,
        cfg: CriterionConfig,
    },
    Location {
        model: LocationTestModel,
    },
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub id: TestId,
    pub kind: CriterionKind,
}

impl EnsembleMember {
    /// The criterion the attack minimizes for this test. MMD-family members
    /// use the variance-normalized criterion; location tests enter at the
    /// scale `statistic / sqrt(n)` so that heterogeneous criteria stay
    /// commensurable inside one weighted sum (the raw statistic grows
    /// linearly in n and would monopolize the signed gradient). Positive
    /// scaling leaves the trajectory of a single-test attack unchanged.
    pub fn value(&self, sp: &Matrix, sq: &Matrix) -> Result<f64> {
        match &self.kind {
            CriterionKind::Mmd { model, cfg } => mmd::criterion(model, sp, sq, cfg),
            CriterionKind::Location { model } => {
                Ok(location::location_statistic(model, sp, sq)? / (sq.rows() as f64).sqrt())
            }
        }
    }

    pub fn value_and_input_grad(&self, sp: &Matrix, sq: &Matrix) -> Result<(f64, Matrix)> {
        match &self.kind {
            CriterionKind::Mmd { model, cfg } => {
                mmd::criterion_with_input_grad(model, sp, sq, cfg)
            }
            CriterionKind::Location { model } => {
                let (v, mut g) = location::location_statistic_with_input_grad(model, sp, sq)?;
                let scale = 1.0 / (sq.rows() as f64).sqrt();
                g.scale(scale);
                Ok((v * scale, g))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionEnsemble {
    members: Vec<EnsembleMember>,
}

impl CriterionEnsemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::config("ensemble must contain at least one criterion"));
        }
        let mut ids: Vec<TestId> = members.iter().map(|m| m.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != members.len() {
            return Err(Error::config("duplicate test ids in ensemble"));
        }
        let dims: Vec<Option<usize>> = members
            .iter()
            .map(|m| match &m.kind {
                CriterionKind::Mmd { model, .. } => model.input_dim(),
                CriterionKind::Location { model } => Some(model.dim()),
            })
            .collect();
        let pinned: Vec<usize> = dims.iter().flatten().copied().collect();
        if pinned.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::config(
                "ensemble members expect different sample dimensionalities",
            ));
        }
        Ok(CriterionEnsemble { members })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn ids(&self) -> Vec<TestId> {
        self.members.iter().map(|m| m.id).collect()
    }
}

/// How the per-test weights of the ensemble loss are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    /// Fixed map from test id to weight; must sum to 1.
    Fixed(BTreeMap<TestId, f64>),
    /// Equal weight on every ensemble member.
    Uniform,
    /// Softmax of the current criterion values, recomputed at every PGD step.
    Automatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    /// l-infinity radius in data units.
    pub epsilon: f64,
    /// Maximum number of PGD steps `T`.
    pub max_steps: usize,
    pub weights: WeightStrategy,
    /// Ascending step indices in `[1, T)` at which halving is considered.
    pub checkpoints: Vec<usize>,
    /// Optional per-feature `[lo, hi]` bounds applied after the epsilon
    /// projection.
    pub domain_bounds: Option<Vec<(f64, f64)>>,
}

impl AttackPlan {
    pub fn new(epsilon: f64, max_steps: usize, weights: WeightStrategy) -> Result<Self> {
        let plan = AttackPlan {
            epsilon,
            max_steps,
            weights,
            checkpoints: default_checkpoints(max_steps),
            domain_bounds: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("epsilon must be a finite non-negative number"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("attack needs at least one step"));
        }
        if let WeightStrategy::Fixed(map) = &self.weights {
            let sum: f64 = map.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("weights sum to {sum}, expected 1")));
            }
            if map.values().any(|w| *w < 0.0) {
                return Err(Error::config("weights must be non-negative"));
            }
        }
        let mut last = 0;
        for &c in &self.checkpoints {
            if c < 1 || c >= self.max_steps {
                return Err(Error::config(format!(
                    "checkpoint {c} outside [1, {})",
                    self.max_steps
                )));
            }
            if c <= last && last != 0 {
                return Err(Error::config("checkpoints must be strictly ascending"));
            }
            last = c;
        }
        if let Some(bounds) = &self.domain_bounds {
            if bounds.iter().any(|(lo, hi)| lo > hi) {
                return Err(Error::config("domain bounds must satisfy lo <= hi"));
            }
        }
        Ok(())
    }
}

/// Fractional checkpoint schedule: p0 = 0, p1 = 0.22,
/// p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06), c_j = ceil(p_j * T),
/// keeping only checkpoints inside `[1, T)`.
pub fn default_checkpoints(max_steps: usize) -> Vec<usize> {
    let t = max_steps as f64;
    let mut out = Vec::new();
    let (mut prev, mut cur) = (0.0f64, 0.22f64);
    while cur < 1.0 {
        let c = (cur * t).ceil() as usize;
        if c >= 1 && c < max_steps && out.last() != Some(&c) {
            out.push(c);
        }
        let next = cur + (cur - prev - 0.03).max(0.06);
        prev = cur;
        cur = next;
    }
    out
}

/// Weighted sum of criterion values at `(sp, sq_tilde)`.
pub fn ensemble_loss(
    ens: &CriterionEnsemble,
    weights: &[f64],
    sp: &Matrix,
    sq_tilde: &Matrix,
) -> Result<f64> {
    if weights.len() != ens.members().len() {
        return Err(Error::config("weight vector length does not match ensemble"));
    }
    let mut acc = 0.0;
    for (m, &w) in ens.members().iter().zip(weights) {
        if w != 0.0 {
            acc += w * m.value(sp, sq_tilde)?;
        }
    }
    Ok(acc)
}

/// Softmax of the criterion values, guarded against overflow by subtracting
/// the maximum.
pub fn auto_weights(ens: &CriterionEnsemble, sp: &Matrix, sq: &Matrix) -> Result<Vec<f64>> {
    let values: Vec<f64> = ens
        .members()
        .iter()
        .map(|m| m.value(sp, sq))
        .collect::<Result<_>>()?;
    Ok(softmax(&values))
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Resolves the plan's weight strategy into one weight per ensemble member,
/// in member order. Fixed maps must cover exactly the ensemble's ids.
pub fn resolve_weights(
    plan: &AttackPlan,
    ens: &CriterionEnsemble,
    sp: &Matrix,
    sq: &Matrix,
) -> Result<Vec<f64>> {
    match &plan.weights {
        WeightStrategy::Fixed(map) => {
            if map.len() != ens.members().len() {
                return Err(Error::config(format!(
                    "weight map has {} entries, ensemble has {}",
                    map.len(),
                    ens.members().len()
                )));
            }
            ens.members()
                .iter()
                .map(|m| {
                    map.get(&m.id).copied().ok_or_else(|| {
                        Error::config(format!("weight map is missing test id '{}'", m.id))
                    })
                })
                .collect()
        }
        WeightStrategy::Uniform => {
            let w = 1.0 / ens.members().len() as f64;
            Ok(vec![w; ens.members().len()])
        }
        WeightStrategy::Automatic => auto_weights(ens, sp, sq),
    }
}

/// Per-member (value, input-gradient) pairs at one iterate. Members whose
/// fixed weight is exactly zero are skipped and reported as zero.
#[derive(Clone)]
struct MemberEvals {
    values: Vec<f64>,
    grads: Vec<Matrix>,
}

fn member_evals(
    ens: &CriterionEnsemble,
    fixed: Option<&[f64]>,
    sp: &Matrix,
    sq: &Matrix,
) -> Result<MemberEvals> {
    let mut values = Vec::with_capacity(ens.members().len());
    let mut grads = Vec::with_capacity(ens.members().len());
    for (i, m) in ens.members().iter().enumerate() {
        if fixed.map_or(false, |w| w[i] == 0.0) {
            values.push(0.0);
            grads.push(Matrix::zeros(sq.rows(), sq.cols()));
            continue;
        }
        let (v, g) = m.value_and_input_grad(sp, sq)?;
        values.push(v);
        grads.push(g);
    }
    Ok(MemberEvals { values, grads })
}

impl MemberEvals {
    fn loss(&self, weights: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w != 0.0)
            .map(|(v, w)| w * v)
            .sum()
    }

    fn weighted_grad(&self, weights: &[f64], rows: usize, cols: usize) -> Matrix {
        let mut grad = Matrix::zeros(rows, cols);
        for (g, &w) in self.grads.iter().zip(weights) {
            if w != 0.0 {
                grad.add_scaled(g, w);
            }
        }
        grad
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One projected signed-gradient step from `sq_t`.
///
/// Every coordinate moves by `-rho * sign(grad)` (with `sign(0) = 0`), is
/// clipped into `[sq_0 - eps, sq_0 + eps]`, and then into the plan's domain
/// bounds when present.
pub fn pgd_step(
    plan: &AttackPlan,
    grad: &Matrix,
    sq_t: &Matrix,
    sq_0: &Matrix,
    rho: f64,
) -> Result<Matrix> {
    if grad.rows() != sq_t.rows() || grad.cols() != sq_t.cols() {
        return Err(Error::dimension("gradient shape does not match iterate"));
    }
    if !(rho > 0.0) {
        return Err(Error::config("step size must be positive"));
    }
    grad.ensure_finite("attack gradient")?;
    let mut next = Matrix::zeros(sq_t.rows(), sq_t.cols());
    let d = sq_t.cols();
    for i in 0..sq_t.rows() {
        for j in 0..d {
            let base = sq_0.get(i, j);
            let mut v = sq_t.get(i, j) - rho * sign(grad.get(i, j));
            v = v.clamp(base - plan.epsilon, base + plan.epsilon);
            if let Some(bounds) = &plan.domain_bounds {
                let (lo, hi) = bounds[j % bounds.len()];
                v = v.clamp(lo, hi);
            }
            next.set(i, j, v);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTraceStep {
    pub step: usize,
    pub loss: f64,
    pub rho: f64,
    pub halved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    pub seed: u64,
    pub steps: Vec<AttackTraceStep>,
    pub best_loss: f64,
    pub best_step: usize,
}

/// Runs the ensemble attack and returns the best iterate with its trace.
///
/// The optimization itself is deterministic; `seed` is recorded in the trace
/// for bookkeeping by callers that derive per-pair seed streams.
pub fn ensemble_attack(
    ens: &CriterionEnsemble,
    plan: &AttackPlan,
    sp: &Matrix,
    sq: &Matrix,
    seed: u64,
) -> Result<(Matrix, AttackTrace)> {
    let (best, trace, _) = run_attack(ens, plan, sp, sq, seed, false)?;
    Ok((best, trace))
}

/// Like [`ensemble_attack`] but also returns every visited iterate, in step
/// order. Used by diagnostics and property checks.
pub fn ensemble_attack_recorded(
    ens: &CriterionEnsemble,
    plan: &AttackPlan,
    sp: &Matrix,
    sq: &Matrix,
    seed: u64,
) -> Result<(Matrix, AttackTrace, Vec<Matrix>)> {
    run_attack(ens, plan, sp, sq, seed, true)
}

fn run_attack(
    ens: &CriterionEnsemble,
    plan: &AttackPlan,
    sp: &Matrix,
    sq: &Matrix,
    seed: u64,
    record: bool,
) -> Result<(Matrix, AttackTrace, Vec<Matrix>)> {
    plan.validate()?;
    if sq.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: sq.rows(),
        });
    }
    let sq0 = sq.clone();
    let (rows, cols) = (sq.rows(), sq.cols());
    let mut rho = plan.epsilon;
    let mut cur = sq.clone();
    let mut iterates = Vec::new();
    if record {
        iterates.push(cur.clone());
    }

    // Fixed/uniform weights are resolved once; automatic weights are the
    // softmax of the member values at each visited iterate, so the loss is a
    // pure function of the iterate under every strategy.
    let fixed_weights = match plan.weights {
        WeightStrategy::Automatic => None,
        _ => Some(resolve_weights(plan, ens, sp, &cur)?),
    };
    let weights_at = |evals: &MemberEvals| -> Vec<f64> {
        match &fixed_weights {
            Some(w) => w.clone(),
            None => softmax(&evals.values),
        }
    };

    let mut evals = member_evals(ens, fixed_weights.as_deref(), sp, &cur)?;
    let mut weights = weights_at(&evals);
    let l0 = evals.loss(&weights);

    // losses[t] is the loss at iterate t, as used by the halving conditions.
    let mut losses = Vec::with_capacity(plan.max_steps + 1);
    losses.push(l0);

    let mut best = cur.clone();
    let mut best_evals_loss = l0;
    let mut best_step = 0;
    // evals at the best iterate, kept so a restart needs no recomputation
    let mut best_cache = (evals.clone(), weights.clone());

    let mut trace = vec![AttackTraceStep {
        step: 0,
        loss: l0,
        rho,
        halved: false,
    }];

    // Window state for the halving conditions; checkpoint c_0 = 0.
    let mut prev_cp = 0usize;
    let mut rho_at_prev_cp = rho;
    let mut min_at_prev_cp = l0;

    // epsilon = 0 pins every iterate to sq exactly; the loop below would do
    // that too, but skipping it keeps the zero-budget path cheap.
    if plan.epsilon == 0.0 {
        for t in 1..=plan.max_steps {
            trace.push(AttackTraceStep {
                step: t,
                loss: l0,
                rho,
                halved: false,
            });
        }
        return Ok((
            best,
            AttackTrace {
                seed,
                steps: trace,
                best_loss: best_evals_loss,
                best_step,
            },
            iterates,
        ));
    }

    for t in 0..plan.max_steps {
        let grad = evals.weighted_grad(&weights, rows, cols);
        let mut next = pgd_step(plan, &grad, &cur, &sq0, rho)?;
        let mut next_evals = member_evals(ens, fixed_weights.as_deref(), sp, &next)?;
        let mut next_weights = weights_at(&next_evals);
        let mut l_next = next_evals.loss(&next_weights);
        if l_next < best_evals_loss {
            best = next.clone();
            best_evals_loss = l_next;
            best_step = t + 1;
            best_cache = (next_evals.clone(), next_weights.clone());
        }
        losses.push(l_next);

        let mut halved = false;
        if t >= 1 && plan.checkpoints.contains(&t) {
            let window = t - prev_cp;
            let decreases = (prev_cp..t).filter(|&i| losses[i + 1] < losses[i]).count();
            let cond1 = (decreases as f64) < 0.75 * window as f64;
            let cond2 = rho == rho_at_prev_cp && best_evals_loss == min_at_prev_cp;
            if cond1 || cond2 {
                rho /= 2.0;
                next = best.clone();
                l_next = best_evals_loss;
                next_evals = best_cache.0.clone();
                next_weights = best_cache.1.clone();
                // The restart's loss becomes the baseline for the next window.
                *losses.last_mut().unwrap() = l_next;
                halved = true;
            }
            prev_cp = t;
            rho_at_prev_cp = rho;
            min_at_prev_cp = best_evals_loss;
        }
        trace.push(AttackTraceStep {
            step: t + 1,
            loss: l_next,
            rho,
            halved,
        });
        cur = next;
        evals = next_evals;
        weights = next_weights;
        if record {
            iterates.push(cur.clone());
        }
    }

    Ok((
        best,
        AttackTrace {
            seed,
            steps: trace,
            best_loss: best_evals_loss,
            best_step,
        },
        iterates,
    ))
}
