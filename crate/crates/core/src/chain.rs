//! Elastic progress as a Markov chain over steps.
//!
//! Per stage the elastic flow advances `y` steps with probability `p_y`; all
//! overshoot past step `M` folds into completion. The resulting upper
//! triangular progress matrix drives every fixed-rate and policy-dependent
//! risk prediction.

use crate::error::{ensure, Error, Result};
use crate::scenario::Discretization;
use crate::ssp::{Policy, SspModel};

/// Probabilities `[p_0, ..., p_M]` of advancing `y` steps within one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    probs: Vec<f64>,
    tail: f64,
}

impl StepDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `M`.
    pub fn steps(&self) -> usize {
        self.probs.len() - 1
    }

    /// Overshoot mass `P(advance >= M)`. Equals `p_M` up to rounding but keeps
    /// relative accuracy when tiny.
    pub fn tail_mass(&self) -> f64 {
        self.tail
    }
}

/// Folds a per-stage count distribution `pbar_0, pbar_1, ...` onto `0..=len-1`:
/// the first `len - 1` masses are kept and the last entry receives the exact
/// complement.
pub(crate) fn fold_tail<I>(pbar: I, len: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut out = Vec::with_capacity(len);
    let mut head = 0.0;
    let mut raw = 0.0;
    for (idx, v) in pbar.into_iter().take(len - 1).enumerate() {
        ensure(v.is_finite() && v >= 0.0, || {
            format!("count probability {idx} must be finite and >= 0, got {v}")
        })?;
        raw += v;
        // Rounding in the pmf can push the running mass past 1.
        let v = v.min(1.0 - head);
        head += v;
        out.push(v);
    }
    out.resize(len - 1, 0.0);
    ensure(raw <= 1.0 + 1e-12, || {
        format!("count probabilities carry total mass {raw} > 1")
    })?;
    out.push((1.0 - head).max(0.0));
    Ok(out)
}

/// Poisson pmf `e^{-mean} mean^l / l!` for `l = 0, 1, ...`, evaluated in log
/// space so large means do not underflow the leading terms.
pub(crate) fn poisson_pmf(mean: f64) -> impl Iterator<Item = f64> {
    let ln_mean = mean.ln();
    let mut ln_p = -mean;
    (0u64..).map(move |l| {
        if mean == 0.0 {
            return if l == 0 { 1.0 } else { 0.0 };
        }
        if l > 0 {
            ln_p += ln_mean - (l as f64).ln();
        }
        ln_p.exp()
    })
}

/// Step distribution of a Poisson counting process with mean rate
/// `rate / delta_s` steps per second over one stage of `delta_t` seconds.
pub fn poisson_step_probs(
    rate: f64,
    delta_s: f64,
    delta_t: f64,
    steps: usize,
) -> Result<StepDistribution> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("elastic rate must be >= 0, got {rate}")));
    }
    ensure(delta_s > 0.0 && delta_t > 0.0, || {
        "step and stage widths must be positive".to_string()
    })?;
    ensure(steps >= 1, || "at least one step is required".to_string())?;
    let mean = rate * delta_t / delta_s;
    let probs = fold_tail(poisson_pmf(mean), steps + 1)?;
    // A small complement is mostly rounding noise, so the overshoot mass used
    // by progress matrices is summed directly.
    let tail = if probs[steps] < 0.25 && mean > 0.0 {
        poisson_tail(mean, steps)
    } else {
        probs[steps]
    };
    Ok(StepDistribution { probs, tail })
}

/// `P(X >= from)` for `X ~ Poisson(mean)`, summed term by term. Only used
/// when the tail lies past the mean, where the terms decay.
fn poisson_tail(mean: f64, from: usize) -> f64 {
    let mut sum = 0.0;
    for p in poisson_pmf(mean).skip(from).take(from + 10_000) {
        sum += p;
        if p <= sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Step distribution from an arbitrary counting process; only the first `M`
/// values of `pbar` are read.
pub fn custom_step_probs<I>(pbar: I, steps: usize) -> Result<StepDistribution>
where
    I: IntoIterator<Item = f64>,
{
    ensure(steps >= 1, || "at least one step is required".to_string())?;
    let probs = fold_tail(pbar, steps + 1)?;
    Ok(StepDistribution {
        tail: probs[steps],
        probs,
    })
}

/// Row-stochastic, upper triangular `(M+1) x (M+1)` matrix of per-stage
/// progress probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl ProgressMatrix {
    pub fn from_steps(p: &StepDistribution) -> Self {
        let dim = p.probs.len();
        let m = dim - 1;
        let mut data = vec![0.0; dim * dim];
        for x in 0..m {
            let row = &mut data[x * dim..(x + 1) * dim];
            row[x..m].copy_from_slice(&p.probs[..m - x]);
            // q_x, the tail mass from p_{M-x} upward.
            row[m] = p.probs[m - x..m].iter().sum::<f64>() + p.tail;
        }
        data[m * dim + m] = 1.0;
        Self { dim, data }
    }

    /// Builds a matrix from explicit rows, checking shape and stochasticity.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        ensure(dim >= 2, || "progress matrix needs at least two steps".to_string())?;
        let mut data = Vec::with_capacity(dim * dim);
        for (x, row) in rows.into_iter().enumerate() {
            ensure(row.len() == dim, || format!("row {x} has wrong length"))?;
            ensure(row[..x].iter().all(|&v| v == 0.0), || {
                format!("row {x} moves backwards")
            })?;
            ensure(row.iter().all(|&v| v >= 0.0), || {
                format!("row {x} has negative entries")
            })?;
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || {
                format!("row {x} sums to {sum}")
            })?;
            data.extend(row);
        }
        ensure(data[dim * dim - 1] == 1.0, || {
            "completion step must be absorbing".to_string()
        })?;
        Ok(Self { dim, data })
    }

    /// Steps held forever before completion (zero-rate process).
    pub fn holding(steps: usize) -> Self {
        let dim = steps + 1;
        let mut data = vec![0.0; dim * dim];
        for x in 0..dim {
            data[x * dim + x] = 1.0;
        }
        Self { dim, data }
    }

    /// `M`.
    pub fn steps(&self) -> usize {
        self.dim - 1
    }

    pub fn get(&self, x: usize, xp: usize) -> f64 {
        self.data[x * self.dim + xp]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.dim..(x + 1) * self.dim]
    }
}

/// Probability vector over steps at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDistribution(Vec<f64>);

impl StageDistribution {
    /// `f(0) = [1, 0, ..., 0]`.
    pub fn initial(steps: usize) -> Self {
        let mut f = vec![0.0; steps + 1];
        f[0] = 1.0;
        Self(f)
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// `f(k+1) = f(k) P`.
    pub fn advance(&self, p: &ProgressMatrix) -> Self {
        let dim = self.0.len();
        let mut next = vec![0.0; dim];
        for (x, &fx) in self.0.iter().enumerate() {
            if fx == 0.0 {
                continue;
            }
            for (xp, &pv) in p.row(x).iter().enumerate().skip(x) {
                next[xp] += fx * pv;
            }
        }
        Self(next)
    }

    /// Probability of having completed the flow.
    pub fn completed(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

/// `f(0), ..., f(N)` under a stage-invariant progress matrix.
pub fn propagate(p: &ProgressMatrix, stages: usize) -> Vec<StageDistribution> {
    let mut out = Vec::with_capacity(stages + 1);
    out.push(StageDistribution::initial(p.steps()));
    for _ in 0..stages {
        let next = out.last().unwrap().advance(p);
        out.push(next);
    }
    out
}

/// `f(0), ..., f(N)` with `f(k) = f(k-1) P(k-1)`.
pub fn propagate_stagewise(matrices: &[ProgressMatrix]) -> Vec<StageDistribution> {
    let steps = matrices.first().map(|p| p.steps()).unwrap_or(1);
    let mut out = Vec::with_capacity(matrices.len() + 1);
    out.push(StageDistribution::initial(steps));
    for p in matrices {
        let next = out.last().unwrap().advance(p);
        out.push(next);
    }
    out
}

/// Mean and variance of progress in steps.
pub fn mean_variance(f: &StageDistribution) -> (f64, f64) {
    let theta: f64 = f.0.iter().enumerate().map(|(x, &p)| x as f64 * p).sum();
    let var: f64 = f
        .0
        .iter()
        .enumerate()
        .map(|(x, &p)| (x as f64 - theta).powi(2) * p)
        .sum();
    (theta, var.max(0.0))
}

/// Risk of not having reached step `x`: `sum_{y<x} f_y`.
pub fn milestone_risk(f: &StageDistribution, x: usize) -> f64 {
    f.0[..x].iter().sum()
}

/// Risk of missing the deadline, `1 - f_M(N)`, under a fixed progress matrix.
pub fn deadline_miss_risk(p: &ProgressMatrix, stages: usize) -> f64 {
    let f = propagate(p, stages);
    let last = f.last().unwrap();
    milestone_risk(last, p.steps())
}

/// Expected number of stages until completion from each step.
///
/// Back-substitution on the upper triangular transient block of `P`.
pub fn expected_stages_to_completion(p: &ProgressMatrix) -> Result<Vec<f64>> {
    let m = p.steps();
    let mut t = vec![0.0; m + 1];
    for x in (0..m).rev() {
        let stay = p.get(x, x);
        if stay >= 1.0 {
            return Err(Error::InfiniteExpectation { step: x });
        }
        let onward: f64 = (x + 1..m).map(|xp| p.get(x, xp) * t[xp]).sum();
        t[x] = (1.0 + onward) / (1.0 - stay);
    }
    Ok(t)
}

/// One point of the mean-progress curve with its one-sigma envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    pub k: usize,
    pub t: f64,
    pub theta: f64,
    pub sigma: f64,
    pub s_mean: f64,
    pub s_low: f64,
    pub s_high: f64,
    /// `1 - f_M(k)`.
    pub miss_risk_to_date: f64,
}

/// Remaining size versus time: `s = S - dS (theta +- sigma)`, clamped to `[0, S]`.
pub fn progress_envelope(f_seq: &[StageDistribution], d: &Discretization) -> Vec<EnvelopePoint> {
    let clamp = |s: f64| s.clamp(0.0, d.size());
    f_seq
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (theta, var) = mean_variance(f);
            let sigma = var.sqrt();
            EnvelopePoint {
                k,
                t: d.delta_t() * k as f64,
                theta,
                sigma,
                s_mean: clamp(d.size() - d.delta_s() * theta),
                s_low: clamp(d.size() - d.delta_s() * (theta + sigma)),
                s_high: clamp(d.size() - d.delta_s() * (theta - sigma)),
                miss_risk_to_date: milestone_risk(f, f.0.len() - 1),
            }
        })
        .collect()
}

/// Risk report for a fixed elastic rate under the Poisson model.
pub fn fixed_rate_report(rate: f64, d: &Discretization) -> Result<Vec<EnvelopePoint>> {
    let p = poisson_step_probs(rate, d.delta_s(), d.delta_t(), d.steps())?;
    let f = propagate(&ProgressMatrix::from_steps(&p), d.stages());
    Ok(progress_envelope(&f, d))
}

/// Stage-dependent progress matrices `P^mu(0..N-1)` of the controlled process.
pub fn policy_progress_matrices(model: &SspModel, mu: &Policy) -> Result<Vec<ProgressMatrix>> {
    if model.levels().is_some() {
        return Err(Error::Structure(
            "policy progress matrices are defined over step-stage cells only".to_string(),
        ));
    }
    ensure(mu.len() == model.state_count(), || {
        format!(
            "policy covers {} states, model has {}",
            mu.len(),
            model.state_count()
        )
    })?;
    let d = model.grid();
    let m = d.steps();
    let mut out = Vec::with_capacity(d.stages());
    for k in 0..d.stages() {
        let mut rows = Vec::with_capacity(m + 1);
        for x in 0..=m {
            let a = mu.action(d.state_index(x, k));
            rows.push(model.progress(a, k).row(x).to_vec());
        }
        out.push(ProgressMatrix::from_rows(rows)?);
    }
    Ok(out)
}
