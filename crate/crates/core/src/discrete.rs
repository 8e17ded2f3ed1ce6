//! Exact finite-state Metropolis chains.
//!
//! A [`DiscreteSpec`] describes a many-to-one map from states to output
//! labels, a target law on labels and a symmetric proposal matrix. The
//! builders produce the exact transition matrices of the standard and the
//! probed rule; [`stationary_distribution`] solves for the invariant law so
//! the pushforward can be compared with the target without sampling error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mcmc::{ChainConfig, ForwardModel, LogDensity, ProposalKernel, Sampler};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteChain {
    transition: DMatrix<f64>,
}

impl DiscreteChain {
    pub fn new(transition: DMatrix<f64>) -> Result<Self> {
        if !transition.is_square() || transition.nrows() == 0 {
            return Err(Error::Construction(
                "transition matrix must be square and non-empty".into(),
            ));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Construction(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Construction(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { transition })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.transition[(i, j)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSpec {
    output_of: Vec<usize>,
    target: Vec<f64>,
    proposal: DMatrix<f64>,
}

impl DiscreteSpec {
    /// `output_of[i]` is the label of state `i`, `target[k]` the desired
    /// probability of label `k`, `proposal` a symmetric row-stochastic matrix
    /// with zero diagonal.
    pub fn new(output_of: Vec<usize>, target: Vec<f64>, proposal: DMatrix<f64>) -> Result<Self> {
        let n = output_of.len();
        if n == 0 {
            return Err(Error::Construction("spec needs at least one state".into()));
        }
        if let Some(&k) = output_of.iter().find(|&&k| k >= target.len()) {
            return Err(Error::Construction(format!(
                "output label {k} has no target probability"
            )));
        }
        if target.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Construction(
                "target probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = target.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Construction(format!("target sums to {total}")));
        }
        if proposal.nrows() != n || proposal.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "proposal matrix",
                expected: n,
                got: proposal.nrows(),
            });
        }
        for i in 0..n {
            if proposal[(i, i)] != 0.0 {
                return Err(Error::Construction(format!(
                    "proposal diagonal entry {i} is nonzero"
                )));
            }
            let sum: f64 = proposal.row(i).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Construction(format!(
                    "proposal row {i} sums to {sum}"
                )));
            }
            for j in 0..n {
                let p = proposal[(i, j)];
                if !(0.0..=1.0).contains(&p) || (p - proposal[(j, i)]).abs() > ROW_SUM_TOL {
                    return Err(Error::Construction(format!(
                        "proposal must be symmetric with entries in [0, 1] (entry {i},{j})"
                    )));
                }
            }
        }
        Ok(Self {
            output_of,
            target,
            proposal,
        })
    }

    /// Three states, `h(X1) = Y1`, `h(X2) = h(X3) = Y2`, target
    /// `(0.9, 0.1)`, proposal uniform over the two other states.
    pub fn toy() -> Self {
        Self::new(vec![0, 1, 1], vec![0.9, 0.1], uniform_proposal(3)).expect("toy spec is valid")
    }

    /// Random spec with `n_states` states and `n_outputs` labels, every label
    /// having a nonempty preimage. The proposal is a random symmetric
    /// doubly-stochastic matrix with zero diagonal.
    pub fn random(rng: &mut dyn RngCore, n_states: usize, n_outputs: usize) -> Result<Self> {
        if n_states < 2 || n_outputs == 0 || n_outputs > n_states {
            return Err(Error::Config(format!(
                "cannot build a spec with {n_states} states and {n_outputs} outputs"
            )));
        }
        let mut output_of: Vec<usize> = (0..n_states)
            .map(|i| {
                if i < n_outputs {
                    i
                } else {
                    rng.random_range(0..n_outputs)
                }
            })
            .collect();
        for i in (1..n_states).rev() {
            let j = rng.random_range(0..=i);
            output_of.swap(i, j);
        }
        let weights: Vec<f64> = (0..n_outputs).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        let target = weights.iter().map(|w| w / total).collect();

        let mut w = DMatrix::zeros(n_states, n_states);
        for i in 0..n_states {
            for j in (i + 1)..n_states {
                let v = 0.1 + rng.random::<f64>();
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        Self::new(output_of, target, symmetric_sinkhorn(&w)?)
    }

    pub fn n_states(&self) -> usize {
        self.output_of.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.target.len()
    }

    pub fn output_of(&self, state: usize) -> usize {
        self.output_of[state]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn proposal(&self) -> &DMatrix<f64> {
        &self.proposal
    }

    /// Law of `h(U)` for `U` uniform on states: preimage size over state count.
    pub fn probe_density(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_outputs()];
        for &k in &self.output_of {
            counts[k] += 1.0;
        }
        let n = self.n_states() as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

/// Proposal choosing each other state with probability `1/(n-1)`.
pub fn uniform_proposal(n: usize) -> DMatrix<f64> {
    let p = 1.0 / (n as f64 - 1.0);
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p })
}

fn symmetric_sinkhorn(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let mut d = DVector::from_element(n, 1.0);
    for _ in 0..10_000 {
        let wd = w * &d;
        let next = DVector::from_fn(n, |i, _| (d[i] / wd[i]).sqrt());
        let delta = (&next - &d).amax();
        d = next;
        if delta < 1e-15 {
            break;
        }
    }
    let mut p = DMatrix::from_fn(n, n, |i, j| d[i] * w[(i, j)] * d[j]);
    // symmetric rescaling leaves rows within rounding of one; absorb it
    for _ in 0..4 {
        for i in 0..n {
            let sum: f64 = p.row(i).iter().sum();
            for j in 0..n {
                p[(i, j)] /= sum;
            }
        }
        p = (&p + p.transpose()) * 0.5;
    }
    Ok(p)
}

fn build_chain(spec: &DiscreteSpec, weight: impl Fn(usize) -> f64) -> Result<DiscreteChain> {
    let n = spec.n_states();
    let weights: Vec<f64> = (0..n).map(weight).collect();
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Construction(format!(
            "state {i} has zero target probability; acceptance ratio undefined"
        )));
    }
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                let entry = spec.proposal[(i, j)] * (weights[j] / weights[i]).min(1.0);
                t[(i, j)] = entry;
                off += entry;
            }
        }
        t[(i, i)] = (1.0 - off).max(0.0);
    }
    DiscreteChain::new(t)
}

/// Standard rule: `T(i, j) = P(i, j) min(1, f(h(j)) / f(h(i)))` off the diagonal.
pub fn build_naive_chain(spec: &DiscreteSpec) -> Result<DiscreteChain> {
    build_chain(spec, |i| spec.target[spec.output_of[i]])
}

/// Probed rule with the exact probe density from preimage counting.
pub fn build_modified_chain(spec: &DiscreteSpec) -> Result<DiscreteChain> {
    let probe = spec.probe_density();
    build_chain(spec, |i| {
        let k = spec.output_of[i];
        spec.target[k] / probe[k]
    })
}

/// Left eigenvector of the transition matrix for eigenvalue one.
///
/// Solves `(T^T - I) pi = 0` with `sum(pi) = 1` appended as an extra row.
/// A rank-deficient system means the chain is reducible and the stationary
/// law is not unique.
pub fn stationary_distribution(chain: &DiscreteChain) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let t = chain.transition();
    let mut a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = t[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n, j)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;

    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= RANK_TOL * max_sv {
        return Err(Error::NonUnique);
    }
    let solution = svd.solve(&b, 0.0).map_err(|e| Error::Numerical {
        message: format!("stationary solve failed: {e}"),
        residual: f64::NAN,
    })?;

    let mut pi: Vec<f64> = solution
        .iter()
        .map(|&p| if p < 0.0 && p > -1e-12 { 0.0 } else { p })
        .collect();
    if let Some(p) = pi.iter().find(|p| **p < 0.0) {
        return Err(Error::Numerical {
            message: "stationary solve produced a negative probability".into(),
            residual: -p,
        });
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);

    let residual = stationary_residual(chain, &pi);
    if residual >= STATIONARY_RESIDUAL_TOL {
        return Err(Error::Numerical {
            message: "stationary distribution did not converge".into(),
            residual,
        });
    }
    Ok(pi)
}

/// `max_j |(pi T)_j - pi_j|`.
pub fn stationary_residual(chain: &DiscreteChain, dist: &[f64]) -> f64 {
    let n = chain.n_states();
    (0..n)
        .map(|j| {
            let flow: f64 = (0..n).map(|i| dist[i] * chain.entry(i, j)).sum();
            (flow - dist[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Output law induced by a state law.
pub fn pushforward(dist: &[f64], spec: &DiscreteSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_outputs()];
    for (state, p) in dist.iter().enumerate() {
        out[spec.output_of[state]] += p;
    }
    out
}

/// `max_{i,j} |pi_i T_ij - pi_j T_ji|`.
pub fn detailed_balance_residual(chain: &DiscreteChain, dist: &[f64]) -> Result<f64> {
    let n = chain.n_states();
    if dist.len() != n {
        return Err(Error::DimensionMismatch {
            context: "distribution",
            expected: n,
            got: dist.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((dist[i] * chain.entry(i, j) - dist[j] * chain.entry(j, i)).abs());
        }
    }
    Ok(worst)
}

/// Law on states proportional to the given per-state weights.
pub fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Which accept-reject rule a simulated chain uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Naive,
    Modified,
}

/// A `DiscreteSpec`'s states as a one-dimensional forward model: input `i` (as a
/// float) maps to its output label.
pub struct StateModel<'a> {
    spec: &'a DiscreteSpec,
}

impl ForwardModel for StateModel<'_> {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let i = x[0];
        if i < 0.0 || i.fract() != 0.0 || i as usize >= self.spec.n_states() {
            return Err(Error::Domain(format!("{i} is not a state index")));
        }
        Ok(vec![self.spec.output_of[i as usize] as f64])
    }
}

/// Probability table over output labels.
pub struct LabelDensity {
    log_p: Vec<f64>,
}

impl LabelDensity {
    pub fn new(p: &[f64]) -> Self {
        Self {
            log_p: p.iter().map(|v| v.ln()).collect(),
        }
    }
}

impl LogDensity for LabelDensity {
    fn dim(&self) -> usize {
        1
    }
    fn log_eval(&self, y: &[f64]) -> f64 {
        let k = y[0];
        if k < 0.0 || k.fract() != 0.0 {
            return f64::NEG_INFINITY;
        }
        self.log_p
            .get(k as usize)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Draws the next state from the proposal matrix row.
pub struct MatrixProposal<'a> {
    spec: &'a DiscreteSpec,
}

impl ProposalKernel for MatrixProposal<'_> {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let i = current[0] as usize;
        let u: f64 = rng.random();
        let n = self.spec.n_states();
        let mut acc = 0.0;
        let mut last = i;
        for j in 0..n {
            let p = self.spec.proposal[(i, j)];
            if p > 0.0 {
                last = j;
                acc += p;
                if u < acc {
                    return vec![j as f64];
                }
            }
        }
        vec![last as f64]
    }

    fn log_ratio(&self, current: &[f64], proposed: &[f64]) -> f64 {
        let (i, j) = (current[0] as usize, proposed[0] as usize);
        self.spec.proposal[(j, i)].ln() - self.spec.proposal[(i, j)].ln()
    }
}

/// Runs the general sampler on the finite state space and returns the
/// visit frequency of every state over `steps` transitions.
pub fn simulate(
    spec: &DiscreteSpec,
    rule: Rule,
    steps: usize,
    start: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let model = StateModel { spec };
    let proposal = MatrixProposal { spec };
    let target = LabelDensity::new(&spec.target);
    let probe = LabelDensity::new(&spec.probe_density());
    let sampler = match rule {
        Rule::Naive => Sampler::standard(&model, &proposal, &target)?,
        Rule::Modified => Sampler::probed(&model, &proposal, &target, &probe)?,
    };
    let run = sampler.run(&ChainConfig {
        initial_point: vec![start as f64],
        burn_in: 0,
        total_steps: steps,
        thinning: 1,
        seed,
    })?;
    let mut freq = vec![0.0; spec.n_states()];
    for s in &run.samples {
        freq[s.x[0] as usize] += 1.0;
    }
    let n = run.samples.len() as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    Ok(freq)
}

/// Total-variation distance between two laws on the same finite set.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
