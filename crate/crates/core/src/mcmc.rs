//! Metropolis-Hastings over continuous input spaces with the standard
//! accept-reject rule and the probed (compensated) rule.
//!
//! All densities are handled in log space. A log value of `f64::NEG_INFINITY`
//! means zero density; densities must never return NaN or `+inf`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::probing::InputBox;

/// Generator used by every chain. ChaCha is counter-based, so streams seeded
/// from distinct `u64` seeds do not overlap in practice.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic map `h: R^n -> R^m` evaluated as a black box.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Must be deterministic and return exactly `output_dim` values.
    ///
    /// Errors for which [`Error::is_model_domain`] holds mark inputs the model
    /// cannot map; the sampler rejects such proposals.
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Unnormalized log-density. Only differences of `log_eval` carry meaning.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_eval(&self, point: &[f64]) -> f64;
}

pub trait ProposalKernel: Send + Sync {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// `log p(x', x) - log p(x, x')`; zero for symmetric kernels.
    fn log_ratio(&self, _current: &[f64], _proposed: &[f64]) -> f64 {
        0.0
    }

    /// Number of sub-moves making up one chain step. Kernels with more than
    /// one block are applied as a sweep: each block is proposed and
    /// accepted or rejected in turn.
    fn blocks(&self) -> usize {
        1
    }

    fn propose_block(&self, current: &[f64], _block: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        self.propose(current, rng)
    }
}

impl<T: ForwardModel + ?Sized> ForwardModel for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).evaluate(x)
    }
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_eval(&self, point: &[f64]) -> f64 {
        (**self).log_eval(point)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Perturb every coordinate each step.
    #[default]
    AllCoordinates,
    /// Perturb one uniformly chosen coordinate each step (random scan).
    SingleCoordinate,
    /// One step is a systematic sweep: every coordinate in turn gets its own
    /// one-coordinate proposal and accept-reject decision.
    Sweep,
}

/// Symmetric random walk with per-coordinate uniform steps on `[-w_i, w_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomWalk {
    half_width: Vec<f64>,
    mode: UpdateMode,
}

/// Random walk with the same half-width on every coordinate of a
/// `dim`-dimensional input.
pub fn random_walk_proposal(half_width: f64, dim: usize) -> Result<RandomWalk> {
    RandomWalk::new(vec![half_width; dim])
}

impl RandomWalk {
    pub fn new(half_width: Vec<f64>) -> Result<Self> {
        if half_width.is_empty() {
            return Err(Error::Config(
                "random walk needs at least one coordinate".into(),
            ));
        }
        if let Some(w) = half_width.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!(
                "random walk half-width must be positive and finite, got {w}"
            )));
        }
        Ok(Self {
            half_width,
            mode: UpdateMode::AllCoordinates,
        })
    }

    pub fn with_mode(mut self, mode: UpdateMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }
}

impl ProposalKernel for RandomWalk {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let mut next = current.to_vec();
        match self.mode {
            UpdateMode::AllCoordinates => {
                for (xi, w) in next.iter_mut().zip(&self.half_width) {
                    *xi += w * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            UpdateMode::SingleCoordinate | UpdateMode::Sweep => {
                let i = rng.random_range(0..next.len().min(self.half_width.len()));
                next[i] += self.half_width[i] * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        next
    }

    fn blocks(&self) -> usize {
        match self.mode {
            UpdateMode::Sweep => self.half_width.len(),
            _ => 1,
        }
    }

    fn propose_block(&self, current: &[f64], block: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        if self.mode != UpdateMode::Sweep {
            return self.propose(current, rng);
        }
        let mut next = current.to_vec();
        next[block] += self.half_width[block] * (2.0 * rng.random::<f64>() - 1.0);
        next
    }
}

/// Current point of a chain with its cached model output and log-densities.
///
/// `log_probe` is zero under the standard rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub log_target: f64,
    pub log_probe: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub initial_point: Vec<f64>,
    pub burn_in: usize,
    pub total_steps: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.burn_in >= self.total_steps {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than total_steps ({})",
                self.burn_in, self.total_steps
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of states `run` returns.
    pub fn retained(&self) -> usize {
        (self.total_steps - self.burn_in) / self.thinning
    }
}

/// Counts are per proposal: a sweep step contributes one count per block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChainDiagnostics {
    pub steps_taken: u64,
    pub accepted: u64,
    /// Proposals outside the input support or where the probe density is zero.
    pub rejected_out_of_support: u64,
    /// Proposals with non-finite coordinates or that the model could not map.
    pub rejected_invalid: u64,
}

impl ChainDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps_taken == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps_taken as f64
        }
    }

    pub fn record(&mut self, outcome: StepOutcome) {
        self.steps_taken += 1;
        match outcome {
            StepOutcome::Accepted => self.accepted += 1,
            StepOutcome::Rejected => {}
            StepOutcome::OutOfSupport => self.rejected_out_of_support += 1,
            StepOutcome::Invalid => self.rejected_invalid += 1,
        }
    }

    pub fn merge(&mut self, other: &ChainDiagnostics) {
        self.steps_taken += other.steps_taken;
        self.accepted += other.accepted;
        self.rejected_out_of_support += other.rejected_out_of_support;
        self.rejected_invalid += other.rejected_invalid;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    OutOfSupport,
    Invalid,
}

/// A proposal after model and density evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Candidate {
    Evaluated { state: ChainState, log_alpha: f64 },
    OutOfSupport,
    Invalid,
}

impl Candidate {
    /// `min(1, exp(log-ratio sum))`, zero for rejected-without-draw candidates.
    pub fn acceptance_probability(&self) -> f64 {
        match self {
            Candidate::Evaluated { log_alpha, .. } => log_alpha.min(0.0).exp(),
            _ => 0.0,
        }
    }
}

/// Retained states of one chain.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub samples: Vec<ChainState>,
    pub diagnostics: ChainDiagnostics,
    pub burn_in: usize,
    pub thinning: usize,
}

impl ChainRun {
    /// Chain step (1-based) at which the `k`-th retained sample was recorded.
    pub fn step_of(&self, k: usize) -> usize {
        self.burn_in + (k + 1) * self.thinning
    }
}

/// Metropolis-Hastings sampler over the inputs of a forward model.
///
/// With a probe density the acceptance ratio carries the extra factor
/// `f_Q(h(x)) / f_Q(h(x'))`, which makes the chain target
/// `f(h(x)) / f_Q(h(x))` on inputs.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    model: &'a dyn ForwardModel,
    proposal: &'a dyn ProposalKernel,
    target: &'a dyn LogDensity,
    probe: Option<&'a dyn LogDensity>,
    support: Option<&'a InputBox>,
}

impl<'a> Sampler<'a> {
    /// Standard rule: acceptance `min(1, f(h(x')) / f(h(x)) * q-ratio)`.
    pub fn standard(
        model: &'a dyn ForwardModel,
        proposal: &'a dyn ProposalKernel,
        target: &'a dyn LogDensity,
    ) -> Result<Self> {
        check_dim("target density", model.output_dim(), target.dim())?;
        Ok(Self {
            model,
            proposal,
            target,
            probe: None,
            support: None,
        })
    }

    /// Probed rule with the probing density `probe` over outputs.
    pub fn probed(
        model: &'a dyn ForwardModel,
        proposal: &'a dyn ProposalKernel,
        target: &'a dyn LogDensity,
        probe: &'a dyn LogDensity,
    ) -> Result<Self> {
        check_dim("probe density", model.output_dim(), probe.dim())?;
        let mut sampler = Self::standard(model, proposal, target)?;
        sampler.probe = Some(probe);
        Ok(sampler)
    }

    /// Restrict inputs to a box; proposals outside it count as out of support.
    pub fn with_input_support(mut self, support: &'a InputBox) -> Result<Self> {
        check_dim("input support", self.model.input_dim(), support.dim())?;
        self.support = Some(support);
        Ok(self)
    }

    pub fn is_probed(&self) -> bool {
        self.probe.is_some()
    }

    /// Builds a cache-coherent state at `x`, failing unless every density
    /// involved is finite there.
    pub fn initial_state(&self, x: &[f64]) -> Result<ChainState> {
        check_dim("initial point", self.model.input_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(
                "initial point has non-finite coordinates".into(),
            ));
        }
        if let Some(support) = self.support {
            if !support.contains(x) {
                return Err(Error::InvalidState(
                    "initial point lies outside the input support".into(),
                ));
            }
        }
        let y = self.model.evaluate(x)?;
        check_dim("model output", self.model.output_dim(), y.len())?;
        let log_target = checked_log(self.target.log_eval(&y), "target density")?;
        if log_target == f64::NEG_INFINITY {
            return Err(Error::InvalidState(
                "target density is zero at the initial point".into(),
            ));
        }
        let log_probe = match self.probe {
            Some(probe) => {
                let lp = checked_log(probe.log_eval(&y), "probe density")?;
                if lp == f64::NEG_INFINITY {
                    return Err(Error::InvalidState(
                        "probe density is zero at the initial point".into(),
                    ));
                }
                lp
            }
            None => 0.0,
        };
        Ok(ChainState {
            x: x.to_vec(),
            y,
            log_target,
            log_probe,
        })
    }

    /// Evaluates a proposed point against the current state. Performs exactly
    /// one model evaluation unless the point is rejected beforehand.
    pub fn evaluate_candidate(
        &self,
        current: &ChainState,
        proposed: Vec<f64>,
    ) -> Result<Candidate> {
        check_dim("proposal", self.model.input_dim(), proposed.len())?;
        if self.probe.is_some() && !current.log_probe.is_finite() {
            return Err(Error::InvalidState(
                "probe density is zero at the current state".into(),
            ));
        }
        if proposed.iter().any(|v| !v.is_finite()) {
            return Ok(Candidate::Invalid);
        }
        if let Some(support) = self.support {
            if !support.contains(&proposed) {
                return Ok(Candidate::OutOfSupport);
            }
        }
        let y = match self.model.evaluate(&proposed) {
            Ok(y) => y,
            Err(e) if e.is_model_domain() => return Ok(Candidate::Invalid),
            Err(e) => return Err(e),
        };
        check_dim("model output", self.model.output_dim(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Ok(Candidate::Invalid);
        }
        let log_probe = match self.probe {
            Some(probe) => {
                let lp = checked_log(probe.log_eval(&y), "probe density")?;
                if lp == f64::NEG_INFINITY {
                    return Ok(Candidate::OutOfSupport);
                }
                lp
            }
            None => 0.0,
        };
        let log_target = checked_log(self.target.log_eval(&y), "target density")?;
        let log_q = self.proposal.log_ratio(&current.x, &proposed);
        let log_alpha = if log_target == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            (log_target - current.log_target) + log_q + (current.log_probe - log_probe)
        };
        if log_alpha.is_nan() {
            return Err(Error::InvalidDensity {
                context: "acceptance ratio",
                value: log_alpha,
            });
        }
        Ok(Candidate::Evaluated {
            state: ChainState {
                x: proposed,
                y,
                log_target,
                log_probe,
            },
            log_alpha,
        })
    }

    /// Acceptance probability for moving from `current` to `proposed`.
    pub fn acceptance_probability(&self, current: &ChainState, proposed: &[f64]) -> Result<f64> {
        Ok(self
            .evaluate_candidate(current, proposed.to_vec())?
            .acceptance_probability())
    }

    /// One Metropolis-Hastings transition applied in place. A rejected step
    /// leaves `state` untouched.
    pub fn advance(&self, state: &mut ChainState, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        let proposed = self.proposal.propose(&state.x, rng);
        self.accept_or_reject(state, proposed, rng)
    }

    /// One chain step: a single transition, or a full sweep for kernels
    /// with several blocks. Every proposal is recorded in `diagnostics`.
    pub fn step(
        &self,
        state: &mut ChainState,
        rng: &mut dyn RngCore,
        diagnostics: &mut ChainDiagnostics,
    ) -> Result<()> {
        let blocks = self.proposal.blocks();
        if blocks <= 1 {
            diagnostics.record(self.advance(state, rng)?);
            return Ok(());
        }
        for block in 0..blocks {
            let proposed = self.proposal.propose_block(&state.x, block, rng);
            diagnostics.record(self.accept_or_reject(state, proposed, rng)?);
        }
        Ok(())
    }

    fn accept_or_reject(
        &self,
        state: &mut ChainState,
        proposed: Vec<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome> {
        match self.evaluate_candidate(state, proposed)? {
            Candidate::OutOfSupport => Ok(StepOutcome::OutOfSupport),
            Candidate::Invalid => Ok(StepOutcome::Invalid),
            Candidate::Evaluated { log_alpha, .. } if log_alpha == f64::NEG_INFINITY => {
                Ok(StepOutcome::Rejected)
            }
            Candidate::Evaluated {
                state: next,
                log_alpha,
            } => {
                let alpha = log_alpha.min(0.0).exp();
                let u: f64 = rng.random();
                if u <= alpha {
                    *state = next;
                    Ok(StepOutcome::Accepted)
                } else {
                    Ok(StepOutcome::Rejected)
                }
            }
        }
    }

    pub fn run(&self, config: &ChainConfig) -> Result<ChainRun> {
        config.validate()?;
        let mut state = self.initial_state(&config.initial_point)?;
        let mut rng = chain_rng(config.seed);
        let mut diagnostics = ChainDiagnostics::default();
        let mut samples = Vec::with_capacity(config.retained());
        for t in 1..=config.total_steps {
            self.step(&mut state, &mut rng, &mut diagnostics)?;
            if t > config.burn_in && (t - config.burn_in).is_multiple_of(config.thinning) {
                samples.push(state.clone());
            }
        }
        Ok(ChainRun {
            samples,
            diagnostics,
            burn_in: config.burn_in,
            thinning: config.thinning,
        })
    }

    /// Runs `n_chains` independent chains in parallel; chain `i` is seeded
    /// with `config.seed + i`.
    pub fn run_ensemble(&self, config: &ChainConfig, n_chains: usize) -> Result<Vec<ChainRun>> {
        if n_chains == 0 {
            return Err(Error::Config("n_chains must be positive".into()));
        }
        (0..n_chains)
            .into_par_iter()
            .map(|i| {
                let cfg = ChainConfig {
                    seed: config.seed.wrapping_add(i as u64),
                    ..config.clone()
                };
                self.run(&cfg)
            })
            .collect()
    }
}

/// One transition under the standard rule, returning the next state.
pub fn mh_step(
    state: &ChainState,
    proposal: &dyn ProposalKernel,
    target: &dyn LogDensity,
    model: &dyn ForwardModel,
    rng: &mut dyn RngCore,
) -> Result<(ChainState, StepOutcome)> {
    let sampler = Sampler::standard(model, proposal, target)?;
    let mut next = state.clone();
    let outcome = sampler.advance(&mut next, rng)?;
    Ok((next, outcome))
}

/// One transition under the probed rule, returning the next state.
pub fn modified_mh_step(
    state: &ChainState,
    proposal: &dyn ProposalKernel,
    target: &dyn LogDensity,
    probe: &dyn LogDensity,
    model: &dyn ForwardModel,
    rng: &mut dyn RngCore,
) -> Result<(ChainState, StepOutcome)> {
    let sampler = Sampler::probed(model, proposal, target, probe)?;
    let mut next = state.clone();
    let outcome = sampler.advance(&mut next, rng)?;
    Ok((next, outcome))
}

/// Sums per-chain diagnostics.
pub fn merge_diagnostics<'r>(runs: impl IntoIterator<Item = &'r ChainRun>) -> ChainDiagnostics {
    let mut total = ChainDiagnostics::default();
    for run in runs {
        total.merge(&run.diagnostics);
    }
    total
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

fn checked_log(value: f64, context: &'static str) -> Result<f64> {
    if value.is_nan() || value == f64::INFINITY {
        return Err(Error::InvalidDensity { context, value });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnModel, IdentityModel};

    struct TableTarget(Vec<f64>);

    impl LogDensity for TableTarget {
        fn dim(&self) -> usize {
            1
        }
        fn log_eval(&self, y: &[f64]) -> f64 {
            let i = y[0] as usize;
            self.0.get(i).map_or(f64::NEG_INFINITY, |p| p.ln())
        }
    }

    struct Constant(usize, f64);

    impl LogDensity for Constant {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_eval(&self, _: &[f64]) -> f64 {
            self.1
        }
    }

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_eval(&self, y: &[f64]) -> f64 {
            -0.5 * y.iter().map(|v| v * v).sum::<f64>()
        }
    }

    fn toy_model() -> FnModel<impl Fn(&[f64]) -> Vec<f64> + Send + Sync> {
        // states 0, 1, 2 -> outputs 0, 1, 1
        FnModel::new(1, 1, |x: &[f64]| vec![if x[0] < 0.5 { 0.0 } else { 1.0 }])
    }

    #[test]
    fn equal_density_accepts_with_probability_one() {
        let model = IdentityModel::new(2);
        let target = Constant(2, -3.0);
        let rw = random_walk_proposal(0.5, 2).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let state = sampler.initial_state(&[0.1, 0.2]).unwrap();
        assert_eq!(
            sampler
                .acceptance_probability(&state, &[0.4, -0.1])
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn density_ratio_above_one_always_accepts() {
        let model = IdentityModel::new(1);
        let target = FnDensity(|y: &[f64]| if y[0] > 0.5 { 2f64.ln() } else { 0.0 });
        let rw = random_walk_proposal(1.0, 1).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let state = sampler.initial_state(&[0.0]).unwrap();
        assert_eq!(sampler.acceptance_probability(&state, &[1.0]).unwrap(), 1.0);
    }

    struct FnDensity<F>(F);

    impl<F: Fn(&[f64]) -> f64 + Send + Sync> LogDensity for FnDensity<F> {
        fn dim(&self) -> usize {
            1
        }
        fn log_eval(&self, y: &[f64]) -> f64 {
            (self.0)(y)
        }
    }

    #[test]
    fn toy_naive_acceptance_is_one_ninth() {
        let model = toy_model();
        let target = TableTarget(vec![0.9, 0.1]);
        let rw = random_walk_proposal(1.0, 1).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let state = sampler.initial_state(&[0.0]).unwrap();
        let alpha = sampler.acceptance_probability(&state, &[1.0]).unwrap();
        assert!((alpha - 1.0 / 9.0).abs() < 1e-15);
        // with proposal probability 1/2 this is the 1/18 entry
        assert!((0.5 * alpha - 1.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn toy_probed_acceptance_is_one_eighteenth() {
        let model = toy_model();
        let target = TableTarget(vec![0.9, 0.1]);
        let probe = TableTarget(vec![1.0 / 3.0, 2.0 / 3.0]);
        let rw = random_walk_proposal(1.0, 1).unwrap();
        let sampler = Sampler::probed(&model, &rw, &target, &probe).unwrap();
        let state = sampler.initial_state(&[0.0]).unwrap();
        let alpha = sampler.acceptance_probability(&state, &[1.0]).unwrap();
        assert!((alpha - 1.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn metropolis_reduction_on_fixed_pairs() {
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let rw = random_walk_proposal(0.3, 2).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let pairs = [
            ([0.0, 0.0], [1.0, 0.5]),
            ([1.0, -1.0], [0.2, 0.1]),
            ([2.0, 2.0], [2.1, 1.9]),
        ];
        for (x, xp) in pairs {
            let state = sampler.initial_state(&x).unwrap();
            let alpha = sampler.acceptance_probability(&state, &xp).unwrap();
            let f = |p: &[f64]| (-0.5 * (p[0] * p[0] + p[1] * p[1])).exp();
            let expected = (f(&xp) / f(&x)).min(1.0);
            assert!((alpha - expected).abs() < 1e-14, "{alpha} vs {expected}");
        }
    }

    #[test]
    fn constant_probe_matches_standard_decisions() {
        let model = IdentityModel::new(3);
        let target = StdNormal(3);
        let probe = Constant(3, -1.25);
        let rw = random_walk_proposal(0.8, 3).unwrap();
        let standard = Sampler::standard(&model, &rw, &target).unwrap();
        let probed = Sampler::probed(&model, &rw, &target, &probe).unwrap();
        let mut a = standard.initial_state(&[0.5, 0.0, -0.5]).unwrap();
        let mut b = probed.initial_state(&[0.5, 0.0, -0.5]).unwrap();
        let mut ra = chain_rng(11);
        let mut rb = chain_rng(11);
        for _ in 0..2000 {
            let oa = standard.advance(&mut a, &mut ra).unwrap();
            let ob = probed.advance(&mut b, &mut rb).unwrap();
            assert_eq!(oa, ob);
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn rejection_keeps_state_and_cache_stays_coherent() {
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let rw = random_walk_proposal(3.0, 2).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let mut state = sampler.initial_state(&[0.0, 0.0]).unwrap();
        let mut rng = chain_rng(3);
        let mut saw_reject = false;
        for _ in 0..500 {
            let before = state.clone();
            let outcome = sampler.advance(&mut state, &mut rng).unwrap();
            if outcome != StepOutcome::Accepted {
                assert_eq!(state, before);
                saw_reject = true;
            }
            let fresh = sampler.initial_state(&state.x).unwrap();
            assert_eq!(fresh, state);
        }
        assert!(saw_reject);
    }

    #[test]
    fn out_of_support_probe_rejects_without_uniform_draw() {
        let model = IdentityModel::new(1);
        let target = Constant(1, 0.0);
        let probe = FnDensity(|y: &[f64]| {
            if y[0].abs() <= 1.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        });
        let rw = random_walk_proposal(5.0, 1).unwrap();
        let sampler = Sampler::probed(&model, &rw, &target, &probe).unwrap();
        let mut state = sampler.initial_state(&[0.0]).unwrap();
        let mut rng = chain_rng(5);
        let mut diag = ChainDiagnostics::default();
        for _ in 0..1000 {
            let outcome = sampler.advance(&mut state, &mut rng).unwrap();
            diag.record(outcome);
            assert!(state.x[0].abs() <= 1.0);
        }
        assert!(diag.rejected_out_of_support > 0);
        assert_eq!(
            diag.accepted + diag.rejected_out_of_support,
            diag.steps_taken,
            "constant target inside support always accepts"
        );

        // an out-of-support step consumes only the proposal draw
        let far = random_walk_proposal(50.0, 1).unwrap();
        let sampler = Sampler::probed(&model, &far, &target, &probe).unwrap();
        let start = sampler.initial_state(&[0.0]).unwrap();
        for seed in 0..20 {
            let mut stepped = chain_rng(seed);
            let mut reference = chain_rng(seed);
            let mut s = start.clone();
            let outcome = sampler.advance(&mut s, &mut stepped).unwrap();
            let _ = far.propose(&start.x, &mut reference);
            if outcome == StepOutcome::OutOfSupport {
                assert_eq!(s, start);
                assert_eq!(stepped.random::<u64>(), reference.random::<u64>());
            }
        }
        assert_eq!(
            sampler.evaluate_candidate(&start, vec![4.0]).unwrap(),
            Candidate::OutOfSupport
        );
    }

    #[test]
    fn probe_sentinel_at_current_state_is_an_error() {
        let model = IdentityModel::new(1);
        let target = Constant(1, 0.0);
        let probe = Constant(1, 0.0);
        let rw = random_walk_proposal(0.1, 1).unwrap();
        let sampler = Sampler::probed(&model, &rw, &target, &probe).unwrap();
        let bad = ChainState {
            x: vec![0.0],
            y: vec![0.0],
            log_target: 0.0,
            log_probe: f64::NEG_INFINITY,
        };
        let err = sampler.evaluate_candidate(&bad, vec![0.05]).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn non_finite_proposals_are_counted_as_invalid() {
        struct NanKernel;
        impl ProposalKernel for NanKernel {
            fn propose(&self, current: &[f64], _: &mut dyn RngCore) -> Vec<f64> {
                vec![f64::NAN; current.len()]
            }
        }
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let sampler = Sampler::standard(&model, &NanKernel, &target).unwrap();
        let run = sampler
            .run(&ChainConfig {
                initial_point: vec![0.0, 0.0],
                burn_in: 0,
                total_steps: 10,
                thinning: 1,
                seed: 1,
            })
            .unwrap();
        assert_eq!(run.diagnostics.rejected_invalid, 10);
        assert!(run.samples.iter().all(|s| s.x == vec![0.0, 0.0]));
    }

    #[test]
    fn proposal_dimension_mismatch_is_a_configuration_error() {
        struct Wrong;
        impl ProposalKernel for Wrong {
            fn propose(&self, _: &[f64], _: &mut dyn RngCore) -> Vec<f64> {
                vec![0.0; 5]
            }
        }
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let sampler = Sampler::standard(&model, &Wrong, &target).unwrap();
        let mut state = sampler.initial_state(&[0.0, 0.0]).unwrap();
        let err = sampler.advance(&mut state, &mut chain_rng(0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn run_chain_counts_and_determinism() {
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let rw = random_walk_proposal(1.0, 2).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let config = ChainConfig {
            initial_point: vec![0.0, 0.0],
            burn_in: 100,
            total_steps: 1000,
            thinning: 3,
            seed: 42,
        };
        let a = sampler.run(&config).unwrap();
        let b = sampler.run(&config).unwrap();
        assert_eq!(a.samples.len(), 300);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.diagnostics.steps_taken, 1000);
        assert_eq!(a.step_of(0), 103);
        let rate = a.diagnostics.acceptance_rate();
        assert!(rate > 0.0 && rate < 1.0);
    }

    #[test]
    fn run_chain_rejects_bad_configs_and_initial_points() {
        let model = IdentityModel::new(1);
        let target = FnDensity(|y: &[f64]| if y[0] >= 0.0 { 0.0 } else { f64::NEG_INFINITY });
        let rw = random_walk_proposal(1.0, 1).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let mut config = ChainConfig {
            initial_point: vec![-1.0],
            burn_in: 0,
            total_steps: 10,
            thinning: 1,
            seed: 0,
        };
        assert!(matches!(sampler.run(&config), Err(Error::InvalidState(_))));
        config.initial_point = vec![1.0];
        config.burn_in = 10;
        assert!(matches!(sampler.run(&config), Err(Error::Config(_))));
        config.burn_in = 0;
        config.thinning = 0;
        assert!(matches!(sampler.run(&config), Err(Error::Config(_))));
    }

    #[test]
    fn ensemble_chain_i_matches_single_run_with_seed_plus_i() {
        let model = IdentityModel::new(2);
        let target = StdNormal(2);
        let rw = random_walk_proposal(1.0, 2).unwrap();
        let sampler = Sampler::standard(&model, &rw, &target).unwrap();
        let config = ChainConfig {
            initial_point: vec![0.0, 0.0],
            burn_in: 10,
            total_steps: 200,
            thinning: 2,
            seed: 100,
        };
        let ensemble = sampler.run_ensemble(&config, 4).unwrap();
        for (i, run) in ensemble.iter().enumerate() {
            let single = sampler
                .run(&ChainConfig {
                    seed: 100 + i as u64,
                    ..config.clone()
                })
                .unwrap();
            assert_eq!(run.samples, single.samples);
        }
        let merged = merge_diagnostics(&ensemble);
        assert_eq!(merged.steps_taken, 800);
    }

    #[test]
    fn random_walk_validation_and_support() {
        assert!(random_walk_proposal(0.0, 2).is_err());
        assert!(random_walk_proposal(-1.0, 2).is_err());
        assert!(random_walk_proposal(f64::NAN, 2).is_err());
        let eps = 0.05;
        let rw = random_walk_proposal(eps, 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut rng = chain_rng(1);
        for _ in 0..10_000 {
            let p = rw.propose(&x, &mut rng);
            assert_eq!(p.len(), 3);
            for (pi, xi) in p.iter().zip(x) {
                assert!(*pi >= xi - eps && *pi <= xi + eps);
            }
            assert_eq!(rw.log_ratio(&x, &p), 0.0);
        }
        let single = rw.clone().with_mode(UpdateMode::SingleCoordinate);
        for _ in 0..1000 {
            let p = single.propose(&x, &mut rng);
            let changed = p.iter().zip(x).filter(|(a, b)| **a != *b).count();
            assert!(changed <= 1);
        }
    }

    #[test]
    fn sweep_proposes_one_coordinate_per_block() {
        let rw = RandomWalk::new(vec![0.5; 3])
            .unwrap()
            .with_mode(UpdateMode::Sweep);
        assert_eq!(rw.blocks(), 3);
        let mut rng = chain_rng(1);
        for block in 0..3 {
            let next = rw.propose_block(&[0.0; 3], block, &mut rng);
            for (k, v) in next.iter().enumerate() {
                if k == block {
                    assert!(v.abs() <= 0.5 && *v != 0.0);
                } else {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        let all = RandomWalk::new(vec![0.5; 3]).unwrap();
        assert_eq!(all.blocks(), 1);
    }
}
