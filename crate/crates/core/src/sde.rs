//! Euler-discretized one-dimensional Itô SDEs as a forward model.
//!
//! The chain state is the increment vector `dx = (X_1 - X_0, ..., X_N - X_{N-1})`.
//! The forward model maps it to innovations
//! `y_i = (dx_i - b(X_{i-1}, t_{i-1}) dt) / a(X_{i-1}, t_{i-1})`,
//! which are i.i.d. `N(0, dt)` exactly when the path follows the Euler
//! scheme. Sampling increments with the probed rule against that Gaussian
//! target therefore produces Euler paths of the SDE.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mcmc::{
    chain_rng, merge_diagnostics, ChainConfig, ChainDiagnostics, ForwardModel, LogDensity,
    RandomWalk, Sampler, UpdateMode,
};
use crate::probing::sde_uniform_density;

/// `|a|` below this counts as a vanished diffusion coefficient.
pub const SINGULAR_DIFFUSION_EPS: f64 = 1e-12;

/// Drift or diffusion coefficient `(x, t) -> value`.
///
/// The closed forms skip the indirect call; they sit in the innermost loop
/// of every chain step.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `c * x`
    Linear(f64),
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Linear(c) => c * x,
            Coefficient::Custom(f) => f(x, t),
        }
    }
}

#[derive(Clone)]
pub struct SdePathModel {
    drift: Coefficient,
    diffusion: Coefficient,
    x0: f64,
    t_end: f64,
    n_steps: usize,
    rho: f64,
}

impl std::fmt::Debug for SdePathModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdePathModel")
            .field("x0", &self.x0)
            .field("t_end", &self.t_end)
            .field("n_steps", &self.n_steps)
            .field("rho", &self.rho)
            .finish_non_exhaustive()
    }
}

impl SdePathModel {
    /// `dX = drift(X, t) dt + diffusion(X, t) dW` on `[0, t_end]` with
    /// `n_steps` Euler steps; increments are supported on `[-rho, rho]`.
    pub fn new(
        drift: Coefficient,
        diffusion: Coefficient,
        x0: f64,
        t_end: f64,
        n_steps: usize,
        rho: f64,
    ) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Config(format!(
                "t_end must be positive, got {t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        if !x0.is_finite() {
            return Err(Error::Config(format!("x0 must be finite, got {x0}")));
        }
        Ok(Self {
            drift,
            diffusion,
            x0,
            t_end,
            n_steps,
            rho,
        })
    }

    /// Geometric Brownian motion `dX = mu X dt + sigma X dW`.
    pub fn gbm(mu: f64, sigma: f64, x0: f64, t_end: f64, n_steps: usize, rho: f64) -> Result<Self> {
        Self::new(
            Coefficient::Linear(mu),
            Coefficient::Linear(sigma),
            x0,
            t_end,
            n_steps,
            rho,
        )
    }

    /// `dX = dW`, for which the innovation map is the identity.
    pub fn brownian(x0: f64, t_end: f64, n_steps: usize, rho: f64) -> Result<Self> {
        Self::new(
            Coefficient::Constant(0.0),
            Coefficient::Constant(1.0),
            x0,
            t_end,
            n_steps,
            rho,
        )
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(
            self.drift.clone(),
            self.diffusion.clone(),
            self.x0,
            self.t_end,
            self.n_steps,
            rho,
        )
    }

    pub fn delta_t(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            i as f64 * self.delta_t()
        }
    }

    pub fn drift(&self, x: f64, t: f64) -> f64 {
        self.drift.eval(x, t)
    }

    pub fn diffusion(&self, x: f64, t: f64) -> f64 {
        self.diffusion.eval(x, t)
    }

    fn check_len(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.n_steps {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: self.n_steps,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Cumulative sum of the increments starting at `x0`; length `N + 1`.
    pub fn increments_to_path(&self, increments: &[f64]) -> Result<Vec<f64>> {
        self.check_len("increments", increments)?;
        let mut path = Vec::with_capacity(self.n_steps + 1);
        let mut x = self.x0;
        path.push(x);
        for dx in increments {
            x += dx;
            path.push(x);
        }
        Ok(path)
    }

    /// Innovation map `y_i = (dx_i - b_{i-1} dt) / a_{i-1}`.
    pub fn path_to_innovations(&self, increments: &[f64]) -> Result<Vec<f64>> {
        self.check_len("increments", increments)?;
        let dt = self.delta_t();
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.n_steps);
        for (i, dx) in increments.iter().enumerate() {
            let t = self.time(i);
            let a = self.diffusion(x, t);
            if !(a.abs() >= SINGULAR_DIFFUSION_EPS) {
                return Err(Error::SingularDiffusion { step: i });
            }
            out.push((dx - self.drift(x, t) * dt) / a);
            x += dx;
        }
        Ok(out)
    }

    /// Inverse of the innovation map: `dx_i = y_i a_{i-1} + b_{i-1} dt`.
    pub fn innovations_to_increments(&self, innovations: &[f64]) -> Result<Vec<f64>> {
        self.check_len("innovations", innovations)?;
        let dt = self.delta_t();
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.n_steps);
        for (i, y) in innovations.iter().enumerate() {
            let t = self.time(i);
            let a = self.diffusion(x, t);
            if !(a.abs() >= SINGULAR_DIFFUSION_EPS) {
                return Err(Error::SingularDiffusion { step: i });
            }
            let dx = y * a + self.drift(x, t) * dt;
            out.push(dx);
            x += dx;
        }
        Ok(out)
    }
}

impl ForwardModel for SdePathModel {
    fn input_dim(&self) -> usize {
        self.n_steps
    }
    fn output_dim(&self) -> usize {
        self.n_steps
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.path_to_innovations(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub increments: Vec<f64>,
    pub path: Vec<f64>,
    pub innovations: Vec<f64>,
}

impl PathSample {
    pub fn from_increments(model: &SdePathModel, increments: Vec<f64>) -> Result<Self> {
        let path = model.increments_to_path(&increments)?;
        let innovations = model.path_to_innovations(&increments)?;
        Ok(Self {
            increments,
            path,
            innovations,
        })
    }
}

/// `log f(y) = -|y|^2 / (2 dt)` for i.i.d. `N(0, dt)` innovations, unnormalized.
#[derive(Clone, Copy, Debug)]
pub struct GaussianInnovationTarget {
    dim: usize,
    delta_t: f64,
}

pub fn gaussian_innovation_target(dim: usize, delta_t: f64) -> Result<GaussianInnovationTarget> {
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(Error::Config(format!(
            "delta_t must be positive, got {delta_t}"
        )));
    }
    Ok(GaussianInnovationTarget { dim, delta_t })
}

impl LogDensity for GaussianInnovationTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_eval(&self, y: &[f64]) -> f64 {
        -y.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.delta_t)
    }
}

/// Probe density of the SDE model over innovations.
///
/// Reconstructs the increments from the innovations and evaluates
/// [`sde_uniform_density`] on them.
#[derive(Clone, Debug)]
pub struct SdeProbeDensity {
    model: SdePathModel,
}

impl SdeProbeDensity {
    pub fn new(model: SdePathModel) -> Self {
        Self { model }
    }
}

impl LogDensity for SdeProbeDensity {
    fn dim(&self) -> usize {
        self.model.n_steps
    }
    fn log_eval(&self, q: &[f64]) -> f64 {
        self.model
            .innovations_to_increments(q)
            .and_then(|inc| sde_uniform_density(&self.model, &inc))
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Log acceptance ratio of the probed rule between two increment vectors.
///
/// Returns `-inf` when the proposal is out of support or singular.
pub fn sde_accept_log_ratio(
    model: &SdePathModel,
    current: &[f64],
    proposed: &[f64],
) -> Result<f64> {
    let target = gaussian_innovation_target(model.n_steps, model.delta_t())?;
    let probe_current = sde_uniform_density(model, current)?;
    if probe_current == f64::NEG_INFINITY {
        return Err(Error::InvalidState(
            "current increments are outside the support".into(),
        ));
    }
    let y_current = model.path_to_innovations(current)?;
    model.check_len("proposed increments", proposed)?;
    let probe_proposed = match sde_uniform_density(model, proposed) {
        Ok(v) => v,
        Err(e) if e.is_model_domain() => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    if probe_proposed == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let y_proposed = model.path_to_innovations(proposed)?;
    Ok(target.log_eval(&y_proposed) - target.log_eval(&y_current) + probe_current - probe_proposed)
}

/// Settings for [`sample_paths`].
#[derive(Clone, Debug)]
pub struct PathSamplerConfig {
    pub chain: ChainConfig,
    pub n_chains: usize,
    pub half_width: f64,
    pub mode: UpdateMode,
}

impl PathSamplerConfig {
    /// Chain starting from the flat (all-zero increment) path.
    pub fn from_zero(
        model: &SdePathModel,
        total_steps: usize,
        burn_in: usize,
        thinning: usize,
        seed: u64,
    ) -> Self {
        Self {
            chain: ChainConfig {
                initial_point: vec![0.0; model.n_steps],
                burn_in,
                total_steps,
                thinning,
                seed,
            },
            n_chains: 1,
            half_width: 0.2,
            mode: UpdateMode::Sweep,
        }
    }

    /// Chain starting from a path whose innovations are one draw from the
    /// Gaussian target, redrawn until every increment lies in `[-rho, rho]`.
    ///
    /// The flat path is a poor start for multiplicative noise: its
    /// innovations are atypically small, and shrinking the whole level
    /// raises the increment-space density like `level^-N`, so a chain
    /// started there drifts towards zero before it equilibrates.
    pub fn from_target_draw(
        model: &SdePathModel,
        total_steps: usize,
        burn_in: usize,
        thinning: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut config = Self::from_zero(model, total_steps, burn_in, thinning, seed);
        config.chain.initial_point = initial_increments(model, seed)?;
        Ok(config)
    }
}

/// Increments of a path driven by innovations drawn from `N(0, dt)`.
/// Uses a stream independent of the chain's own stream for `seed`.
pub fn initial_increments(model: &SdePathModel, seed: u64) -> Result<Vec<f64>> {
    const ATTEMPTS: usize = 10_000;
    let normal = Normal::new(0.0, model.delta_t().sqrt())
        .map_err(|e| Error::Config(format!("innovation law: {e}")))?;
    let mut rng = chain_rng(seed ^ 0x9E37_79B9_7F4A_7C15);
    for _ in 0..ATTEMPTS {
        let y: Vec<f64> = (0..model.n_steps)
            .map(|_| normal.sample(&mut rng))
            .collect();
        match model.innovations_to_increments(&y) {
            Ok(dx) if dx.iter().all(|d| d.abs() <= model.rho) => return Ok(dx),
            Ok(_) => {}
            Err(e) if e.is_model_domain() => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Construction(format!(
        "no innovation draw in {ATTEMPTS} attempts maps inside the increment support"
    )))
}

#[derive(Clone, Debug)]
pub struct PathEnsemble {
    /// Retained samples per chain.
    pub chains: Vec<Vec<PathSample>>,
    pub chain_diagnostics: Vec<ChainDiagnostics>,
    pub diagnostics: ChainDiagnostics,
    pub burn_in: usize,
    pub thinning: usize,
}

impl PathEnsemble {
    pub fn samples(&self) -> impl Iterator<Item = &PathSample> {
        self.chains.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of `X_{index}` across every retained sample.
    pub fn slice(&self, index: usize) -> Vec<f64> {
        self.samples().map(|s| s.path[index]).collect()
    }

    /// Writes `chain,step,x_0..x_N`, one row per retained sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n_points = self.samples().next().map_or(0, |s| s.path.len());
        let mut header = vec!["chain".to_string(), "step".to_string()];
        header.extend((0..n_points).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (k, sample) in chain.iter().enumerate() {
                let step = self.burn_in + (k + 1) * self.thinning;
                let mut row = vec![c.to_string(), step.to_string()];
                row.extend(sample.path.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples Euler paths with independent probed-rule chains over the
/// increment vector. Chain `i` uses seed `config.chain.seed + i`.
pub fn sample_paths(model: &SdePathModel, config: &PathSamplerConfig) -> Result<PathEnsemble> {
    let target = gaussian_innovation_target(model.n_steps, model.delta_t())?;
    let probe = SdeProbeDensity::new(model.clone());
    let proposal = RandomWalk::new(vec![config.half_width; model.n_steps])?.with_mode(config.mode);
    let sampler = Sampler::probed(model, &proposal, &target, &probe)?;
    let runs = sampler.run_ensemble(&config.chain, config.n_chains)?;
    let diagnostics = merge_diagnostics(&runs);
    let chain_diagnostics = runs.iter().map(|r| r.diagnostics).collect();
    let chains = runs
        .into_iter()
        .map(|run| {
            run.samples
                .into_iter()
                .map(|s| {
                    let path = model.increments_to_path(&s.x)?;
                    Ok(PathSample {
                        increments: s.x,
                        path,
                        innovations: s.y,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        chains,
        chain_diagnostics,
        diagnostics,
        burn_in: config.chain.burn_in,
        thinning: config.chain.thinning,
    })
}

/// Lognormal marginal of GBM at time `t`:
/// `exp(-(ln x - ln x0 - (mu - sigma^2/2) t)^2 / (2 sigma^2 t)) / (sigma x sqrt(2 pi t))`.
pub fn gbm_analytic_pdf(mu: f64, sigma: f64, x0: f64, t: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !(t > 0.0) {
        return Err(Error::Domain(format!(
            "lognormal pdf needs x > 0 and t > 0, got x={x}, t={t}"
        )));
    }
    if !(sigma > 0.0) || !(x0 > 0.0) {
        return Err(Error::Domain("lognormal pdf needs sigma > 0 and x0 > 0".into()));
    }
    let mu_hat = mu - 0.5 * sigma * sigma;
    let z = x.ln() - x0.ln() - mu_hat * t;
    Ok((-z * z / (2.0 * sigma * sigma * t)).exp() / (sigma * x * (2.0 * PI * t).sqrt()))
}

/// `R(s, t) = exp(mu (s + t)) (exp(sigma^2 min(s, t)) - 1)`.
pub fn gbm_analytic_autocorr(mu: f64, sigma: f64, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0) || !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "times must be non-negative, got s={s}, t={t}"
        )));
    }
    Ok((mu * (s + t)).exp() * ((sigma * sigma * s.min(t)).exp() - 1.0))
}

/// `R(s, t) / sqrt(R(s, s) R(t, t))`.
pub fn gbm_normalized_autocorr(mu: f64, sigma: f64, s: f64, t: f64) -> Result<f64> {
    let rss = gbm_analytic_autocorr(mu, sigma, s, s)?;
    let rtt = gbm_analytic_autocorr(mu, sigma, t, t)?;
    if !(rss > 0.0 && rtt > 0.0) {
        return Err(Error::Domain(format!(
            "normalized autocorrelation undefined at s={s}, t={t}"
        )));
    }
    Ok(gbm_analytic_autocorr(mu, sigma, s, t)? / (rss * rtt).sqrt())
}
