//! Probing densities: the law of `h(U)` for `U` uniform on a bounded input box.
//!
//! When no closed form is available the probe density is estimated from
//! uniform probes with a Gaussian product-kernel density estimate. For Euler
//! SDE models the closed form [`sde_uniform_density`] is used instead.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mcmc::{chain_rng, ForwardModel, LogDensity};
use crate::sde::{SdePathModel, SINGULAR_DIFFUSION_EPS};

/// Axis-aligned box `[lower_1, upper_1] x ... x [lower_n, upper_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "input box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Config(
                "input box needs at least one dimension".into(),
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "input box dimension {i} needs finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval on every coordinate.
    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Uniform density on the box, unnormalized: `0` inside, `-inf` outside.
impl LogDensity for InputBox {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn log_eval(&self, y: &[f64]) -> f64 {
        if self.contains(y) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Row-major `rows x dim` matrix of model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl ProbeMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "probe row",
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, d: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[d])
    }

    /// Header `y1..ym`, then one probe per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.dim).map(|d| format!("y{d}")))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len();
        let mut data = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "probe CSV row",
                    expected: dim,
                    got: record.len(),
                });
            }
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Config(format!(
                        "probe CSV line {}: cannot parse {field:?}",
                        line + 2
                    ))
                })?;
                data.push(v);
            }
        }
        Self::new(dim, data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedProbe {
    pub index: usize,
    pub input: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ProbeRun {
    pub outputs: ProbeMatrix,
    pub dropped: Vec<DroppedProbe>,
}

/// Evaluates the model at `count` i.i.d. uniform points of the box.
///
/// Inputs are drawn sequentially from the seed and evaluated in parallel,
/// so the result does not depend on the worker count. Rows where the model
/// fails or returns non-finite values are dropped and reported.
pub fn uniform_probe(
    model: &dyn ForwardModel,
    bounds: &InputBox,
    count: usize,
    seed: u64,
) -> Result<ProbeRun> {
    if count == 0 {
        return Err(Error::Config("probe count must be positive".into()));
    }
    if bounds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "probe box",
            expected: model.input_dim(),
            got: bounds.dim(),
        });
    }
    let mut rng = chain_rng(seed);
    let inputs: Vec<Vec<f64>> = (0..count).map(|_| bounds.sample(&mut rng)).collect();
    let outputs: Vec<Result<Vec<f64>>> = inputs.par_iter().map(|u| model.evaluate(u)).collect();
    finish_probe(model.output_dim(), inputs, outputs)
}

/// Assembles a probe matrix from already evaluated outputs.
pub fn finish_probe(
    output_dim: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Result<Vec<f64>>>,
) -> Result<ProbeRun> {
    let mut data = Vec::with_capacity(outputs.len() * output_dim);
    let mut dropped = Vec::new();
    for (index, (input, out)) in inputs.into_iter().zip(outputs).enumerate() {
        match out {
            Ok(y) if y.len() != output_dim => {
                return Err(Error::DimensionMismatch {
                    context: "model output",
                    expected: output_dim,
                    got: y.len(),
                })
            }
            Ok(y) if y.iter().all(|v| v.is_finite()) => data.extend(y),
            Ok(_) => dropped.push(DroppedProbe {
                index,
                input,
                reason: "non-finite output".into(),
            }),
            Err(e) if e.is_model_domain() => dropped.push(DroppedProbe {
                index,
                input,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if data.is_empty() {
        return Err(Error::Empty("every probe was dropped".into()));
    }
    Ok(ProbeRun {
        outputs: ProbeMatrix::new(output_dim, data)?,
        dropped,
    })
}

/// Points further than this many bandwidths along the first coordinate are
/// skipped when the nearby points alone determine the sum to ~1e-12.
const WINDOW_BANDWIDTHS: f64 = 10.0;

/// Gaussian product-kernel density estimate
/// `f(y) = (1/M) sum_j prod_d phi((y_d - p_jd) / b_d) / b_d`.
#[derive(Clone, Debug)]
pub struct KdeModel {
    dim: usize,
    /// Probe points sorted by their first coordinate.
    points: Vec<f64>,
    first: Vec<f64>,
    bandwidth: Vec<f64>,
    inv_bandwidth: Vec<f64>,
    log_norm: f64,
    floored: Vec<usize>,
}

/// Silverman's rule `1.06 sd M^(-1/5)` per dimension. Dimensions with zero
/// spread get a floor bandwidth and are listed in the second value.
pub fn silverman_bandwidth(probes: &ProbeMatrix) -> (Vec<f64>, Vec<usize>) {
    let m = probes.n_rows() as f64;
    let mut floored = Vec::new();
    let bw = (0..probes.dim())
        .map(|d| {
            let mean = probes.column(d).sum::<f64>() / m;
            let var = probes.column(d).map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let b = 1.06 * var.sqrt() * m.powf(-0.2);
            let floor = 1e-6 * mean.abs().max(1.0);
            if b > floor {
                b
            } else {
                floored.push(d);
                floor
            }
        })
        .collect();
    (bw, floored)
}

/// Fits a KDE with Silverman bandwidths.
pub fn kde_fit(probes: &ProbeMatrix) -> Result<KdeModel> {
    if probes.n_rows() < 2 {
        return Err(Error::Config(format!(
            "KDE needs at least 2 probes, got {}",
            probes.n_rows()
        )));
    }
    let (bw, floored) = silverman_bandwidth(probes);
    let mut kde = KdeModel::with_bandwidth(probes, bw)?;
    kde.floored = floored;
    Ok(kde)
}

impl KdeModel {
    pub fn with_bandwidth(probes: &ProbeMatrix, bandwidth: Vec<f64>) -> Result<Self> {
        let dim = probes.dim();
        if probes.n_rows() < 2 {
            return Err(Error::Config(format!(
                "KDE needs at least 2 probes, got {}",
                probes.n_rows()
            )));
        }
        if bandwidth.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "bandwidth",
                expected: dim,
                got: bandwidth.len(),
            });
        }
        if let Some(b) = bandwidth.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {b}"
            )));
        }
        let mut rows: Vec<&[f64]> = probes.rows().collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let points: Vec<f64> = rows.concat();
        let first = rows.iter().map(|r| r[0]).collect();
        let m = probes.n_rows() as f64;
        let log_norm = -m.ln()
            - bandwidth.iter().map(|b| b.ln()).sum::<f64>()
            - 0.5 * dim as f64 * (2.0 * PI).ln();
        Ok(Self {
            dim,
            points,
            first,
            inv_bandwidth: bandwidth.iter().map(|b| 1.0 / b).collect(),
            bandwidth,
            log_norm,
            floored: Vec::new(),
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn n_points(&self) -> usize {
        self.first.len()
    }

    /// Output dimensions whose bandwidth hit the floor during fitting.
    pub fn floored_dimensions(&self) -> &[usize] {
        &self.floored
    }

    fn exponent(&self, j: usize, y: &[f64]) -> f64 {
        let p = &self.points[j * self.dim..(j + 1) * self.dim];
        let mut s = 0.0;
        for d in 0..self.dim {
            let z = (y[d] - p[d]) * self.inv_bandwidth[d];
            s += z * z;
        }
        -0.5 * s
    }

    fn log_sum_all(&self, y: &[f64]) -> f64 {
        let n = self.n_points();
        let max = (0..n)
            .map(|j| self.exponent(j, y))
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let s: f64 = (0..n).map(|j| (self.exponent(j, y) - max).exp()).sum();
        max + s.ln()
    }

    /// Log of the estimated density. Far from every probe this stays finite
    /// (and very negative) rather than underflowing.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        if y.len() != self.dim || y.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let half = WINDOW_BANDWIDTHS * self.bandwidth[0];
        let lo = self.first.partition_point(|v| *v < y[0] - half);
        let hi = self.first.partition_point(|v| *v <= y[0] + half);
        let s: f64 = (lo..hi).map(|j| self.exponent(j, y).exp()).sum();
        // every skipped term is below exp(-W^2/2)
        let skipped_bound = (self.n_points() - (hi - lo)) as f64
            * (-0.5 * WINDOW_BANDWIDTHS * WINDOW_BANDWIDTHS).exp();
        if s > 0.0 && skipped_bound <= 1e-12 * s {
            self.log_norm + s.ln()
        } else {
            self.log_norm + self.log_sum_all(y)
        }
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        self.log_density(y).exp()
    }

    /// Analytic gradient of [`KdeModel::log_density`].
    pub fn grad_log_density(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n_points();
        let exps: Vec<f64> = (0..n).map(|j| self.exponent(j, y)).collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut grad = vec![0.0; self.dim];
        for (j, e) in exps.iter().enumerate() {
            let w = (e - max).exp();
            total += w;
            let p = &self.points[j * self.dim..(j + 1) * self.dim];
            for d in 0..self.dim {
                grad[d] -= w * (y[d] - p[d]) * self.inv_bandwidth[d] * self.inv_bandwidth[d];
            }
        }
        grad.iter().map(|g| g / total).collect()
    }
}

impl LogDensity for KdeModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_eval(&self, y: &[f64]) -> f64 {
        self.log_density(y)
    }
}

/// Maps log-densities below `floor` to the zero-density sentinel, so an
/// estimated probe density that has effectively vanished rejects the
/// proposal instead of dominating the acceptance ratio.
#[derive(Clone, Debug)]
pub struct FlooredDensity<D> {
    inner: D,
    floor: f64,
}

impl<D: LogDensity> FlooredDensity<D> {
    pub fn new(inner: D, floor: f64) -> Self {
        Self { inner, floor }
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: LogDensity> LogDensity for FlooredDensity<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_eval(&self, y: &[f64]) -> f64 {
        let v = self.inner.log_eval(y);
        if v < self.floor {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Closed-form log probe density of an Euler SDE model, up to a constant.
///
/// With increments uniform on `[-rho, rho]` the innovations have density
/// proportional to `prod_{i=0}^{N-1} |a(x_i, t_i)|` on their support. Returns
/// `-inf` when any increment lies outside `[-rho, rho]`.
pub fn sde_uniform_density(model: &SdePathModel, increments: &[f64]) -> Result<f64> {
    if increments.len() != model.n_steps() {
        return Err(Error::DimensionMismatch {
            context: "increments",
            expected: model.n_steps(),
            got: increments.len(),
        });
    }
    let rho = model.rho();
    if increments.iter().any(|d| !(d.abs() <= rho)) {
        return Ok(f64::NEG_INFINITY);
    }
    // Logs are taken of running products, renormalized before they can
    // leave the comfortable range of f64.
    let mut x = model.x0();
    let mut total = 0.0;
    let mut product = 1.0;
    for (i, d) in increments.iter().enumerate() {
        let a = model.diffusion(x, model.time(i)).abs();
        if !(a >= SINGULAR_DIFFUSION_EPS) || !a.is_finite() {
            return Err(Error::SingularDiffusion { step: i });
        }
        product *= a;
        if !(1e-100..=1e100).contains(&product) {
            total += product.ln();
            product = 1.0;
        }
        x += d;
    }
    Ok(total + product.ln())
}
