//! Post-processing of sampled paths and chain traces.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Density-normalized histogram over a fixed range.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub normalized_density: Vec<f64>,
    /// Samples that fell outside the range and were not binned.
    pub outside: u64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    pub fn midpoint(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }

    pub fn total_inside(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `sum density_b * width_b`; one for any non-empty histogram.
    pub fn mass(&self) -> f64 {
        (0..self.n_bins())
            .map(|b| self.normalized_density[b] * self.bin_width(b))
            .sum()
    }
}

/// Equal-width histogram on `[lo, hi]` normalized to unit mass over the
/// samples inside the range. The right edge belongs to the last bin.
pub fn empirical_pdf(samples: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "invalid histogram range [{lo}, {hi}]"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Empty("no samples to histogram".into()));
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|b| {
            if b == n_bins {
                hi
            } else {
                lo + b as f64 * width
            }
        })
        .collect();
    let mut counts = vec![0u64; n_bins];
    let mut outside = 0u64;
    for &v in samples {
        if !(v >= lo && v <= hi) {
            outside += 1;
            continue;
        }
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let inside: u64 = counts.iter().sum();
    if inside == 0 {
        return Err(Error::Empty(format!(
            "all {outside} samples fall outside [{lo}, {hi}]"
        )));
    }
    let normalized_density = (0..n_bins)
        .map(|b| counts[b] as f64 / (inside as f64 * (edges[b + 1] - edges[b])))
        .collect();
    Ok(Histogram {
        edges,
        counts,
        normalized_density,
        outside,
    })
}

/// Pearson correlation of `X_s` and `X_t` across an ensemble of paths.
pub fn empirical_autocorr<P: AsRef<[f64]>>(
    paths: &[P],
    s_index: usize,
    t_index: usize,
) -> Result<f64> {
    if paths.len() < 2 {
        return Err(Error::Empty(
            "autocorrelation needs at least two paths".into(),
        ));
    }
    let xs: Vec<f64> = paths.iter().map(|p| p.as_ref()[s_index]).collect();
    let xt: Vec<f64> = paths.iter().map(|p| p.as_ref()[t_index]).collect();
    pearson_correlation(&xs, &xt)
}

pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "correlation inputs",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty(
            "correlation needs at least two samples".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain(
            "correlation undefined for zero variance".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `sum_b |density_b - f(mid_b)| * width_b`.
pub fn l1_density_distance(hist: &Histogram, analytic: impl Fn(f64) -> f64) -> f64 {
    (0..hist.n_bins())
        .map(|b| {
            (hist.normalized_density[b] - analytic(hist.midpoint(b))).abs() * hist.bin_width(b)
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The raw estimate exceeded the trace length (negative autocorrelation)
    /// and was capped.
    pub capped: bool,
}

/// Effective sample size with Geyer's initial positive sequence estimator.
///
/// Sums adjacent autocorrelation pairs `rho_{2m} + rho_{2m+1}` while they
/// stay positive; `tau = -1 + 2 sum`, `ESS = L / tau`, capped at `L`.
pub fn effective_sample_size(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "ESS needs at least 10 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = trace.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / nf;
    if !(c0 > 0.0) {
        return Err(Error::Domain("ESS undefined for a constant trace".into()));
    }
    let rho = |k: usize| -> f64 {
        let s: f64 = centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum();
        s / nf / c0
    };
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho(2 * m) + rho(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    if tau <= 1.0 {
        return Ok(Ess {
            value: nf,
            capped: tau < 1.0,
        });
    }
    Ok(Ess {
        value: nf / tau,
        capped: false,
    })
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("KS statistic needs samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

/// Asymptotic KS critical value `sqrt(-ln(alpha/2) / 2) / sqrt(n)`.
pub fn ks_critical_value(alpha: f64, n: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / n.sqrt()
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
}

/// Writes a two-column CSV with the given header.
pub fn write_curve_csv<W: Write>(
    out: W,
    header: (&str, &str),
    points: &[(f64, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([header.0, header.1])?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a histogram with an optional analytic column at bin midpoints.
pub fn write_histogram_csv<W: Write>(
    out: W,
    hist: &Histogram,
    analytic: Option<&dyn Fn(f64) -> f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["bin_lo", "bin_hi", "midpoint", "count", "density"];
    if analytic.is_some() {
        header.push("analytic");
    }
    w.write_record(&header)?;
    for b in 0..hist.n_bins() {
        let mut row = vec![
            hist.edges[b].to_string(),
            hist.edges[b + 1].to_string(),
            hist.midpoint(b).to_string(),
            hist.counts[b].to_string(),
            hist.normalized_density[b].to_string(),
        ];
        if let Some(f) = analytic {
            row.push(f(hist.midpoint(b)).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Line-oriented `metric,value` report.
pub fn write_metrics<W: Write>(mut out: W, metrics: &[(String, f64)]) -> Result<()> {
    writeln!(out, "metric,value")?;
    for (name, value) in metrics {
        writeln!(out, "{name},{value}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::chain_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn uniform_histogram_is_flat() {
        let mut rng = chain_rng(1);
        let s: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let h = empirical_pdf(&s, 10, (0.0, 1.0)).unwrap();
        assert!(h.normalized_density.iter().all(|d| (d - 1.0).abs() < 0.02));
        assert!((h.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_edge_cases() {
        let h = empirical_pdf(&[0.3], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![0, 1, 0, 0]);
        assert!((h.mass() - 1.0).abs() < 1e-12);
        let top = empirical_pdf(&[1.0, 0.0], 2, (0.0, 1.0)).unwrap();
        assert_eq!(top.counts, vec![1, 1]);
        match empirical_pdf(&[2.0, 3.0], 4, (0.0, 1.0)) {
            Err(Error::Empty(msg)) => assert!(msg.contains('2')),
            other => panic!("{other:?}"),
        }
        assert!(empirical_pdf(&[], 4, (0.0, 1.0)).is_err());
        assert!(empirical_pdf(&[0.5], 0, (0.0, 1.0)).is_err());
        let partial = empirical_pdf(&[0.5, 7.0], 2, (0.0, 1.0)).unwrap();
        assert_eq!(partial.outside, 1);
    }

    #[test]
    fn autocorr_examples() {
        let paths = vec![
            vec![0.0, 1.0, -1.0],
            vec![0.0, -1.0, 1.0],
            vec![0.0, 2.0, -2.0],
        ];
        assert!((empirical_autocorr(&paths, 1, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((empirical_autocorr(&paths, 1, 2).unwrap() + 1.0).abs() < 1e-15);
        assert!(empirical_autocorr(&paths, 0, 1).is_err());
        assert!(empirical_autocorr(&paths[..1], 1, 2).is_err());

        let mut rng = chain_rng(3);
        let m = 20_000;
        let iid: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let r = empirical_autocorr(&iid, 1, 2).unwrap();
        assert!(r.abs() < 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn l1_examples() {
        let h = empirical_pdf(&[0.1, 0.4, 0.6, 0.9], 4, (0.0, 1.0)).unwrap();
        assert!((l1_density_distance(&h, |_| 0.0) - 1.0).abs() < 1e-12);
        assert!(l1_density_distance(&h, |_| 1.0).abs() < 1e-12);
        let far = empirical_pdf(&[0.1, 0.2], 2, (0.0, 1.0)).unwrap();
        let d = l1_density_distance(&far, |x| if x > 0.5 { 2.0 } else { 0.0 });
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn l1_against_own_density_at_fine_resolution() {
        // histogram built from exact bin masses of the standard normal
        let n_bins = 400;
        let (lo, hi) = (-8.0, 8.0);
        let width = (hi - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|b| lo + b as f64 * width).collect();
        let cdf = |x: f64| normal_cdf(x, 0.0, 1.0);
        let density: Vec<f64> = (0..n_bins)
            .map(|b| (cdf(edges[b + 1]) - cdf(edges[b])) / width)
            .collect();
        let hist = Histogram {
            counts: vec![1; n_bins],
            edges,
            normalized_density: density,
            outside: 0,
        };
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!(l1_density_distance(&hist, pdf) < 0.01);
    }

    #[test]
    fn ess_iid_and_ar1() {
        let mut rng = chain_rng(12);
        let n = 20_000;
        let iid: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = effective_sample_size(&iid).unwrap();
        assert!((e.value / n as f64 - 1.0).abs() < 0.2, "{e:?}");

        let phi = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + z;
                x
            })
            .collect();
        let e = effective_sample_size(&ar).unwrap();
        let expected = ar.len() as f64 * (1.0 - phi) / (1.0 + phi);
        assert!(
            (e.value / expected - 1.0).abs() < 0.3,
            "{} vs {expected}",
            e.value
        );
    }

    #[test]
    fn ess_edge_cases() {
        let alt: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let e = effective_sample_size(&alt).unwrap();
        assert_eq!(e.value, 100.0);
        assert!(e.capped);
        assert!(effective_sample_size(&[1.0; 50]).is_err());
        assert!(effective_sample_size(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn ks_against_exact_cdf() {
        let s = [0.25, 0.75];
        let d = ks_statistic(&s, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert!((ks_critical_value(0.01, 1.0) - 1.6276).abs() < 1e-4);
    }
}
