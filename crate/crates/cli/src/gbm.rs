use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use inverse_mcmc::analysis::{
    effective_sample_size, empirical_autocorr, empirical_pdf, ks_critical_value, ks_statistic,
    l1_density_distance, normal_cdf, pearson_correlation, write_curve_csv, write_histogram_csv,
    write_metrics,
};
use inverse_mcmc::sde::{
    gbm_analytic_pdf, gbm_normalized_autocorr, sample_paths, PathEnsemble, PathSamplerConfig,
    SdePathModel,
};
use inverse_mcmc::UpdateMode;

use crate::failure::{parse_count, Failure, Status};
use crate::manifest::{join, Manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// One step updates each increment in turn, each with its own decision.
    Sweep,
    /// One step perturbs every increment at once.
    All,
    /// One step perturbs one increment chosen at random.
    Single,
}

impl Mode {
    fn update_mode(self) -> UpdateMode {
        match self {
            Mode::Sweep => UpdateMode::Sweep,
            Mode::All => UpdateMode::AllCoordinates,
            Mode::Single => UpdateMode::SingleCoordinate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Init {
    /// Increments of a path driven by one draw of the target innovations.
    TargetDraw,
    /// The flat path (all increments zero).
    Zero,
}

#[derive(clap::Args, Debug)]
pub struct GbmArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 100)]
    pub n_steps: usize,
    /// Increment support half-width.
    #[arg(long, default_value_t = 2.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.2)]
    pub proposal_half_width: f64,
    #[arg(long, default_value = "5100000", value_parser = parse_count)]
    pub total_steps: usize,
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 50)]
    pub thinning: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Sweep)]
    pub update_mode: Mode,
    #[arg(long, value_enum, default_value_t = Init::TargetDraw)]
    pub init: Init,
    /// Times at which marginal densities are compared.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0])]
    pub pdf_times: Vec<f64>,
    /// Fixed first times of the autocorrelation curves.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0])]
    pub autocorr_s: Vec<f64>,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    /// Histograms cover `[0, pdf_max]`.
    #[arg(long, default_value_t = 8.0)]
    pub pdf_max: f64,
    /// Exit with status 1 if any marginal L1 distance reaches this value.
    #[arg(long)]
    pub max_l1: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl GbmArgs {
    fn params(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![
            ("mu", self.mu.to_string()),
            ("sigma", self.sigma.to_string()),
            ("x0", self.x0.to_string()),
            ("t-end", self.t_end.to_string()),
            ("n-steps", self.n_steps.to_string()),
            ("rho", self.rho.to_string()),
            ("proposal-half-width", self.proposal_half_width.to_string()),
            ("total-steps", self.total_steps.to_string()),
            ("burn-in", self.burn_in.to_string()),
            ("thinning", self.thinning.to_string()),
            ("chains", self.chains.to_string()),
            ("seed", self.seed.to_string()),
            (
                "update-mode",
                self.update_mode
                    .to_possible_value()
                    .map(|v| v.get_name().to_string())
                    .unwrap_or_default(),
            ),
            (
                "init",
                self.init
                    .to_possible_value()
                    .map(|v| v.get_name().to_string())
                    .unwrap_or_default(),
            ),
            ("pdf-times", join(&self.pdf_times)),
            ("autocorr-s", join(&self.autocorr_s)),
            ("bins", self.bins.to_string()),
            ("pdf-max", self.pdf_max.to_string()),
        ];
        if let Some(m) = self.max_l1 {
            p.push(("max-l1", m.to_string()));
        }
        p.push(("out-dir", self.out_dir.display().to_string()));
        p
    }
}

/// Grid index of time `t`, which must be a positive multiple of `dt`.
fn time_index(model: &SdePathModel, t: f64, flag: &str) -> Result<usize, Failure> {
    let dt = model.delta_t();
    let k = (t / dt).round();
    if !(k >= 1.0 && k <= model.n_steps() as f64 && (k * dt - t).abs() <= 1e-9 * t.abs().max(1.0)) {
        return Err(Failure::Usage(format!(
            "--{flag} value {t} is not a positive grid time (dt = {dt}, t_end = {})",
            model.t_end()
        )));
    }
    Ok(k as usize)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("creating {}", path.display()), e))
}

fn run_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Run(e.into())
}

pub fn run(args: &GbmArgs) -> Result<Status, Failure> {
    if !(args.sigma > 0.0) || !(args.x0 > 0.0) {
        return Err(Failure::Usage("--sigma and --x0 must be positive".into()));
    }
    if !(args.proposal_half_width > 0.0) {
        return Err(Failure::Usage(
            "--proposal-half-width must be positive".into(),
        ));
    }
    if args.bins == 0 || !(args.pdf_max > 0.0) {
        return Err(Failure::Usage(
            "--bins and --pdf-max must be positive".into(),
        ));
    }
    let model = SdePathModel::gbm(
        args.mu,
        args.sigma,
        args.x0,
        args.t_end,
        args.n_steps,
        args.rho,
    )?;
    let pdf_idx = args
        .pdf_times
        .iter()
        .map(|&t| time_index(&model, t, "pdf-times").map(|k| (t, k)))
        .collect::<Result<Vec<_>, _>>()?;
    let s_idx = args
        .autocorr_s
        .iter()
        .map(|&s| time_index(&model, s, "autocorr-s").map(|k| (s, k)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut manifest = Manifest::start("gbm", args.params());
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::io(format!("creating {}", args.out_dir.display()), e))?;

    let mut config = match args.init {
        Init::TargetDraw => PathSamplerConfig::from_target_draw(
            &model,
            args.total_steps,
            args.burn_in,
            args.thinning,
            args.seed,
        )?,
        Init::Zero => PathSamplerConfig::from_zero(
            &model,
            args.total_steps,
            args.burn_in,
            args.thinning,
            args.seed,
        ),
    };
    config.n_chains = args.chains;
    config.half_width = args.proposal_half_width;
    config.mode = args.update_mode.update_mode();
    let ensemble = sample_paths(&model, &config)?;
    if ensemble.len() < 2 {
        return Err(Failure::Usage(
            "fewer than two retained samples; lower --burn-in or --thinning".into(),
        ));
    }

    let path = args.out_dir.join("paths.csv");
    ensemble.write_csv(create(&path)?)?;
    manifest.output(&path);

    let mut metrics: Vec<(String, f64)> = vec![
        ("samples".into(), ensemble.len() as f64),
        ("proposals".into(), ensemble.diagnostics.steps_taken as f64),
        (
            "acceptance_rate".into(),
            ensemble.diagnostics.acceptance_rate(),
        ),
        (
            "rejected_out_of_support".into(),
            ensemble.diagnostics.rejected_out_of_support as f64,
        ),
        (
            "rejected_invalid".into(),
            ensemble.diagnostics.rejected_invalid as f64,
        ),
    ];
    let mut worst_l1 = 0.0f64;
    for &(t, k) in &pdf_idx {
        let analytic = |x: f64| {
            if x > 0.0 {
                gbm_analytic_pdf(args.mu, args.sigma, args.x0, t, x).unwrap_or(0.0)
            } else {
                0.0
            }
        };
        let slice = ensemble.slice(k);
        let hist = empirical_pdf(&slice, args.bins, (0.0, args.pdf_max)).map_err(run_err)?;
        let l1 = l1_density_distance(&hist, analytic);
        worst_l1 = worst_l1.max(l1);
        let path = args.out_dir.join(format!("pdf_t{t}.csv"));
        write_histogram_csv(create(&path)?, &hist, Some(&analytic))?;
        manifest.output(&path);
        let grid: Vec<(f64, f64)> = (1..=400)
            .map(|i| {
                let x = args.pdf_max * i as f64 / 400.0;
                (x, analytic(x))
            })
            .collect();
        let path = args.out_dir.join(format!("analytic_pdf_t{t}.csv"));
        write_curve_csv(create(&path)?, ("x", "pdf"), &grid)?;
        manifest.output(&path);

        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        metrics.push((format!("l1_pdf_t{t}"), l1));
        metrics.push((format!("outside_range_t{t}"), hist.outside as f64));
        metrics.push((format!("mean_x_t{t}"), mean));
        metrics.push((
            format!("analytic_mean_x_t{t}"),
            args.x0 * (args.mu * t).exp(),
        ));
        metrics.push((format!("ess_x_t{t}"), chain_ess(&ensemble, k)));
    }

    let dt = model.delta_t();
    let paths: Vec<&[f64]> = ensemble.samples().map(|s| s.path.as_slice()).collect();
    for &(s, ks) in &s_idx {
        let mut empirical = Vec::with_capacity(model.n_steps());
        let mut analytic = Vec::with_capacity(model.n_steps());
        let mut worst = 0.0f64;
        for k in 1..=model.n_steps() {
            let t = k as f64 * dt;
            // a chain that never moved has zero variance; report NaN rather than abort
            let e = empirical_autocorr(&paths, ks, k).unwrap_or(f64::NAN);
            let a = gbm_normalized_autocorr(args.mu, args.sigma, s, t).map_err(run_err)?;
            worst = if e.is_nan() || worst.is_nan() {
                f64::NAN
            } else {
                worst.max((e - a).abs())
            };
            empirical.push((t, e));
            analytic.push((t, a));
        }
        let path = args.out_dir.join(format!("autocorr_s{s}.csv"));
        write_curve_csv(create(&path)?, ("t", "autocorr"), &empirical)?;
        manifest.output(&path);
        let path = args.out_dir.join(format!("analytic_autocorr_s{s}.csv"));
        write_curve_csv(create(&path)?, ("t", "autocorr"), &analytic)?;
        manifest.output(&path);
        metrics.push((format!("autocorr_max_abs_dev_s{s}"), worst));
    }

    let n = ensemble.len();
    let columns: Vec<Vec<f64>> = (0..model.n_steps())
        .map(|i| ensemble.samples().map(|s| s.innovations[i]).collect())
        .collect();
    let critical = ks_critical_value(0.01, n as f64);
    let ks: Vec<f64> = columns
        .iter()
        .map(|c| ks_statistic(c, |v| normal_cdf(v, 0.0, dt.sqrt())))
        .collect::<Result<_, _>>()
        .map_err(run_err)?;
    let mut corr_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            corr_sum += pearson_correlation(&columns[i], &columns[j])
                .map(f64::abs)
                .unwrap_or(f64::NAN);
            pairs += 1;
        }
    }
    metrics.push((
        "innovation_ks_max".into(),
        ks.iter().cloned().fold(0.0, f64::max),
    ));
    metrics.push(("innovation_ks_critical_1pct".into(), critical));
    metrics.push((
        "innovation_ks_failures".into(),
        ks.iter().filter(|k| **k >= critical).count() as f64,
    ));
    if pairs > 0 {
        metrics.push(("innovation_mean_abs_corr".into(), corr_sum / pairs as f64));
    }

    let path = args.out_dir.join("metrics.csv");
    write_metrics(create(&path)?, &metrics)?;
    manifest.output(&path);
    for (name, value) in &metrics {
        println!("{name},{value}");
    }
    manifest.write(&args.out_dir.join("manifest.txt"))?;

    Ok(match args.max_l1 {
        Some(limit) if worst_l1 >= limit => Status::CriteriaFailed,
        _ => Status::Success,
    })
}

/// Sum of per-chain effective sample sizes of the path value at `index`.
fn chain_ess(ensemble: &PathEnsemble, index: usize) -> f64 {
    ensemble
        .chains
        .iter()
        .map(|c| {
            let trace: Vec<f64> = c.iter().map(|s| s.path[index]).collect();
            effective_sample_size(&trace)
                .map(|e| e.value)
                .unwrap_or(f64::NAN)
        })
        .sum()
}
