use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use inverse_mcmc::discrete::{
    build_modified_chain, build_naive_chain, detailed_balance_residual, pushforward, simulate,
    stationary_distribution, DiscreteChain, DiscreteSpec, Rule,
};

use crate::failure::{parse_count, Failure, Status};
use crate::manifest::Manifest;

#[derive(clap::Args, Debug)]
pub struct ToyArgs {
    /// Also simulate both chains for this many steps (accepts `1e6`).
    #[arg(long, value_parser = parse_count)]
    pub simulate: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Allowed max deviation of the probed pushforward from the target.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
    /// Write `toy_report.txt` and `manifest.txt` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl ToyArgs {
    fn params(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![
            ("seed", self.seed.to_string()),
            ("tolerance", self.tolerance.to_string()),
        ];
        if let Some(n) = self.simulate {
            p.push(("simulate", n.to_string()));
        }
        if let Some(d) = &self.out_dir {
            p.push(("out-dir", d.display().to_string()));
        }
        p
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12}")).collect();
    format!("({})", parts.join(", "))
}

fn fmt_matrix(out: &mut String, chain: &DiscreteChain) {
    for i in 0..chain.n_states() {
        let row: Vec<f64> = (0..chain.n_states()).map(|j| chain.entry(i, j)).collect();
        let _ = writeln!(out, "  {}", fmt_vec(&row));
    }
}

pub fn run(args: &ToyArgs) -> Result<Status, Failure> {
    if !(args.tolerance >= 0.0) {
        return Err(Failure::Usage("--tolerance must be non-negative".into()));
    }
    let mut manifest = Manifest::start("toy", args.params());
    let spec = DiscreteSpec::toy();
    let mut report = String::new();
    let _ = writeln!(report, "target f_Yd: {}", fmt_vec(spec.target()));
    let _ = writeln!(report, "probe f_Q: {}", fmt_vec(&spec.probe_density()));

    let mut modified_error = f64::INFINITY;
    let mut exact = Vec::new();
    for (name, rule) in [("naive", Rule::Naive), ("modified", Rule::Modified)] {
        let chain = match rule {
            Rule::Naive => build_naive_chain(&spec)?,
            Rule::Modified => build_modified_chain(&spec)?,
        };
        let pi = stationary_distribution(&chain)?;
        let push = pushforward(&pi, &spec);
        let error = push
            .iter()
            .zip(spec.target())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(report, "{name} transition matrix:");
        fmt_matrix(&mut report, &chain);
        let _ = writeln!(report, "{name} stationary: {}", fmt_vec(&pi));
        let _ = writeln!(report, "{name} pushforward: {}", fmt_vec(&push));
        let _ = writeln!(report, "{name} max |pushforward - target|: {error:e}");
        let _ = writeln!(
            report,
            "{name} detailed-balance residual: {:e}",
            detailed_balance_residual(&chain, &pi)?
        );
        if rule == Rule::Modified {
            modified_error = error;
        }
        exact.push((name, rule, pi));
    }

    if let Some(steps) = args.simulate {
        if steps == 0 {
            return Err(Failure::Usage(
                "--simulate needs a positive step count".into(),
            ));
        }
        for (name, rule, pi) in &exact {
            let freq = simulate(&spec, *rule, steps, 0, args.seed)?;
            let dev = freq
                .iter()
                .zip(pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let _ = writeln!(
                report,
                "{name} simulated ({steps} steps, seed {}): {}",
                args.seed,
                fmt_vec(&freq)
            );
            let _ = writeln!(report, "{name} max |simulated - exact|: {dev:e}");
        }
    }

    let pass = modified_error <= args.tolerance;
    let _ = writeln!(
        report,
        "modified pushforward within {:e} of target: {}",
        args.tolerance,
        if pass { "yes" } else { "no" }
    );
    print!("{report}");

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join("toy_report.txt");
        fs::write(&path, &report)
            .map_err(|e| Failure::io(format!("writing {}", path.display()), e))?;
        manifest.output(&path);
        manifest.write(&dir.join("manifest.txt"))?;
    }
    Ok(if pass {
        Status::Success
    } else {
        Status::CriteriaFailed
    })
}
