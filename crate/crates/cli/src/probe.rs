//! `probe`: uniform inputs through a built-in model or an external process.
//!
//! External protocol: the child reads one whitespace-separated input vector
//! per line on stdin and writes one output vector per line on stdout.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;

use anyhow::anyhow;
use clap::ValueEnum;
use inverse_mcmc::analysis::write_metrics;
use inverse_mcmc::models::{IdentityModel, SquareModel};
use inverse_mcmc::probing::{finish_probe, uniform_probe, ProbeRun};
use inverse_mcmc::{chain_rng, ForwardModel, InputBox};
use rayon::prelude::*;

use crate::failure::{parse_count, Failure, Status};
use crate::manifest::{join, Manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BuiltinModel {
    Square,
    Identity,
}

#[derive(clap::Args, Debug)]
pub struct ProbeArgs {
    /// Built-in model.
    #[arg(
        long,
        value_enum,
        conflicts_with = "command",
        required_unless_present = "command"
    )]
    pub model: Option<BuiltinModel>,
    /// External model, run through `sh -c`.
    #[arg(long)]
    pub command: Option<String>,
    /// Lower box corner; one value is repeated over `--dim` coordinates.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    pub lower: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    pub upper: Vec<f64>,
    /// Input dimension when both corners are given as single values.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Probe CSV; the summary and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

impl ProbeArgs {
    fn params(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        if let Some(m) = self.model {
            p.push((
                "model",
                m.to_possible_value()
                    .map(|v| v.get_name().to_string())
                    .unwrap_or_default(),
            ));
        }
        if let Some(c) = &self.command {
            p.push(("command", c.clone()));
        }
        p.push(("lower", join(&self.lower)));
        p.push(("upper", join(&self.upper)));
        if let Some(d) = self.dim {
            p.push(("dim", d.to_string()));
        }
        p.push(("count", self.count.to_string()));
        p.push(("seed", self.seed.to_string()));
        p.push(("out", self.out.display().to_string()));
        p
    }

    fn input_box(&self) -> Result<InputBox, Failure> {
        let n = self
            .dim
            .unwrap_or_else(|| self.lower.len().max(self.upper.len()));
        let widen = |v: &[f64], name: &str| -> Result<Vec<f64>, Failure> {
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                len if len == n => Ok(v.to_vec()),
                len => Err(Failure::Usage(format!(
                    "--{name} has {len} values, expected 1 or {n}"
                ))),
            }
        };
        if n == 0 {
            return Err(Failure::Usage("--dim must be positive".into()));
        }
        Ok(InputBox::new(
            widen(&self.lower, "lower")?,
            widen(&self.upper, "upper")?,
        )?)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn format_input(x: &[f64]) -> String {
    x.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_output(line: &str, line_no: usize) -> Result<Vec<f64>, Failure> {
    let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Failure::Run(anyhow!(
            "external model output line {line_no} is malformed: {line:?}"
        ))),
    }
}

/// Runs one child process over a contiguous shard of the inputs.
/// `first_line` is the 1-based line number of the shard's first input.
fn run_shard(
    command: &str,
    inputs: &[Vec<f64>],
    first_line: usize,
) -> Result<Vec<Vec<f64>>, Failure> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Failure::Run(anyhow!("cannot start external model: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let text: String = inputs.iter().map(|x| format_input(x) + "\n").collect();
    // a separate writer avoids a deadlock when the child fills its stdout pipe
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(text.as_bytes());
    });
    let mut out = String::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_string(&mut out)
        .map_err(|e| Failure::Run(anyhow!("reading external model output: {e}")))?;
    let _ = writer.join();
    let status = child
        .wait()
        .map_err(|e| Failure::Run(anyhow!("waiting for external model: {e}")))?;
    if !status.success() {
        return Err(Failure::Run(anyhow!(
            "external model exited with {status} on input lines {}..{}",
            first_line,
            first_line + inputs.len().saturating_sub(1)
        )));
    }
    let lines: Vec<&str> = out.lines().collect();
    if lines.len() != inputs.len() {
        return Err(Failure::Run(anyhow!(
            "external model wrote {} output lines for input lines {}..{}; expected {}",
            lines.len(),
            first_line,
            first_line + inputs.len().saturating_sub(1),
            inputs.len()
        )));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_output(l, first_line + i))
        .collect()
}

/// Same input stream as [`uniform_probe`], evaluated by external processes,
/// one per shard. Shard boundaries do not affect the result.
fn external_probe(
    command: &str,
    bounds: &InputBox,
    count: usize,
    seed: u64,
) -> Result<ProbeRun, Failure> {
    let mut rng = chain_rng(seed);
    let inputs: Vec<Vec<f64>> = (0..count).map(|_| bounds.sample(&mut rng)).collect();
    let shards = rayon::current_num_threads().clamp(1, count);
    let size = count.div_ceil(shards);
    let outputs: Vec<Vec<Vec<f64>>> = inputs
        .par_chunks(size)
        .enumerate()
        .map(|(k, chunk)| run_shard(command, chunk, k * size + 1))
        .collect::<Result<_, _>>()?;
    let outputs: Vec<Vec<f64>> = outputs.into_iter().flatten().collect();
    let dim = outputs[0].len();
    if let Some(i) = outputs.iter().position(|y| y.len() != dim) {
        return Err(Failure::Run(anyhow!(
            "external model output line {} has {} values; line 1 has {dim}",
            i + 1,
            outputs[i].len()
        )));
    }
    Ok(finish_probe(
        dim,
        inputs,
        outputs.into_iter().map(Ok).collect(),
    )?)
}

/// Per-dimension mean, sd, min, max and the dropped-row count.
fn summary(run: &ProbeRun) -> Vec<(String, f64)> {
    let m = &run.outputs;
    let n = m.n_rows() as f64;
    let mut out = vec![
        ("rows".to_string(), n),
        ("dropped".to_string(), run.dropped.len() as f64),
    ];
    for d in 0..m.dim() {
        let mean = m.column(d).sum::<f64>() / n;
        let var = if n > 1.0 {
            m.column(d).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let k = d + 1;
        out.push((format!("y{k}_mean"), mean));
        out.push((format!("y{k}_sd"), var.sqrt()));
        out.push((
            format!("y{k}_min"),
            m.column(d).fold(f64::INFINITY, f64::min),
        ));
        out.push((
            format!("y{k}_max"),
            m.column(d).fold(f64::NEG_INFINITY, f64::max),
        ));
    }
    out
}

pub fn run(args: &ProbeArgs) -> Result<Status, Failure> {
    if args.count == 0 {
        return Err(Failure::Usage("--count must be positive".into()));
    }
    let bounds = args.input_box()?;
    let mut manifest = Manifest::start("probe", args.params());
    let run = match (&args.command, args.model) {
        (Some(command), _) => external_probe(command, &bounds, args.count, args.seed)?,
        (None, Some(model)) => {
            let model: Box<dyn ForwardModel> = match model {
                BuiltinModel::Square => Box::new(SquareModel::new(bounds.dim())),
                BuiltinModel::Identity => Box::new(IdentityModel::new(bounds.dim())),
            };
            uniform_probe(model.as_ref(), &bounds, args.count, args.seed)?
        }
        (None, None) => return Err(Failure::Usage("give --model or --command".into())),
    };

    let file = File::create(&args.out)
        .map_err(|e| Failure::io(format!("creating {}", args.out.display()), e))?;
    run.outputs.write_csv(BufWriter::new(file))?;
    manifest.output(&args.out);

    let stats = summary(&run);
    let summary_path = sibling(&args.out, ".summary.csv");
    let file = File::create(&summary_path)
        .map_err(|e| Failure::io(format!("creating {}", summary_path.display()), e))?;
    write_metrics(BufWriter::new(file), &stats)?;
    manifest.output(&summary_path);
    for (name, value) in &stats {
        println!("{name},{value}");
    }
    for d in &run.dropped {
        eprintln!("dropped probe {}: {}", d.index + 1, d.reason);
    }
    manifest.write(&sibling(&args.out, ".manifest"))?;
    Ok(Status::Success)
}
