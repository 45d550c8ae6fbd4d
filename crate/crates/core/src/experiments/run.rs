use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{draw_model, perturb_model, DrawRanges, Range};
use super::h2::{frequency_response, log_grid, match_modes, H2Report};
use crate::error::{JmlsError, Result};
use crate::io::{save_dataset, save_model};
use crate::model::{generate_input, simulate};
use crate::psaem::{rb_psaem, OccupancyDivisor, PsaemConfig, StepSchedule};

pub const BODE_OMEGA_MIN: f64 = 1e-3;
pub const BODE_OMEGA_MAX: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    /// `n_z = 1`, `K = 2`.
    Example1,
    /// `n_z = 2`, `K = 3`.
    Example2,
}

impl Example {
    pub fn n_z(self) -> usize {
        match self {
            Example::Example1 => 1,
            Example::Example2 => 2,
        }
    }

    pub fn k(self) -> usize {
        match self {
            Example::Example1 => 2,
            Example::Example2 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub example: Example,
    pub t_len: usize,
    pub n_particles: usize,
    pub n_iters: usize,
    pub n_repeats: usize,
    pub seed: u64,
    pub ranges: DrawRanges,
    /// Multiplicative perturbation of the truth giving `θ₀`.
    pub init_range: Range,
    pub input_pole: f64,
    pub schedule: StepSchedule,
    pub divisor: OccupancyDivisor,
    pub bode_points: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn example1() -> Self {
        Self {
            example: Example::Example1,
            t_len: 1000,
            n_particles: 3,
            n_iters: 1000,
            n_repeats: 7,
            seed: 1,
            ranges: DrawRanges::default(),
            init_range: Range::new(0.5, 1.5),
            input_pole: 0.9,
            schedule: StepSchedule::default(),
            divisor: OccupancyDivisor::Split,
            bode_points: 200,
            out_dir: PathBuf::from("out/example1"),
        }
    }

    pub fn example2() -> Self {
        Self {
            example: Example::Example2,
            t_len: 2000,
            n_iters: 300,
            n_repeats: 1,
            init_range: Range::new(0.6, 1.4),
            out_dir: PathBuf::from("out/example2"),
            ..Self::example1()
        }
    }

    pub fn for_example(example: Example) -> Self {
        match example {
            Example::Example1 => Self::example1(),
            Example::Example2 => Self::example2(),
        }
    }

    /// Long data lengths: T=3000 for example 1, T=8000 for example 2.
    pub fn full_scale(mut self) -> Self {
        self.t_len = match self.example {
            Example::Example1 => 3000,
            Example::Example2 => 8000,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(JmlsError::InvalidArgument(msg));
        if self.t_len < 2 {
            return bad(format!("T = {} too short", self.t_len));
        }
        if self.n_particles < 2 {
            return bad("at least 2 particles are required".into());
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be at least 1".into());
        }
        if self.n_iters == 0 {
            return bad("n_iters must be at least 1".into());
        }
        self.init_range.validate("init")?;
        if self.init_range.lo <= 0.0 {
            return bad("init perturbation range must be positive".into());
        }
        if !(self.input_pole.abs() < 1.0) {
            return bad(format!(
                "input pole {} must satisfy |pole| < 1",
                self.input_pole
            ));
        }
        self.ranges.validate()?;
        self.schedule.validate()
    }
}

/// Independent stream per repeat: the base seed selects the key and the
/// repeat index the ChaCha stream.
pub fn repeat_rng(seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub repeat: usize,
    /// H₂ report of `θ₀`.
    pub initial: H2Report,
    /// Mean matched H₂ error of `θ_k`, `k = 1..n_iters`.
    pub mean_h2: Vec<f64>,
    pub last: H2Report,
}

impl RepeatSummary {
    pub fn first_iterate(&self) -> f64 {
        self.mean_h2[0]
    }

    pub fn final_iterate(&self) -> f64 {
        *self.mean_h2.last().expect("at least one iteration")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub repeats: Vec<RepeatSummary>,
    pub files: Vec<PathBuf>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "inf".into()
    }
}

fn repeat_path(dir: &Path, repeat: usize, what: &str) -> PathBuf {
    dir.join(format!("repeat_{:02}_{what}", repeat + 1))
}

fn run_repeat(cfg: &ExperimentConfig, repeat: usize) -> Result<(RepeatSummary, Vec<PathBuf>)> {
    let dir = &cfg.out_dir;
    let k = cfg.example.k();
    let mut rng = repeat_rng(cfg.seed, repeat);
    let truth = draw_model(&mut rng, cfg.example.n_z(), k, &cfg.ranges);
    let u = generate_input(cfg.t_len, 1, cfg.input_pole, &mut rng)?;
    let (data, _) = simulate(&truth, &u, &mut rng)?;
    let init = perturb_model(&mut rng, &truth, cfg.init_range);
    let initial = match_modes(&truth, &init)?;

    let files = vec![
        repeat_path(dir, repeat, "truth.json"),
        repeat_path(dir, repeat, "init.json"),
        repeat_path(dir, repeat, "data.csv"),
        repeat_path(dir, repeat, "iterates.csv"),
        repeat_path(dir, repeat, "final.json"),
    ];
    save_model(&files[0], &truth)?;
    save_model(&files[1], &init)?;
    save_dataset(&files[2], &data)?;

    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(&files[3])?));
    let mut header = vec!["k".to_string(), "gamma_k".into(), "mean_h2".into()];
    header.extend((1..=k).map(|n| format!("h2_mode{n}")));
    header.push("n_unstable".into());
    out.write_record(&header)?;

    let psaem_cfg = PsaemConfig {
        n_particles: cfg.n_particles,
        n_iters: cfg.n_iters,
        schedule: cfg.schedule,
        divisor: cfg.divisor,
        history_cap: 0,
    };
    let mut curve = Vec::with_capacity(cfg.n_iters);
    let mut last = initial.clone();
    let mut failure = None;
    let state = rb_psaem(init.clone(), &data, &psaem_cfg, &mut rng, |rep| {
        if failure.is_some() {
            return;
        }
        let step = match_modes(&truth, rep.theta).and_then(|r| {
            let mut rec = vec![rep.k.to_string(), rep.gamma.to_string(), fmt_f64(r.mean)];
            rec.extend(r.per_mode.iter().map(|&e| fmt_f64(e)));
            rec.push(r.n_unstable.to_string());
            out.write_record(&rec)?;
            Ok(r)
        });
        match step {
            Ok(r) => {
                curve.push(r.mean);
                last = r;
            }
            Err(e) => failure = Some(e),
        }
    });
    out.flush()?;
    drop(out);
    if let Some(e) = failure {
        return Err(e);
    }
    let state = state?;
    save_model(&files[4], &state.theta.permuted(&last.permutation))?;
    Ok((
        RepeatSummary {
            repeat,
            initial,
            mean_h2: curve,
            last,
        },
        files,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub n_finite: usize,
}

fn aggregate(repeats: &[RepeatSummary], n_iters: usize) -> Vec<AggregateRow> {
    (0..n_iters)
        .map(|i| {
            let vals: Vec<f64> = repeats
                .iter()
                .map(|r| r.mean_h2[i])
                .filter(|v| v.is_finite())
                .collect();
            let n = vals.len();
            let mean = if n == 0 {
                f64::INFINITY
            } else {
                vals.iter().sum::<f64>() / n as f64
            };
            let std = if n < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AggregateRow {
                k: i + 1,
                mean,
                std,
                n_finite: n,
            }
        })
        .collect()
}

fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(
        file,
        "# absolute H2 error (not normalized by the true system norm); mean and sample std over repeats with a finite value"
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["k", "mean", "std", "n_finite"])?;
    for r in rows {
        w.write_record(&[
            r.k.to_string(),
            fmt_f64(r.mean),
            r.std.to_string(),
            r.n_finite.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse()
        .map_err(|e| JmlsError::Parse(format!("'{s}': {e}")))
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(File::open(path)?));
    r.records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| {
                rec.get(i)
                    .ok_or_else(|| JmlsError::Parse("short aggregate row".into()))
            };
            Ok(AggregateRow {
                k: field(0)?
                    .parse()
                    .map_err(|_| JmlsError::Parse("bad k".into()))?,
                mean: parse_f64(field(1)?)?,
                std: parse_f64(field(2)?)?,
                n_finite: field(3)?
                    .parse()
                    .map_err(|_| JmlsError::Parse("bad n_finite".into()))?,
            })
        })
        .collect()
}

/// `(k, mean_h2)` pairs from a per-repeat iterate file.
pub fn read_repeat_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    r.records()
        .map(|rec| {
            let rec = rec?;
            let k = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| JmlsError::Parse("bad k".into()))?;
            let v = parse_f64(
                rec.get(2)
                    .ok_or_else(|| JmlsError::Parse("short row".into()))?,
            )?;
            Ok((k, v))
        })
        .collect()
}

fn write_bode(path: &Path, cfg: &ExperimentConfig, repeats: &[RepeatSummary]) -> Result<()> {
    let grid = log_grid(BODE_OMEGA_MIN, BODE_OMEGA_MAX, cfg.bode_points);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["repeat", "model", "mode", "omega", "magnitude", "phase"])?;
    for rep in repeats {
        let load = |what: &str| crate::io::load_model(&repeat_path(&cfg.out_dir, rep.repeat, what));
        let truth = load("truth.json")?;
        let init = load("init.json")?;
        let fin = load("final.json")?;
        for (label, model) in [("true", &truth), ("estimated", &fin), ("initial", &init)] {
            for (n, mode) in model.modes.iter().enumerate() {
                for &omega in &grid {
                    let (mag, phase) = match frequency_response(mode, omega) {
                        Some(g) => (g[(0, 0)].norm(), g[(0, 0)].arg()),
                        None => (f64::INFINITY, f64::NAN),
                    };
                    w.write_record(&[
                        (rep.repeat + 1).to_string(),
                        label.to_string(),
                        (n + 1).to_string(),
                        omega.to_string(),
                        fmt_f64(mag),
                        phase.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs every repeat, then writes `aggregate.csv` and `bode.csv`.
///
/// Repeats run in parallel, each with its own random stream, so the output
/// does not depend on the thread count. Files of completed repeats are kept
/// when another repeat fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let results: Vec<Result<(RepeatSummary, Vec<PathBuf>)>> = (0..cfg.n_repeats)
        .into_par_iter()
        .map(|r| run_repeat(cfg, r))
        .collect();
    let mut repeats = Vec::with_capacity(cfg.n_repeats);
    let mut files = Vec::new();
    for res in results {
        let (summary, f) = res?;
        repeats.push(summary);
        files.extend(f);
    }
    let agg_path = cfg.out_dir.join("aggregate.csv");
    write_aggregate(&agg_path, &aggregate(&repeats, cfg.n_iters))?;
    files.push(agg_path);
    let bode_path = cfg.out_dir.join("bode.csv");
    write_bode(&bode_path, cfg, &repeats)?;
    files.push(bode_path);
    Ok(ExperimentSummary { repeats, files })
}
