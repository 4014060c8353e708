use std::fmt::Write as _;
use std::path::Path;

use anyhow::bail;
use semtlc_core::agent::eval_seed;
use semtlc_core::sim::run_fixed_time;
use semtlc_core::{EpisodeMetrics, ObsMode};

use crate::commands::{cmd_train, create_file, ensure_dir};
use crate::config::RunConfig;
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Static,
    DrlImage,
    XaiDrlSemantic,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Static, Method::DrlImage, Method::XaiDrlSemantic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Static => "Static",
            Method::DrlImage => "DRL-image",
            Method::XaiDrlSemantic => "XAI-DRL-semantic",
        }
    }

    pub fn obs_mode(self) -> Option<ObsMode> {
        match self {
            Method::Static => None,
            Method::DrlImage => Some(ObsMode::Image),
            Method::XaiDrlSemantic => Some(ObsMode::Semantic),
        }
    }

    /// Travel time, delay, training time (s) and bytes per step of the
    /// published case study, shown next to measured values for scale.
    pub fn reference(self) -> (f64, f64, Option<f64>, Option<u64>) {
        match self {
            Method::Static => (32.95, 20.68, None, None),
            Method::DrlImage => (23.30, 11.06, Some(24.29), Some(24_580)),
            Method::XaiDrlSemantic => (21.09, 8.82, Some(11.65), Some(20)),
        }
    }
}

/// Outcome of one method on one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub method: Method,
    pub seed: u64,
    pub outcome: Result<SeedMetrics, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedMetrics {
    pub metrics: EpisodeMetrics,
    pub wall_time_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: Method,
    /// Seeds that completed.
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub avg_travel_time: Option<f64>,
    pub avg_delay: Option<f64>,
    pub training_wall_time: Option<f64>,
    pub comm_bytes_per_step: Option<u64>,
    pub total_comm_bytes: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub per_seed: Vec<SeedResult>,
}

impl ComparisonTable {
    pub fn row(&self, method: Method) -> &ComparisonRow {
        self.rows.iter().find(|r| r.method == method).expect("every method has a row")
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.failed_seeds.is_empty())
    }

    pub fn aggregate(per_seed: Vec<SeedResult>) -> Self {
        let rows = Method::ALL
            .iter()
            .map(|&method| {
                let results: Vec<&SeedResult> = per_seed.iter().filter(|r| r.method == method).collect();
                let ok: Vec<(u64, SeedMetrics)> = results
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().ok().map(|m| (r.seed, *m)))
                    .collect();
                let failed_seeds = results.iter().filter(|r| r.outcome.is_err()).map(|r| r.seed).collect();
                let mean = |f: &dyn Fn(&SeedMetrics) -> Option<f64>| {
                    let v: Vec<f64> = ok.iter().filter_map(|(_, m)| f(m)).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                let per_step = method.obs_mode().map(|m| m.payload_bytes() as u64);
                let steps: u64 = ok.iter().map(|(_, m)| m.metrics.total_steps).sum();
                ComparisonRow {
                    method,
                    seeds: ok.iter().map(|(s, _)| *s).collect(),
                    failed_seeds,
                    avg_travel_time: mean(&|m| Some(m.metrics.avg_travel_time)),
                    avg_delay: mean(&|m| Some(m.metrics.avg_delay)),
                    training_wall_time: mean(&|m| m.wall_time_seconds),
                    comm_bytes_per_step: per_step,
                    total_comm_bytes: per_step.map(|b| b * steps),
                }
            })
            .collect();
        Self { rows, per_seed }
    }

    /// `comparison.csv`: reproducible columns only, wall times excluded.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "method",
            "avg_travel_time_s",
            "avg_delay_s",
            "comm_bytes_per_step",
            "total_comm_bytes",
            "seeds",
            "failed_seeds",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                opt(r.avg_travel_time),
                opt(r.avg_delay),
                opt(r.comm_bytes_per_step),
                opt(r.total_comm_bytes),
                join(&r.seeds),
                join(&r.failed_seeds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `per_seed.csv`: one line per method and seed, wall times excluded.
    pub fn write_per_seed_csv<W: std::io::Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["method", "seed", "avg_travel_time_s", "avg_delay_s", "vehicles_completed", "error"])?;
        for r in &self.per_seed {
            let (travel, delay, done, err) = match &r.outcome {
                Ok(m) => (
                    m.metrics.avg_travel_time.to_string(),
                    m.metrics.avg_delay.to_string(),
                    m.metrics.vehicles_completed.to_string(),
                    String::new(),
                ),
                Err(e) => (String::new(), String::new(), String::new(), e.clone()),
            };
            w.write_record([r.method.name().to_string(), r.seed.to_string(), travel, delay, done, err])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `timings.csv`: training wall time per learned method and seed.
    pub fn write_timings_csv<W: std::io::Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["method", "seed", "training_wall_time_s"])?;
        for r in &self.per_seed {
            if let Ok(SeedMetrics {
                wall_time_seconds: Some(t),
                ..
            }) = r.outcome
            {
                w.write_record([r.method.name().to_string(), r.seed.to_string(), t.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table with the reference figures alongside.
    pub fn render_text(&self) -> String {
        let header = [
            "method",
            "travel (s)",
            "delay (s)",
            "train (s)",
            "bytes/step",
            "total bytes",
            "seeds",
            "ref travel",
            "ref delay",
            "ref train",
            "ref bytes",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let (rt, rd, rtrain, rbytes) = r.method.reference();
            let mut seeds = join(&r.seeds);
            if !r.failed_seeds.is_empty() {
                seeds.push_str(&format!(" (FAILED {})", join(&r.failed_seeds)));
            }
            cells.push(vec![
                r.method.name().to_string(),
                fixed(r.avg_travel_time),
                fixed(r.avg_delay),
                fixed(r.training_wall_time),
                dash(r.comm_bytes_per_step),
                dash(r.total_comm_bytes),
                seeds,
                format!("{rt:.2}"),
                format!("{rd:.2}"),
                fixed(rtrain),
                dash(rbytes),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn join(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// Fixed-time baseline and both learned controllers on every seed. Each
/// seed's runs go to `out/seed_N/{image,semantic}`. Writes
/// `comparison.csv`, `per_seed.csv`, `timings.csv`, `table.txt` and
/// `manifest.json`. Returns an error after writing the partial table when any
/// sub-run failed.
pub fn cmd_compare(config: &RunConfig, seeds: &[u64], out: &Path) -> anyhow::Result<ComparisonTable> {
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    config.validate()?;
    ensure_dir(out)?;
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let outcome = run_fixed_time(&config.sim, config.static_split_steps, eval_seed(seed))
            .map(|metrics| SeedMetrics {
                metrics,
                wall_time_seconds: None,
            })
            .map_err(|e| e.to_string());
        per_seed.push(SeedResult {
            method: Method::Static,
            seed,
            outcome,
        });
        for method in [Method::DrlImage, Method::XaiDrlSemantic] {
            let mode = method.obs_mode().expect("learned method");
            let dir = out.join(format!("seed_{seed}")).join(mode.name());
            let outcome = cmd_train(config, mode, seed, &dir)
                .map(|(_, report)| SeedMetrics {
                    metrics: report.evaluation.metrics,
                    wall_time_seconds: Some(report.wall_time_seconds),
                })
                .map_err(|e| format!("{e:#}"));
            per_seed.push(SeedResult { method, seed, outcome });
        }
    }
    let table = ComparisonTable::aggregate(per_seed);
    table.write_csv(create_file(&out.join("comparison.csv"))?)?;
    table.write_per_seed_csv(create_file(&out.join("per_seed.csv"))?)?;
    table.write_timings_csv(create_file(&out.join("timings.csv"))?)?;
    std::fs::write(out.join("table.txt"), table.render_text())?;
    Manifest::new("compare", config, seeds, None).write(out)?;
    if table.has_failures() {
        bail!("some runs failed; see per_seed.csv");
    }
    Ok(table)
}
