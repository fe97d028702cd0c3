//! SNR sweeps over the enabled HARQ modes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{build_frames, SceneSet, TrainFrame};
use crate::error::Result;
use crate::harq::{throughput, BaseSystem, Draw, Environment, Judge, Mode, SessionLog, SimSystem};
use crate::link::Link;
use crate::stats::{mean, std_dev};

use super::train::Artifacts;
use super::ExperimentConfig;

/// Header of `metrics.csv`.
pub const METRICS_HEADER: [&str; 10] = [
    "mode",
    "snr_db",
    "beta",
    "sessions",
    "mean_s",
    "se_s",
    "mean_loss",
    "throughput",
    "mean_rounds",
    "ack_rate",
];

/// Header of `sessions.csv`.
pub const SESSIONS_HEADER: [&str; 11] = [
    "mode",
    "snr_db",
    "beta",
    "session",
    "rounds",
    "ack_round",
    "selected",
    "final_s",
    "final_loss",
    "s_hat",
    "s_true",
];

/// Header of `rounds.csv`.
pub const ROUNDS_HEADER: [&str; 5] = ["mode", "snr_db", "beta", "rounds", "count"];

/// Cyclic shift of the second repetition copy, in symbols.
pub const BASE_COPY_SHIFT: usize = 1024;

/// Aggregate of the sessions at one (mode, SNR, β) point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMetrics {
    pub mode: Mode,
    pub snr_db: f64,
    /// NaN for the baselines, which have no detector.
    pub beta: f64,
    pub sessions: usize,
    pub mean_s: f64,
    /// Standard error of `mean_s`.
    pub se_s: f64,
    pub mean_loss: f64,
    pub throughput: f64,
    pub mean_rounds: f64,
    pub ack_rate: f64,
    /// Sessions ending after `t` rounds, at index `t − 1`.
    pub round_hist: Vec<usize>,
}

impl PointMetrics {
    pub fn from_logs(mode: Mode, snr_db: f64, beta: f64, max_rounds: usize, logs: &[SessionLog]) -> Self {
        let s: Vec<f64> = logs.iter().map(|l| l.final_s).collect();
        let n = logs.len();
        let mut round_hist = vec![0; max_rounds];
        for l in logs {
            round_hist[l.rounds - 1] += 1;
        }
        PointMetrics {
            mode,
            snr_db,
            beta,
            sessions: n,
            mean_s: mean(&s),
            se_s: if n > 1 { std_dev(&s) / (n as f64).sqrt() } else { f64::NAN },
            mean_loss: mean(&logs.iter().map(|l| l.final_loss).collect::<Vec<_>>()),
            throughput: throughput(logs),
            mean_rounds: mean(&logs.iter().map(|l| l.rounds as f64).collect::<Vec<_>>()),
            ack_rate: logs.iter().filter(|l| l.ack_round.is_some()).count() as f64 / n as f64,
            round_hist,
        }
    }
}

/// Output of a sweep, in the order written.
pub struct SweepResult {
    pub points: Vec<PointMetrics>,
    pub sessions: Vec<SessionLog>,
}

impl SweepResult {
    pub fn point(&self, mode: Mode, snr_db: f64, beta: Option<f64>) -> Option<&PointMetrics> {
        self.points
            .iter()
            .find(|p| p.mode == mode && p.snr_db == snr_db && beta.is_none_or(|b| p.beta == b))
    }

    pub fn logs(&self, mode: Mode, snr_db: f64, beta: Option<f64>) -> Vec<&SessionLog> {
        self.sessions
            .iter()
            .filter(|l| l.mode == mode && l.snr_db == snr_db && beta.is_none_or(|b| l.beta == b))
            .collect()
    }
}

/// β values run for `mode`: the configured list for the semantic HARQ
/// modes, the detector threshold for no-HARQ, none for the baselines.
fn betas(cfg: &ExperimentConfig, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Sim1 | Mode::Sim2 => cfg.betas.clone(),
        Mode::NoHarq => vec![cfg.detector.beta],
        Mode::Base1 | Mode::Base2 => vec![f64::NAN],
    }
}

/// Frames of the sweep: semantic frames with pooled confidence, and
/// baseline frames at the baseline's feature budget.
pub fn sweep_frames(cfg: &ExperimentConfig, base: &BaseSystem) -> Result<(Vec<TrainFrame>, Vec<TrainFrame>)> {
    let head = cfg.scene.head::<f64>();
    let pool = (cfg.scorer.pool[0], cfg.scorer.pool[1]);
    let sem = build_frames(
        &cfg.scene,
        &head,
        cfg.codec.cr,
        cfg.seed,
        SceneSet::Sweep,
        cfg.sessions,
        Some(pool),
    )?;
    let needs_base = cfg.modes.iter().any(|m| !m.is_semantic());
    let base_frames = if needs_base {
        let cr = base.layout.cr(cfg.scene.cells());
        build_frames(&cfg.scene, &head, cr, cfg.seed, SceneSet::Sweep, cfg.sessions, None)?
    } else {
        Vec::new()
    };
    Ok((sem, base_frames))
}

/// Runs every enabled mode at every SNR point. Sessions at the same index
/// and SNR share scene, fading and noise draws across modes and β.
pub fn run(cfg: &ExperimentConfig, models: &Artifacts) -> Result<SweepResult> {
    cfg.validate()?;
    let geometry = models.pair1.geometry();
    let base = BaseSystem::new(geometry.n_cu, cfg.harq.base_order, cfg.scene.channels, BASE_COPY_SHIFT)?;
    let (sem_frames, base_frames) = sweep_frames(cfg, &base)?;
    let link = Link::<f64>::new(&cfg.ofdm, models.pair1.power())?;
    let env = Environment {
        ofdm: &cfg.ofdm,
        channel: &cfg.channel,
        link: &link,
        interval: cfg.harq.interval,
        master: cfg.seed,
        s_cap: cfg.scorer.s_cap,
    };
    let sim = SimSystem {
        pair1: &models.pair1,
        pair2: Some(&models.pair2),
        judge: Judge::Scorer(&models.scorer),
    };
    let max_rounds = cfg.harq.max_rounds;
    let mut points = Vec::new();
    let mut sessions = Vec::new();
    for &mode in &cfg.modes {
        for (pi, &snr) in cfg.snr_db.iter().enumerate() {
            for beta in betas(cfg, mode) {
                let logs: Vec<SessionLog> = (0..cfg.sessions)
                    .into_par_iter()
                    .map(|i| {
                        let draw = Draw {
                            session: i as u64,
                            point: pi as u64,
                        };
                        if mode.is_semantic() {
                            sim.run(&env, mode, &sem_frames[i], snr, beta, max_rounds, draw)
                        } else {
                            base.run(&env, mode, &base_frames[i], snr, max_rounds, draw)
                        }
                    })
                    .collect::<Result<_>>()?;
                points.push(PointMetrics::from_logs(mode, snr, beta, mode.limit(max_rounds), &logs));
                sessions.extend(logs);
            }
        }
    }
    Ok(SweepResult { points, sessions })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

/// Writes `metrics.csv`, `sessions.csv`, `rounds.csv` and `plot.gp`.
pub fn write(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = writer(dir, "metrics.csv")?;
    w.write_record(METRICS_HEADER)?;
    for p in &result.points {
        w.write_record([
            p.mode.to_string(),
            p.snr_db.to_string(),
            num(p.beta),
            p.sessions.to_string(),
            num(p.mean_s),
            num(p.se_s),
            num(p.mean_loss),
            num(p.throughput),
            num(p.mean_rounds),
            num(p.ack_rate),
        ])?;
    }
    w.flush()?;

    let mut w = writer(dir, "rounds.csv")?;
    w.write_record(ROUNDS_HEADER)?;
    for p in &result.points {
        for (t, c) in p.round_hist.iter().enumerate() {
            w.write_record([
                p.mode.to_string(),
                p.snr_db.to_string(),
                num(p.beta),
                (t + 1).to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = writer(dir, "sessions.csv")?;
    w.write_record(SESSIONS_HEADER)?;
    for l in &result.sessions {
        w.write_record([
            l.mode.to_string(),
            l.snr_db.to_string(),
            num(l.beta),
            l.session.to_string(),
            l.rounds.to_string(),
            l.ack_round.map_or(String::new(), |t| t.to_string()),
            l.selected.to_string(),
            l.final_s.to_string(),
            l.final_loss.to_string(),
            list(&l.s_hat),
            list(&l.s_true),
        ])?;
    }
    w.flush()?;

    let mut f = BufWriter::new(File::create(dir.join("plot.gp"))?);
    f.write_all(plot_script(result).as_bytes())?;
    Ok(f.flush()?)
}

/// Gnuplot script drawing mean S, task loss and throughput over SNR from
/// `metrics.csv`, one curve per (mode, β).
pub fn plot_script(result: &SweepResult) -> String {
    let mut curves: Vec<(Mode, f64)> = Vec::new();
    for p in &result.points {
        if !curves
            .iter()
            .any(|&(m, b)| m == p.mode && (b == p.beta || (b.is_nan() && p.beta.is_nan())))
        {
            curves.push((p.mode, p.beta));
        }
    }
    let mut s = String::from(
        "# gnuplot -p plot.gp\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'SNR (dB)'\n\
         set grid\n\
         set terminal pngcairo size 900,600\n",
    );
    for (col, name, ylabel) in [
        (5, "mean_s", "mean similarity S"),
        (7, "mean_loss", "task loss"),
        (8, "throughput", "throughput"),
    ] {
        s.push_str(&format!("\nset output '{name}.png'\nset ylabel '{ylabel}'\nplot \\\n"));
        let lines: Vec<String> = curves
            .iter()
            .map(|(m, b)| {
                let (cond, title) = if b.is_nan() {
                    (format!("strcol(1) eq '{m}'"), m.to_string())
                } else {
                    (format!("strcol(1) eq '{m}' && $3 == {b}"), format!("{m} beta={b}"))
                };
                format!("  'metrics.csv' every ::1 using 2:({cond} ? ${col} : 1/0) with linespoints title '{title}'")
            })
            .collect();
        s.push_str(&lines.join(", \\\n"));
        s.push('\n');
    }
    s
}
