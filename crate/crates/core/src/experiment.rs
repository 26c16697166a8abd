//! Experiment configuration, the batch runner and its CSV reports.
//!
//! A config file (TOML) describes a grid of speech files, impulse responses,
//! loop gains and parameter sets; the grid expands into independent runs that
//! execute in parallel. Every launched run yields exactly one report row,
//! successful or not.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::adaptive::KalmanConfig;
use crate::audio::{load_wav, write_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::filterbank::FilterBankConfig;
use crate::loop_sim::{run_afc, FeedbackPath, GainSchedule, LoopConfig, SimulationResult, Verdict};
use crate::metrics::DistanceTrace;
use crate::phase_synth::PhaseSynthConfig;

/// One speech entry of the corpus.
#[derive(Debug, Clone, Deserialize)]
pub struct SpeechEntry {
    pub id: String,
    /// Cluster label, e.g. "male" / "female".
    pub group: String,
    pub path: PathBuf,
}

/// One impulse-response entry.
#[derive(Debug, Clone, Deserialize)]
pub struct IrEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub partitions: usize,
    pub partition_length: usize,
    pub transition: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            partitions: 4,
            partition_length: 512,
            transition: 0.99999,
        }
    }
}

fn default_duration() -> f64 {
    42.0
}

fn default_coupling() -> f64 {
    -10.0
}

fn default_ramp() -> f64 {
    2.0
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Grid description of a batch experiment.
#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_coupling")]
    pub coupling_db: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub speech: Vec<SpeechEntry>,
    pub ir: Vec<IrEntry>,
    /// Parameter set ids, 1..=11.
    pub sets: Vec<u8>,
    pub loop_gains_db: Vec<f64>,
    #[serde(default = "default_ramp")]
    pub ramp_s: f64,
    #[serde(default)]
    pub filter: FilterSection,
    /// Optional first-order high-pass cutoff applied to loaded IRs, Hz.
    #[serde(default)]
    pub ir_highpass_hz: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let config: ExperimentConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.speech.is_empty() || self.ir.is_empty() {
            return Err(Error::config("need at least one speech file and one IR"));
        }
        if self.sets.is_empty() || self.loop_gains_db.is_empty() {
            return Err(Error::config("need at least one set and one gain"));
        }
        for set in &self.sets {
            if !(1..=11).contains(set) {
                return Err(Error::config(format!("parameter set {set} outside 1..=11")));
            }
        }
        for entry in &self.speech {
            if !entry.path.exists() {
                return Err(Error::config(format!(
                    "speech file {} does not exist",
                    entry.path.display()
                )));
            }
        }
        for entry in &self.ir {
            if !entry.path.exists() {
                return Err(Error::config(format!(
                    "IR file {} does not exist",
                    entry.path.display()
                )));
            }
        }
        Ok(())
    }

    /// Expand the grid into independent run specifications.
    pub fn expand(&self) -> Vec<RunSpec> {
        let mut specs = Vec::new();
        for speech in &self.speech {
            for ir in &self.ir {
                for &gain_db in &self.loop_gains_db {
                    for &set in &self.sets {
                        specs.push(RunSpec {
                            speech: speech.clone(),
                            ir: ir.clone(),
                            gain_db,
                            set,
                            duration_s: self.duration_s,
                            coupling_db: self.coupling_db,
                            ramp_s: self.ramp_s,
                            filter: self.filter.clone(),
                            ir_highpass_hz: self.ir_highpass_hz,
                            out_dir: self.out_dir.clone(),
                        });
                    }
                }
            }
        }
        specs
    }
}

/// One fully resolved run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub speech: SpeechEntry,
    pub ir: IrEntry,
    pub gain_db: f64,
    pub set: u8,
    pub duration_s: f64,
    pub coupling_db: f64,
    pub ramp_s: f64,
    pub filter: FilterSection,
    pub ir_highpass_hz: Option<f64>,
    pub out_dir: PathBuf,
}

impl RunSpec {
    pub fn name(&self) -> String {
        format!(
            "{}_{}_set{}_gain{:+.0}dB",
            self.speech.id, self.ir.id, self.set, self.gain_db
        )
    }
}

/// One report row; a failed run carries its error message.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub speech_id: String,
    pub group: String,
    pub ir_id: String,
    pub gain_db: f64,
    pub set: u8,
    pub early_sd: Option<f64>,
    pub late_sd: Option<f64>,
    pub prediction_gain_db: Option<f64>,
    pub verdict: String,
    pub error: Option<String>,
}

/// Rows plus cluster aggregates of a finished batch.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub rows: Vec<RunRecord>,
    pub clusters: Vec<ClusterRow>,
}

/// Mean early/late distances over one (group, gain, set) cluster.
#[derive(Debug, Clone)]
pub struct ClusterRow {
    pub group: String,
    pub gain_db: f64,
    pub set: u8,
    pub runs: usize,
    pub stable_runs: usize,
    pub mean_early_sd: Option<f64>,
    pub mean_late_sd: Option<f64>,
}

/// First-order high-pass applied to IR taps (optional low-frequency EQ).
fn highpass_ir(taps: &[f64], cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
    let dt = 1.0 / sample_rate;
    let a = rc / (rc + dt);
    let mut out = Vec::with_capacity(taps.len());
    let mut y = 0.0;
    let mut x_prev = 0.0;
    for &x in taps {
        y = a * (y + x - x_prev);
        x_prev = x;
        out.push(y);
    }
    out
}

/// Execute one run: wire the loop, write the trace CSV and the enhanced
/// audio, and produce the report row.
pub fn run_experiment(spec: &RunSpec) -> Result<(SimulationResult, RunRecord)> {
    let speech = load_wav(&spec.speech.path)?;
    let mut ir = load_wav(&spec.ir.path)?;
    if let Some(cutoff) = spec.ir_highpass_hz {
        ir.samples = highpass_ir(&ir.samples, cutoff, ir.sample_rate as f64);
    }
    let path = FeedbackPath::new(ir.samples, spec.ir.id.clone())?;
    let bank = FilterBankConfig::new(256, 128, speech.sample_rate as f64)?;
    let config = LoopConfig {
        feedback: path,
        coupling_db: spec.coupling_db,
        processing_delay: 256,
        synth: PhaseSynthConfig::parameter_set(spec.set, bank)?,
        kalman: KalmanConfig::new(
            spec.filter.partitions,
            spec.filter.partition_length,
            spec.filter.transition,
        )?,
        gain: GainSchedule::ramped(spec.gain_db, spec.ramp_s),
        duration_s: spec.duration_s,
    };
    let result = run_afc(&config, &speech.samples)?;

    fs::create_dir_all(&spec.out_dir)?;
    let base = spec.out_dir.join(spec.name());
    write_trace_csv(base.with_extension("csv"), &result.distance, &result.verdict)?;
    write_wav(
        base.with_extension("wav"),
        &AudioBuffer {
            samples: result.enhanced.clone(),
            sample_rate: speech.sample_rate,
        },
    )?;

    let record = RunRecord {
        speech_id: spec.speech.id.clone(),
        group: spec.speech.group.clone(),
        ir_id: spec.ir.id.clone(),
        gain_db: spec.gain_db,
        set: spec.set,
        early_sd: result.early_distance(),
        late_sd: result.late_distance(),
        prediction_gain_db: None,
        verdict: verdict_string(&result.verdict),
        error: None,
    };
    Ok((result, record))
}

fn verdict_string(verdict: &Verdict) -> String {
    match verdict {
        Verdict::Stable => "stable".to_string(),
        Verdict::Unstable { t_s } => format!("unstable@{t_s:.2}s"),
    }
}

/// Run every spec (in parallel); failures become error rows, the batch
/// completes.
pub fn run_batch(specs: &[RunSpec]) -> Result<BatchReport> {
    if specs.is_empty() {
        return Err(Error::argument("batch has no runs"));
    }
    let rows: Vec<RunRecord> = specs
        .par_iter()
        .map(|spec| match run_experiment(spec) {
            Ok((_, record)) => record,
            Err(e) => RunRecord {
                speech_id: spec.speech.id.clone(),
                group: spec.speech.group.clone(),
                ir_id: spec.ir.id.clone(),
                gain_db: spec.gain_db,
                set: spec.set,
                early_sd: None,
                late_sd: None,
                prediction_gain_db: None,
                verdict: "error".to_string(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    let clusters = cluster_rows(&rows);
    Ok(BatchReport { rows, clusters })
}

/// Group rows by (speaker group, gain, set) and average the distances.
pub fn cluster_rows(rows: &[RunRecord]) -> Vec<ClusterRow> {
    let mut keys: Vec<(String, f64, u8)> = Vec::new();
    for row in rows {
        let key = (row.group.clone(), row.gain_db, row.set);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.2.cmp(&b.2))
    });
    keys.into_iter()
        .map(|(group, gain_db, set)| {
            let members: Vec<&RunRecord> = rows
                .iter()
                .filter(|r| r.group == group && r.gain_db == gain_db && r.set == set)
                .collect();
            let mean = |extract: fn(&RunRecord) -> Option<f64>| {
                let values: Vec<f64> = members.iter().filter_map(|r| extract(r)).collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            };
            ClusterRow {
                stable_runs: members
                    .iter()
                    .filter(|r| r.verdict.starts_with("stable"))
                    .count(),
                runs: members.len(),
                mean_early_sd: mean(|r| r.early_sd),
                mean_late_sd: mean(|r| r.late_sd),
                group,
                gain_db,
                set,
            }
        })
        .collect()
}

/// Write a distance trace as `time_s,sd_linear,sd_db` rows with a final
/// status footer comment.
pub fn write_trace_csv(
    path: impl AsRef<Path>,
    trace: &DistanceTrace,
    verdict: &Verdict,
) -> Result<()> {
    let mut text = String::from("time_s,sd_linear,sd_db\n");
    for (t, sd) in trace.times.iter().zip(trace.sd.iter()) {
        let db = if *sd > 0.0 {
            20.0 * sd.log10()
        } else {
            f64::NEG_INFINITY
        };
        text.push_str(&format!("{t:.6},{sd:.9},{db:.4}\n"));
    }
    let status = match verdict {
        Verdict::Stable => "# status=stable".to_string(),
        Verdict::Unstable { t_s } => format!("# status=unstable t_fail_s={t_s:.3}"),
    };
    text.push_str(&status);
    text.push('\n');
    fs::write(path.as_ref(), text)?;
    Ok(())
}

const REPORT_HEADER: &str = "speech_id,group,ir_id,gain_db,set,early_sd,late_sd,g_p_db,verdict,error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Write per-run report rows.
pub fn write_report_csv(path: impl AsRef<Path>, rows: &[RunRecord]) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.speech_id,
            r.group,
            r.ir_id,
            r.gain_db,
            r.set,
            opt(r.early_sd),
            opt(r.late_sd),
            opt(r.prediction_gain_db),
            r.verdict,
            r.error.clone().unwrap_or_default()
        ));
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Read rows back (for re-aggregation).
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 {
            return Err(Error::Argument(format!(
                "report row {idx} has {} fields, expected at least 9",
                fields.len()
            )));
        }
        let parse_opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(RunRecord {
            speech_id: fields[0].to_string(),
            group: fields[1].to_string(),
            ir_id: fields[2].to_string(),
            gain_db: fields[3].parse().map_err(|_| {
                Error::Argument(format!("bad gain in report row {idx}: {}", fields[3]))
            })?,
            set: fields[4].parse().map_err(|_| {
                Error::Argument(format!("bad set in report row {idx}: {}", fields[4]))
            })?,
            early_sd: parse_opt(fields[5]),
            late_sd: parse_opt(fields[6]),
            prediction_gain_db: parse_opt(fields[7]),
            verdict: fields[8].to_string(),
            error: fields.get(9).filter(|s| !s.is_empty()).map(|s| s.to_string()),
        });
    }
    Ok(rows)
}

/// Write cluster aggregates.
pub fn write_cluster_csv(path: impl AsRef<Path>, clusters: &[ClusterRow]) -> Result<()> {
    let mut text = String::from("group,gain_db,set,runs,stable_runs,mean_early_sd,mean_late_sd\n");
    for c in clusters {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.group,
            c.gain_db,
            c.set,
            c.runs,
            c.stable_runs,
            opt(c.mean_early_sd),
            opt(c.mean_late_sd)
        ));
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}
