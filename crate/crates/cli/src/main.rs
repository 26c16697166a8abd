//! Command-line runner: apply phase programs to audio, sweep prediction
//! gains, run closed-loop feedback-cancellation experiments and aggregate
//! batch reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use afclab_core::adaptive::{flms_predictor, KalmanConfig};
use afclab_core::audio::{load_wav, write_wav, AudioBuffer};
use afclab_core::experiment::{
    cluster_rows, read_report_csv, run_batch, write_cluster_csv, write_report_csv,
    write_trace_csv, ExperimentConfig,
};
use afclab_core::filterbank::FilterBankConfig;
use afclab_core::loop_sim::{run_afc, FeedbackPath, GainSchedule, LoopConfig, Verdict};
use afclab_core::metrics::prediction_gain;
use afclab_core::phase_synth::{PhaseSynthConfig, SynthStream};
use afclab_core::signal::{generate, synthetic_room_ir, SignalKind};

#[derive(Parser)]
#[command(
    name = "afclab",
    version,
    about = "Acoustic feedback cancellation lab: phase programs, adaptive filters, closed-loop experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Input WAV file (16 kHz mono/stereo, PCM16 or float32).
    #[arg(long = "in", value_name = "WAV")]
    input: Option<PathBuf>,
    /// Synthesize the input instead: noise | sine:<hz> | sweep | vowels | speech.
    #[arg(long, value_name = "KIND", conflicts_with = "input")]
    synth: Option<String>,
    /// Duration of synthesized input in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Seed for all stochastic components.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl InputArgs {
    fn resolve(&self) -> Result<AudioBuffer> {
        if let Some(path) = &self.input {
            return Ok(load_wav(path)?);
        }
        let kind = match self.synth.as_deref() {
            None => bail!("provide --in <wav> or --synth <kind>"),
            Some("noise") => SignalKind::WhiteNoise,
            Some("sweep") => SignalKind::Sweep,
            Some("vowels") => SignalKind::VowelSequence,
            Some("speech") => SignalKind::SpeechLike,
            Some(s) if s.starts_with("sine:") => {
                let hz: f64 = s["sine:".len()..]
                    .parse()
                    .with_context(|| format!("bad sine frequency in {s:?}"))?;
                SignalKind::Sine { hz }
            }
            Some(other) => bail!("unknown synth kind {other:?}"),
        };
        Ok(generate(kind, self.duration, 16_000.0, self.seed)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Apply a phase-modification parameter set to audio and write a WAV.
    Fx {
        #[command(flatten)]
        input: InputArgs,
        /// Parameter set 1..=11.
        #[arg(long)]
        set: u8,
        /// Output WAV path.
        #[arg(long, default_value = "fx_out.wav")]
        out: PathBuf,
        /// Filter-bank DFT size.
        #[arg(long, default_value_t = 256)]
        dft_size: usize,
        /// Filter-bank frame shift (N/2 or N/4).
        #[arg(long, default_value_t = 128)]
        frame_shift: usize,
    },
    /// Prediction-gain sweep over delays and predictor lengths.
    Predict {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated delay values in samples.
        #[arg(long, default_value = "0,4,16,64,256")]
        delays: String,
        /// Comma-separated predictor lengths in samples.
        #[arg(long, default_value = "16,128,512")]
        lengths: String,
        /// Normalized step size of the adaptive predictor.
        #[arg(long, default_value_t = 0.4)]
        step: f64,
        /// Output CSV path.
        #[arg(long, default_value = "prediction_gain.csv")]
        out: PathBuf,
    },
    /// Single closed-loop feedback-cancellation run.
    Afc {
        #[command(flatten)]
        input: InputArgs,
        /// Room impulse response WAV; synthesized when omitted.
        #[arg(long, value_name = "WAV")]
        ir: Option<PathBuf>,
        /// Parameter set 1..=11.
        #[arg(long, default_value_t = 1)]
        set: u8,
        /// Final loop gain in dB.
        #[arg(long, default_value_t = 0.0)]
        gain_db: f64,
        /// Acoustic coupling target in dB (negative).
        #[arg(long, default_value_t = -10.0)]
        coupling_db: f64,
        /// Gain ramp duration in seconds.
        #[arg(long, default_value_t = 2.0)]
        ramp_s: f64,
        /// Output directory for trace CSV and enhanced audio.
        #[arg(long, default_value = "afc_out")]
        out_dir: PathBuf,
    },
    /// Run a batch experiment described by a config file.
    Batch {
        /// TOML experiment description.
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-aggregate a report CSV into cluster means.
    Report {
        /// Per-run report rows (written by `batch`).
        #[arg(long)]
        rows: PathBuf,
        /// Output CSV for cluster means; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad {what} value {s:?}"))
        })
        .collect()
}

fn cmd_fx(
    input: &InputArgs,
    set: u8,
    out: &Path,
    dft_size: usize,
    frame_shift: usize,
) -> Result<()> {
    let buffer = input.resolve()?;
    let bank = FilterBankConfig::new(dft_size, frame_shift, buffer.sample_rate as f64)?;
    let config = PhaseSynthConfig::parameter_set(set, bank)?;
    let processed = SynthStream::process(config, &buffer.samples)?;
    write_wav(
        out,
        &AudioBuffer {
            samples: processed,
            sample_rate: buffer.sample_rate,
        },
    )?;
    println!(
        "fx: set {set} applied to {} samples -> {}",
        buffer.samples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_predict(
    input: &InputArgs,
    delays: &str,
    lengths: &str,
    step: f64,
    out: &Path,
) -> Result<()> {
    let buffer = input.resolve()?;
    let delays = parse_list(delays, "delay")?;
    let lengths = parse_list(lengths, "length")?;
    if delays.is_empty() || lengths.is_empty() {
        bail!("need at least one delay and one length");
    }
    let skip = (2.0 * buffer.sample_rate as f64) as usize;
    let mut csv = String::from("delay,length,g_p_db\n");
    println!("{:>8} {:>8} {:>10}", "delay", "length", "g_p [dB]");
    for &length in &lengths {
        for &delay in &delays {
            let solution = flms_predictor(&buffer.samples, delay, length, step)?;
            let n = solution.error.len();
            let report = prediction_gain(&buffer.samples[..n], &solution.error, skip.min(n / 2))?;
            csv.push_str(&format!("{delay},{length},{:.4}\n", report.gain_db));
            println!("{delay:>8} {length:>8} {:>10.2}", report.gain_db);
        }
    }
    std::fs::write(out, csv)?;
    println!("predict: wrote {}", out.display());
    Ok(())
}

fn cmd_afc(
    input: &InputArgs,
    ir: Option<&Path>,
    set: u8,
    gain_db: f64,
    coupling_db: f64,
    ramp_s: f64,
    out_dir: &Path,
) -> Result<()> {
    let speech = match (&input.input, &input.synth) {
        (None, None) => generate(SignalKind::SpeechLike, 42.0, 16_000.0, input.seed)?,
        _ => input.resolve()?,
    };
    let path = match ir {
        Some(p) => FeedbackPath::new(load_wav(p)?.samples, p.display().to_string())?,
        None => FeedbackPath::new(
            synthetic_room_ir(1024, speech.sample_rate as f64, input.seed.wrapping_add(1)),
            "synthetic",
        )?,
    };
    let bank = FilterBankConfig::new(256, 128, speech.sample_rate as f64)?;
    let config = LoopConfig {
        feedback: path,
        coupling_db,
        processing_delay: 256,
        synth: PhaseSynthConfig::parameter_set(set, bank)?,
        kalman: KalmanConfig::afc_default(),
        gain: GainSchedule::ramped(gain_db, ramp_s),
        duration_s: speech.duration_s(),
    };
    let result = run_afc(&config, &speech.samples)?;

    std::fs::create_dir_all(out_dir)?;
    let base = out_dir.join(format!("afc_set{set}_gain{gain_db:+.0}dB"));
    write_trace_csv(base.with_extension("csv"), &result.distance, &result.verdict)?;
    write_wav(
        base.with_extension("wav"),
        &AudioBuffer {
            samples: result.enhanced.clone(),
            sample_rate: speech.sample_rate,
        },
    )?;

    match result.verdict {
        Verdict::Stable => println!("afc: stable over the full run"),
        Verdict::Unstable { t_s } => println!("afc: UNSTABLE at {t_s:.2} s"),
    }
    if let Some(early) = result.early_distance() {
        println!("afc: early sd [4,6]s   = {early:.4} ({:.1} dB)", 20.0 * early.log10());
    }
    if let Some(late) = result.late_distance() {
        println!("afc: late  sd [20,41]s = {late:.4} ({:.1} dB)", 20.0 * late.log10());
    }
    println!("afc: outputs under {}", out_dir.display());
    Ok(())
}

fn cmd_batch(config_path: &Path) -> Result<bool> {
    let config = ExperimentConfig::from_toml_file(config_path)?;
    let specs = config.expand();
    println!("batch: {} runs", specs.len());
    let report = run_batch(&specs)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let rows_path = config.out_dir.join("report.csv");
    let clusters_path = config.out_dir.join("clusters.csv");
    write_report_csv(&rows_path, &report.rows)?;
    write_cluster_csv(&clusters_path, &report.clusters)?;
    let failures = report.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "batch: {} ok, {} failed -> {}, {}",
        report.rows.len() - failures,
        failures,
        rows_path.display(),
        clusters_path.display()
    );
    Ok(failures == 0)
}

fn cmd_report(rows: &Path, out: Option<&Path>) -> Result<()> {
    let records = read_report_csv(rows)?;
    let clusters = cluster_rows(&records);
    match out {
        Some(path) => {
            write_cluster_csv(path, &clusters)?;
            println!("report: wrote {} clusters to {}", clusters.len(), path.display());
        }
        None => {
            println!(
                "{:>8} {:>8} {:>4} {:>5} {:>7} {:>11} {:>11}",
                "group", "gain_db", "set", "runs", "stable", "early_sd", "late_sd"
            );
            for c in &clusters {
                let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or("-".into());
                println!(
                    "{:>8} {:>8} {:>4} {:>5} {:>7} {:>11} {:>11}",
                    c.group,
                    c.gain_db,
                    c.set,
                    c.runs,
                    c.stable_runs,
                    fmt(c.mean_early_sd),
                    fmt(c.mean_late_sd)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fx {
            input,
            set,
            out,
            dft_size,
            frame_shift,
        } => cmd_fx(input, *set, out, *dft_size, *frame_shift).map(|_| true),
        Command::Predict {
            input,
            delays,
            lengths,
            step,
            out,
        } => cmd_predict(input, delays, lengths, *step, out).map(|_| true),
        Command::Afc {
            input,
            ir,
            set,
            gain_db,
            coupling_db,
            ramp_s,
            out_dir,
        } => cmd_afc(
            input,
            ir.as_deref(),
            *set,
            *gain_db,
            *coupling_db,
            *ramp_s,
            out_dir,
        )
        .map(|_| true),
        Command::Batch { config } => cmd_batch(config),
        Command::Report { rows, out } => cmd_report(rows, out.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
