//! Evaluation metrics: prediction gain, the dense Wiener predictor oracle,
//! normalized system distance with early/late aggregation, and a phase-slope
//! frequency estimator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Averaging window for the early system distance, seconds.
pub const EARLY_WINDOW_S: (f64, f64) = (4.0, 6.0);
/// Averaging window for the late system distance, seconds.
pub const LATE_WINDOW_S: (f64, f64) = (20.0, 41.0);

/// Prediction-gain report: g_p = 10*log10(var(s)/var(e)).
#[derive(Debug, Clone)]
pub struct PredictionReport {
    /// Gain in dB; +inf when the error variance is exactly zero.
    pub gain_db: f64,
    pub signal_variance: f64,
    pub error_variance: f64,
    /// Delay used by the predictor that produced `e` (metadata).
    pub delay: usize,
    /// Predictor length (metadata).
    pub predictor_length: usize,
}

fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64
}

/// Variance ratio of a signal and its prediction error, skipping the first
/// `skip` warm-up samples of both.
pub fn prediction_gain(s: &[f64], e: &[f64], skip: usize) -> Result<PredictionReport> {
    if s.len() != e.len() {
        return Err(Error::argument(format!(
            "signal and error lengths differ: {} vs {}",
            s.len(),
            e.len()
        )));
    }
    if skip >= s.len() {
        return Err(Error::argument(format!(
            "warm-up skip {skip} covers the whole signal of {} samples",
            s.len()
        )));
    }
    let sigma_s = variance(&s[skip..]);
    let sigma_e = variance(&e[skip..]);
    let gain_db = if sigma_e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sigma_s / sigma_e).log10()
    };
    Ok(PredictionReport {
        gain_db,
        signal_variance: sigma_s,
        error_variance: sigma_e,
        delay: 0,
        predictor_length: 0,
    })
}

/// Solve the dense normal equations for the optimal linear predictor of `s`
/// from `x`: (R_xx + loading I) h = r_xs, with biased (1/K) correlation
/// estimates and diagonal loading of 1e-8 * trace/N.
///
/// This is the brute-force reference the adaptive predictor is checked
/// against; it stays independent of any FFT machinery.
pub fn wiener_bias_oracle(x: &[f64], s: &[f64], taps: usize) -> Result<Vec<f64>> {
    if taps == 0 || taps > 64 {
        return Err(Error::argument(format!(
            "oracle supports 1..=64 taps, got {taps}"
        )));
    }
    if x.len() != s.len() {
        return Err(Error::argument("x and s must have equal length"));
    }
    if x.len() < 100 * taps {
        return Err(Error::argument(format!(
            "need at least {} samples for {taps} taps, got {}",
            100 * taps,
            x.len()
        )));
    }
    let k = x.len();
    let norm = 1.0 / k as f64;
    let mut r_xx = vec![0.0f64; taps];
    for (tau, r) in r_xx.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in tau..k {
            acc += x[t] * x[t - tau];
        }
        *r = acc * norm;
    }
    let mut r_xs = vec![0.0f64; taps];
    for (i, r) in r_xs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in i..k {
            acc += s[t] * x[t - i];
        }
        *r = acc * norm;
    }
    let loading = 1e-8 * r_xx[0].max(f64::MIN_POSITIVE);
    let mut m = DMatrix::from_fn(taps, taps, |i, j| r_xx[i.abs_diff(j)]);
    for i in 0..taps {
        m[(i, i)] += loading;
    }
    let rhs = DVector::from_row_slice(&r_xs);
    match m.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs).iter().copied().collect()),
        None => {
            let eigen = m.symmetric_eigenvalues();
            let max = eigen.iter().cloned().fold(f64::MIN, f64::max);
            let min = eigen.iter().cloned().fold(f64::MAX, f64::min);
            Err(Error::numeric(format!(
                "autocorrelation matrix not positive definite despite loading \
                 (eigenvalue range {min:.3e}..{max:.3e})"
            )))
        }
    }
}

/// Normalized L2 system distance ||h0 - h_hat|| / ||h0||.
///
/// The shorter vector is zero-padded; the result is invariant to common
/// scaling of both arguments.
pub fn system_distance(h0: &[f64], h_hat: &[f64]) -> Result<f64> {
    let norm0_sq: f64 = h0.iter().map(|v| v * v).sum();
    if norm0_sq == 0.0 {
        return Err(Error::argument("reference response is all-zero"));
    }
    let len = h0.len().max(h_hat.len());
    let mut err_sq = 0.0;
    for i in 0..len {
        let a = h0.get(i).copied().unwrap_or(0.0);
        let b = h_hat.get(i).copied().unwrap_or(0.0);
        err_sq += (a - b) * (a - b);
    }
    Ok((err_sq / norm0_sq).sqrt())
}

/// Per-block system-distance trace with its time base.
#[derive(Debug, Clone, Default)]
pub struct DistanceTrace {
    /// Block end times in seconds (L*l / f_a).
    pub times: Vec<f64>,
    /// Linear system distance per block.
    pub sd: Vec<f64>,
}

impl DistanceTrace {
    pub fn push(&mut self, time_s: f64, sd: f64) {
        self.times.push(time_s);
        self.sd.push(sd);
    }

    pub fn len(&self) -> usize {
        self.sd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sd.is_empty()
    }

    /// Mean over a closed time window; `None` when the trace does not cover
    /// the window end.
    pub fn window_mean(&self, window: (f64, f64)) -> Option<f64> {
        let (start, end) = window;
        if self.times.last().copied().unwrap_or(f64::NEG_INFINITY) < end {
            return None;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, v) in self.times.iter().zip(self.sd.iter()) {
            if *t >= start && *t <= end {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            None
        } else {
            Some(sum / count as f64)
        }
    }

    /// Early mean over [4, 6] s.
    pub fn early(&self) -> Option<f64> {
        self.window_mean(EARLY_WINDOW_S)
    }

    /// Late mean over [20, 41] s.
    pub fn late(&self) -> Option<f64> {
        self.window_mean(LATE_WINDOW_S)
    }
}

/// Early and late window means of a trace.
pub fn aggregate_trace(trace: &DistanceTrace) -> (Option<f64>, Option<f64>) {
    (trace.early(), trace.late())
}

/// Phase-slope frequency estimate.
#[derive(Debug, Clone, Copy)]
pub struct FrequencyEstimate {
    pub hz: f64,
    /// Set when the input is not dominated by a single spectral peak.
    pub low_confidence: bool,
}

/// Estimate the dominant frequency of a near-sinusoidal signal from the mean
/// phase slope of its analytic signal over the final `window_s` seconds.
pub fn dominant_frequency(signal: &[f64], sample_rate: f64, window_s: f64) -> Result<FrequencyEstimate> {
    if window_s < 0.5 {
        return Err(Error::argument(format!(
            "analysis window must be at least 0.5 s, got {window_s}"
        )));
    }
    let want = (window_s * sample_rate) as usize;
    if signal.len() < want {
        return Err(Error::argument(format!(
            "signal of {} samples is shorter than the {want}-sample window",
            signal.len()
        )));
    }
    let mut seg = signal[signal.len() - want..].to_vec();
    if seg.len() % 2 == 1 {
        seg.pop();
    }
    let n = seg.len();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = seg.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);

    // Peak concentration over positive frequencies decides confidence.
    let total: f64 = buf[..n / 2 + 1].iter().map(|b| b.norm_sqr()).sum();
    let (peak_bin, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .map(|(i, b)| (i + 1, b.norm_sqr()))
        .fold((1usize, 0.0f64), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    let lo = peak_bin.saturating_sub(3).max(1);
    let hi = (peak_bin + 3).min(n / 2 - 1);
    let peak_energy: f64 = buf[lo..=hi].iter().map(|b| b.norm_sqr()).sum();
    let low_confidence = total <= 0.0 || peak_energy / total.max(f64::MIN_POSITIVE) < 0.5;

    // Analytic signal: zero negative frequencies, double positives.
    for b in buf.iter_mut().take(n / 2).skip(1) {
        *b *= 2.0;
    }
    for b in buf.iter_mut().skip(n / 2 + 1) {
        *b = Complex64::new(0.0, 0.0);
    }
    ifft.process(&mut buf);

    // Mean phase slope over the central 80% avoids edge effects.
    let margin = n / 10;
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in margin..n - margin - 1 {
        let d = buf[k + 1] * buf[k].conj();
        acc += d.arg();
        count += 1;
    }
    let hz = acc / count.max(1) as f64 * sample_rate / (2.0 * std::f64::consts::PI);
    Ok(FrequencyEstimate { hz, low_confidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    #[test]
    fn prediction_gain_identity_error() {
        let s = noise(10_000, 1);
        let report = prediction_gain(&s, &s, 100).unwrap();
        assert!(report.gain_db.abs() < 1e-12);
    }

    #[test]
    fn prediction_gain_scaled_error() {
        let s = noise(10_000, 2);
        let e: Vec<f64> = s.iter().map(|v| v * 10.0f64.powf(-0.5)).collect();
        let report = prediction_gain(&s, &e, 0).unwrap();
        assert!((report.gain_db - 10.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_gain_zero_error_is_infinite() {
        let s = noise(1000, 3);
        let e = vec![0.0; 1000];
        let report = prediction_gain(&s, &e, 0).unwrap();
        assert!(report.gain_db.is_infinite());
    }

    #[test]
    fn prediction_gain_scale_law() {
        let s = noise(4096, 4);
        for c in [0.5, 2.0, 3.7] {
            let e: Vec<f64> = s.iter().map(|v| v * c).collect();
            let report = prediction_gain(&s, &e, 17).unwrap();
            assert!((report.gain_db + 20.0 * c.log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_recovers_pure_delay() {
        let x = noise(20_000, 5);
        let mut s = vec![0.0; x.len()];
        s[2..].copy_from_slice(&x[..x.len() - 2]);
        let h = wiener_bias_oracle(&x, &s, 4).unwrap();
        let expected = [0.0, 0.0, 1.0, 0.0];
        for (a, b) in h.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-2, "taps {h:?}");
        }
    }

    #[test]
    fn oracle_independent_signals_give_zero() {
        let x = noise(120_000, 6);
        let s = noise(120_000, 7);
        let h = wiener_bias_oracle(&x, &s, 4).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-2), "taps {h:?}");
    }

    #[test]
    fn oracle_identifies_fir_system() {
        let x = noise(40_000, 8);
        let mut s = vec![0.0; x.len()];
        for k in 1..x.len() {
            s[k] = 0.5 * x[k] - 0.25 * x[k - 1];
        }
        s[0] = 0.5 * x[0];
        let h = wiener_bias_oracle(&x, &s, 4).unwrap();
        let expected = [0.5, -0.25, 0.0, 0.0];
        for (a, b) in h.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-2, "taps {h:?}");
        }
    }

    #[test]
    fn oracle_is_scale_consistent() {
        let x = noise(10_000, 9);
        let mut s = vec![0.0; x.len()];
        for k in 1..x.len() {
            s[k] = 0.3 * x[k - 1];
        }
        let h1 = wiener_bias_oracle(&x, &s, 8).unwrap();
        let s2: Vec<f64> = s.iter().map(|v| v * 5.0).collect();
        let h2 = wiener_bias_oracle(&x, &s2, 8).unwrap();
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert!((5.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_input_validation() {
        let x = noise(1000, 10);
        assert!(wiener_bias_oracle(&x, &x, 65).is_err());
        assert!(wiener_bias_oracle(&x, &x, 32).is_err()); // too short
        assert!(wiener_bias_oracle(&x[..999], &x, 4).is_err());
    }

    #[test]
    fn system_distance_basics() {
        let h0 = vec![1.0, -0.5, 0.25];
        assert_eq!(system_distance(&h0, &h0).unwrap(), 0.0);
        assert_eq!(system_distance(&h0, &[]).unwrap(), 1.0);
        let double: Vec<f64> = h0.iter().map(|v| 2.0 * v).collect();
        assert!((system_distance(&h0, &double).unwrap() - 1.0).abs() < 1e-12);
        assert!(system_distance(&[0.0, 0.0], &h0).is_err());
    }

    #[test]
    fn system_distance_padding_and_scaling_invariance() {
        let h0 = vec![0.3, 0.1, -0.2];
        let h1 = vec![0.25, 0.05, -0.1, 0.0, 0.0];
        let d1 = system_distance(&h0, &h1).unwrap();
        let h0s: Vec<f64> = h0.iter().map(|v| v * 7.0).collect();
        let h1s: Vec<f64> = h1.iter().map(|v| v * 7.0).collect();
        let d2 = system_distance(&h0s, &h1s).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn trace_window_means() {
        let mut trace = DistanceTrace::default();
        let dt = 0.032;
        let mut t = 0.0;
        while t <= 42.0 {
            trace.push(t, if t < 10.0 { 1.0 } else { 0.1 });
            t += dt;
        }
        let (early, late) = aggregate_trace(&trace);
        assert!((early.unwrap() - 1.0).abs() < 1e-12);
        assert!((late.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn trace_short_run_has_no_late_value() {
        let mut trace = DistanceTrace::default();
        for i in 0..100 {
            trace.push(i as f64 * 0.1, 0.5);
        }
        assert!(trace.early().is_some());
        assert!(trace.late().is_none());
    }

    #[test]
    fn constant_trace_means() {
        let mut trace = DistanceTrace::default();
        for i in 0..1500 {
            trace.push(i as f64 * 0.032, 0.5);
        }
        let (early, late) = aggregate_trace(&trace);
        assert!((early.unwrap() - 0.5).abs() < 1e-12);
        assert!((late.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_frequency_pure_sine() {
        let fs = 16_000.0;
        let x: Vec<f64> = (0..16_000)
            .map(|k| (2.0 * std::f64::consts::PI * 2000.0 * k as f64 / fs).sin())
            .collect();
        let est = dominant_frequency(&x, fs, 1.0).unwrap();
        assert!((est.hz - 2000.0).abs() < 0.1, "got {}", est.hz);
        assert!(!est.low_confidence);
    }

    #[test]
    fn dominant_frequency_dc_flags_low_confidence() {
        let x = vec![0.8; 16_000];
        let est = dominant_frequency(&x, 16_000.0, 1.0).unwrap();
        assert!(est.low_confidence);
    }

    #[test]
    fn dominant_frequency_broadband_flags_low_confidence() {
        let x = noise(16_000, 11);
        let est = dominant_frequency(&x, 16_000.0, 1.0).unwrap();
        assert!(est.low_confidence);
    }

    #[test]
    fn dominant_frequency_window_validation() {
        let x = noise(16_000, 12);
        assert!(dominant_frequency(&x, 16_000.0, 0.25).is_err());
        assert!(dominant_frequency(&x[..100], 16_000.0, 1.0).is_err());
    }
}
