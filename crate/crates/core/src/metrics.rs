//! Objective evaluation: SI-SNR, log-spectral distance, external-command
//! score adapters and real-time-factor measurement.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use serde::Serialize;

use crate::audio_io::Waveform;
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};
use crate::model::{Model, Streamer};
use crate::nn::Scalar;
use crate::objectives::{q_normalize, QualityOracle};

/// Reporting cap for SI-SNR, in dB.
pub const SI_SNR_CAP_DB: f64 = 40.0;

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub si_snr_db: f64,
    pub lsd_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtf: Option<f64>,
}

/// Scale-invariant signal-to-noise ratio in dB, capped to +-40.
///
/// Both signals are zero-meaned; the target component is the projection of
/// the estimate onto the reference.
pub fn si_snr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Metric("empty signals".into()));
    }
    let n = est.len() as f64;
    let mean_e: f64 = est.samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_r: f64 = reference.samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let e: Vec<f64> = est.samples.iter().map(|&v| v as f64 - mean_e).collect();
    let r: Vec<f64> = reference.samples.iter().map(|&v| v as f64 - mean_r).collect();

    let rr: f64 = r.iter().map(|&v| v * v).sum();
    if rr <= 0.0 {
        return Err(Error::Metric("silent reference".into()));
    }
    let er: f64 = e.iter().zip(&r).map(|(&a, &b)| a * b).sum();
    let alpha = er / rr;
    let target_energy = alpha * alpha * rr;
    let error_energy: f64 = e
        .iter()
        .zip(&r)
        .map(|(&a, &b)| {
            let d = a - alpha * b;
            d * d
        })
        .sum();
    if target_energy <= 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    if error_energy <= 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    let ratio = 10.0 * (target_energy / error_energy).log10();
    Ok(ratio.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Log-spectral distance in dB: RMS over bins of the log magnitude ratio,
/// averaged over frames. Uses the 20 ms / 10 ms analysis at 48 kHz and the
/// rate's default config otherwise.
pub fn lsd(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Metric("length mismatch".into()));
    }
    let cfg = StftConfig::for_rate(reference.sample_rate)
        .unwrap_or(StftConfig {
            sample_rate: reference.sample_rate,
            window_ms: 20.0,
            hop_ms: 10.0,
        });
    let spec_e = stft::<f64>(est, &cfg)?;
    let spec_r = stft::<f64>(reference, &cfg)?;
    let eps = 1e-8;
    let mut frame_sum = 0.0;
    for t in 0..spec_r.n_frames {
        let mut bin_sum = 0.0;
        for f in 0..spec_r.n_bins {
            let le = 20.0 * ((spec_e.at(f, t).norm() + eps) / (spec_r.at(f, t).norm() + eps)).log10();
            bin_sum += le * le;
        }
        frame_sum += (bin_sum / spec_r.n_bins as f64).sqrt();
    }
    Ok(frame_sum / spec_r.n_frames.max(1) as f64)
}

/// External command adapter: a template with `{placeholder}` substitution
/// and a score pattern where `(float)` marks the number to capture.
///
/// The template is split on whitespace; no shell is involved.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    pub template: String,
    pub pattern: String,
}

impl CommandAdapter {
    pub fn new(template: impl Into<String>, pattern: impl Into<String>) -> Self {
        CommandAdapter {
            template: template.into(),
            pattern: pattern.into(),
        }
    }

    /// Runs the command with `{key}` placeholders substituted and parses the
    /// first score match from stdout (stderr as fallback).
    pub fn run(&self, substitutions: &[(&str, &str)]) -> Result<f64> {
        let mut parts: Vec<String> = Vec::new();
        for raw in self.template.split_whitespace() {
            let mut part = raw.to_string();
            for (key, value) in substitutions {
                part = part.replace(&format!("{{{key}}}"), value);
            }
            parts.push(part);
        }
        if parts.is_empty() {
            return Err(Error::Adapter("empty command template".into()));
        }
        let output = Command::new(&parts[0])
            .args(&parts[1..])
            .output()
            .map_err(|e| Error::Adapter(format!("failed to spawn {}: {e}", parts[0])))?;
        if !output.status.success() {
            return Err(Error::Adapter(format!(
                "{} exited with {}",
                parts[0], output.status
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        self.parse(&stdout).or_else(|_| self.parse(&stderr))
    }

    /// Applies the score pattern to text.
    pub fn parse(&self, text: &str) -> Result<f64> {
        let regex_src = regex::escape(&self.pattern).replace(
            &regex::escape("(float)"),
            r"([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)",
        );
        let re = regex::Regex::new(&regex_src)
            .map_err(|e| Error::Adapter(format!("bad score pattern: {e}")))?;
        let caps = re
            .captures(text)
            .ok_or_else(|| Error::Adapter(format!("no match for pattern {:?}", self.pattern)))?;
        caps.get(1)
            .ok_or_else(|| Error::Adapter("pattern has no (float) capture".into()))?
            .as_str()
            .parse::<f64>()
            .map_err(|e| Error::Adapter(format!("unparsable score: {e}")))
    }
}

/// Runs an external wide-band quality scorer on two WAV files and returns
/// the raw score.
pub fn external_pesq(
    est_path: impl AsRef<Path>,
    ref_path: impl AsRef<Path>,
    adapter: &CommandAdapter,
) -> Result<f64> {
    adapter.run(&[
        ("est", &est_path.as_ref().display().to_string()),
        ("ref", &ref_path.as_ref().display().to_string()),
    ])
}

/// Quality oracle backed by an external command; writes the signals to
/// temporary WAV files, runs the adapter and normalizes the raw score.
pub struct ExternalQualityOracle {
    pub adapter: CommandAdapter,
}

impl QualityOracle for ExternalQualityOracle {
    fn score(&self, est: &Waveform, reference: &Waveform) -> Result<f64> {
        let dir = std::env::temp_dir().join(format!(
            "bsrnn_oracle_{}_{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let est_path = dir.join("est.wav");
        let ref_path = dir.join("ref.wav");
        crate::audio_io::write_wav(&est_path, est, crate::audio_io::WavFormat::Float32)?;
        crate::audio_io::write_wav(&ref_path, reference, crate::audio_io::WavFormat::Float32)?;
        let raw = external_pesq(&est_path, &ref_path, &self.adapter);
        let _ = std::fs::remove_dir_all(&dir);
        Ok(q_normalize(raw?))
    }
}

/// Embedding-extractor hook: runs a command that reads `{wav}` and writes an
/// embedding file to `{out}`, then loads the vector.
pub fn extract_embedding(
    wav_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    adapter: &CommandAdapter,
) -> Result<crate::data::EnrollmentEmbedding> {
    adapter.run(&[
        ("wav", &wav_path.as_ref().display().to_string()),
        ("out", &out_path.as_ref().display().to_string()),
    ])?;
    crate::data::EnrollmentEmbedding::load(out_path)
}

/// Wall-clock streaming real-time factor: processing time divided by audio
/// duration, median of `runs >= 5` passes after one warmup.
pub fn measure_rtf<F: Scalar>(model: &Model<F>, duration_s: f64, runs: usize) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let runs = runs.max(5);
    let sr = model.config.sample_rate;
    let len = (duration_s * sr as f64).round() as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let x = Waveform::new((0..len).map(|_| rng.gen_range(-0.3..0.3)).collect(), sr);
    let hop = model.config.stft.hop_len();

    let one_pass = |model: &Model<F>| -> Result<f64> {
        let mut streamer = Streamer::new(model, None, Some(10.0))?;
        let mut input = vec![F::zero(); hop];
        let mut output = vec![F::zero(); hop];
        let start = Instant::now();
        for block in x.samples.chunks_exact(hop) {
            for (i, &v) in block.iter().enumerate() {
                input[i] = crate::nn::sc::<F>(v as f64);
            }
            streamer.process_block(&input, &mut output)?;
        }
        Ok(start.elapsed().as_secs_f64())
    };

    one_pass(model)?; // warmup
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        times.push(one_pass(model)?);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    Ok(median / duration_s)
}
