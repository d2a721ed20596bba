//! End-to-end tests of the `bsrnn` binary: simulate -> train -> enhance ->
//! eval round trips, determinism, audit files, exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use bsrnn_core::audio_io::{read_wav, write_wav, Waveform, WavFormat};
use bsrnn_core::data::EnrollmentEmbedding;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bsrnn"))
}

fn write_noise(path: &Path, len: usize, sr: u32, seed: u64) {
    // xorshift-ish deterministic noise, no rand dependency needed here
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    let samples: Vec<f32> = (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 11) as f64 / (1u64 << 53) as f64 * 0.8 - 0.4) as f32
        })
        .collect();
    write_wav(path, &Waveform::new(samples, sr), WavFormat::Float32).unwrap();
}

fn setup_workspace(dir: &Path) -> PathBuf {
    let sr = 16_000u32;
    write_noise(&dir.join("speech.wav"), 2 * sr as usize, sr, 1);
    write_noise(&dir.join("speech2.wav"), sr as usize, sr, 2);
    write_noise(&dir.join("noise.wav"), 2 * sr as usize, sr, 3);
    write_noise(&dir.join("intf.wav"), sr as usize, sr, 4);
    let mut rir = vec![0.0f32; 32];
    rir[0] = 1.0;
    rir[9] = 0.3;
    write_wav(&dir.join("rir.wav"), &Waveform::new(rir, sr), WavFormat::Float32).unwrap();
    EnrollmentEmbedding::new((1..=8).map(|i| i as f32 * 0.1).collect(), "spk")
        .unwrap()
        .save(dir.join("spk.emb"))
        .unwrap();

    std::fs::write(
        dir.join("catalog.jsonl"),
        concat!(
            "{\"kind\": \"speech\", \"path\": \"speech.wav\", \"speaker_id\": \"spk\", \"embedding_path\": \"spk.emb\"}\n",
            "{\"kind\": \"speech\", \"path\": \"speech2.wav\", \"speaker_id\": \"spk\", \"embedding_path\": \"spk.emb\"}\n",
            "{\"kind\": \"noise\", \"path\": \"noise.wav\"}\n",
            "{\"kind\": \"interferer\", \"path\": \"intf.wav\"}\n",
            "{\"kind\": \"rir\", \"path\": \"rir.wav\"}\n",
        ),
    )
    .unwrap();

    let config_path = dir.join("toy.toml");
    std::fs::write(
        &config_path,
        (r#"[model]
sample_rate = 16000
n_feat = 8
num_blocks = 1
lstm_hidden = 16
mlp_hidden = 16
causal = true
personalized = false
embed_dim = 8
band_edges = [0, 32, 64, 96, 128, 160, 192, 224, 257]
split_band = 6
init_seed = 1

[stft]
window_ms = 32.0
hop_ms = 8.0

[simulation]
snr_db = [0.0, 10.0]
sir_db = [0.0, 10.0]
rir_prob = 0.2
mix_proportions = [0.5, 0.3, 0.2]
segment_s = 1.0
seed = 7

[training]
phase = "pretrain_mr"
lr0 = 1e-3
lr_decay = 0.98
lr_decay_every = 20000
clip_norm = 5.0
max_iters = 6
early_stop_window = 20000
batch_size = 1
validation_every = 3
validation_examples = 1
seed = 1
single_resolution_finetune = false

[data]
catalog = "{CATALOG}"
"#)
        .replace("{CATALOG}", &dir.join("catalog.jsonl").display().to_string()),
    )
    .unwrap();
    config_path
}

fn max_sample_diff(a: &Path, b: &Path) -> f32 {
    let wa = read_wav(a).unwrap();
    let wb = read_wav(b).unwrap();
    assert_eq!(wa.len(), wb.len());
    wa.samples
        .iter()
        .zip(&wb.samples)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn full_round_trip_simulate_train_enhance_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_workspace(dir.path());

    // simulate
    let sim_dir = dir.path().join("sim");
    let status = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "simulate"])
        .args(["--count", "2", "--out-dir", &sim_dir.display().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(sim_dir.join("mixture_0.wav").exists());
    assert!(sim_dir.join("target_0.wav").exists());
    assert!(sim_dir.join("draws.jsonl").exists());

    // train
    let run_dir = dir.path().join("run");
    let out = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "train"])
        .args(["--out-dir", &run_dir.display().to_string()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let outcome: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("train prints a JSON outcome");
    assert_eq!(outcome["completed_iters"], 6);
    let best = run_dir.join("best.bsrnn");
    assert!(best.exists());
    assert!(run_dir.join("train_log.jsonl").exists());

    // enhance, batch and stream: equal within 1e-5 per sample
    let enhanced = dir.path().join("enhanced.wav");
    let streamed = dir.path().join("streamed.wav");
    let mixture = sim_dir.join("mixture_0.wav");
    assert!(bin()
        .args(["--config", &config.display().to_string(), "--quiet", "enhance"])
        .args([&best, &mixture, &enhanced])
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["--config", &config.display().to_string(), "--quiet", "enhance"])
        .args([&best, &mixture, &streamed])
        .arg("--stream")
        .status()
        .unwrap()
        .success());
    let diff = max_sample_diff(&enhanced, &streamed);
    assert!(diff <= 1e-5, "batch vs stream via CLI: {diff}");

    // eval pins: identical files give the SI-SNR cap and zero LSD
    let out = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "eval"])
        .args([&mixture, &mixture])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["si_snr_db"], 40.0);
    assert!(report["lsd_db"].as_f64().unwrap().abs() < 1e-9);

    // rtf on the trained causal checkpoint
    let out = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "rtf"])
        .arg(&best)
        .args(["--seconds", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let rtf: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(rtf["rtf"].as_f64().unwrap() > 0.0);

    // inspect
    let out = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "inspect"])
        .arg(&best)
        .output()
        .unwrap();
    assert!(out.status.success());
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(info["tensor_count"].as_u64().unwrap() > 0);
    assert_eq!(info["meta"]["iter"], 6);
}

#[test]
fn simulate_is_deterministic_and_audited() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_workspace(dir.path());

    // audit-friendly settings: no RIR, noise-only, so the noise component
    // can be recovered from the emitted files
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("rir_prob = 0.2", "rir_prob = 0.0")
        .replace("mix_proportions = [0.5, 0.3, 0.2]", "mix_proportions = [1.0, 0.0, 0.0]");
    let audit_config = dir.path().join("audit.toml");
    std::fs::write(&audit_config, text).unwrap();

    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        assert!(bin()
            .args(["--config", &audit_config.display().to_string(), "--quiet", "simulate"])
            .args(["--count", "4", "--out-dir", &out_dir.display().to_string()])
            .status()
            .unwrap()
            .success());
        out_dir
    };
    let a = run("sim_a");
    let b = run("sim_b");
    for i in 0..4 {
        let fa = std::fs::read(a.join(format!("mixture_{i}.wav"))).unwrap();
        let fb = std::fs::read(b.join(format!("mixture_{i}.wav"))).unwrap();
        assert_eq!(fa, fb, "mixture_{i} differs between identical runs");
    }
    assert_eq!(
        std::fs::read(a.join("draws.jsonl")).unwrap(),
        std::fs::read(b.join("draws.jsonl")).unwrap()
    );

    // recompute achieved SNR from the emitted files
    let audit = std::fs::read_to_string(a.join("draws.jsonl")).unwrap();
    for line in audit.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let snr = record["draws"]["snr_db"].as_f64().unwrap();
        let mixture = read_wav(a.join(record["mixture"].as_str().unwrap())).unwrap();
        let target = read_wav(a.join(record["target"].as_str().unwrap())).unwrap();
        let noise_energy: f64 = mixture
            .samples
            .iter()
            .zip(&target.samples)
            .map(|(&m, &t)| ((m - t) as f64).powi(2))
            .sum();
        let achieved = 10.0 * (target.energy() / noise_energy).log10();
        assert!(
            (achieved - snr).abs() <= 0.01,
            "drawn {snr} dB vs achieved {achieved} dB"
        );
    }
}

#[test]
fn simulate_category_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_workspace(dir.path());
    let out_dir = dir.path().join("sim_many");
    assert!(bin()
        .args(["--config", &config.display().to_string(), "--quiet", "simulate"])
        .args(["--count", "1000", "--out-dir", &out_dir.display().to_string()])
        .arg("--personalized")
        .status()
        .unwrap()
        .success());
    let audit = std::fs::read_to_string(out_dir.join("draws.jsonl")).unwrap();
    let mut counts = [0usize; 3];
    for line in audit.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        match record["draws"]["category"].as_str().unwrap() {
            "noise_only" => counts[0] += 1,
            "noise_and_interferer" => counts[1] += 1,
            "interferer_only" => counts[2] += 1,
            other => panic!("unknown category {other}"),
        }
    }
    let total = 1000.0;
    assert!((counts[0] as f64 / total - 0.5).abs() < 0.05);
    assert!((counts[1] as f64 / total - 0.3).abs() < 0.05);
    assert!((counts[2] as f64 / total - 0.2).abs() < 0.05);
}

#[test]
fn macs_reports_full_band_budget() {
    let dir = tempfile::tempdir().unwrap();
    // default full-band model, personalized + causal, straight from config
    let config = dir.path().join("full.toml");
    std::fs::write(
        &config,
        "[model]\nsample_rate = 48000\nn_feat = 96\nnum_blocks = 6\nlstm_hidden = 192\n\
         mlp_hidden = 384\ncausal = true\npersonalized = true\nembed_dim = 256\n\n\
         [stft]\nwindow_ms = 20.0\nhop_ms = 10.0\n",
    )
    .unwrap();
    let out = bin()
        .args(["--config", &config.display().to_string(), "--quiet", "macs"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total = report["total_per_second"].as_f64().unwrap();
    assert!(
        (8.8e9..=20.6e9).contains(&total),
        "full-band MACs budget {total}"
    );
    for key in ["band_split", "band_level", "sequence_level", "mask_mlp"] {
        assert!(report[key].as_u64().unwrap() > 0, "missing breakdown {key}");
    }
}

#[test]
fn exit_codes() {
    // clap usage errors exit 2
    let status = bin().arg("no-such-command").status().unwrap();
    assert_eq!(status.code(), Some(2));

    // missing config file is a usage error
    let status = bin()
        .args(["--config", "/nonexistent/nope.toml", "--quiet", "macs"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // runtime failure (unreadable checkpoint) exits 1
    let status = bin()
        .args(["--quiet", "inspect", "/nonexistent/model.bsrnn"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // reject unknown config keys
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nsample_rate = 16000\nbogus_key = 1\n").unwrap();
    let out = bin()
        .args(["--config", &bad.display().to_string(), "--quiet", "macs"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn config_echo_and_hash_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_workspace(dir.path());
    let grab_hash = || {
        let out = bin()
            .args(["--config", &config.display().to_string(), "macs"])
            .output()
            .unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr).to_string();
        stderr
            .lines()
            .find(|l| l.contains("sha256"))
            .map(|l| l.to_string())
            .expect("config hash echoed")
    };
    assert_eq!(grab_hash(), grab_hash());
}
