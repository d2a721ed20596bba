//! Acceptance suite: one test per release criterion, each printing a
//! PASS line when its assertions hold. Run with
//! `cargo test -p bsrnn-core --test acceptance -- --nocapture`.

use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsrnn_core::audio_io::{write_wav, Waveform, WavFormat};
use bsrnn_core::data::{
    derive_example_seed, simulate_example, Catalog, CatalogRecord, EnrollmentEmbedding,
    MixCategory, SimulationConfig, SourceKind, SourcePool,
};
use bsrnn_core::dsp::{istft_slice, stft, stft_slice, Spectrogram, StftConfig};
use bsrnn_core::metrics::{si_snr, SI_SNR_CAP_DB};
use bsrnn_core::model::{
    band_level_step, build_forward, count_macs, enhance, enhance_spectrogram, stream_enhance,
    Checkpoint, GraphMode, Model, ModelConfig,
};
use bsrnn_core::nn::{Tape, Var};
use bsrnn_core::objectives::{
    lsgan_generator_loss, mgd_discriminator_loss, mgd_generator_term, mr_loss, mr_loss_graph,
    mrsd_adversarial_gen, mrsd_discriminator_loss, mrsd_generator_terms, q_normalize,
    MgdDiscriminator, MrLossConfig, MrsdConfig, MrsdDiscriminators,
};
use bsrnn_core::trainer::{lr_schedule, warm_start_pse, TrainConfig, TrainPhase, Trainer};

fn noise_wave(len: usize, rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), rate)
}

fn toy_model_config(causal: bool, personalized: bool) -> ModelConfig {
    ModelConfig {
        sample_rate: 16_000,
        n_feat: 8,
        num_blocks: 1,
        lstm_hidden: 16,
        mlp_hidden: 16,
        causal,
        personalized,
        embed_dim: 8,
        stft: StftConfig::wide_band_16k(),
        band_edges: Some(vec![0, 32, 64, 96, 128, 160, 192, 224, 257]),
        split_band: Some(6),
    }
}

/// Criterion 1: perfect reconstruction for both analysis configs,
/// 100 random signals each, interior relative L2 error <= 1e-6.
#[test]
fn accept_01_stft_istft_perfect_reconstruction() {
    for (cfg, len) in [
        (StftConfig::full_band_48k(), 48_000usize),
        (StftConfig::wide_band_16k(), 16_000usize),
    ] {
        let win = cfg.window_len();
        for seed in 0..100u64 {
            let w = noise_wave(len, cfg.sample_rate, 1000 + seed);
            let spec = stft::<f64>(&w, &cfg).unwrap();
            let back = istft_slice(&spec, w.len()).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in win..w.len() - win {
                let d = w.samples[i] as f64 - back[i];
                num += d * d;
                den += (w.samples[i] as f64).powi(2);
            }
            let err = (num / den).sqrt();
            assert!(
                err <= 1e-6,
                "rate {} seed {seed}: interior error {err}",
                cfg.sample_rate
            );
        }
    }
    println!("ACCEPTANCE 1 PASS - STFT/iSTFT round trip <= 1e-6 on 100 signals per config");
}

/// Criterion 2: the default 33-band scheme partitions all 481 bins exactly
/// once and tones land in the analytically expected bands.
#[test]
fn accept_02_band_partition_and_tone_placement() {
    let cfg = ModelConfig::full_band_48k(true, false);
    let scheme = cfg.scheme().unwrap();
    assert_eq!(scheme.n_bands(), 33);
    assert_eq!(scheme.n_bins(), 481);
    let mut coverage = vec![0u8; 481];
    for band in 0..scheme.n_bands() {
        for bin in scheme.band_bins(band) {
            coverage[bin] += 1;
        }
    }
    assert!(coverage.iter().all(|&c| c == 1), "partition violated");

    // Tone placement: generate tones, check the argmax bin's band.
    for (freq, want_band) in [(1_000.0, 5usize), (4_100.0, 20), (10_000.0, 27), (23_000.0, 32)] {
        let samples: Vec<f32> = (0..9_600)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 48_000.0).sin() as f32)
            .collect();
        let spec = stft::<f64>(&Waveform::new(samples, 48_000), &StftConfig::full_band_48k()).unwrap();
        let t = 4;
        let argmax = (0..spec.n_bins)
            .max_by(|&a, &b| spec.at(a, t).norm().partial_cmp(&spec.at(b, t).norm()).unwrap())
            .unwrap();
        let got_band = scheme.band_of_bin(argmax).unwrap();
        assert_eq!(got_band, want_band, "{freq} Hz landed in band {got_band}");
    }
    println!("ACCEPTANCE 2 PASS - 33-band partition exact, tones land in expected bands");
}

/// Criterion 3: causal output frame t is bit-identical under arbitrary
/// perturbations of frames > t (20 probes).
#[test]
fn accept_03_causality() {
    let model = Model::<f64>::init(toy_model_config(true, false), 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut spec = Spectrogram::<f64>::zeros(model.config.stft, 24);
    for c in spec.data.iter_mut() {
        *c = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let baseline = enhance_spectrogram(&model, &spec, None).unwrap();

    for probe in 0..20 {
        let t_cut = probe % 20;
        let mut perturbed = spec.clone();
        for t in t_cut + 1..spec.n_frames {
            for f in 0..spec.n_bins {
                *perturbed.at_mut(f, t) =
                    Complex::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            }
        }
        let out = enhance_spectrogram(&model, &perturbed, None).unwrap();
        for t in 0..=t_cut {
            assert_eq!(
                baseline.frame(t),
                out.frame(t),
                "probe {probe}: frame {t} saw the future"
            );
        }
    }
    println!("ACCEPTANCE 3 PASS - causal frames bit-identical under 20 future-frame probes");
}

/// Criterion 4: within band-level modeling, output over bands <= B is
/// bit-exactly invariant to perturbations of bands > B, while low bands do
/// reach high bands.
#[test]
fn accept_04_high_to_low_isolation() {
    let model = Model::<f64>::init(toy_model_config(true, false), 79).unwrap();
    let n = model.config.n_feat;
    let k = model.scheme.n_bands();
    let split = model.scheme.split_band;
    let mut rng = ChaCha8Rng::seed_from_u64(80);

    for probe in 0..20 {
        let z: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = band_level_step(&model, 0, &z).unwrap();

        let mut high_perturbed = z.clone();
        let hi = split + probe % (k - split);
        for v in high_perturbed[hi * n..(hi + 1) * n].iter_mut() {
            *v += rng.gen_range(0.5..1.5);
        }
        let out = band_level_step(&model, 0, &high_perturbed).unwrap();
        assert_eq!(
            base[..split * n],
            out[..split * n],
            "probe {probe}: high band {hi} leaked into Q below the split"
        );

        let mut low_perturbed = z.clone();
        for v in low_perturbed[..n].iter_mut() {
            *v += 1.0;
        }
        let out = band_level_step(&model, 0, &low_perturbed).unwrap();
        let delta: f64 = base[split * n..]
            .iter()
            .zip(&out[split * n..])
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 0.0, "probe {probe}: no low-to-high flow");
    }
    println!("ACCEPTANCE 4 PASS - Q below split bit-exact under high-band probes; low->high flows");
}

struct GradCheck {
    name: &'static str,
    max_rel: f64,
}

/// Criterion 5: full toy-pipeline gradients of L_MR, L_obj(MGD) and
/// L_G(MRSD) against central finite differences at f64, rel err <= 1e-3.
#[test]
fn accept_05_gradient_correctness() {
    let model = Model::<f64>::init(toy_model_config(true, false), 81).unwrap();
    let mixture = noise_wave(3_200, 16_000, 82);
    let target = noise_wave(3_200, 16_000, 83);
    let target_f64: Vec<f64> = target.samples.iter().map(|&v| v as f64).collect();
    let mgd = MgdDiscriminator::<f64>::with_channels(vec![4, 8], 84).unwrap();
    let mrsd = MrsdDiscriminators::<f64>::with_channels(
        MrsdConfig::for_rate(16_000),
        vec![4, 8],
        85,
    )
    .unwrap();
    let mr_cfg = MrLossConfig::for_rate(16_000);

    #[derive(Clone, Copy)]
    enum LossKind {
        Mr,
        MgdObjective,
        MrsdGenerator,
    }

    let eval = |m: &Model<f64>, kind: LossKind, want_grads: bool| -> (f64, Option<Vec<Vec<f64>>>) {
        let spec = stft::<f64>(&mixture, &m.config.stft).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let fwd = build_forward(&mut tape, m, &spec, None, GraphMode::Train).unwrap();
        let tgt = &target_f64[..fwd.span];
        let loss: Var = match kind {
            LossKind::Mr => {
                let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, tgt, &mr_cfg).unwrap();
                tape.add(l_p, l_s).unwrap()
            }
            LossKind::MgdObjective => {
                let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, tgt, &mr_cfg).unwrap();
                let clean = stft_slice(tgt, &m.config.stft).unwrap();
                let l_g =
                    mgd_generator_term(&mut tape, &mgd, fwd.shat_re, fwd.shat_im, &clean).unwrap();
                let a = tape.scale(l_p, 0.5);
                let b = tape.scale(l_s, 0.5);
                let ab = tape.add(a, b).unwrap();
                tape.add(ab, l_g).unwrap()
            }
            LossKind::MrsdGenerator => {
                let (l_p, l_s) = mr_loss_graph(&mut tape, fwd.est_wave, tgt, &mr_cfg).unwrap();
                let terms =
                    mrsd_generator_terms(&mut tape, &mrsd, fwd.est_wave, tgt, &m.config.stft)
                        .unwrap();
                let l_mr = tape.add(l_p, l_s).unwrap();
                let part = tape.add(terms.adversarial, l_mr).unwrap();
                tape.add(part, terms.l_mmel).unwrap()
            }
        };
        let value = tape.value_scalar(loss);
        if !want_grads {
            return (value, None);
        }
        tape.backward(loss).unwrap();
        let mut store = m.store.clone();
        store.zero_grads();
        tape.apply_param_grads(&mut store);
        let grads = store.iter().map(|(_, t)| t.grad.clone()).collect();
        (value, Some(grads))
    };

    let mut results = Vec::new();
    for (kind, name) in [
        (LossKind::Mr, "L_MR"),
        (LossKind::MgdObjective, "L_obj(MGD)"),
        (LossKind::MrsdGenerator, "L_G(MRSD)"),
    ] {
        let (_, grads) = eval(&model, kind, true);
        let grads = grads.unwrap();
        // The adversarial losses pass through leaky-ReLU kinks, so their
        // finite differences use a smaller step.
        let eps = match kind {
            LossKind::Mr => 1e-5,
            _ => 1e-6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let mut max_rel: f64 = 0.0;
        let mut informative = 0usize;
        let tensors: Vec<usize> = (0..model.store.len()).collect();
        for _ in 0..24 {
            let ti = tensors[rng.gen_range(0..tensors.len())];
            let (id, t) = model.store.iter().nth(ti).unwrap();
            if !t.trainable || t.numel() == 0 {
                continue;
            }
            let ci = rng.gen_range(0..t.numel());
            let mut plus = model.clone();
            plus.store.get_mut(id).data[ci] += eps;
            let mut minus = model.clone();
            minus.store.get_mut(id).data[ci] -= eps;
            let (fp, _) = eval(&plus, kind, false);
            let (fm, _) = eval(&minus, kind, false);
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = grads[ti][ci];
            if analytic.abs() > 1e-7 {
                informative += 1;
            }
            if (analytic - numeric).abs() < 1e-8 {
                // below the f64 resolution of the central difference itself
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            max_rel = max_rel.max(rel);
            assert!(
                rel <= 1e-3,
                "{name}: tensor {} coord {ci}: analytic {analytic} vs numeric {numeric} (rel {rel})",
                t.name
            );
        }
        assert!(
            informative >= 5,
            "{name}: only {informative} probed coordinates carried gradient"
        );
        results.push(GradCheck { name, max_rel });
    }
    let detail: Vec<String> = results
        .iter()
        .map(|r| format!("{} max rel {:.2e}", r.name, r.max_rel))
        .collect();
    println!(
        "ACCEPTANCE 5 PASS - pipeline gradients match finite differences ({})",
        detail.join(", ")
    );
}

/// Criterion 6: loss identities and constant-discriminator closed forms.
#[test]
fn accept_06_loss_identities() {
    // mr_loss(s, s) = 0 exactly
    let s: Vec<f64> = noise_wave(3_200, 16_000, 87)
        .samples
        .iter()
        .map(|&v| v as f64)
        .collect();
    let cfg = MrLossConfig::for_rate(16_000);
    assert_eq!(mr_loss(&s, &s, &cfg).unwrap(), 0.0);

    // quality normalization pins
    assert_eq!(q_normalize(4.5), 1.0);
    assert_eq!(q_normalize(-0.5), 0.0);
    assert_eq!(q_normalize(2.0), 0.5);

    // constant-discriminator closed forms to 1e-12
    let mut tape = Tape::<f64>::new();
    let d = tape.scalar(0.37);
    let lg = lsgan_generator_loss(&mut tape, d);
    assert!((tape.value_scalar(lg) - (1.0 - 0.37f64).powi(2)).abs() < 1e-12);

    let (qe, qn) = (0.66f64, 0.12f64);
    let ld = mgd_discriminator_loss(&mut tape, d, d, d, qe, qn);
    let want = (1.0 - 0.37f64).powi(2) + (qe - 0.37).powi(2) + (qn - 0.37).powi(2);
    assert!((tape.value_scalar(ld) - want).abs() < 1e-12);

    let consts: Vec<Var> = [0.1, 0.9, 0.5, 0.3, 0.7, 0.2]
        .iter()
        .map(|&v| tape.scalar(v))
        .collect();
    let fakes: Vec<Var> = [0.4, 0.6, 0.8, 0.1, 0.05, 0.95]
        .iter()
        .map(|&v| tape.scalar(v))
        .collect();
    let l_adv = mrsd_adversarial_gen(&mut tape, &fakes);
    let want: f64 = [0.4f64, 0.6, 0.8, 0.1, 0.05, 0.95]
        .iter()
        .map(|&v| (1.0 - v) * (1.0 - v))
        .sum::<f64>()
        / 6.0;
    assert!((tape.value_scalar(l_adv) - want).abs() < 1e-12);
    let l_d = mrsd_discriminator_loss(&mut tape, &consts, &fakes);
    let want: f64 = [0.1f64, 0.9, 0.5, 0.3, 0.7, 0.2]
        .iter()
        .zip([0.4f64, 0.6, 0.8, 0.1, 0.05, 0.95].iter())
        .map(|(&r, &f)| (1.0 - r) * (1.0 - r) + f * f)
        .sum::<f64>()
        / 6.0;
    assert!((tape.value_scalar(l_d) - want).abs() < 1e-12);

    println!("ACCEPTANCE 6 PASS - loss identities and closed forms match hand algebra to 1e-12");
}

fn audit_pool(dir: &std::path::Path) -> Arc<SourcePool> {
    let sr = 16_000u32;
    let mut records = Vec::new();
    let mut add = |kind: SourceKind, name: &str, wave: &Waveform| {
        let path = dir.join(name);
        write_wav(&path, wave, WavFormat::Float32).unwrap();
        records.push(CatalogRecord {
            kind,
            path,
            speaker_id: Some("spk".into()),
            embedding_path: None,
        });
    };
    add(SourceKind::Speech, "s0.wav", &noise_wave(sr as usize * 2, sr, 90));
    add(SourceKind::Speech, "s1.wav", &noise_wave(sr as usize, sr, 91));
    add(SourceKind::Noise, "n0.wav", &noise_wave(sr as usize * 2, sr, 92));
    add(SourceKind::Noise, "n1.wav", &noise_wave(sr as usize, sr, 93));
    add(SourceKind::Interferer, "i0.wav", &noise_wave(sr as usize, sr, 94));
    let mut rir = vec![0.0f32; 48];
    rir[0] = 1.0;
    rir[13] = 0.4;
    rir[37] = -0.25;
    add(SourceKind::Rir, "r0.wav", &Waveform::new(rir, sr));
    Arc::new(SourcePool::new(Catalog::from_records(
        records,
        dir.to_path_buf(),
    )))
}

/// Criterion 7: over 10,000 seeded draws the category frequencies sit within
/// 2% absolute of 0.5/0.3/0.2, the RIR rate within 1.5% of 20%, and achieved
/// SNR/SIR within 0.01 dB of the drawn values.
#[test]
fn accept_07_simulation_audit() {
    let dir = tempfile::tempdir().unwrap();
    let pool = audit_pool(dir.path());
    let cfg = SimulationConfig {
        segment_s: 1.0,
        seed: 1234,
        ..Default::default()
    };

    let mut counts = [0usize; 3];
    let mut rir_count = 0usize;
    let draws = 10_000u64;
    for i in 0..draws {
        let ex = simulate_example(&pool, &cfg, true, derive_example_seed(cfg.seed, i)).unwrap();
        match ex.draws.category {
            MixCategory::NoiseOnly => counts[0] += 1,
            MixCategory::NoiseAndInterferer => counts[1] += 1,
            MixCategory::InterfererOnly => counts[2] += 1,
        }
        if ex.draws.rir_applied {
            rir_count += 1;
        }
        if let (Some(snr), Some(n)) = (ex.draws.snr_db, &ex.scaled_noise) {
            let achieved = 10.0 * (ex.target_reverberant.energy() / n.energy()).log10();
            assert!((achieved - snr).abs() <= 0.01, "draw {i}: SNR {snr} vs {achieved}");
        }
        if let (Some(sir), Some(intf)) = (ex.draws.sir_db, &ex.scaled_interferer) {
            let achieved = 10.0 * (ex.target_reverberant.energy() / intf.energy()).log10();
            assert!((achieved - sir).abs() <= 0.01, "draw {i}: SIR {sir} vs {achieved}");
        }
    }
    let total = draws as f64;
    let freqs = [
        counts[0] as f64 / total,
        counts[1] as f64 / total,
        counts[2] as f64 / total,
    ];
    assert!((freqs[0] - 0.5).abs() <= 0.02, "noise-only {}", freqs[0]);
    assert!((freqs[1] - 0.3).abs() <= 0.02, "noise+interferer {}", freqs[1]);
    assert!((freqs[2] - 0.2).abs() <= 0.02, "interferer-only {}", freqs[2]);
    let rir_rate = rir_count as f64 / total;
    assert!((rir_rate - 0.2).abs() <= 0.015, "RIR rate {rir_rate}");
    println!(
        "ACCEPTANCE 7 PASS - 10k draws: categories {:.3}/{:.3}/{:.3}, RIR {:.3}, SNR/SIR <= 0.01 dB",
        freqs[0], freqs[1], freqs[2], rir_rate
    );
}

/// Criterion 8: the analytic MACs counter puts the default online
/// personalized full-band model within [8.8G, 20.6G] per second.
#[test]
fn accept_08_macs_budget() {
    let cfg = ModelConfig::full_band_48k(true, true);
    let report = count_macs(&cfg).unwrap();
    let g = report.giga_per_second();
    assert!(
        (8.8..=20.6).contains(&g),
        "online full-band budget {g} GMACs/s outside [8.8, 20.6]"
    );
    println!("ACCEPTANCE 8 PASS - online full-band model at {g:.2} GMACs/s (within 14.7G +/- 40%)");
}

/// Criterion 9: a toy model overfits one fixed 1-second mixture (>= 90%
/// L_MR drop within 500 iterations); the learning-rate schedule is exact;
/// early stopping fires exactly on schedule.
#[test]
fn accept_09_desk_scale_training() {
    // learning-rate pins
    let cfg = TrainConfig::pretrain_defaults();
    assert_eq!(lr_schedule(&cfg, 0), 1e-3);
    assert_eq!(lr_schedule(&cfg, 19_999), 1e-3);
    assert!((lr_schedule(&cfg, 20_000) - 9.8e-4).abs() < 1e-15);
    assert!((lr_schedule(&cfg, 40_000) - 9.604e-4).abs() < 1e-12);

    // the fixed-example catalog: one speech, one noise, degenerate draws
    let dir = tempfile::tempdir().unwrap();
    let sr = 16_000u32;
    let speech = {
        let mut w: Vec<f32> = (0..sr as usize)
            .map(|i| {
                let t = i as f64 / sr as f64;
                (0.4 * (2.0 * std::f64::consts::PI * 210.0 * t).sin()
                    + 0.25 * (2.0 * std::f64::consts::PI * 471.0 * t).sin()) as f32
            })
            .collect();
        for (i, v) in w.iter_mut().enumerate() {
            *v *= 0.55 + 0.45 * ((i as f32 / sr as f32) * 2.7).sin().abs();
        }
        Waveform::new(w, sr)
    };
    let noise = noise_wave(sr as usize, sr, 95);
    let speech_path = dir.path().join("speech.wav");
    let noise_path = dir.path().join("noise.wav");
    write_wav(&speech_path, &speech, WavFormat::Float32).unwrap();
    write_wav(&noise_path, &noise, WavFormat::Float32).unwrap();
    let pool = Arc::new(SourcePool::new(Catalog::from_records(
        vec![
            CatalogRecord {
                kind: SourceKind::Speech,
                path: speech_path,
                speaker_id: None,
                embedding_path: None,
            },
            CatalogRecord {
                kind: SourceKind::Noise,
                path: noise_path,
                speaker_id: None,
                embedding_path: None,
            },
        ],
        dir.path().to_path_buf(),
    )));
    let sim = SimulationConfig {
        snr_db: (2.0, 2.0),
        sir_db: (2.0, 2.0),
        rir_prob: 0.0,
        mix_proportions: (1.0, 0.0, 0.0),
        segment_s: 1.0,
        seed: 11,
    };

    let model_cfg = ModelConfig {
        n_feat: 16,
        lstm_hidden: 32,
        mlp_hidden: 32,
        ..toy_model_config(true, false)
    };
    let model = Model::<f32>::init(model_cfg, 96).unwrap();
    let train_cfg = TrainConfig {
        phase: TrainPhase::PretrainMr,
        max_iters: 500,
        batch_size: 1,
        validation_every: 10_000, // no validation during the smoke loop
        validation_examples: 1,
        seed: 12,
        ..TrainConfig::pretrain_defaults()
    };
    let mut trainer = Trainer::new(model, train_cfg, sim, pool.clone(), dir.path().join("run")).unwrap();
    let initial = trainer.validate().unwrap();
    for _ in 0..500 {
        trainer.step().unwrap();
    }
    let final_loss = trainer.validate().unwrap();
    assert!(
        final_loss <= 0.1 * initial,
        "L_MR {initial} -> {final_loss}: less than 90% drop in 500 iterations"
    );

    // early stopping: frozen validation metric halts exactly window iters
    // after the last best
    let model = Model::<f32>::init(
        ModelConfig {
            n_feat: 8,
            lstm_hidden: 16,
            mlp_hidden: 16,
            ..toy_model_config(true, false)
        },
        97,
    )
    .unwrap();
    let es_cfg = TrainConfig {
        phase: TrainPhase::PretrainMr,
        max_iters: 10_000,
        batch_size: 1,
        validation_every: 3,
        early_stop_window: 12,
        seed: 13,
        ..TrainConfig::pretrain_defaults()
    };
    let sim2 = SimulationConfig {
        snr_db: (2.0, 2.0),
        sir_db: (2.0, 2.0),
        rir_prob: 0.0,
        mix_proportions: (1.0, 0.0, 0.0),
        segment_s: 1.0,
        seed: 11,
    };
    let mut es_trainer =
        Trainer::new(model, es_cfg, sim2, pool, dir.path().join("run_es")).unwrap();
    es_trainer.validation_override = Some(Box::new(|_| 1.0));
    let outcome = es_trainer.run().unwrap();
    assert!(outcome.stopped_early);
    assert_eq!(outcome.best_iter, 3);
    assert_eq!(outcome.completed_iters, 15, "stopped at best_iter + window");

    println!(
        "ACCEPTANCE 9 PASS - overfit L_MR {initial:.4} -> {final_loss:.4} (>= 90% drop), lr pins exact, early stop exact"
    );
}

/// Criterion 10: a personalized model warm-started from a base checkpoint
/// produces bit-identical output to the base model for any embedding.
#[test]
fn accept_10_pse_warm_start_identity() {
    let dir = tempfile::tempdir().unwrap();
    let base = Model::<f32>::init(toy_model_config(true, false), 98).unwrap();
    let ckpt_path = dir.path().join("base.bsrnn");
    Checkpoint::from_model(&base, serde_json::Value::Null)
        .save(&ckpt_path)
        .unwrap();
    let loaded = Checkpoint::load(&ckpt_path).unwrap();
    let pse = warm_start_pse::<f32>(&loaded, toy_model_config(true, true)).unwrap();

    let x = noise_wave(8_000, 16_000, 99);
    let y_base = enhance(&base, &x, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..5 {
        let emb: Vec<f32> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y_pse = enhance(&pse, &x, Some(&emb)).unwrap();
        assert_eq!(y_base.samples, y_pse.samples, "warm start broke identity");
    }
    println!("ACCEPTANCE 10 PASS - warm-started personalized model bit-identical to its base");
}

/// Criterion 11: streaming equals batch enhancement within 1e-5 per sample,
/// and the 10-second state reset matches a fresh-stream oracle.
#[test]
fn accept_11_streaming_equivalence() {
    let model = Model::<f64>::init(toy_model_config(true, false), 101).unwrap();

    // batch vs streaming
    let x = noise_wave(3 * 16_000, 16_000, 102);
    let batch = enhance(&model, &x, None).unwrap();
    let streamed = stream_enhance(&model, &x, None, None).unwrap();
    let max_diff = batch
        .samples
        .iter()
        .zip(&streamed.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_diff <= 1e-5, "batch vs stream max |diff| = {max_diff}");

    // 10-second reset vs two independent 10-second streams
    let half = 10 * 16_000;
    let win = model.config.stft.window_len();
    let long = noise_wave(2 * half, 16_000, 103);
    let with_reset = stream_enhance(&model, &long, None, Some(10.0)).unwrap();
    let y1 = stream_enhance(
        &model,
        &Waveform::new(long.samples[..half].to_vec(), 16_000),
        None,
        None,
    )
    .unwrap();
    let y2 = stream_enhance(
        &model,
        &Waveform::new(long.samples[half..].to_vec(), 16_000),
        None,
        None,
    )
    .unwrap();
    for i in 0..half - win {
        let d = (with_reset.samples[i] - y1.samples[i]).abs();
        assert!(d <= 1e-6, "pre-boundary sample {i}: {d}");
    }
    for i in 0..half - win {
        let d = (with_reset.samples[half + i] - y2.samples[i]).abs();
        assert!(d <= 1e-6, "post-boundary sample {i}: {d}");
    }
    println!(
        "ACCEPTANCE 11 PASS - stream == batch (max |diff| {max_diff:.1e}), 10 s reset matches fresh streams"
    );
}

/// Criterion 12: SI-SNR scale invariance, the orthogonal equal-energy case,
/// and cap behavior.
#[test]
fn accept_12_si_snr_properties() {
    let x = noise_wave(8_192, 16_000, 104);
    // cap on identical signals
    assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
    // exact scale invariance: power-of-two gains are exact in f32, so the
    // metric must match bit-for-bit; arbitrary gains perturb the samples
    // themselves by f32 rounding and match to measurement noise.
    for alpha in [0.001f32, 0.5, 3.0, 250.0] {
        let scaled = Waveform::new(x.samples.iter().map(|&v| alpha * v).collect(), 16_000);
        assert_eq!(si_snr(&scaled, &x).unwrap(), SI_SNR_CAP_DB);
    }
    let y = noise_wave(8_192, 16_000, 105);
    let base = si_snr(&y, &x).unwrap();
    for alpha in [0.25f32, 2.0, 256.0] {
        let scaled = Waveform::new(y.samples.iter().map(|&v| alpha * v).collect(), 16_000);
        let got = si_snr(&scaled, &x).unwrap();
        assert_eq!(got, base, "exact scale {alpha}");
    }
    for alpha in [3.0f32, 10.0] {
        let scaled = Waveform::new(y.samples.iter().map(|&v| alpha * v).collect(), 16_000);
        let got = si_snr(&scaled, &x).unwrap();
        assert!((got - base).abs() < 1e-6, "scale {alpha}: {got} vs {base}");
    }

    // orthogonal, equal-energy error gives exactly 0 dB
    let n = 8_192usize;
    let r: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64).sin())
        .collect();
    let o: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 7.0 * i as f64 / n as f64).cos())
        .collect();
    let re: f64 = r.iter().map(|v| v * v).sum();
    let oe: f64 = o.iter().map(|v| v * v).sum();
    let k = (re / oe).sqrt();
    let est = Waveform::new(
        r.iter().zip(&o).map(|(&a, &b)| (a + k * b) as f32).collect(),
        16_000,
    );
    let reference = Waveform::new(r.iter().map(|&v| v as f32).collect(), 16_000);
    let snr = si_snr(&est, &reference).unwrap();
    assert!(snr.abs() < 1e-3, "orthogonal equal-energy case: {snr} dB");

    // negative cap: anti-correlated-free estimate with no target component
    let pure_noise = Waveform::new(o.iter().map(|&v| v as f32).collect(), 16_000);
    let low = si_snr(&pure_noise, &reference).unwrap();
    assert!(low >= -SI_SNR_CAP_DB && low < -30.0);

    println!("ACCEPTANCE 12 PASS - SI-SNR scale-invariant, orthogonal case 0 dB, caps at +/-40 dB");
}
