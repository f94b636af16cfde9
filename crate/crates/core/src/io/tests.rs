use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tensor;
use crate::dsp::{istft, log_magnitude, stft, AudioClip, StftConfig};
use crate::models::{EnhancerSet, ModelConfig, ResidualConfig, Separator};
use crate::nn::{AdamState, NormKind};
use crate::training::{Batch, Objective, SeparatorObjective, TrainMode};

const SR: u32 = 8_000;

fn small_config(norm: NormKind) -> RunConfig {
    let mut cfg = RunConfig {
        stft: StftConfig { window: 64, hop: 32 },
        model: ModelConfig::with_channels(33, 4, [8, 6, 4]),
        ..RunConfig::default()
    };
    cfg.model.norm = norm;
    cfg.validate().unwrap();
    cfg
}

fn noise(len: usize, channels: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(SR, (0..channels).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect())
        .unwrap()
}

fn random_batch(cfg: &ModelConfig, seed: u64) -> Batch<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        mixture: Tensor::from_fn([2, cfg.bins, 12], |_| rng.gen_range(0.0..1.0)),
        targets: Tensor::from_fn([2, cfg.output_channels(), 12], |_| rng.gen_range(0.0..1.0)),
    }
}

/// A checkpoint with nontrivial optimizer state, running statistics and
/// enhancers.
fn trained_checkpoint(norm: NormKind) -> Checkpoint<f32> {
    let cfg = small_config(norm);
    let mut obj = SeparatorObjective::new(Separator::new(cfg.model.clone(), 3).unwrap(), cfg.train.adam);
    for step in 0..3 {
        obj.step(&random_batch(&cfg.model, step), step).unwrap();
    }
    let enhancers = EnhancerSet::new(&cfg.model, 9).unwrap();
    let enhancer_adam = enhancers.models().iter().map(|m| AdamState::new(cfg.train.adam, m.store())).collect();
    let mut ckpt = Checkpoint::new(cfg, obj.model);
    ckpt.separator_adam = Some(obj.adam);
    ckpt.enhancers = Some(enhancers);
    ckpt.enhancer_adam = enhancer_adam;
    ckpt.meta = TrainMeta {
        seed: 11,
        step: 3,
        best_validation: 0.125,
    };
    ckpt
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn float_wav_round_trip_is_bit_exact(samples in prop::collection::vec(-2.0f32..2.0, 1..400), stereo in any::<bool>()) {
        let channels = if stereo { vec![samples.clone(), samples.iter().map(|v| -v).collect()] } else { vec![samples] };
        let clip = AudioClip::new(44_100, channels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &clip, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.sample_rate, 44_100);
        for (a, b) in clip.channels().iter().zip(back.channels()) {
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pcm16_round_trip_within_one_step(samples in prop::collection::vec(-1.0f32..1.0, 1..400)) {
        let clip = AudioClip::mono(SR, samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &clip, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in clip.channel(0).iter().zip(back.channel(0)) {
            prop_assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-7);
        }
    }
}

#[test]
fn config_text_round_trips_and_overrides_apply() {
    let mut cfg = small_config(NormKind::BatchNorm);
    cfg.model.residual = Some(ResidualConfig { iterations: 3 });
    cfg.train.adam.clip_gru = None;
    cfg.train.max_steps = Some(40);
    let back = RunConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_text(), cfg.to_text());

    let mut over = back.clone();
    over.apply_text("# comment\n\nmodel.skip_kind = conv\ntrain.lr_conv=0.01\n").unwrap();
    assert_eq!(over.model.skip_kind, crate::models::SkipKind::Conv);
    assert_eq!(over.train.adam.lr_conv, 0.01);
}

#[test]
fn changing_sources_keeps_the_output_layer_consistent() {
    let mut cfg = small_config(NormKind::WeightNorm);
    cfg.apply_text("model.sources=2\ndata.sources=accompaniment,vocals").unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.model.decoder[2].out_channels, 66);
}

#[test]
fn bad_config_lines_are_config_errors() {
    for text in ["model.norm=layer_norm", "nosection=1", "train.batch_size", "stft.hop=x", "data.sources=a,,b"] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
    // Names and sources disagree.
    assert!(matches!(RunConfig::parse("data.sources=a,b"), Err(IoError::Config(_))));
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    for norm in [NormKind::WeightNorm, NormKind::BatchNorm] {
        let ckpt = trained_checkpoint(norm);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&a, &ckpt).unwrap();
        let loaded: Checkpoint<f32> = load_checkpoint(&a).unwrap();
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.meta, ckpt.meta);
        assert_eq!(loaded.separator_adam, ckpt.separator_adam);
        assert_eq!(loaded.separator.store().checksum(), ckpt.separator.store().checksum());
        let input = Tensor::from_fn([1, 33, 20], |i| (i as f32 * 0.37).sin().abs());
        let x = ckpt.separator.infer(&input).unwrap();
        let y = loaded.separator.infer(&input).unwrap();
        assert_eq!(
            x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn batch_norm_statistics_survive_the_round_trip() {
    let ckpt = trained_checkpoint(NormKind::BatchNorm);
    let loaded = Checkpoint::<f32>::from_bytes(&ckpt.to_bytes()).unwrap();
    let before = ckpt.separator.batch_norms();
    let after = loaded.separator.batch_norms();
    assert_eq!(before.len(), 5);
    for ((na, a), (nb, b)) in before.iter().zip(&after) {
        assert_eq!(na, nb);
        assert_eq!(a.running(), b.running());
        assert_eq!(a.running().batches, 3);
    }
}

#[test]
fn truncated_or_damaged_files_are_corrupt_errors() {
    let bytes = trained_checkpoint(NormKind::WeightNorm).to_bytes();
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::<f32>::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, IoError::Corrupt { .. }), "cut {cut}: {err}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&flipped), Err(IoError::Corrupt { .. })));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    match Checkpoint::<f32>::from_bytes(&bad_magic) {
        Err(IoError::Corrupt { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn newer_major_version_is_refused_and_newer_minor_accepted() {
    let bytes = trained_checkpoint(NormKind::WeightNorm).to_bytes();
    let mut newer = bytes.clone();
    newer[8..10].copy_from_slice(&(FORMAT_MAJOR + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&newer),
        Err(IoError::UnsupportedVersion { found, supported }) if found == FORMAT_MAJOR + 1 && supported == FORMAT_MAJOR
    ));
    // A minor bump only changes the header; rehash so the file stays valid.
    let mut minor = bytes[..bytes.len() - 8].to_vec();
    minor[10..12].copy_from_slice(&(FORMAT_MINOR + 1).to_le_bytes());
    let hash = minor
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    minor.extend_from_slice(&hash.to_le_bytes());
    assert!(Checkpoint::<f32>::from_bytes(&minor).is_ok());
}

#[test]
fn wrong_precision_and_cross_mode_loads_are_mismatches() {
    let ckpt = trained_checkpoint(NormKind::WeightNorm);
    assert!(matches!(Checkpoint::<f64>::from_bytes(&ckpt.to_bytes()), Err(IoError::ConfigMismatch(_))));
    let err = ckpt.require_mode(TrainMode::Residual).unwrap_err();
    assert!(matches!(err, IoError::ConfigMismatch(_)));
    assert_eq!(err.exit_code(), 2);
    ckpt.require_mode(TrainMode::Separator).unwrap();
    ckpt.require_mode(TrainMode::Enhancer).unwrap();

    let mut residual = ckpt.config.model.clone();
    residual.residual = Some(ResidualConfig { iterations: 3 });
    assert!(matches!(ckpt.require_model(&residual), Err(IoError::ConfigMismatch(_))));
    ckpt.require_model(&ckpt.config.model).unwrap();
}

#[test]
fn separated_stems_sum_to_the_resynthesized_mixture() {
    let ckpt = trained_checkpoint(NormKind::WeightNorm);
    let song = noise(1000, 2, 4);
    let out = ckpt.separate(&song, Accompaniment::NonVocal).unwrap();
    assert_eq!(out.stems.len(), 4);
    let outputs = out.outputs();
    assert_eq!(outputs.len(), 5);
    assert_eq!(outputs[4].0, "accompaniment");
    for (_, clip) in &outputs {
        assert_eq!(clip.len(), song.len());
        assert_eq!(clip.num_channels(), 2);
    }
    for c in 0..2 {
        let x: Vec<f64> = song.channel(c).iter().map(|&v| v as f64).collect();
        let resynth = istft(&stft(&x, ckpt.config.stft).unwrap(), Some(x.len())).unwrap();
        let mut err = 0.0;
        for (n, r) in resynth.iter().enumerate() {
            let sum: f64 = out.stems.iter().map(|s| s.channel(c)[n] as f64).sum();
            err += (sum - r).powi(2);
        }
        let rms = (err / x.len() as f64).sqrt();
        assert!(rms < 1e-6, "channel {c}: rms {rms}");
        // Non-vocal accompaniment is the sum of the first three stems.
        let acc = out.accompaniment.as_ref().unwrap();
        for n in (0..x.len()).step_by(97) {
            let want: f32 = out.stems[..3].iter().map(|s| s.channel(c)[n]).sum();
            assert!((acc.channel(c)[n] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn all_four_accompaniment_reproduces_the_mixture() {
    let ckpt = trained_checkpoint(NormKind::WeightNorm);
    let song = noise(700, 1, 8);
    let out = ckpt.separate(&song, Accompaniment::All4).unwrap();
    let acc = out.accompaniment.unwrap();
    let interior = 64..636;
    for n in interior {
        assert!((acc.channel(0)[n] - song.channel(0)[n]).abs() < 1e-5);
    }
}

#[test]
fn silent_song_gives_silent_stems_and_short_song_is_an_error() {
    let mut ckpt = trained_checkpoint(NormKind::BatchNorm);
    // The enhancers were never trained, so they have no running statistics.
    ckpt.enhancers = None;
    let out = ckpt.separate(&AudioClip::silence(SR, 2, 500), Accompaniment::NonVocal).unwrap();
    for (_, clip) in out.outputs() {
        assert!(clip.channels().iter().flatten().all(|&v| v == 0.0));
    }
    let err = ckpt.separate(&noise(63, 1, 0), Accompaniment::NonVocal).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn accompaniment_membership_follows_stem_names() {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let four = names(&DEFAULT_SOURCES);
    assert_eq!(Accompaniment::NonVocal.members(&four), Some(vec![0, 1, 2]));
    assert_eq!(Accompaniment::All4.members(&four), Some(vec![0, 1, 2, 3]));
    assert_eq!(Accompaniment::NonVocal.members(&names(&["accompaniment", "vocals"])), None);
    assert_eq!(Accompaniment::NonVocal.members(&names(&["a", "b"])), None);
}

#[test]
fn spectrogram_dump_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StftConfig { window: 64, hop: 32 };
    let x: Vec<f32> = noise(500, 1, 2).channel(0).to_vec();
    let feats = log_magnitude(&stft(&x, cfg).unwrap());
    let path = dir.path().join("m.txt");
    write_matrix(&path, &feats).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), format!("33 {}", cfg.frames(500)));
    let back: Tensor<f32> = read_matrix(&path).unwrap();
    assert_eq!(back.shape(), feats.shape());
    for (a, b) in feats.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1e-6);
    }

    let zeros = log_magnitude(&stft(&vec![0.0f32; 500], cfg).unwrap());
    write_matrix(&path, &zeros).unwrap();
    let back: Tensor<f32> = read_matrix(&path).unwrap();
    assert!(back.data().iter().all(|&v| v == 0.0));
}

#[test]
fn malformed_matrix_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    std::fs::write(&path, "2 2\n1 2\n3\n").unwrap();
    assert!(matches!(read_matrix::<f64>(&path), Err(IoError::Data(_))));
}

fn write_track(root: &std::path::Path, track: &str, stems: &[(&str, AudioClip)]) {
    let dir = root.join("test").join(track);
    std::fs::create_dir_all(&dir).unwrap();
    for (name, clip) in stems {
        write_wav(dir.join(format!("{name}.wav")), clip, WavFormat::Float32).unwrap();
    }
}

fn four_stems(seed: u64) -> Vec<(&'static str, AudioClip)> {
    DEFAULT_SOURCES.iter().enumerate().map(|(i, &n)| (n, noise(600, 2, seed * 10 + i as u64))).collect()
}

#[test]
fn oracle_estimates_hit_the_cap_and_missing_stems_are_skipped() {
    let refs = tempfile::tempdir().unwrap();
    write_track(refs.path(), "b_song", &four_stems(1));
    write_track(refs.path(), "a_song", &four_stems(2));
    write_track(refs.path(), "c_partial", &four_stems(3)[..3]);
    let names: Vec<String> = DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect();
    let report =
        evaluate_estimates(refs.path(), "test", &refs.path().join("test"), &names, Accompaniment::NonVocal).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert_eq!(report.rows[0].track, "a_song");
    assert!(report.rows.iter().all(|r| r.sdr_db == Some(crate::dsp::SDR_CAP_DB)));
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].0, "c_partial");
    assert!(report.skipped[0].1.contains("vocals"));
    assert!(report.to_table().contains("skipped c_partial"));
}

#[test]
fn zero_estimates_score_zero_db_and_silent_references_are_undefined() {
    let refs = tempfile::tempdir().unwrap();
    let mut stems = four_stems(4);
    stems[1].1 = AudioClip::silence(SR, 2, 600);
    write_track(refs.path(), "t", &stems);
    let est = tempfile::tempdir().unwrap();
    let silent: Vec<(&str, AudioClip)> = DEFAULT_SOURCES.iter().map(|&n| (n, AudioClip::silence(SR, 2, 600))).collect();
    write_track(est.path(), "t", &silent);
    let names: Vec<String> = DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect();
    let report = evaluate_estimates(refs.path(), "test", &est.path().join("test"), &names, Accompaniment::NonVocal).unwrap();
    for r in &report.rows {
        if r.source == "bass" {
            assert_eq!(r.sdr_db, None);
        } else {
            assert!(r.sdr_db.unwrap().abs() < 1e-9, "{r:?}");
        }
    }
    let bass = report.summaries().into_iter().find(|s| s.source == "bass").unwrap();
    assert_eq!((bass.defined, bass.median, bass.mean), (0, None, None));
}

#[test]
fn csv_rows_match_the_golden_layout() {
    let report = EvalReport {
        sources: vec!["vocals".into(), "accompaniment".into()],
        rows: vec![
            EvalRow { track: "s1".into(), source: "vocals".into(), sdr_db: Some(5.57) },
            EvalRow { track: "s1".into(), source: "accompaniment".into(), sdr_db: None },
            EvalRow { track: "s2".into(), source: "vocals".into(), sdr_db: Some(-1.0) },
            EvalRow { track: "s2".into(), source: "accompaniment".into(), sdr_db: Some(12.25) },
        ],
        ..EvalReport::default()
    };
    let golden = "track,source,sdr_db\ns1,vocals,5.5700\ns1,accompaniment,undefined\ns2,vocals,-1.0000\ns2,accompaniment,12.2500\n";
    assert_eq!(report.to_csv(), golden);
    let s = report.summaries();
    assert_eq!(s[0].median, Some(2.285));
    assert_eq!(s[1].median, Some(12.25));
    assert_eq!(s[1].mean, Some(12.25));
    assert_eq!(s[1].defined, 1);
}

#[test]
fn model_evaluation_leaves_the_checkpoint_untouched() {
    let mut ckpt = trained_checkpoint(NormKind::BatchNorm);
    ckpt.enhancers = None;
    ckpt.enhancer_adam.clear();
    let refs = tempfile::tempdir().unwrap();
    write_track(refs.path(), "x", &four_stems(5));
    let mut partial = four_stems(6);
    partial.remove(0);
    write_track(refs.path(), "y", &partial);
    let before = ckpt.to_bytes();
    let report = evaluate_model(&ckpt, refs.path(), "test", Accompaniment::NonVocal).unwrap();
    assert_eq!(ckpt.to_bytes(), before);
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.config.iter().any(|(k, v)| k == "model.norm" && v == "batch_norm"));
    let again = evaluate_model(&ckpt, refs.path(), "test", Accompaniment::NonVocal).unwrap();
    assert_eq!(again, report);
}

#[test]
fn split_loading_reports_skipped_tracks() {
    let refs = tempfile::tempdir().unwrap();
    write_track(refs.path(), "ok", &four_stems(7));
    write_track(refs.path(), "partial", &four_stems(8)[1..]);
    let names: Vec<String> = DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect();
    let split = load_split(refs.path(), "test", &names).unwrap();
    assert_eq!(split.songs.len(), 1);
    assert_eq!(split.songs[0].name, "ok");
    assert_eq!(split.skipped, vec![("partial".to_string(), "missing stems: drums".to_string())]);
    assert!(matches!(load_split(refs.path(), "train", &names), Err(IoError::Io { .. })));
}
