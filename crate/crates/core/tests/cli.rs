use std::path::Path;
use std::process::{Command, Output};

use sincfb::io::{read_wav, write_wav, AudioBuffer, Checkpoint};

fn sincfb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sincfb")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sincfb(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn init_writes_contiguous_mel_bank() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "--n", "80", "--kernel", "251", "--strategy", "mel", "--out", "bank.json"]);
    let ck = Checkpoint::load(&dir.path().join("bank.json")).unwrap();
    let bands = ck.model.filterbank.bands();
    assert_eq!(bands.len(), 80);
    assert_eq!(ck.model.filterbank.kernel_len(), 251);
    assert_eq!(bands[0].a1, 0.0);
    assert_eq!(bands[79].a2, 1.0);
    assert!(bands.windows(2).all(|w| w[0].a2 == w[1].a1));

    let text = ok(dir.path(), &["inspect", "bank.json"]);
    assert!(text.contains("encoder=240 dense_equivalent=20080"), "{text}");
    assert!(text.contains("zero_gain=0"));
}

#[test]
fn usage_and_runtime_errors_use_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sincfb(dir.path(), &["init", "--strategy", "fancy", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty() && !out.stderr.is_empty());

    let out = sincfb(dir.path(), &["inspect", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // even kernel length
    let out = sincfb(dir.path(), &["init", "--kernel", "250", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn sample_rate_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "--n", "4", "--kernel", "31", "--out", "bank.json"]);
    let audio = AudioBuffer { samples: vec![0.1; 400], sample_rate: 8000 };
    write_wav(&audio, &dir.path().join("in.wav")).unwrap();
    let out = sincfb(dir.path(), &["enhance", "--checkpoint", "bank.json", "--input", "in.wav", "--out", "out.wav"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("8000"));
    assert!(!dir.path().join("out.wav").exists());
}

#[test]
fn filter_subcommand_applies_one_band() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "--n", "80", "--kernel", "251", "--strategy", "mel", "--out", "bank.json"]);
    // 1 kHz tone; keep a band that contains it and one far above it
    let tone: Vec<f64> =
        (0..4000).map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin()).collect();
    write_wav(&AudioBuffer { samples: tone, sample_rate: 16000 }, &dir.path().join("tone.wav")).unwrap();
    let ck = Checkpoint::load(&dir.path().join("bank.json")).unwrap();
    let bands = ck.model.filterbank.bands();
    let hit = bands.iter().position(|b| b.a1 * 8000.0 < 1000.0 && b.a2 * 8000.0 > 1000.0).unwrap();
    let energy = |idx: usize| {
        let name = format!("band{idx}.wav");
        ok(
            dir.path(),
            &[
                "filter",
                "--checkpoint",
                "bank.json",
                "--index",
                &idx.to_string(),
                "--input",
                "tone.wav",
                "--out",
                &name,
            ],
        );
        let (out, _) = read_wav(&dir.path().join(name)).unwrap();
        out.samples[500..3500].iter().map(|v| v * v).sum::<f64>()
    };
    assert!(energy(hit) > 100.0 * energy(79));
    let out = sincfb(
        dir.path(),
        &["filter", "--checkpoint", "bank.json", "--index", "80", "--input", "tone.wav", "--out", "x.wav"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_enhance_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("config.json"), r#"{"train": {"steps": 500, "n_filters": 12}, "synth": {"duration": 1024}}"#)
        .unwrap();
    let text = ok(
        d,
        &[
            "train",
            "--config",
            "config.json",
            "--steps",
            "80",
            "--kernel-len",
            "63",
            "--learning-rate",
            "0.01",
            "--out",
            "ck.json",
            "--history",
            "h.csv",
        ],
    );
    let ck = Checkpoint::load(&d.join("ck.json")).unwrap();
    let config = ck.train_config.clone().unwrap();
    assert_eq!((config.steps, config.n_filters, config.kernel_len), (80, 12, 63));

    let history = std::fs::read_to_string(d.join("h.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "step,loss,val_sisnr_db,displacement");
    assert_eq!(lines.len(), 81);
    let last_val: f64 = lines[80].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(field(&text, "val_si_snr_db"), (last_val * 1000.0).round() / 1000.0);

    // the validation pair lives on the last stream of the data seed
    ok(
        d,
        &[
            "synth",
            "--duration",
            "1024",
            "--index",
            &u64::MAX.to_string(),
            "--noisy",
            "noisy.wav",
            "--clean",
            "clean.wav",
        ],
    );
    let report = ok(
        d,
        &[
            "enhance",
            "--checkpoint",
            "ck.json",
            "--input",
            "noisy.wav",
            "--reference",
            "clean.wav",
            "--out",
            "enhanced.wav",
        ],
    );
    let gain = field(&report, "gain_db");
    let trained = field(&text, "improvement_db");
    assert!((gain - trained).abs() < 0.1, "enhance {gain} vs trainer {trained}");
    assert_eq!(read_wav(&d.join("enhanced.wav")).unwrap().0.samples.len(), 1024);

    ok(d, &["export-cfr", "ck.json", "--grid", "64", "--out", "cfr.csv"]);
    let cfr = std::fs::read_to_string(d.join("cfr.csv")).unwrap();
    assert!(cfr.starts_with("freq_hz,magnitude\n0,"));
    assert_eq!(cfr.lines().count(), 65);

    ok(d, &["export-cutoffs", "ck.json", "--sort", "upper", "--out", "cut.csv"]);
    let cut = std::fs::read_to_string(d.join("cut.csv")).unwrap();
    let uppers: Vec<f64> = cut.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(uppers.len(), 12);
    assert!(uppers.windows(2).all(|w| w[0] <= w[1]));
    let out = sincfb(d, &["export-cutoffs", "ck.json", "--sort", "middle", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_grads_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["check-grads"],
        vec!["check-grads", "--decoder", "transposed", "--hop", "3", "--normalization"],
        vec!["check-grads", "--mode", "original", "--seed", "11"],
    ] {
        let text = ok(dir.path(), &args);
        assert!(text.starts_with("PASS max_rel_error="), "{text}");
    }
}

#[test]
fn identical_invocations_write_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        ok(
            d.path(),
            &["init", "--n", "16", "--kernel", "63", "--strategy", "formant", "--seed", "3", "--out", "bank.json"],
        );
        ok(
            d.path(),
            &[
                "synth",
                "--index",
                "5",
                "--tones",
                "300,900",
                "--noise-band",
                "2000,3000",
                "--noisy",
                "n.wav",
                "--clean",
                "c.wav",
            ],
        );
        outputs.push(["bank.json", "n.wav", "c.wav"].map(|f| std::fs::read(d.path().join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
