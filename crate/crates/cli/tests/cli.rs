use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thz_cli::commands::{
    CHECKPOINT_FILE, DEGRADED_FILE, HISTORY_FILE, MANIFEST_FILE, METRICS_FILE, PCA_FILE, PLOT_FILE, PSF_FILE,
    RESTORED_FILE, SPECTRUM_FILE, TRUTH_FILE,
};
use thz_cli::pipeline::run_synthetic;
use thz_cli::{load_config, PipelineConfig};
use thz_core::cube::{encode_cube, read_cube, write_cube, Cube, TimeDomainCube};
use thz_core::nnet::{encode_checkpoint, write_checkpoint, ArchConfig, NetworkParams};

/// Small settings that keep each command under a second or two.
const QUICK: &[&str] = &[
    "arch.widths=4,6,8",
    "train.epochs=2",
    "train.batch_size=2",
    "train.patch_size=16",
    "phantom.bands=8",
    "phantom.df=0.25",
];

fn thz(args: &[&str], extra: &[&str], out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_thz"));
    cmd.args(args).arg("--out").arg(out);
    for kv in extra {
        cmd.arg("--set").arg(kv);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn quick_config() -> PipelineConfig {
    let overrides: Vec<String> = QUICK.iter().map(|s| s.to_string()).collect();
    load_config(None, None, &overrides).unwrap()
}

fn simulated(dir: &Path) -> PathBuf {
    ok(&thz(&["simulate"], QUICK, dir));
    dir.join(DEGRADED_FILE)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulated(a.path());
    simulated(b.path());
    for f in [TRUTH_FILE, DEGRADED_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // The manifest is itself a configuration that regenerates the run.
    let c = tempfile::tempdir().unwrap();
    ok(&thz(&["simulate", "--config", p(&a.path().join(MANIFEST_FILE))], &[], c.path()));
    assert_eq!(
        std::fs::read(a.path().join(DEGRADED_FILE)).unwrap(),
        std::fs::read(c.path().join(DEGRADED_FILE)).unwrap()
    );
}

#[test]
fn different_seeds_give_different_noise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulated(a.path());
    ok(&thz(&["simulate", "--seed", "9"], QUICK, b.path()));
    assert_ne!(
        std::fs::read(a.path().join(DEGRADED_FILE)).unwrap(),
        std::fs::read(b.path().join(DEGRADED_FILE)).unwrap()
    );
}

#[test]
fn invalid_aperture_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = thz(&["simulate"], &["optics.aperture=0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optics.aperture"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = thz(&["simulate"], &["optics.apperture=3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optics.apperture"));
}

#[test]
fn missing_cube_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cube");
    for args in [vec!["fft", p(&missing)], vec!["train", p(&missing)], vec!["pca", "dump", p(&missing)]] {
        let out = thz(&args, QUICK, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).contains("absent.cube"));
    }
}

#[test]
fn corrupt_cube_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cube");
    std::fs::write(&bad, b"BADMAGIC and nothing else").unwrap();
    let out = thz(&["pca", "dump", p(&bad)], QUICK, dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_restore_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    ok(&thz(&["train", p(&degraded)], QUICK, dir.path()));
    let history = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert!(history.starts_with("epoch,loss,term1,term2,term3,psnr\n"));
    assert_eq!(history.lines().count(), 3);

    let ckpt = dir.path().join(CHECKPOINT_FILE);
    ok(&thz(&["restore", p(&degraded), p(&ckpt)], QUICK, dir.path()));
    let restored = dir.path().join(RESTORED_FILE);
    let Cube::Spectral(r) = read_cube(&restored).unwrap() else {
        panic!("restored cube is not spectral")
    };
    assert_eq!((r.height, r.width, r.bands), (64, 64, 8));
    assert!(dir.path().join("bands/band_007.png").exists());

    let truth = dir.path().join(TRUTH_FILE);
    ok(&thz(&["metrics", p(&restored), p(&degraded), "--truth", p(&truth), "--plot"], &[], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(csv.lines().skip(1).all(|l| l.split(',').all(|f| !f.is_empty())));
    assert!(dir.path().join(PLOT_FILE).exists());
}

#[test]
fn stepwise_commands_match_the_in_process_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    ok(&thz(&["train", p(&degraded)], QUICK, dir.path()));
    let ckpt = dir.path().join(CHECKPOINT_FILE);
    ok(&thz(&["restore", p(&degraded), p(&ckpt)], QUICK, dir.path()));

    let run = run_synthetic(&quick_config(), |_| {}).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), encode_checkpoint(&run.outcome.params));
    assert_eq!(
        std::fs::read(dir.path().join(RESTORED_FILE)).unwrap(),
        encode_cube(&Cube::Spectral(run.restored)).unwrap()
    );
}

#[test]
fn metrics_without_truth_leave_truth_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    let truth = dir.path().join(TRUTH_FILE);
    ok(&thz(&["metrics", p(&truth), p(&degraded)], &[], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert!(!fields[2].is_empty() && !fields[5].is_empty());
        assert!(fields[3].is_empty() && fields[4].is_empty(), "{line}");
    }
    assert!(!dir.path().join(PLOT_FILE).exists());
}

#[test]
fn metrics_on_mismatched_cubes_is_a_shape_error() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let small = simulated(a.path());
    ok(&thz(&["simulate"], &["phantom.bands=5"], b.path()));
    let out = thz(&["metrics", p(&small), p(&b.path().join(DEGRADED_FILE))], &[], a.path());
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
}

#[test]
fn restoring_with_another_architecture_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    let ckpt = dir.path().join("wide.thznet");
    write_checkpoint(&NetworkParams::zeros(ArchConfig { widths: [4, 6, 10] }), &ckpt).unwrap();
    let out = thz(&["restore", p(&degraded), p(&ckpt)], QUICK, dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));

    let junk = dir.path().join("junk.thznet");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = thz(&["restore", p(&degraded), p(&junk)], QUICK, dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn zero_network_restores_spatially_flat_bands() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    let ckpt = dir.path().join("zero.thznet");
    write_checkpoint(&NetworkParams::zeros(ArchConfig { widths: [4, 6, 8] }), &ckpt).unwrap();
    ok(&thz(&["restore", p(&degraded), p(&ckpt)], QUICK, dir.path()));
    let Cube::Spectral(r) = read_cube(dir.path().join(RESTORED_FILE)).unwrap() else {
        panic!("restored cube is not spectral")
    };
    for b in 0..r.bands {
        let band = r.band_image(b);
        let (lo, hi) = band.min_max();
        assert_eq!(lo, hi, "band {b} is not constant");
    }
}

#[test]
fn fft_of_a_time_cube() {
    let dir = tempfile::tempdir().unwrap();
    let t = 16;
    let wave: Vec<f32> = (0..t)
        .map(|i| (2.0 * std::f32::consts::PI * 3.0 * i as f32 / t as f32).cos())
        .collect();
    let input = dir.path().join("scan.cube");
    let cube = TimeDomainCube::new(1, 2, t, 0.5, [wave.clone(), wave].concat()).unwrap();
    write_cube(&Cube::Time(cube), &input).unwrap();
    ok(&thz(&["fft", p(&input)], &[], dir.path()));
    let Cube::Spectral(s) = read_cube(dir.path().join(SPECTRUM_FILE)).unwrap() else {
        panic!("fft output is not spectral")
    };
    assert_eq!(s.bands, t / 2 + 1);
    assert_eq!(s.df, 1.0 / (t as f64 * 0.5));
    let spectrum = s.spectrum(0, 1);
    assert!((spectrum[3] - 8.0).abs() < 1e-5);
    assert!(spectrum.iter().enumerate().all(|(k, v)| k == 3 || v.abs() < 1e-5));
}

#[test]
fn psf_and_pca_dumps() {
    let dir = tempfile::tempdir().unwrap();
    ok(&thz(&["psf", "dump", "--freq", "1.0"], &[], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join(PSF_FILE)).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.len() == 9));
    let total: f64 = rows.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-9);

    let degraded = simulated(dir.path());
    ok(&thz(&["pca", "dump", p(&degraded)], QUICK, dir.path()));
    let csv = std::fs::read_to_string(dir.path().join(PCA_FILE)).unwrap();
    assert!(csv.starts_with("index,eigenvalue,cumulative_fraction\n"));
    assert_eq!(csv.lines().count(), 1 + 8);
    let last: f64 = csv.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((last - 1.0).abs() < 1e-12);
}

#[test]
fn outputs_may_not_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let degraded = simulated(dir.path());
    let renamed = dir.path().join(SPECTRUM_FILE);
    std::fs::copy(&degraded, &renamed).unwrap();
    let out = thz(&["fft", p(&renamed)], QUICK, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read(&renamed).unwrap(), std::fs::read(&degraded).unwrap());
}
