use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdnopt::io::{read_wav, write_wav};
use fdnopt::metrics::estimate_t60;
use fdnopt::{render_ir, FdnConfig};
use serde_json::Value;
use tempfile::TempDir;

fn fdnopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdnopt"))
        .args(args)
        .env("FDNOPT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fdnopt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fdnopt(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn config(path: &Path) -> FdnConfig {
    FdnConfig::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_design(dir: &Path, seed: &str) {
    ok(&["design", "--n", "4", "--range", "31:97", "--seed", seed, "--out", p(dir)]);
}

fn small_optimize(cfg: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "optimize",
        "--config",
        p(cfg),
        "--grid-size",
        "4000",
        "--batch-size",
        "200",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

#[test]
fn design_writes_distinct_primes() {
    let t = TempDir::new().unwrap();
    ok(&["design", "--n", "4", "--range", "1499:2999", "--min-order", "6000", "--out", p(t.path())]);
    let cfg = config(&t.path().join("config.json"));
    assert_eq!(cfg.n(), 4);
    assert!(cfg.delays.iter().all(|&m| is_prime(m)));
    assert!(cfg.delays.windows(2).all(|w| w[0] < w[1]));
    assert!(cfg.order() >= 6000);
}

#[test]
fn design_is_deterministic() {
    let t = TempDir::new().unwrap();
    small_design(&t.path().join("a"), "7");
    small_design(&t.path().join("b"), "7");
    small_design(&t.path().join("c"), "8");
    let read = |d: &str| fs::read(t.path().join(d).join("config.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn usage_errors_exit_with_one() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&["design", "--out", p(t.path())]), 1);
    assert_eq!(code(&["design", "--n", "4", "--range", "oops", "--out", p(t.path())]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["design", "--n", "3", "--range", "10:30", "--min-order", "1000", "--out", p(t.path())]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn thread_variable_is_validated() {
    let t = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fdnopt"))
        .args(["design", "--n", "2", "--range", "31:97", "--out", p(t.path())])
        .env("FDNOPT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn optimize_lowers_the_loss_and_writes_artifacts() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "3");
    let out = t.path().join("o");
    let line = small_optimize(&design.join("config.json"), &out, &["--epochs", "4"]);
    assert!(line.contains("initial loss"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let initial = report["initial_train"]["total"].as_f64().unwrap();
    let last = report["epochs"].as_array().unwrap().last().unwrap()["train"]["total"].as_f64().unwrap();
    assert!(last < initial);
    assert_eq!(report["epochs"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 4);
    let ckpt = config(&out.join("checkpoint.json"));
    assert_eq!(ckpt.delays, config(&design.join("config.json")).delays);
    assert_eq!(ckpt.direct_gain, 0.0);
}

#[test]
fn alpha_zero_is_recorded() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "1");
    let out = t.path().join("o");
    small_optimize(&design.join("config.json"), &out, &["--epochs", "1", "--alpha", "0"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["initial_train"]["alpha"].as_f64(), Some(0.0));
    let e = &report["epochs"][0]["train"];
    assert_eq!(e["total"].as_f64(), e["spectral"].as_f64());
}

#[test]
fn zero_epochs_keep_the_initialization() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "2");
    let out = t.path().join("o");
    small_optimize(&design.join("config.json"), &out, &["--epochs", "0"]);
    assert_eq!(config(&out.join("checkpoint.json")), config(&design.join("config.json")));
}

#[test]
fn reruns_have_identical_digests() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "5");
    let digests = |dir: &Path| -> Vec<String> {
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        let outputs = m["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        outputs
            .iter()
            .map(|o| {
                let path = o["path"].as_str().unwrap();
                let name = Path::new(path).file_name().unwrap().to_str().unwrap().to_string();
                format!("{name}:{}", o["sha256"].as_str().unwrap())
            })
            .collect()
    };
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    small_optimize(&design.join("config.json"), &a, &["--epochs", "2"]);
    small_optimize(&design.join("config.json"), &b, &["--epochs", "2"]);
    assert_eq!(digests(&a), digests(&b));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "optimize");
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["started"].is_string() && manifest["timings"].is_object());
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn render_hits_the_requested_t60() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    ok(&["design", "--n", "8", "--range", "809:1499", "--seed", "4", "--out", p(&design)]);
    let out = t.path().join("r");
    ok(&["render", "--config", p(&design.join("config.json")), "--t60", "2.0", "--length", "4", "--out", p(&out)]);
    let (ir, fs) = read_wav(out.join("ir.wav")).unwrap();
    assert_eq!(fs, 48_000);
    assert_eq!(ir.len(), 4 * 48_000);
    let t60 = estimate_t60(&ir, fs as f64, 0.0).unwrap().t60;
    assert!((t60 / 2.0 - 1.0).abs() < 0.05, "estimated {t60}");
}

#[test]
fn infinite_t60_renders_the_lossless_system() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "6");
    let out = t.path().join("r");
    ok(&["render", "--config", p(&design.join("config.json")), "--t60", "inf", "--length", "0.05", "--out", p(&out)]);
    let (ir, _) = read_wav(out.join("ir.wav")).unwrap();
    let mut lossless = config(&design.join("config.json"));
    lossless.gamma = 1.0;
    let want = render_ir(&lossless, ir.len()).unwrap();
    for (a, b) in ir.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
    }
}

#[test]
fn frequency_dependent_render_needs_a_spec() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "1");
    let cfg = design.join("config.json");
    assert_eq!(code(&["render", "--config", p(&cfg), "--freq-dependent", "--out", p(t.path())]), 1);
    assert_eq!(code(&["render", "--config", p(&cfg), "--t60", "1", "--gamma", "0.9", "--out", p(t.path())]), 1);
}

#[test]
fn frequency_dependent_render_follows_the_spec() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    ok(&["design", "--n", "8", "--range", "809:1499", "--t60", "inf", "--seed", "2", "--out", p(&design)]);
    let spec = t.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"band_t60":[1.5,1.5,1.4,1.2,1.0,0.8,0.6,0.5],"dc_t60":1.5,"nyquist_t60":0.5}"#,
    )
    .unwrap();
    let out = t.path().join("r");
    ok(&[
        "render",
        "--config",
        p(&design.join("config.json")),
        "--freq-dependent",
        "--spec",
        p(&spec),
        "--length",
        "3",
        "--out",
        p(&out),
    ]);
    let analysis = t.path().join("a");
    ok(&["analyze", "--wav", p(&out.join("ir.wav")), "--out", p(&analysis)]);
    let bands: Value = serde_json::from_str(&fs::read_to_string(analysis.join("bands.json")).unwrap()).unwrap();
    let want = [1.5, 1.5, 1.4, 1.2, 1.0, 0.8, 0.6, 0.5];
    for (b, w) in bands.as_array().unwrap().iter().zip(want).skip(1).take(6) {
        let got = b["t60"].as_f64().unwrap();
        assert!((got / w - 1.0).abs() < 0.15, "{}: {got} vs {w}", b["center_hz"]);
    }
    assert!(analysis.join("spec.json").exists());
}

#[test]
fn analyze_reports_modes_and_operation_counts() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    small_design(&design, "0");
    let out = t.path().join("a");
    let line = ok(&[
        "analyze",
        "--config",
        p(&design.join("config.json")),
        "--f-lo",
        "100",
        "--f-hi",
        "300",
        "--render-seconds",
        "0.2",
        "--out",
        p(&out),
    ]);
    assert!(line.contains("std_db"));
    let ex: Value = serde_json::from_str(&fs::read_to_string(out.join("excitation.json")).unwrap()).unwrap();
    assert_eq!(ex["order"].as_u64(), Some(242));
    assert!(ex["std_db"].as_f64().unwrap() > 0.0);
    let modal = fs::read_to_string(out.join("modal.csv")).unwrap();
    assert!(modal.starts_with("pole_re,"));
    let ops: Value = serde_json::from_str(&fs::read_to_string(out.join("operations.json")).unwrap()).unwrap();
    assert_eq!(ops["operations_per_sample"].as_u64(), Some(208));
    assert_eq!(ops["all_types"]["DiffFDN-HH"].as_u64(), Some(200));
    assert_eq!(ops["all_types"]["DiffFDN-SCAT"].as_u64(), Some(288));
    let mag = fs::read_to_string(out.join("magnitude.csv")).unwrap();
    assert_eq!(mag.lines().count(), 1 + 201);
}

#[test]
fn analyze_reports_counts_for_larger_sizes() {
    let t = TempDir::new().unwrap();
    for (n, range, hh, scat) in [("6", "997:2099", "300", "480"), ("8", "809:1499", "400", "704")] {
        let design = t.path().join(format!("d{n}"));
        ok(&["design", "--n", n, "--range", range, "--out", p(&design)]);
        let out = t.path().join(format!("a{n}"));
        ok(&[
            "analyze",
            "--config",
            p(&design.join("config.json")),
            "--no-modal",
            "--f-lo",
            "100",
            "--f-hi",
            "110",
            "--render-seconds",
            "0.05",
            "--out",
            p(&out),
        ]);
        let ops: Value = serde_json::from_str(&fs::read_to_string(out.join("operations.json")).unwrap()).unwrap();
        assert_eq!(ops["all_types"]["DiffFDN-HH"].as_u64(), Some(hh.parse().unwrap()));
        assert_eq!(ops["all_types"]["DiffFDN-SCAT"].as_u64(), Some(scat.parse().unwrap()));
    }
}

#[test]
fn analyze_rejects_modal_scattering() {
    let t = TempDir::new().unwrap();
    let design = t.path().join("d");
    ok(&["design", "--n", "4", "--range", "31:97", "--matrix", "scattering", "--out", p(&design)]);
    let out = t.path().join("a");
    let failed = fdnopt(&["analyze", "--config", p(&design.join("config.json")), "--out", p(&out)]);
    assert_eq!(failed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("unsupported"));
    ok(&[
        "analyze",
        "--config",
        p(&design.join("config.json")),
        "--no-modal",
        "--f-lo",
        "100",
        "--f-hi",
        "110",
        "--render-seconds",
        "0.05",
        "--out",
        p(&out),
    ]);
}

#[test]
fn analyze_noise_wav_is_dense() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let t = TempDir::new().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let noise: Vec<f64> = (0..48_000).map(|_| normal.sample(&mut rng)).collect();
    let wav = t.path().join("noise.wav");
    write_wav(&wav, &noise, 48_000).unwrap();
    let out = t.path().join("a");
    ok(&["analyze", "--wav", p(&wav), "--out", p(&out)]);
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("echo_summary.json")).unwrap()).unwrap();
    assert!((s["mean_echo_density"].as_f64().unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn numerical_failures_exit_with_two() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"delays":[3,5],"input_gains":[1,1],"output_gains":[1,1],"feedback":{"type":"householder","v":[0,0]},"gamma":0.9,"sample_rate":48000}"#,
    )
    .unwrap();
    assert_eq!(code(&["render", "--config", p(&cfg), "--length", "0.01", "--out", p(t.path())]), 2);
}

#[test]
fn repro_runs_a_reduced_recipe() {
    let t = TempDir::new().unwrap();
    let recipe = t.path().join("recipe.json");
    fs::write(
        &recipe,
        r#"{"sample_rate":8000,"gamma":0.999,"alpha":1.0,"learning_rate":0.001,"epochs":2,"batch_size":200,
            "matrix":"orthogonal","sizes":[{"n":4,"delays":[31,47,67,97]}],
            "desk":{"grid_size":2000,"seeds":2},"full":{"grid_size":20000,"seeds":4}}"#,
    )
    .unwrap();
    let out = t.path().join("r");
    ok(&["repro", "--config", p(&recipe), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["runs"].as_u64(), Some(2));
    assert!(out.join("checkpoints/n4_seed1.json").exists());
}
