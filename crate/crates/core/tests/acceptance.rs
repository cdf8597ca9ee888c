//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails unexpectedly.
//!
//! `FDNOPT_ACCEPT=3,7` runs a subset.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use fdnopt::fdn::{eval_transfer_generic, eval_transfer_householder};
use fdnopt::metrics::{comb_energy, echo_density_at_rate, estimate_t60_bands, operation_count_named, OCTAVE_CENTERS};
use fdnopt::modal::{dense_poles, excitation_stats, match_poles, modal_decomposition, solve_poles};
use fdnopt::optim::{evaluate_loss, initial_config, loss_gradients, pack_params, train, unpack_params, LossOptions, TrainConfig};
use fdnopt::param::{gamma_from_t60, min_training_t60, paraunitary_error, t60_from_gamma};
use fdnopt::reverb::{render_fd_ir, AttenuationSpec};
use fdnopt::{eval_transfer, render_ir, Execution, FdnConfig, FeedbackParam, FrequencyPoint, MatrixKind, StageAbsorption};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DELAYS_N4: [usize; 4] = [1499, 1889, 2381, 2999];
const DELAYS_N8: [usize; 8] = [809, 877, 937, 1049, 1151, 1249, 1373, 1499];
const FS: u32 = 48_000;

// Pinned tolerances.
const COMB_200: (f64, f64) = (25.5, 0.1);
const COMB_2000: (f64, f64) = (3.0, 0.05);
const ROUND_TRIP_TOL: f64 = 1e-12;
const BOUND_8944: (f64, f64) = (0.1366, 1e-4);
const GRAD_REL_TOL: f64 = 1e-5;
const GRAD_ABS_TOL: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;
const ORTHO_TOL: f64 = 1e-10;
const PARAUNITARY_TOL: f64 = 1e-10;
const HOUSEHOLDER_TOL: f64 = 1e-10;
const MODULUS_TOL: f64 = 1e-8;
const POLE_MATCH_TOL: f64 = 1e-8;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const DFT_REL_TOL: f64 = 1e-6;
const STD_DROP_DB: f64 = 2.5;
const STD_DROP_MIN_SEEDS: usize = 8;
const INITIAL_STD_TARGET: (f64, f64) = (7.83, 0.5);
const BAND_T60_REL_TOL: f64 = 0.10;
const UNIFORM_RMS_TOL: f64 = 1e-3;

/// Criteria whose failure is recorded and explained in the decisions
/// ledger. They still print FAIL; an unexpected pass prints XPASS.
const KNOWN_RED: &[&str] = &["7a", "7b"];

struct Check {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, title: &'static str, pass: bool, detail: String) -> Check {
    Check { id, title, pass, detail }
}

fn criterion_1() -> Vec<Check> {
    let e200 = comb_energy(0.9999, 200).unwrap();
    let e2000 = comb_energy(0.9999, 2000).unwrap();
    let energy_ok = (e200 - COMB_200.0).abs() <= COMB_200.1 && (e2000 - COMB_2000.0).abs() <= COMB_2000.1;

    let mut worst = 0.0f64;
    for &g in &[0.5, 0.9, 0.99, 0.999, 0.9999, 0.99999] {
        let back = gamma_from_t60(t60_from_gamma(g, 48_000.0).unwrap(), 48_000.0).unwrap();
        worst = worst.max(((back - g) / g).abs());
    }
    let bound = min_training_t60(8944, 48_000.0);
    let bound_ok = (bound - BOUND_8944.0).abs() <= BOUND_8944.1;
    vec![check(
        "1",
        "closed-form fidelity",
        energy_ok && worst <= ROUND_TRIP_TOL && bound_ok,
        format!("comb energies {e200:.3} / {e2000:.4}, gamma round trip {worst:.1e}, bound {bound:.5} s"),
    )]
}

fn criterion_2() -> Vec<Check> {
    let table = [
        ("RO", [208, 324, 448]),
        ("DiffFDN-O", [208, 324, 448]),
        ("DiffFDN-HH", [200, 300, 400]),
        ("DiffFDN-SCAT", [288, 480, 704]),
    ];
    let mut hits = 0;
    for (name, row) in table {
        for (n, want) in [4, 6, 8].into_iter().zip(row) {
            if operation_count_named(name, n, 4).unwrap() == want {
                hits += 1;
            }
        }
    }
    let plain = operation_count_named("plain32", 32, 0).unwrap();
    vec![check(
        "2",
        "operation counts",
        hits == 12 && plain == 2560,
        format!("{hits}/12 table entries, plain N=32 -> {plain}"),
    )]
}

fn random_delays(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut d: Vec<usize> = Vec::with_capacity(n);
    while d.len() < n {
        let m = rng.random_range(lo..hi);
        if !d.contains(&m) {
            d.push(m);
        }
    }
    d
}

fn finite_difference(cfg: &FdnConfig, pts: &[FrequencyPoint], opts: LossOptions) -> Vec<f64> {
    let theta = pack_params(cfg);
    (0..theta.len())
        .map(|i| {
            let eval = |delta: f64| {
                let mut c = cfg.clone();
                let mut t = theta.clone();
                t[i] += delta;
                unpack_params(&mut c, &t);
                evaluate_loss(&c, pts, opts, Execution::Sequential).unwrap().total
            };
            (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn criterion_3() -> Vec<Check> {
    let mut worst_rel = 0.0f64;
    let mut failures = 0usize;
    let mut configs = 0usize;
    for n in [4usize, 6, 8] {
        for kind in [MatrixKind::Orthogonal, MatrixKind::Householder, MatrixKind::Scattering] {
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + seed);
                let delays = random_delays(&mut rng, n, 5, 60);
                let mut cfg = initial_config(&delays, kind, 0.995, FS, seed).unwrap();
                if let FeedbackParam::Scattering { absorption, .. } = &mut cfg.feedback {
                    if seed % 2 == 1 {
                        *absorption = StageAbsorption::PerStage;
                    }
                }
                let pts: Vec<FrequencyPoint> = (0..16)
                    .map(|_| FrequencyPoint::from_angle(rng.random_range(0.0..PI)))
                    .collect();
                let opts = LossOptions::default();
                let g = loss_gradients(&cfg, &pts, opts).unwrap();
                let fd = finite_difference(&cfg, &pts, opts);
                for (a, f) in g.params.iter().zip(&fd) {
                    let err = (a - f).abs();
                    let scale = a.abs().max(f.abs());
                    if err > GRAD_ABS_TOL {
                        worst_rel = worst_rel.max(err / scale);
                        if err > GRAD_REL_TOL * scale {
                            failures += 1;
                        }
                    }
                }
                configs += 1;
            }
        }
    }
    vec![check(
        "3",
        "gradient suite",
        failures == 0,
        format!("{configs} configs, {failures} coordinates out of tolerance, worst relative error {worst_rel:.1e}"),
    )]
}

fn criterion_4() -> Vec<Check> {
    // orthogonality after every epoch
    let mut worst_ortho = 0.0f64;
    for (k, kind) in [MatrixKind::Orthogonal, MatrixKind::Householder, MatrixKind::Scattering]
        .into_iter()
        .enumerate()
    {
        let fdn = initial_config(&[89, 97, 101, 103], kind, 0.9999, FS, k as u64).unwrap();
        let mut tc = TrainConfig::new(fdn);
        tc.grid_size = 4000;
        tc.batch_size = 400;
        tc.epochs = 3;
        tc.gamma = 0.999;
        tc.seed = k as u64;
        let report = train(&tc).unwrap();
        for e in &report.epochs {
            worst_ortho = worst_ortho.max(e.orthogonality_error);
        }
    }

    // paraunitarity at random unit-circle points
    let mut worst_para = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for seed in 0..4u64 {
        let cfg = initial_config(&[31, 37, 41, 43], MatrixKind::Scattering, 1.0, FS, seed).unwrap();
        let op = cfg.operator().unwrap();
        for _ in 0..16 {
            let z = C64::from_polar(1.0, rng.random_range(-PI..PI));
            worst_para = worst_para.max(paraunitary_error(&op, z).unwrap());
        }
    }

    // Householder fast path vs generic solve
    let mut worst_hh = 0.0f64;
    for seed in 0..10u64 {
        let delays = random_delays(&mut rng, 6, 20, 400);
        let cfg = initial_config(&delays, MatrixKind::Householder, 0.999, FS, seed).unwrap();
        let pts: Vec<FrequencyPoint> = (0..64)
            .map(|_| FrequencyPoint::from_angle(rng.random_range(0.0..PI)))
            .collect();
        let fast = eval_transfer_householder(&cfg, &pts).unwrap();
        let slow = eval_transfer_generic(&cfg, &pts).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            worst_hh = worst_hh.max((a.total - b.total).norm() / b.total.norm());
        }
    }

    // homogeneous pole moduli
    let mut worst_mod = 0.0f64;
    for (seed, kind) in [(1u64, MatrixKind::Orthogonal), (2, MatrixKind::Householder), (3, MatrixKind::Orthogonal)] {
        let gamma = 0.999;
        let cfg = initial_config(&[1499, 1889, 2381, 2999], kind, gamma, FS, seed).unwrap();
        let a = cfg.operator().unwrap().matrix().unwrap();
        for p in solve_poles(&a, &cfg.delays, gamma).unwrap() {
            worst_mod = worst_mod.max((p.norm() - gamma).abs());
        }
    }

    vec![check(
        "4",
        "structural invariants",
        worst_ortho < ORTHO_TOL && worst_para < PARAUNITARY_TOL && worst_hh < HOUSEHOLDER_TOL && worst_mod < MODULUS_TOL,
        format!(
            "orthogonality {worst_ortho:.1e}, paraunitarity {worst_para:.1e}, householder {worst_hh:.1e}, pole modulus {worst_mod:.1e}"
        ),
    )]
}

fn criterion_5() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst_match = 0.0f64;
    let mut worst_rec = 0.0f64;
    let configs = 24;
    for seed in 0..configs as u64 {
        let n = rng.random_range(2..6);
        let delays = random_delays(&mut rng, n, 2, 17);
        let kind = if seed % 3 == 0 { MatrixKind::Householder } else { MatrixKind::Orthogonal };
        let gamma = rng.random_range(0.97..0.999);
        let mut cfg = initial_config(&delays, kind, gamma, FS, seed).unwrap();
        cfg.direct_gain = rng.random_range(-0.5..0.5);
        assert!(cfg.order() <= 64);
        let a = cfg.operator().unwrap().matrix().unwrap();
        let roots = solve_poles(&a, &cfg.delays, gamma).unwrap();
        let oracle = dense_poles(&a, &cfg.delays).unwrap();
        worst_match = worst_match.max(match_poles(&roots, &oracle).unwrap());
        let d = modal_decomposition(&cfg).unwrap();
        let h = render_ir(&cfg, 1001).unwrap();
        let r = d.reconstruct(1001);
        for k in 1..=1000 {
            worst_rec = worst_rec.max((h[k] - r[k]).abs());
        }
    }
    vec![check(
        "5",
        "modal oracle equivalence",
        worst_match < POLE_MATCH_TOL && worst_rec < RECONSTRUCTION_TOL,
        format!("{configs} configs, pole mismatch {worst_match:.1e}, reconstruction error {worst_rec:.1e}"),
    )]
}

fn dft_at(h: &[f64], k: usize) -> C64 {
    let l = h.len();
    h.iter()
        .enumerate()
        .map(|(n, &x)| C64::from_polar(x, -2.0 * PI * ((k * n) % l) as f64 / l as f64))
        .sum()
}

fn criterion_6() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst = 0.0f64;
    let len = 1 << 14;
    for seed in 0..5u64 {
        let delays = random_delays(&mut rng, 4, 10, 200);
        let gamma = rng.random_range(0.95..0.99);
        let kind = [MatrixKind::Orthogonal, MatrixKind::Householder, MatrixKind::Scattering][seed as usize % 3];
        let mut cfg = initial_config(&delays, kind, gamma, FS, seed).unwrap();
        cfg.direct_gain = 0.25;
        let h = render_ir(&cfg, len).unwrap();
        let bins: Vec<usize> = (0..40).map(|_| rng.random_range(0..len / 2)).collect();
        let pts: Vec<FrequencyPoint> = bins
            .iter()
            .map(|&k| FrequencyPoint::from_angle(2.0 * PI * k as f64 / len as f64))
            .collect();
        let tf = eval_transfer(&cfg, &pts).unwrap();
        for (&k, s) in bins.iter().zip(&tf) {
            worst = worst.max((dft_at(&h, k) - s.total).norm() / s.total.norm());
        }
    }
    vec![check(
        "6",
        "frequency/time consistency",
        worst < DFT_REL_TOL,
        format!("worst relative DFT mismatch {worst:.1e}"),
    )]
}

fn desk_train_config(seed: u64, alpha: f64) -> TrainConfig {
    desk_train_config_for(&DELAYS_N4, seed, alpha)
}

fn desk_train_config_for(delays: &[usize], seed: u64, alpha: f64) -> TrainConfig {
    let fdn = initial_config(delays, MatrixKind::Orthogonal, 0.9999, FS, seed).unwrap();
    let mut tc = TrainConfig::new(fdn);
    tc.grid_size = 48_000;
    tc.batch_size = 2000;
    tc.epochs = 20;
    tc.learning_rate = 1e-3;
    tc.alpha = alpha;
    tc.gamma = 0.9999;
    tc.seed = seed;
    tc
}

fn modal_std(cfg: &FdnConfig) -> f64 {
    let d = modal_decomposition(cfg).unwrap();
    assert_eq!(d.order, 8768);
    excitation_stats(&d).unwrap().std_db
}

fn criterion_7() -> Vec<Check> {
    let seeds = 10u64;
    let mut drops = Vec::new();
    let mut initial = Vec::new();
    let mut finals = Vec::new();
    for seed in 0..seeds {
        let tc = desk_train_config(seed, 1.0);
        let before = modal_std(&tc.fdn);
        let report = train(&tc).unwrap();
        let after = modal_std(&report.final_config);
        println!("    seed {seed}: std {before:.3} dB -> {after:.3} dB");
        initial.push(before);
        finals.push(after);
        drops.push(before - after);
    }
    let improved = drops.iter().filter(|&&d| d >= STD_DROP_DB).count();
    let mean_init = initial.iter().sum::<f64>() / initial.len() as f64;
    let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
    vec![
        check(
            "7a",
            "optimization lowers modal-excitation std",
            improved >= STD_DROP_MIN_SEEDS,
            format!(
                "{improved}/{seeds} seeds drop by >= {STD_DROP_DB} dB (mean {mean_init:.3} -> {mean_final:.3} dB)"
            ),
        ),
        check(
            "7b",
            "initial modal-excitation std matches the reference mean",
            (mean_init - INITIAL_STD_TARGET.0).abs() <= INITIAL_STD_TARGET.1,
            format!("mean initial std {mean_init:.3} dB, target {} +/- {} dB", INITIAL_STD_TARGET.0, INITIAL_STD_TARGET.1),
        ),
    ]
}

fn time_to_dense(cfg: &FdnConfig) -> f64 {
    let mut c = cfg.clone();
    c.gamma = 0.9999;
    let h = render_ir(&c, FS as usize).unwrap();
    let p = echo_density_at_rate(&h, FS as f64).unwrap();
    p.time_to(0.9).map_or(f64::INFINITY, |t| t as f64 / FS as f64)
}

fn criterion_8() -> Vec<Check> {
    let seed = 0;
    let base = desk_train_config_for(&DELAYS_N8, seed, 1.0);
    let t_init = time_to_dense(&base.fdn);
    let sparse = train(&base).unwrap();
    let t_sparse = time_to_dense(&sparse.final_config);
    let dense_only = train(&desk_train_config_for(&DELAYS_N8, seed, 0.0)).unwrap();
    let t_plain = time_to_dense(&dense_only.final_config);
    vec![check(
        "8",
        "echo-density buildup ordering",
        t_init.is_finite() && t_sparse <= t_plain && t_plain <= t_init,
        format!("time to 0.9: alpha=1 {t_sparse:.3} s, alpha=0 {t_plain:.3} s, init {t_init:.3} s"),
    )]
}

fn criterion_9() -> Vec<Check> {
    let fs = FS as f64;
    let band_t60: Vec<f64> = (0..8).map(|b| 2.0 * 0.25f64.powf(b as f64 / 7.0)).collect();
    let spec = AttenuationSpec {
        dc_t60: band_t60[0],
        nyquist_t60: band_t60[7],
        band_t60: band_t60.clone(),
        ..AttenuationSpec::uniform(1.0)
    };
    let mut prototype = train(&desk_train_config(0, 1.0)).unwrap().final_config;
    prototype.gamma = 1.0;
    let ir = render_fd_ir(&prototype, &spec, 3 * FS as usize).unwrap();
    let mut worst = 0.0f64;
    let mut errors = 0;
    for (b, est) in estimate_t60_bands(&ir, fs, &OCTAVE_CENTERS).into_iter().enumerate() {
        if !(125.0..=4000.0).contains(&OCTAVE_CENTERS[b]) {
            continue;
        }
        match est {
            Ok(e) => worst = worst.max((e.t60 / band_t60[b] - 1.0).abs()),
            Err(_) => errors += 1,
        }
    }

    let t60 = 1.5;
    let damped = FdnConfig {
        gamma: gamma_from_t60(t60, fs).unwrap(),
        ..prototype.clone()
    };
    let fd = render_fd_ir(&prototype, &AttenuationSpec::uniform(t60), FS as usize).unwrap();
    let h = render_ir(&damped, FS as usize).unwrap();
    let err: f64 = fd.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = h.iter().map(|b| b * b).sum();
    let rms = (err / norm).sqrt();

    vec![check(
        "9",
        "frequency-dependent decay",
        errors == 0 && worst <= BAND_T60_REL_TOL && rms <= UNIFORM_RMS_TOL,
        format!("worst band T60 error {:.1}% (125 Hz-4 kHz), uniform-spec RMS {rms:.1e}", 100.0 * worst),
    )]
}

fn main() -> ExitCode {
    let selected: Option<Vec<String>> = std::env::var("FDNOPT_ACCEPT")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect());
    let criteria: [(&str, fn() -> Vec<Check>); 9] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
    ];
    let mut unexpected = 0;
    for (id, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.iter().any(|x| x == id)) {
            continue;
        }
        let start = Instant::now();
        for c in run() {
            let known = KNOWN_RED.contains(&c.id);
            let tag = match (c.pass, known) {
                (true, false) => "PASS",
                (true, true) => "XPASS",
                (false, true) => "FAIL (known, see README)",
                (false, false) => {
                    unexpected += 1;
                    "FAIL"
                }
            };
            println!(
                "criterion {}: {tag} - {}: {} [{:.1} s]",
                c.id,
                c.title,
                c.detail,
                start.elapsed().as_secs_f64()
            );
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
