use fdnopt::metrics::{echo_density_at_rate, estimate_t60_bands, magnitude_response, OCTAVE_CENTERS};
use fdnopt::modal::{excitation_stats, modal_decomposition};
use fdnopt::optim::{design_delays, initial_config, train, train_with, TrainConfig};
use fdnopt::param::{gamma_from_t60, t60_from_gamma};
use fdnopt::reverb::{render_fd_ir, AttenuationSpec};
use fdnopt::{render_ir, Execution, FdnConfig, MatrixKind};

fn small_train(kind: MatrixKind, seed: u64) -> TrainConfig {
    let delays = design_delays(4, 31, 97, 0).unwrap();
    let fdn = initial_config(&delays, kind, 0.999, 8000, seed).unwrap();
    let mut tc = TrainConfig::new(fdn);
    tc.grid_size = 4000;
    tc.batch_size = 200;
    tc.epochs = 5;
    tc.gamma = 0.999;
    tc.seed = seed;
    tc
}

#[test]
fn design_train_analyze_render() {
    for kind in [MatrixKind::Orthogonal, MatrixKind::Householder, MatrixKind::Scattering] {
        let tc = small_train(kind, 4);
        let report = train(&tc).unwrap();
        assert_eq!(report.epochs.len(), 5);
        assert!(report.final_train().total < report.initial_train.total, "{kind:?}");
        assert_eq!(report.final_config.delays, tc.fdn.delays);
        assert_eq!(report.final_config.direct_gain, 0.0);

        let back = FdnConfig::from_json(&report.final_config.to_json().unwrap()).unwrap();
        assert_eq!(back, report.final_config);

        if kind != MatrixKind::Scattering {
            let d = modal_decomposition(&report.final_config).unwrap();
            assert_eq!(d.multiplicities.iter().sum::<usize>(), report.final_config.order());
            let h = render_ir(&report.final_config, 300).unwrap();
            let r = d.reconstruct(300);
            for n in 1..300 {
                assert!((h[n] - r[n]).abs() < 1e-8, "{kind:?} n = {n}");
            }
            assert!(excitation_stats(&d).unwrap().std_db.is_finite());
        }
    }
}

#[test]
fn sequential_and_parallel_training_agree() {
    let tc = small_train(MatrixKind::Orthogonal, 11);
    let a = train_with(&tc, Execution::Sequential).unwrap();
    let b = train_with(&tc, Execution::Parallel).unwrap();
    assert_eq!(a.final_config, b.final_config);
    assert_eq!(a.final_train(), b.final_train());
}

#[test]
fn homogeneous_render_has_the_requested_decay() {
    let fs = 48_000.0;
    let t60 = 0.6;
    let cfg = initial_config(
        &[809, 877, 937, 1049, 1151, 1249, 1373, 1499],
        MatrixKind::Orthogonal,
        gamma_from_t60(t60, fs).unwrap(),
        48_000,
        2,
    )
    .unwrap();
    assert!((t60_from_gamma(cfg.gamma, fs).unwrap() - t60).abs() < 1e-9);
    let h = render_ir(&cfg, 48_000).unwrap();
    let bands = estimate_t60_bands(&h, fs, &OCTAVE_CENTERS[2..6]);
    for b in bands {
        let b = b.unwrap();
        assert!((b.t60 / t60 - 1.0).abs() < 0.1, "{} Hz: {}", b.center_hz, b.t60);
    }
    assert!(echo_density_at_rate(&h, fs).unwrap().values.iter().all(|v| *v >= 0.0));
    let spectrum = magnitude_response(&cfg, 100.0, 200.0, 1.0).unwrap();
    assert!(spectrum.iter().all(|p| p.magnitude_db.is_finite()));
}

#[test]
fn frequency_dependent_render_is_finite_and_decays() {
    let cfg = initial_config(&[499, 613, 701, 853], MatrixKind::Householder, 1.0, 48_000, 5).unwrap();
    let spec = AttenuationSpec {
        band_t60: vec![1.2, 1.1, 1.0, 0.9, 0.8, 0.6, 0.5, 0.4],
        dc_t60: 1.2,
        nyquist_t60: 0.4,
        ..AttenuationSpec::uniform(1.0)
    };
    let h = render_fd_ir(&cfg, &spec, 48_000).unwrap();
    assert!(h.iter().all(|v| v.is_finite()));
    let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    assert!(energy(&h[40_000..]) < 1e-3 * energy(&h[..8000]));
}
