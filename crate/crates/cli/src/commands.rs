use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use fdnopt::metrics::{
    echo_density_at_rate, estimate_t60_bands, magnitude_report, operation_count_named, FdnType, OCTAVE_CENTERS,
};
use fdnopt::modal::{excitation_stats, modal_decomposition};
use fdnopt::optim::{design_delays, init_params, initial_config, train, TrainConfig, TrainReport};
use fdnopt::param::gamma_from_t60;
use fdnopt::reverb::{render_fd_ir, AttenuationSpec};
use fdnopt::{render_ir, FdnConfig, FeedbackParam, MatrixKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::Recorder;
use crate::{usage, AnalyzeArgs, DesignArgs, OptimizeArgs, RenderArgs, ReproArgs, Scale};

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("expected LOW:HIGH, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

/// `inf` maps to the lossless gain.
fn gamma_for(t60: f64, fs: f64) -> Result<f64> {
    if t60.is_infinite() && t60 > 0.0 {
        Ok(1.0)
    } else {
        Ok(gamma_from_t60(t60, fs)?)
    }
}

/// FDN from a config, a training config or a training report.
fn load_fdn(path: &Path) -> Result<FdnConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if let Ok(c) = serde_json::from_str::<FdnConfig>(&text) {
        c
    } else if let Ok(t) = serde_json::from_str::<TrainConfig>(&text) {
        t.fdn
    } else if let Ok(r) = serde_json::from_str::<TrainReport>(&text) {
        r.final_config
    } else {
        return Err(usage(format!(
            "{} is neither an FDN config, a training config nor a training report",
            path.display()
        )));
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<TrainConfig>(&text) {
        Ok(t) => Ok(t),
        Err(_) => {
            let fdn = load_fdn(path)?;
            let gamma = fdn.gamma;
            let mut t = TrainConfig::new(fdn);
            if gamma < 1.0 {
                t.gamma = gamma;
            }
            Ok(t)
        }
    }
}

pub fn design(a: &DesignArgs) -> Result<()> {
    let (lo, hi) = parse_range(&a.range)?;
    let fs = a.sample_rate as f64;
    let gamma = match (a.gamma, a.t60) {
        (Some(g), _) => g,
        (None, Some(t)) => gamma_for(t, fs)?,
        (None, None) => 0.9999,
    };
    let delays = design_delays(a.n, lo, hi, a.min_order)?;
    let cfg = initial_config(&delays, a.matrix.into(), gamma, a.sample_rate, a.seed)?;
    let mut rec = Recorder::new("design", &a.out)?;
    rec.seed(a.seed);
    rec.write_json("config.json", &cfg)?;
    rec.finish()?;
    println!("delays {:?} (order {})", cfg.delays, cfg.order());
    Ok(())
}

pub fn optimize(a: &OptimizeArgs) -> Result<()> {
    let mut tc = load_train_config(&a.config)?;
    if let Some(seed) = a.seed {
        tc.seed = seed;
    }
    if let Some(m) = a.matrix {
        let p = init_params(tc.fdn.n(), m.into(), tc.seed)?;
        tc.fdn.input_gains = p.input_gains;
        tc.fdn.output_gains = p.output_gains;
        tc.fdn.feedback = p.feedback;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(alpha) = a.alpha {
        tc.alpha = alpha;
    }
    if let Some(g) = a.gamma {
        tc.gamma = g;
    }
    if let Some(t) = a.t60 {
        tc.gamma = gamma_for(t, tc.fdn.sample_rate as f64)?;
    }
    if let Some(m) = a.grid_size {
        tc.grid_size = m;
    }
    if let Some(mu) = a.batch_size {
        tc.batch_size = mu;
    }
    if let Some(lr) = a.learning_rate {
        tc.learning_rate = lr;
    }

    let mut rec = Recorder::new("optimize", &a.out)?;
    rec.config(&a.config);
    rec.seed(tc.seed);
    let start = Instant::now();
    let mut report = train(&tc)?;
    let seconds: Vec<f64> = report.epochs.iter_mut().map(|e| std::mem::take(&mut e.seconds)).collect();
    rec.timings = json!({ "total_seconds": start.elapsed().as_secs_f64(), "epoch_seconds": seconds });

    rec.write_json("train_config.json", &tc)?;
    rec.write_json("checkpoint.json", &report.final_config)?;
    rec.write_json("report.json", &report)?;
    rec.write_text("losses.csv", &report.loss_csv())?;
    rec.finish()?;
    let (i, f) = (report.initial_train, report.final_train());
    println!(
        "initial loss {:.6} (spectral {:.6}, sparsity {:.6}) final loss {:.6} (spectral {:.6}, sparsity {:.6}) alpha {}",
        i.total, i.spectral, i.sparsity, f.total, f.spectral, f.sparsity, tc.alpha
    );
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let mut cfg = load_fdn(&a.config)?;
    if let Some(fs) = a.sample_rate {
        cfg.sample_rate = fs;
    }
    let fs = cfg.sample_rate as f64;
    if !(a.length > 0.0 && a.length.is_finite()) {
        return Err(usage(format!("length must be a positive number of seconds, got {}", a.length)));
    }
    let len = (a.length * fs).round() as usize;
    let mut rec = Recorder::new("render", &a.out)?;
    rec.config(&a.config);
    let ir = if a.freq_dependent {
        let spec_path = a
            .spec
            .as_ref()
            .ok_or_else(|| usage("--freq-dependent needs --spec"))?;
        rec.input(spec_path);
        let spec = AttenuationSpec::from_json(
            &fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?,
        )?;
        render_fd_ir(&cfg, &spec, len)?
    } else {
        if a.spec.is_some() {
            return Err(usage("--spec only applies with --freq-dependent"));
        }
        if let Some(g) = a.gamma {
            cfg.gamma = g;
        }
        if let Some(t) = a.t60 {
            cfg.gamma = gamma_for(t, fs)?;
        }
        cfg.validate()?;
        render_ir(&cfg, len)?
    };
    rec.write_wav("ir.wav", &ir, cfg.sample_rate)?;
    rec.finish()?;
    println!("{} samples at {} Hz, gamma {}", ir.len(), cfg.sample_rate, cfg.gamma);
    Ok(())
}

fn default_type(cfg: &FdnConfig) -> &'static str {
    match cfg.feedback {
        FeedbackParam::Orthogonal { .. } => FdnType::DiffOrthogonal.label(),
        FeedbackParam::Householder { .. } => FdnType::DiffHouseholder.label(),
        FeedbackParam::Scattering { .. } => FdnType::DiffScattering.label(),
    }
}

#[derive(Serialize)]
struct BandReport {
    center_hz: f64,
    t60: Option<f64>,
    initial_level: Option<f64>,
    error: Option<String>,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut rec = Recorder::new("analyze", &a.out)?;
    if let Some(path) = &a.config {
        rec.config(path);
        let cfg = load_fdn(path)?;
        let fs = cfg.sample_rate as f64;
        if !a.no_modal {
            let d = modal_decomposition(&cfg)?;
            let stats = excitation_stats(&d)?;
            rec.write_text("modal.csv", &d.to_csv())?;
            rec.write_text("histogram.csv", &stats.histogram_csv())?;
            rec.write_json(
                "excitation.json",
                &json!({
                    "std_db": stats.std_db,
                    "mean_db": stats.mean_db,
                    "modes": stats.count,
                    "zero_residues": stats.zero_residues,
                    "order": d.order,
                    "bin_width_db": stats.bin_width_db,
                }),
            )?;
            println!("std_db {:.4} over {} modes", stats.std_db, stats.count);
        }
        let len = (a.render_seconds * fs).round() as usize;
        let echo = echo_density_at_rate(&render_ir(&cfg, len)?, fs)?;
        rec.write_text("echo_density.csv", &echo.to_csv(fs))?;
        let f_hi = a.f_hi.unwrap_or(fs / 2.0);
        rec.write_text("magnitude.csv", &magnitude_report(&cfg, a.f_lo, f_hi, a.resolution)?)?;

        let label = a.fdn_type.clone().unwrap_or_else(|| default_type(&cfg).to_string());
        let k = match &cfg.feedback {
            FeedbackParam::Scattering { w, .. } if a.fdn_type.is_none() => w.len(),
            _ => a.stages,
        };
        let n = cfg.n();
        let ops = operation_count_named(&label, n, k)?;
        let table: serde_json::Map<String, serde_json::Value> = ["RO", "DiffFDN-O", "DiffFDN-HH", "DiffFDN-SCAT"]
            .iter()
            .map(|t| Ok((t.to_string(), json!(operation_count_named(t, n, k)?))))
            .collect::<Result<_>>()?;
        rec.write_json(
            "operations.json",
            &json!({ "type": label, "n": n, "stages": k, "operations_per_sample": ops, "all_types": table }),
        )?;
        println!("{label} N={n}: {ops} operations per sample");
    } else if let Some(path) = &a.wav {
        rec.input(path);
        let (ir, rate) = fdnopt::io::read_wav(path)?;
        let fs = rate as f64;
        let echo = echo_density_at_rate(&ir, fs)?;
        rec.write_text("echo_density.csv", &echo.to_csv(fs))?;
        let mean = echo.values.iter().sum::<f64>() / echo.values.len().max(1) as f64;
        rec.write_json(
            "echo_summary.json",
            &json!({
                "mean_echo_density": mean,
                "time_to_0_9_s": echo.time_to(0.9).map(|t| t as f64 / fs),
            }),
        )?;
        let centers: Vec<f64> = OCTAVE_CENTERS.iter().copied().filter(|&c| c * 2f64.sqrt() < fs / 2.0).collect();
        let bands = estimate_t60_bands(&ir, fs, &centers);
        let report: Vec<BandReport> = centers
            .iter()
            .zip(&bands)
            .map(|(&c, b)| match b {
                Ok(d) => BandReport { center_hz: c, t60: Some(d.t60), initial_level: Some(d.initial_level), error: None },
                Err(e) => BandReport { center_hz: c, t60: None, initial_level: None, error: Some(e.to_string()) },
            })
            .collect();
        rec.write_json("bands.json", &report)?;
        let fitted: Vec<_> = bands.iter().filter_map(|b| b.as_ref().ok().copied()).collect();
        if fitted.len() == OCTAVE_CENTERS.len() {
            rec.write_json("spec.json", &AttenuationSpec::from_estimates(&fitted)?)?;
        }
        println!("mean echo density {mean:.4}; {}/{} bands fitted", fitted.len(), centers.len());
    }
    rec.finish()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RecipeSize {
    n: usize,
    delays: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct RecipeScale {
    grid_size: usize,
    seeds: u64,
}

#[derive(Debug, Deserialize)]
struct Recipe {
    sample_rate: u32,
    gamma: f64,
    alpha: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    matrix: MatrixKind,
    sizes: Vec<RecipeSize>,
    desk: RecipeScale,
    full: RecipeScale,
}

#[derive(Serialize)]
struct SizeSummary {
    n: usize,
    runs: usize,
    mean_initial_std_db: f64,
    mean_final_std_db: f64,
}

pub fn repro(a: &ReproArgs) -> Result<()> {
    let recipe: Recipe = fdnopt::io::read_json(&a.config)?;
    let scale = match a.scale {
        Scale::Desk => &recipe.desk,
        Scale::Full => &recipe.full,
    };
    let (first, end) = match &a.seeds {
        Some(s) => {
            let (lo, hi) = parse_range(s)?;
            (lo as u64, hi as u64)
        }
        None => (0, scale.seeds),
    };
    if end <= first {
        return Err(usage(format!("empty seed range {first}:{end}")));
    }
    let mut rec = Recorder::new("repro", &a.out)?;
    rec.config(&a.config);
    fs::create_dir_all(rec.path("checkpoints"))?;
    let mut csv = String::from("n,seed,initial_std_db,final_std_db,initial_loss,final_loss\n");
    let mut summary = Vec::new();
    for size in &recipe.sizes {
        if a.sizes.as_ref().is_some_and(|s| !s.contains(&size.n)) {
            continue;
        }
        if size.delays.len() != size.n {
            return Err(usage(format!("recipe size {} lists {} delays", size.n, size.delays.len())));
        }
        let (mut init_sum, mut final_sum) = (0.0, 0.0);
        for seed in first..end {
            let fdn = initial_config(&size.delays, recipe.matrix, recipe.gamma, recipe.sample_rate, seed)?;
            let mut tc = TrainConfig::new(fdn);
            tc.grid_size = scale.grid_size;
            tc.batch_size = recipe.batch_size;
            tc.epochs = a.epochs.unwrap_or(recipe.epochs);
            tc.learning_rate = recipe.learning_rate;
            tc.alpha = a.alpha.unwrap_or(recipe.alpha);
            tc.gamma = recipe.gamma;
            tc.seed = seed;
            let before = excitation_stats(&modal_decomposition(&tc.fdn)?)?.std_db;
            let report = train(&tc)?;
            let after = excitation_stats(&modal_decomposition(&report.final_config)?)?.std_db;
            rec.write_json(&format!("checkpoints/n{}_seed{seed}.json", size.n), &report.final_config)?;
            csv.push_str(&format!(
                "{},{seed},{before},{after},{},{}\n",
                size.n,
                report.initial_train.total,
                report.final_train().total
            ));
            println!("N={} seed {seed}: std {before:.4} -> {after:.4} dB", size.n);
            init_sum += before;
            final_sum += after;
        }
        let runs = (end - first) as usize;
        summary.push(SizeSummary {
            n: size.n,
            runs,
            mean_initial_std_db: init_sum / runs as f64,
            mean_final_std_db: final_sum / runs as f64,
        });
    }
    rec.write_text("results.csv", &csv)?;
    rec.write_json("summary.json", &summary)?;
    rec.finish()?;
    for s in &summary {
        println!(
            "N={}: mean std {:.4} -> {:.4} dB over {} runs",
            s.n, s.mean_initial_std_db, s.mean_final_std_db, s.runs
        );
    }
    Ok(())
}
