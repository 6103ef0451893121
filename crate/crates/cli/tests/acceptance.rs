//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when a required criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aliknet::consistency::{image_dc, isl, kspace_dc_weighted, ImageDcParams, IslParams};
use aliknet::io::{decode_tensor, encode_tensor, load_checkpoint, save_checkpoint, DType};
use aliknet::mri::{make_dataset, CineSample, CoilMaps, Dims, EncodingOperator, SamplingMask};
use aliknet::network::{Network, NetworkConfig};
use aliknet::subnet::{svt, SvtMode};
use aliknet::tensor::{c64, ComplexTensor, Rng};
use aliknet::training::{evaluate, grad_check, heldout_set, train, Adam, GradTarget, TrainConfig, TrainLog};
use nalgebra::DMatrix;

const ADJOINT_TOL: f64 = 1e-10;
const ADJOINT_BUDGET: Duration = Duration::from_secs(10);
const GRAD_TOL: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const SVT_TOL: f64 = 1e-10;
const SVT_IDENTITY_TOL: f64 = 1e-9;
const ISL_TOL: f64 = 1e-10;
const PSNR_GAIN_DB: f64 = 3.0;
const TRAIN_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    name: &'static str,
    pass: bool,
    required: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, name: &'static str, required: bool, pass: bool, detail: String) {
    println!(
        "[{}] {name}{}: {detail}",
        if pass { "PASS" } else { "FAIL" },
        if required { "" } else { " (informational)" }
    );
    out.push(Outcome {
        name,
        pass,
        required,
        detail,
    });
}

fn random_maps(coils: usize, nx: usize, ny: usize, rng: &mut Rng) -> CoilMaps {
    let mut t = rng.complex_tensor(&[coils, nx, ny]);
    let plane = nx * ny;
    for p in 0..plane {
        let s: f64 = (0..coils).map(|c| t.data()[c * plane + p].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..coils {
            t.data_mut()[c * plane + p] /= s;
        }
    }
    CoilMaps::new(t).expect("normalized")
}

fn random_mask(frames: usize, lines: usize, rng: &mut Rng) -> SamplingMask {
    let mut m = SamplingMask::empty(frames, lines);
    for t in 0..frames {
        for l in 0..lines {
            m.set(t, l, rng.uniform() < 0.5);
        }
    }
    m
}

fn adjoint_suite(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (t, nx, ny, c) = (1 + rng.below(4), 2 + rng.below(11), 2 + rng.below(11), 1 + rng.below(4));
        let op = EncodingOperator::new(random_maps(c, nx, ny, &mut rng), random_mask(t, ny, &mut rng)).unwrap();
        let x = rng.complex_tensor(&[t, nx, ny]);
        let y = rng.complex_tensor(&[t, c, nx, ny]);
        let ax = op.forward(&x).unwrap();
        let lhs = ax.inner(&y).unwrap();
        let rhs = x.inner(&op.adjoint(&y).unwrap()).unwrap();
        let den = ax.norm() * y.norm();
        if den > 0.0 {
            worst = worst.max((lhs - rhs).norm() / den);
        }
    }
    let took = start.elapsed();
    report(
        out,
        "adjoint suite",
        true,
        worst < ADJOINT_TOL && took < ADJOINT_BUDGET,
        format!("100 instances, max relative gap {worst:.2e} (< {ADJOINT_TOL:e}), {took:.2?} (< {ADJOINT_BUDGET:?})"),
    );
}

fn gradient_suite(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let dims = Dims {
        frames: 4,
        nx: 8,
        ny: 8,
        coils: 2,
    };
    let mut rng = Rng::new(12);
    let mut worst = (String::new(), 0.0f64);
    let mut groups = 0;
    let mut failure = None;
    for t in GradTarget::ALL {
        match grad_check(t, dims, &mut rng) {
            Ok(r) => {
                for (name, e) in r.entries {
                    groups += 1;
                    if e > worst.1 || e.is_nan() {
                        worst = (format!("{}/{name}", t.name()), e);
                    }
                }
            }
            Err(e) => failure = Some(format!("{}: {e}", t.name())),
        }
    }
    let took = start.elapsed();
    let pass = failure.is_none() && worst.1 < GRAD_TOL && took < GRAD_BUDGET;
    report(
        out,
        "gradient suite",
        true,
        pass,
        match failure {
            Some(f) => f,
            None => format!(
                "{groups} groups incl. full 1-iteration network, max relative error {:.2e} at {} (< {GRAD_TOL:e}), {took:.2?}",
                worst.1, worst.0
            ),
        },
    );

    // the same check repeated over fresh seeds, to expose probe sensitivity
    let seeds = 20usize;
    let mut clean = Vec::new();
    let mut all = true;
    for t in GradTarget::ALL {
        let ok = (0..seeds)
            .filter(|&s| grad_check(t, dims, &mut Rng::new(1000 + s as u64)).is_ok_and(|r| r.passes(GRAD_TOL)))
            .count();
        all &= ok == seeds;
        clean.push(format!("{} {ok}/{seeds}", t.name()));
    }
    report(
        out,
        "gradient seed sweep",
        false,
        all,
        format!("runs under {GRAD_TOL:e} per target: {}", clean.join(", ")),
    );
}

fn to_matrix(t: &ComplexTensor) -> DMatrix<c64> {
    DMatrix::from_row_slice(t.dims()[0], t.dims()[1], t.data())
}

/// Threshold through the Hermitian eigendecomposition of `X^H X`.
fn svt_oracle(x: &DMatrix<c64>, tau: f64) -> (DMatrix<c64>, usize) {
    let eig = (x.adjoint() * x).symmetric_eigen();
    let top = eig.eigenvalues.max().max(0.0).sqrt();
    let zeta = top / (1.0 + (-tau).exp());
    let mut p = DMatrix::zeros(x.ncols(), x.ncols());
    let mut rank = 0;
    for j in 0..x.ncols() {
        if eig.eigenvalues[j].max(0.0).sqrt() > zeta {
            let v = eig.eigenvectors.column(j);
            p += v * v.adjoint();
            rank += 1;
        }
    }
    (x * p, rank)
}

fn numeric_rank(m: &DMatrix<c64>) -> usize {
    let s = m.clone().singular_values();
    let top = s.max();
    s.iter().filter(|&&v| v > 1e-9 * top).count()
}

fn svt_suite(out: &mut Vec<Outcome>) {
    let mut rng = Rng::new(13);
    let mut worst: f64 = 0.0;
    let mut identity: f64 = 0.0;
    let mut rank_ok = true;
    for _ in 0..50 {
        let (r, c) = (2 + rng.below(40), 2 + rng.below(12));
        let x = to_matrix(&rng.complex_tensor(&[r, c]));
        let tau = rng.uniform_range(-4.0, 2.0);
        let (y, _) = svt(&x, tau, SvtMode::Hard).unwrap();
        let (o, _) = svt_oracle(&x, tau);
        worst = worst.max((&y - &o).iter().map(|v| v.norm()).fold(0.0, f64::max));
        let ry = numeric_rank(&y);
        rank_ok &= ry >= 1 && ry <= numeric_rank(&x);
        let (same, _) = svt(&x, -20.0, SvtMode::Hard).unwrap();
        identity = identity.max((&same - &x).iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    report(
        out,
        "SVT oracle suite",
        true,
        worst < SVT_TOL && rank_ok && identity < SVT_IDENTITY_TOL,
        format!(
            "50 matrices, max abs error {worst:.2e} (< {SVT_TOL:e}), rank monotone and >= 1: {rank_ok}, tau=-20 deviation {identity:.2e} (< {SVT_IDENTITY_TOL:e})"
        ),
    );
}

fn dc_suite(out: &mut Vec<Outcome>) {
    let mut rng = Rng::new(14);
    let dims = Dims::default();
    let mut image_exact = true;
    let mut kspace_exact = true;
    let mut isl_gap: f64 = 0.0;
    for i in 0..10 {
        let op = EncodingOperator::new(
            random_maps(dims.coils, dims.nx, dims.ny, &mut rng),
            random_mask(dims.frames, dims.ny, &mut rng),
        )
        .unwrap();
        let p = rng.complex_tensor(&dims.image());
        let q = rng.complex_tensor(&dims.image());
        let mut params = ImageDcParams::default();
        params.alpha.set(rng.uniform());
        params.eta.set(rng.uniform_range(0.1, 2.0));
        let alpha = params.alpha();
        let mut x_init = q.scale(1.0 - alpha);
        x_init.axpy(alpha, &p).unwrap();
        let y_u = op.forward(&x_init).unwrap();
        image_exact &= image_dc(&p, &q, &y_u, &op, &params).unwrap().0 == x_init;

        let r = rng.complex_tensor(&dims.kspace());
        let y_u = op.apply_mask(&rng.complex_tensor(&dims.kspace())).unwrap();
        let y = kspace_dc_weighted(&r, &y_u, op.mask(), 0.0).unwrap();
        for t in 0..dims.frames {
            for ky in (0..dims.ny).filter(|&ky| op.mask().is_sampled(t, ky)) {
                for c in 0..dims.coils {
                    for kx in 0..dims.nx {
                        let idx = [t, c, kx, ky];
                        kspace_exact &= y.get(&idx).re.to_bits() == y_u.get(&idx).re.to_bits()
                            && y.get(&idx).im.to_bits() == y_u.get(&idx).im.to_bits();
                    }
                }
            }
        }

        let x = rng.complex_tensor(&dims.image());
        let y = op.coil_fft(&x).unwrap();
        let mut ip = IslParams::default();
        ip.a.set(i as f64 * 0.5 - 2.0);
        ip.b.set(1.0 - i as f64 * 0.3);
        let (x2, y2, _) = isl(&x, &y, &op, &ip).unwrap();
        isl_gap = isl_gap.max(x2.max_abs_diff(&x).unwrap() / x.max_abs()).max(y2.max_abs_diff(&y).unwrap() / y.max_abs());
    }
    report(
        out,
        "DC fixed points",
        true,
        image_exact && kspace_exact && isl_gap < ISL_TOL,
        format!(
            "image DC exact: {image_exact}, k-space DC mu=0 bit-exact: {kspace_exact}, ISL consistent-pair deviation {isl_gap:.2e} (< {ISL_TOL:e})"
        ),
    );
}

struct DeskRun {
    net: Network,
    log: TrainLog,
    took: Duration,
}

fn desk_run(config: NetworkConfig, data: &[CineSample], heldout: &[CineSample]) -> DeskRun {
    let dims = Dims::default();
    let mut net = Network::init(config, dims, &mut Rng::new(21)).unwrap();
    let cfg = TrainConfig {
        steps: 1000,
        seed: 22,
        ..TrainConfig::default()
    };
    let mut opt = Adam::new(&net, cfg.lr);
    let start = Instant::now();
    let log = train(&mut net, &mut opt, data, heldout, &cfg, &mut |_, _, _| Ok(())).unwrap();
    DeskRun {
        net,
        log,
        took: start.elapsed(),
    }
}

fn training_and_ablation(out: &mut Vec<Outcome>) {
    let dims = Dims::default();
    let all = make_dataset(20, dims, (2.0, 8.0), 4, 1000).unwrap();
    let (train_set, rest) = all.split_at(16);
    let held4 = heldout_set(rest, 4.0, 4, 31).unwrap();
    let held8 = heldout_set(rest, 8.0, 4, 32).unwrap();

    let full = desk_run(NetworkConfig::variant("A-LIKNet").unwrap(), train_set, &held4);
    let ma = full.log.moving_average(200);
    let (early, late) = (ma[49], ma[ma.len() - 1]);
    let e4 = &full.log.validation.last().unwrap().1;
    let gain = e4.psnr_db - e4.zero_filled_psnr_db;
    let pass = late < early && gain >= PSNR_GAIN_DB && e4.ssim > e4.zero_filled_ssim && full.took < TRAIN_BUDGET;
    report(
        out,
        "desk training",
        true,
        pass,
        format!(
            "A-LIKNet N=2, 1000 steps in {:.0?} (< 30 min); moving-average loss {early:.4e} at step 50 -> {late:.4e} at end; R=4 held-out PSNR {:.2} dB vs zero-filled {:.2} dB (gain {gain:.2} >= {PSNR_GAIN_DB}); SSIM {:.4} vs {:.4}",
            full.took, e4.psnr_db, e4.zero_filled_psnr_db, e4.ssim, e4.zero_filled_ssim
        ),
    );

    let inet = desk_run(NetworkConfig::variant("A-INet").unwrap(), train_set, &held4);
    let a = evaluate(&full.net, &held8).unwrap();
    let b = evaluate(&inet.net, &held8).unwrap();
    report(
        out,
        "ablation ordering",
        false,
        a.psnr_db >= b.psnr_db,
        format!(
            "R=8 held-out PSNR: A-LIKNet {:.2} dB, A-INet {:.2} dB (zero-filled {:.2} dB); identical 1000-step budgets",
            a.psnr_db, b.psnr_db, a.zero_filled_psnr_db
        ),
    );
}

fn cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_aliknet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const PIPELINE_CONFIG: &str = "[network]\niterations = 2\n[training]\nsteps = 40\nseed = 5\ncheckpoint_every = 20\n";

/// phantom -> train -> recon -> eval in `dir`; returns the mean evaluated
/// PSNR and the PSNR logged by training.
fn pipeline(dir: &Path) -> Result<(f64, f64), String> {
    cli(&["phantom", "--out", "data/train", "--count", "6", "--seed", "3"], dir)?;
    cli(&["phantom", "--out", "data/heldout", "--count", "2", "--seed", "90", "--accel-min", "4", "--accel-max", "4"], dir)?;
    std::fs::write(dir.join("run.toml"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    cli(&["train", "--config", "run.toml"], dir)?;
    let mut sum = 0.0;
    for i in 0..2 {
        let sample = format!("data/heldout/sample_{i:04}");
        let rec = format!("rec{i}");
        cli(&["recon", "--checkpoint", "run/checkpoint", "--sample", &sample, "--out", &rec], dir)?;
        let report = cli(&["eval", "--pred", &format!("{rec}/image.ctns"), "--reference", &sample, "--out", &format!("{rec}/metrics.toml")], dir)?;
        drop(report);
        let text = std::fs::read_to_string(dir.join(format!("{rec}/metrics.toml"))).map_err(|e| e.to_string())?;
        let v: toml::Table = text.parse().map_err(|e| format!("{e}"))?;
        sum += v["psnr_db"].as_float().ok_or("psnr_db missing")?;
    }
    let summary: toml::Table = std::fs::read_to_string(dir.join("run/loss.toml"))
        .map_err(|e| e.to_string())?
        .parse()
        .map_err(|e| format!("{e}"))?;
    let logged = summary["validation"].as_array().and_then(|v| v.last()).and_then(|v| v["psnr_db"].as_float()).ok_or("no validation")?;
    Ok((sum / 2.0, logged))
}

fn determinism(out: &mut Vec<Outcome>) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = (pipeline(a.path()), pipeline(b.path()));
    let detail;
    let pass = match (ra, rb) {
        (Ok((eval_a, logged_a)), Ok(_)) => {
            let ta = tree(a.path());
            let tb = tree(b.path());
            let differing: Vec<_> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).cloned().collect();
            let same = ta.len() == tb.len() && differing.is_empty();
            let consistent = (eval_a - logged_a).abs() < 1e-9;
            detail = format!(
                "two seeded pipelines, {} files compared, identical: {same}{}; recon+eval PSNR {eval_a:.12} vs logged validation {logged_a:.12} (|diff| < 1e-9: {consistent})",
                ta.len(),
                if same { String::new() } else { format!(" (differ: {differing:?})") }
            );
            same && consistent
        }
        (Err(e), _) | (_, Err(e)) => {
            detail = e;
            false
        }
    };
    report(out, "determinism", true, pass, detail);
}

fn format_round_trips(out: &mut Vec<Outcome>) {
    let mut rng = Rng::new(15);
    let mut tensors_ok = true;
    for i in 0..20 {
        let dims: Vec<usize> = (0..i % 5).map(|_| rng.below(5)).collect();
        let mut t = rng.complex_tensor(&dims);
        if let Some(v) = t.data_mut().first_mut() {
            *v = c64::new(-0.0, f64::MAX);
        }
        let bytes = encode_tensor(&t, DType::Complex64).unwrap();
        let (back, _) = decode_tensor(&bytes, Path::new("mem")).unwrap();
        tensors_ok &= back.dims() == t.dims()
            && back.data().iter().zip(t.data()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits())
            && encode_tensor(&back, DType::Complex64).unwrap() == bytes;
    }

    let dir = tempfile::tempdir().unwrap();
    let dims = Dims {
        frames: 4,
        nx: 8,
        ny: 8,
        coils: 2,
    };
    let mut net = Network::init(NetworkConfig::default(), dims, &mut Rng::new(16)).unwrap();
    let data = make_dataset(2, dims, (2.0, 4.0), 2, 17).unwrap();
    let mut opt = Adam::new(&net, 1e-3);
    let cfg = TrainConfig {
        steps: 3,
        accel_max: 4.0,
        center_lines: 2,
        ..TrainConfig::default()
    };
    train(&mut net, &mut opt, &data, &[], &cfg, &mut |_, _, _| Ok(())).unwrap();
    save_checkpoint(&dir.path().join("a"), &net, &opt, 3).unwrap();
    let ck = load_checkpoint(&dir.path().join("a")).unwrap();
    save_checkpoint(&dir.path().join("b"), &ck.network, &ck.optimizer, ck.step).unwrap();
    let checkpoint_ok = ck.network == net && ck.optimizer == opt && tree(&dir.path().join("a")) == tree(&dir.path().join("b"));

    let figure_ok = (|| -> Result<bool, String> {
        cli(&["phantom", "--out", "d", "--count", "1", "--frames", "4", "--nx", "8", "--ny", "8", "--coils", "2"], dir.path())?;
        for name in ["f1.pgm", "f2.pgm"] {
            cli(&["figure", "--image", "d/sample_0000", "--out", name], dir.path())?;
        }
        let f1 = std::fs::read(dir.path().join("f1.pgm")).map_err(|e| e.to_string())?;
        let f2 = std::fs::read(dir.path().join("f2.pgm")).map_err(|e| e.to_string())?;
        Ok(f1 == f2 && f1.starts_with(b"P5\n32 8\n255\n"))
    })()
    .unwrap_or(false);
    report(
        out,
        "format round trips",
        true,
        tensors_ok && checkpoint_ok && figure_ok,
        format!("tensor files bit-identical: {tensors_ok}, checkpoint save/load/save identical: {checkpoint_ok}, figure bytes reproducible: {figure_ok}"),
    );
}

fn main() {
    let mut out = Vec::new();
    adjoint_suite(&mut out);
    gradient_suite(&mut out);
    svt_suite(&mut out);
    dc_suite(&mut out);
    format_round_trips(&mut out);
    determinism(&mut out);
    training_and_ablation(&mut out);
    let failed: Vec<_> = out.iter().filter(|o| o.required && !o.pass).collect();
    println!(
        "acceptance: {} of {} required criteria passed",
        out.iter().filter(|o| o.required && o.pass).count(),
        out.iter().filter(|o| o.required).count()
    );
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("failed: {} ({})", f.name, f.detail);
        }
        std::process::exit(1);
    }
}
