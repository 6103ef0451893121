use serde::{Deserialize, Serialize};

use super::{loss_with_grad, Adam, LossNorm, LossReport};
use crate::error::{Error, Result};
use crate::metrics::{nrmse, psnr, ssim};
use crate::mri::{generate_mask, CineSample};
use crate::network::{backward, forward, init_state, Network, OpTrace, Problem, State};
use crate::nn::Params;
use crate::subnet::SvtMode;
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub center_lines: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Validation cadence in steps; 0 validates only at the end.
    pub validate_every: usize,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 1,
            lr: 1e-3,
            seed: 0,
            accel_min: 2.0,
            accel_max: 8.0,
            center_lines: 4,
            checkpoint_every: 0,
            validate_every: 0,
            loss_norm: LossNorm::PerTerm,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, lines: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(self.accel_min >= 1.0 && self.accel_max >= self.accel_min && self.accel_max <= lines as f64) {
            return Err(Error::config(format!(
                "acceleration range [{}, {}] must lie within [1, {lines}]",
                self.accel_min, self.accel_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub sample: usize,
    pub accel: f64,
    pub loss: LossReport,
}

/// Mean metrics over a held-out set, for the network and for zero filling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub zero_filled_psnr_db: f64,
    pub zero_filled_ssim: f64,
    pub zero_filled_nrmse: f64,
    pub sample_psnr_db: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub validation: Vec<(usize, EvalSummary)>,
}

impl TrainLog {
    /// Trailing moving average of the total loss; entry `i` averages steps
    /// `i + 1 - window ..= i` (fewer at the start).
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let mut out = Vec::with_capacity(self.steps.len());
        let mut sum = 0.0;
        for (i, s) in self.steps.iter().enumerate() {
            sum += s.loss.total;
            if i >= w {
                sum -= self.steps[i - w].loss.total;
            }
            out.push(sum / (i + 1).min(w) as f64);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,sample,accel,loss_image,loss_kspace,loss_total\n");
        for l in &self.steps {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                l.step, l.sample, l.accel, l.loss.image, l.loss.kspace, l.loss.total
            ));
        }
        s
    }
}

pub fn reconstruct(net: &Network, sample: &CineSample) -> Result<State> {
    let op = sample.operator()?;
    let (out, _) = forward(
        net,
        &init_state(sample)?,
        &Problem::new(&op, &sample.under_kspace),
        SvtMode::Hard,
        &mut OpTrace::default(),
    )?;
    Ok(out)
}

/// Copies of `samples` under fixed masks at one acceleration.
pub fn heldout_set(samples: &[CineSample], accel: f64, center_lines: usize, seed: u64) -> Result<Vec<CineSample>> {
    let mut rng = Rng::new(seed);
    samples
        .iter()
        .map(|s| {
            let d = s.dims();
            let mask = generate_mask(d.frames, d.ny, accel, center_lines, &mut rng)?;
            s.with_mask(mask, accel)
        })
        .collect()
}

pub fn evaluate(net: &Network, samples: &[CineSample]) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("evaluation on an empty set".into()));
    }
    let mut acc = [0.0; 6];
    let mut sample_psnr_db = Vec::with_capacity(samples.len());
    for s in samples {
        let x = reconstruct(net, s)?.x;
        let zf = s.zero_filled()?;
        let r = &s.reference;
        let v = [psnr(&x, r)?, ssim(&x, r)?, nrmse(&x, r)?, psnr(&zf, r)?, ssim(&zf, r)?, nrmse(&zf, r)?];
        sample_psnr_db.push(v[0]);
        for (a, v) in acc.iter_mut().zip(v) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    Ok(EvalSummary {
        psnr_db: acc[0] / n,
        ssim: acc[1] / n,
        nrmse: acc[2] / n,
        zero_filled_psnr_db: acc[3] / n,
        zero_filled_ssim: acc[4] / n,
        zero_filled_nrmse: acc[5] / n,
        sample_psnr_db,
    })
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradient(net: &Network, sample: &CineSample, norm: LossNorm) -> Result<(LossReport, Network)> {
    let op = sample.operator()?;
    let problem = Problem::new(&op, &sample.under_kspace);
    let (out, cache) = forward(net, &init_state(sample)?, &problem, SvtMode::Hard, &mut OpTrace::default())?;
    let (report, gx, gy) = loss_with_grad(&out.x, &out.y, &sample.reference, &sample.full_kspace, norm)?;
    Ok((report, backward(net, &cache, &problem, &gx, &gy)?))
}

fn parameter_norms(net: &Network) -> String {
    let mut parts = Vec::new();
    net.visit("", &mut |name, t, _| parts.push(format!("{name}={:e}", t.norm())));
    parts.join(" ")
}

/// Adam training with one random sample and a fresh mask per batch entry.
/// `on_checkpoint(step, net, opt)` runs at the configured cadence and after
/// the last step.
pub fn train(
    net: &mut Network,
    opt: &mut Adam,
    data: &[CineSample],
    heldout: &[CineSample],
    cfg: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(usize, &Network, &Adam) -> Result<()>,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    cfg.validate(data[0].dims().ny)?;
    net.config.validate(&net.dims)?;
    opt.lr = cfg.lr;
    let mut rng = Rng::new(cfg.seed);
    let mut log = TrainLog::default();
    for step in 1..=cfg.steps {
        let mut grads: Option<Network> = None;
        for _ in 0..cfg.batch_size {
            let idx = rng.below(data.len());
            let accel = rng.uniform_range(cfg.accel_min, cfg.accel_max);
            let d = data[idx].dims();
            let mask = generate_mask(d.frames, d.ny, accel, cfg.center_lines, &mut rng)?;
            let sample = data[idx].with_mask(mask, accel)?;
            let (report, g) = sample_gradient(net, &sample, cfg.loss_norm)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    norms: parameter_norms(net),
                });
            }
            log.steps.push(StepLog {
                step,
                sample: idx,
                accel,
                loss: report,
            });
            grads = Some(match grads {
                None => g,
                Some(mut acc) => {
                    let mut i = 0;
                    let gt = g.named_tensors();
                    acc.visit_mut("", &mut |_, t, _| {
                        t.add_assign(&gt[i].1).expect("matching gradient dims");
                        i += 1;
                    });
                    acc
                }
            });
        }
        let mut grads = grads.expect("batch size is positive");
        if cfg.batch_size > 1 {
            let k = 1.0 / cfg.batch_size as f64;
            grads.visit_mut("", &mut |_, t, _| *t = t.scale(k));
        }
        opt.step(net, &grads)?;
        if cfg.validate_every > 0 && step % cfg.validate_every == 0 && step < cfg.steps && !heldout.is_empty() {
            log.validation.push((step, evaluate(net, heldout)?));
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
            on_checkpoint(step, net, opt)?;
        }
    }
    if !heldout.is_empty() {
        log.validation.push((cfg.steps, evaluate(net, heldout)?));
    }
    on_checkpoint(cfg.steps, net, opt)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{make_dataset, Dims};
    use crate::network::NetworkConfig;

    fn dims() -> Dims {
        Dims {
            frames: 4,
            nx: 8,
            ny: 8,
            coils: 2,
        }
    }

    fn setup(seed: u64) -> (Network, Vec<CineSample>) {
        let net = Network::init(NetworkConfig { iterations: 1, ..NetworkConfig::default() }, dims(), &mut Rng::new(seed)).unwrap();
        (net, make_dataset(3, dims(), (2.0, 4.0), 2, seed).unwrap())
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            accel_min: 2.0,
            accel_max: 4.0,
            center_lines: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut net, data) = setup(1);
        let before = net.clone();
        let mut opt = Adam::new(&net, 0.0);
        let c = TrainConfig { lr: 0.0, ..cfg(4) };
        train(&mut net, &mut opt, &data, &[], &c, &mut |_, _, _| Ok(())).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn same_seed_same_log() {
        let run = || {
            let (mut net, data) = setup(2);
            let mut opt = Adam::new(&net, 1e-3);
            let log = train(&mut net, &mut opt, &data, &data[..1], &cfg(5), &mut |_, _, _| Ok(())).unwrap();
            (log, net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert_eq!(a.steps.len(), 5);
        assert_eq!(a.validation.len(), 1);
    }

    #[test]
    fn checkpoint_cadence() {
        let (mut net, data) = setup(3);
        let mut opt = Adam::new(&net, 1e-3);
        let mut seen = vec![];
        let c = TrainConfig { checkpoint_every: 2, ..cfg(5) };
        train(&mut net, &mut opt, &data, &[], &c, &mut |s, _, o| {
            seen.push((s, o.step));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(2, 2), (4, 4), (5, 5)]);
    }

    #[test]
    fn non_finite_loss_aborts_with_norms() {
        let (mut net, mut data) = setup(4);
        for s in &mut data {
            s.reference.data_mut()[0].re = f64::NAN;
        }
        let mut opt = Adam::new(&net, 1e-3);
        match train(&mut net, &mut opt, &data, &[], &cfg(3), &mut |_, _, _| Ok(())) {
            Err(Error::NonFiniteLoss { step, norms }) => {
                assert_eq!(step, 1);
                assert!(norms.contains("0.image_dc.eta="));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let (mut net, data) = setup(5);
        let mut opt = Adam::new(&net, 1e-3);
        for c in [
            TrainConfig { batch_size: 0, ..cfg(1) },
            TrainConfig { accel_min: 0.5, ..cfg(1) },
            TrainConfig { accel_max: 20.0, ..cfg(1) },
        ] {
            let r = train(&mut net, &mut opt, &data, &[], &c, &mut |_, _, _| Ok(()));
            assert!(matches!(r, Err(Error::Config(_))));
        }
        assert!(train(&mut net, &mut opt, &[], &[], &cfg(1), &mut |_, _, _| Ok(())).is_err());
    }

    #[test]
    fn batches_average_gradients() {
        let (mut net, data) = setup(6);
        let mut opt = Adam::new(&net, 1e-3);
        let c = TrainConfig { batch_size: 2, ..cfg(2) };
        let log = train(&mut net, &mut opt, &data, &[], &c, &mut |_, _, _| Ok(())).unwrap();
        assert_eq!(log.steps.len(), 4);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn moving_average_and_csv() {
        let mk = |t| StepLog {
            step: 0,
            sample: 0,
            accel: 2.0,
            loss: LossReport {
                image: t,
                kspace: 0.0,
                total: t,
            },
        };
        let log = TrainLog {
            steps: vec![mk(1.0), mk(3.0), mk(5.0)],
            validation: vec![],
        };
        assert_eq!(log.moving_average(2), vec![1.0, 2.0, 4.0]);
        assert_eq!(log.to_csv().lines().count(), 4);
    }
}
