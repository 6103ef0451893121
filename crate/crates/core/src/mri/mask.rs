use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor, Rng};

/// Cartesian ky-t sampling pattern, `frames x lines`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    frames: usize,
    lines: usize,
    sampled: Vec<bool>,
}

impl SamplingMask {
    pub fn full(frames: usize, lines: usize) -> Self {
        SamplingMask {
            frames,
            lines,
            sampled: vec![true; frames * lines],
        }
    }

    pub fn empty(frames: usize, lines: usize) -> Self {
        SamplingMask {
            frames,
            lines,
            sampled: vec![false; frames * lines],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn is_sampled(&self, frame: usize, line: usize) -> bool {
        self.sampled[frame * self.lines + line]
    }

    pub fn set(&mut self, frame: usize, line: usize, on: bool) {
        self.sampled[frame * self.lines + line] = on;
    }

    pub fn frame(&self, frame: usize) -> &[bool] {
        &self.sampled[frame * self.lines..(frame + 1) * self.lines]
    }

    pub fn count_frame(&self, frame: usize) -> usize {
        self.frame(frame).iter().filter(|&&s| s).count()
    }

    /// Fully sampled lines over acquired lines.
    pub fn acceleration(&self) -> f64 {
        let acquired = self.sampled.iter().filter(|&&s| s).count();
        if acquired == 0 {
            return f64::INFINITY;
        }
        (self.frames * self.lines) as f64 / acquired as f64
    }

    /// `(time, ky)` tensor of 0/1.
    pub fn to_tensor(&self) -> ComplexTensor {
        let data = self
            .sampled
            .iter()
            .map(|&s| c64::new(if s { 1.0 } else { 0.0 }, 0.0))
            .collect();
        ComplexTensor::from_vec(&[self.frames, self.lines], data).expect("dims match")
    }

    pub fn from_tensor(t: &ComplexTensor) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::shape(t.dims(), &[0, 0], "sampling mask must be (time, ky)"));
        }
        let mut sampled = Vec::with_capacity(t.len());
        for v in t.data() {
            if *v == c64::new(1.0, 0.0) {
                sampled.push(true);
            } else if *v == c64::new(0.0, 0.0) {
                sampled.push(false);
            } else {
                return Err(Error::config(format!("sampling mask value {v} is not binary")));
            }
        }
        Ok(SamplingMask {
            frames: t.dims()[0],
            lines: t.dims()[1],
            sampled,
        })
    }
}

/// Index range of the always-sampled center block.
pub fn center_block(lines: usize, center_lines: usize) -> std::ops::Range<usize> {
    let n = center_lines.min(lines);
    let start = lines / 2 - n / 2;
    start..start + n
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Variable-density ky-t mask.
///
/// Each frame keeps `max(round(lines / accel), center_lines)` lines. The
/// center block is always acquired; the rest are drawn without replacement
/// with probability proportional to `1 / (1 + |ky - center|)`. The uniform
/// draws of frame `t` are rotated by `t` times the golden ratio so that
/// neighbouring frames pick different lines.
pub fn generate_mask(
    frames: usize,
    lines: usize,
    accel: f64,
    center_lines: usize,
    rng: &mut Rng,
) -> Result<SamplingMask> {
    if !(accel >= 1.0) || !accel.is_finite() {
        return Err(Error::InfeasibleAcceleration { accel, lines });
    }
    let target = (lines as f64 / accel).round() as usize;
    if target < 1 {
        return Err(Error::InfeasibleAcceleration { accel, lines });
    }
    let block = center_block(lines, center_lines);
    let per_frame = target.max(block.len()).min(lines);
    let center = (lines / 2) as f64;

    let mut mask = SamplingMask::empty(frames, lines);
    for t in 0..frames {
        for ky in block.clone() {
            mask.set(t, ky, true);
        }
        let mut weights: Vec<f64> = (0..lines)
            .map(|ky| {
                if block.contains(&ky) {
                    0.0
                } else {
                    1.0 / (1.0 + (ky as f64 - center).abs())
                }
            })
            .collect();
        let rotation = (t as f64 * GOLDEN).fract();
        for _ in block.len()..per_frame {
            let total: f64 = weights.iter().sum();
            let u = (rng.uniform() + rotation).fract() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (ky, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(ky);
                if u < acc {
                    break;
                }
            }
            let ky = pick.expect("remaining weight is positive");
            mask.set(t, ky, true);
            weights[ky] = 0.0;
        }
    }
    Ok(mask)
}
