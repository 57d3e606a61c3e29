//! Adaptive-moment optimizer over painting parameters.

use std::collections::HashMap;

use crate::painting::{Painting, Stroke, StrokeId};
use crate::raster::{GradientSet, StrokeGrad};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub center: f64,
    pub rotation: f64,
    pub shape: f64,
}

impl GroupRates {
    fn scaled(&self, f: f64) -> Self {
        Self {
            center: self.center * f,
            rotation: self.rotation * f,
            shape: self.shape * f,
        }
    }
}

/// StepLR: multiply by `gamma` every `step` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub step: usize,
    pub gamma: f64,
}

impl StepDecay {
    pub fn factor(&self, iteration: usize) -> f64 {
        if self.step == 0 {
            return 1.0;
        }
        self.gamma.powi((iteration / self.step) as i32)
    }
}

#[derive(Debug, Clone)]
struct Moments {
    /// Fingerprint of the stroke shape the moments belong to.
    kernels: usize,
    m: StrokeGrad,
    v: StrokeGrad,
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    rates: GroupRates,
    schedule: StepDecay,
    t: u64,
    state: HashMap<StrokeId, Moments>,
}

#[inline]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64, hp: &AdamParams) {
    *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
    *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
    let mhat = *m / c1;
    let vhat = *v / c2;
    *p -= lr * (mhat / (vhat.sqrt() + hp.eps) + hp.weight_decay * *p);
}

impl Adam {
    pub fn new(params: AdamParams, rates: GroupRates, schedule: StepDecay) -> Self {
        Self {
            params,
            rates,
            schedule,
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn rates_at(&self, iteration: usize) -> GroupRates {
        self.rates.scaled(self.schedule.factor(iteration))
    }

    /// Zeroes the moments of `stroke_id`.
    pub fn reset(&mut self, stroke_id: StrokeId) {
        self.state.remove(&stroke_id);
    }

    /// Keeps moments only for strokes that still exist unchanged in `after`
    /// relative to `before`; everything else restarts from zero.
    pub fn retain_unchanged(&mut self, before: &Painting, after: &Painting) {
        let old: HashMap<StrokeId, &Stroke> = before.strokes.iter().map(|s| (s.stroke_id, s)).collect();
        let keep: HashMap<StrokeId, bool> = after
            .strokes
            .iter()
            .map(|s| (s.stroke_id, old.get(&s.stroke_id).is_some_and(|o| *o == s)))
            .collect();
        self.state.retain(|id, _| keep.get(id).copied().unwrap_or(false));
    }

    pub fn step(&mut self, painting: &mut Painting, grads: &GradientSet, iteration: usize) {
        self.t += 1;
        let hp = self.params;
        let c1 = 1.0 - hp.beta1.powi(self.t as i32);
        let c2 = 1.0 - hp.beta2.powi(self.t as i32);
        let rates = self.rates_at(iteration);
        for (stroke, g) in painting.strokes.iter_mut().zip(&grads.strokes) {
            debug_assert_eq!(stroke.stroke_id, g.stroke_id);
            let n = stroke.len();
            let mo = self
                .state
                .entry(stroke.stroke_id)
                .and_modify(|m| {
                    if m.kernels != n {
                        *m = Moments {
                            kernels: n,
                            m: StrokeGrad::zeros(stroke.stroke_id, n),
                            v: StrokeGrad::zeros(stroke.stroke_id, n),
                        };
                    }
                })
                .or_insert_with(|| Moments {
                    kernels: n,
                    m: StrokeGrad::zeros(stroke.stroke_id, n),
                    v: StrokeGrad::zeros(stroke.stroke_id, n),
                });
            for (k, kernel) in stroke.kernels.iter_mut().enumerate() {
                for axis in 0..2 {
                    adam_update(
                        &mut kernel.center[axis],
                        g.centers[k][axis],
                        &mut mo.m.centers[k][axis],
                        &mut mo.v.centers[k][axis],
                        rates.center,
                        c1,
                        c2,
                        &hp,
                    );
                }
                adam_update(
                    &mut kernel.rotation,
                    g.rotations[k],
                    &mut mo.m.rotations[k],
                    &mut mo.v.rotations[k],
                    rates.rotation,
                    c1,
                    c2,
                    &hp,
                );
            }
            for axis in 0..2 {
                adam_update(
                    &mut stroke.raw_scale[axis],
                    g.raw_scale[axis],
                    &mut mo.m.raw_scale[axis],
                    &mut mo.v.raw_scale[axis],
                    rates.shape,
                    c1,
                    c2,
                    &hp,
                );
            }
            adam_update(
                &mut stroke.raw_opacity,
                g.raw_opacity,
                &mut mo.m.raw_opacity,
                &mut mo.v.raw_opacity,
                rates.shape,
                c1,
                c2,
                &hp,
            );
        }
    }
}
