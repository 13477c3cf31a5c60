//! Adam optimizer with global-norm gradient clipping.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::network::{NetGrads, ScoreNetwork};

/// Relative slack on the clipping threshold so that re-clipping an
/// already-clipped gradient is an exact no-op despite rounding.
const CLIP_SLACK: f64 = 1e-12;

/// First/second moment accumulators plus hyperparameters.
///
/// Moments are stored in the same layout as [`NetGrads`]; `step_count`
/// increases by exactly one per update.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: NetGrads,
    second_moment: NetGrads,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &ScoreNetwork, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first_moment: net.zero_grads(),
            second_moment: net.zero_grads(),
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn with_defaults(net: &ScoreNetwork) -> Self {
        Self::new(net, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Scale all gradients by `clip_norm / ‖g‖` when the global norm exceeds
/// `clip_norm`; returns the factor applied (1.0 when no clipping fired).
pub fn clip_gradients(grads: &mut NetGrads, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm * (1.0 + CLIP_SLACK) {
        let factor = clip_norm / norm;
        grads.scale(factor);
        factor
    } else {
        1.0
    }
}

/// One optimizer step: clip by global norm, then apply the bias-corrected
/// Adam update. Parameters are untouched if the gradients are non-finite.
pub fn optimizer_step(
    net: &mut ScoreNetwork,
    state: &mut AdamState,
    mut grads: NetGrads,
    lr: f64,
    clip_norm: f64,
) -> Result<()> {
    if !(lr > 0.0) || !(clip_norm > 0.0) {
        return Err(Error::input("lr and clip_norm must be positive"));
    }
    if grads.layers.len() != net.layers().len() {
        return Err(Error::input("gradient layout does not match network"));
    }
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradients; parameters untouched"));
    }
    clip_gradients(&mut grads, clip_norm);

    state.step_count += 1;
    let c1 = 1.0 - state.beta1.powi(state.step_count as i32);
    let c2 = 1.0 - state.beta2.powi(state.step_count as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };

    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first_moment.layers[l];
        let v = &mut state.second_moment.layers[l];
        update_tensor2(&mut layer.weights, &g.dw, &mut m.dw, &mut v.dw, update);
        update_tensor1(&mut layer.biases, &g.db, &mut m.db, &mut v.db, update);
        if let (Some(map), Some(ge)) = (&mut layer.embed_map, &g.dembed) {
            let me = m.dembed.as_mut().expect("moment layout matches");
            let ve = v.dembed.as_mut().expect("moment layout matches");
            update_tensor2(map, ge, me, ve, update);
        }
    }
    Ok(())
}

fn update_tensor2(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    f: impl Fn(&mut f64, f64, &mut f64, &mut f64),
) {
    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
        f(pv, gv, mv, vv);
    }
}

fn update_tensor1(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    f: impl Fn(&mut f64, f64, &mut f64, &mut f64),
) {
    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
        f(pv, gv, mv, vv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small_net(seed: u64) -> ScoreNetwork {
        ScoreNetwork::new(&[2, 4, 2], None, &mut stream(seed, "adam-test", 0)).unwrap()
    }

    fn unit_grads(net: &ScoreNetwork, value: f64) -> NetGrads {
        let mut g = net.zero_grads();
        for l in &mut g.layers {
            l.dw.fill(value);
            l.db.fill(value);
        }
        g
    }

    #[test]
    fn zero_grads_leave_parameters_but_advance_step() {
        let mut net = small_net(1);
        let before = net.clone();
        let mut state = AdamState::with_defaults(&net);
        let zeros = net.zero_grads();
        optimizer_step(&mut net, &mut state, zeros, 1e-3, 1.0).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn clipping_scales_to_requested_norm() {
        let net = small_net(2);
        let mut g = unit_grads(&net, 1.0);
        let norm = g.global_norm();
        let target = norm / 2.0;
        let factor = clip_gradients(&mut g, target);
        assert!((factor - 0.5).abs() < 1e-12);
        assert!((g.global_norm() - target).abs() < 1e-9);
    }

    #[test]
    fn clipping_is_idempotent() {
        let net = small_net(3);
        let mut g = unit_grads(&net, 0.7);
        clip_gradients(&mut g, 1.0);
        let snapshot: Vec<f64> = g.layers.iter().flat_map(|l| l.dw.iter().copied()).collect();
        let factor = clip_gradients(&mut g, 1.0);
        assert_eq!(factor, 1.0);
        let after: Vec<f64> = g.layers.iter().flat_map(|l| l.dw.iter().copied()).collect();
        assert_eq!(snapshot, after);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut net = small_net(4);
            let mut state = AdamState::with_defaults(&net);
            let g = unit_grads(&net, 0.01);
            optimizer_step(&mut net, &mut state, g, 1e-3, 1.0).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nonfinite_grads_leave_parameters_untouched() {
        let mut net = small_net(5);
        let before = net.clone();
        let mut state = AdamState::with_defaults(&net);
        let mut g = unit_grads(&net, 1.0);
        g.layers[0].dw[[0, 0]] = f64::NAN;
        assert!(optimizer_step(&mut net, &mut state, g, 1e-3, 1.0).is_err());
        assert_eq!(net, before);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn first_update_insensitive_to_gradient_scale() {
        // bias-corrected first step divides by √(ĝ²), so scaling all grads
        // by 10 must leave the update nearly unchanged.
        let base = small_net(6);
        let apply = |scale: f64| {
            let mut net = base.clone();
            let mut state = AdamState::with_defaults(&net);
            let mut g = unit_grads(&net, 0.02);
            g.scale(scale);
            optimizer_step(&mut net, &mut state, g, 1e-3, 1e9).unwrap();
            net
        };
        let a = apply(1.0);
        let b = apply(10.0);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.weights.iter().zip(lb.weights.iter()) {
                let rel = (x - y).abs() / x.abs().max(1e-12);
                assert!(rel < 1e-6, "rel diff {rel}");
            }
        }
    }
}
