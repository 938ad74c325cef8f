//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use hybridloss::loss::{self, CeForm, LossNorms, LossVariant, MixWeights, ScheduleState};
use hybridloss::nn::{Activation, ArchSpec, Network};
use ndarray::Array2;
use rand::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative error between analytic and numeric gradients.
pub const FD_REL_TOL: f64 = 1e-5;
/// Denominator floor of the relative error. Central differences carry about
/// ε·|L|/h ≈ 2e-11 of rounding noise, so components much smaller than this
/// floor are compared on an absolute scale (|a − n| ≤ 1e-9) instead.
pub const FD_REL_FLOOR: f64 = 1e-4;
/// Parameters that move a ReLU input lying this close to its kink are skipped.
pub const RELU_KINK_MARGIN: f64 = 1e-4;

pub struct GradCase {
    pub net: Network,
    pub x: Array2<f64>,
    pub t: Array2<f64>,
    pub form: CeForm,
    pub weights: MixWeights,
    pub norms: LossNorms,
    pub variant: LossVariant,
    pub schedule: ScheduleState,
}

/// Random targets: one 0/1 column per sigmoid output or one-hot rows for softmax.
pub fn random_targets<R: Rng>(rng: &mut R, rows: usize, cols: usize, act: Activation) -> Array2<f64> {
    match act {
        Activation::Softmax => {
            let mut t = Array2::zeros((rows, cols));
            for r in 0..rows {
                t[[r, rng.gen_range(0..cols)]] = 1.0;
            }
            t
        }
        _ => Array2::from_shape_fn((rows, cols), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }),
    }
}

/// A random small ReLU network with the given output activation, a random
/// batch and the variant's weights at a random point of its schedule.
pub fn random_case<R: Rng>(rng: &mut R, output: Activation, variant: LossVariant) -> GradCase {
    let input = rng.gen_range(1..=5);
    let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=6)).collect();
    let out = match output {
        Activation::Softmax => rng.gen_range(2..=5),
        _ => rng.gen_range(1..=3),
    };
    let spec = ArchSpec::mlp(input, &hidden, out, output);
    let mut net = Network::build(&spec, rng).unwrap();
    let params: Vec<f64> = (0..net.parameter_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    net.load_flat(&params).unwrap();

    let rows = rng.gen_range(1..=6);
    let x = Array2::from_shape_fn((rows, input), |_| rng.gen_range(-2.0..2.0));
    let t = random_targets(rng, rows, out, output);
    let norms = loss::estimate_norms(&net, x.view(), t.view()).unwrap();

    let mut schedule = ScheduleState::new(variant);
    let epoch = rng.gen_range(0..=120);
    if variant.is_reactive() && rng.gen_bool(0.5) {
        let at = rng.gen_range(20..=epoch.max(20));
        schedule.advance_to(at);
        schedule.trigger_switch(at);
    }
    let weights = schedule.advance_to(epoch);
    GradCase {
        net,
        x,
        t,
        form: CeForm::for_activation(output).unwrap(),
        weights,
        norms,
        variant,
        schedule,
    }
}

pub fn case_loss(case: &GradCase, net: &Network) -> f64 {
    let o = net.predict(case.x.view()).unwrap();
    loss::eval_hybrid(case.t.view(), o.view(), case.form, case.weights, &case.norms).unwrap()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckSummary {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

fn near_kink(base: &[Array2<f64>], moved: &[Array2<f64>]) -> bool {
    // hidden layers only; the output layer is never ReLU here
    base.iter().zip(moved).take(base.len() - 1).any(|(b, m)| {
        b.iter()
            .zip(m.iter())
            .any(|(&zb, &zm)| zb != zm && (zb.abs() < RELU_KINK_MARGIN || zb.signum() != zm.signum()))
    })
}

/// Compares backprop through the hybrid output error with central differences
/// of the hybrid loss, parameter by parameter.
pub fn check_gradients(case: &GradCase) -> CheckSummary {
    let trace = case.net.forward(case.x.view()).unwrap();
    let err = loss::grad_output(case.t.view(), &trace, case.weights, &case.norms).unwrap();
    let analytic = case.net.backward(&trace, err.view()).unwrap().to_flat();
    let theta = case.net.to_flat();
    let mut summary = CheckSummary::default();
    let mut probe = case.net.clone();
    for i in 0..theta.len() {
        let mut shifted = |delta: f64| {
            let mut p = theta.clone();
            p[i] += delta;
            probe.load_flat(&p).unwrap();
            let z = probe.forward(case.x.view()).unwrap().pre_activations;
            (case_loss(case, &probe), z)
        };
        let (up, z_up) = shifted(FD_STEP);
        let (down, z_down) = shifted(-FD_STEP);
        if near_kink(&trace.pre_activations, &z_up) || near_kink(&trace.pre_activations, &z_down) {
            summary.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        summary.checked += 1;
        summary.worst_rel = summary.worst_rel.max(relative_error(analytic[i], numeric));
    }
    summary
}
