//! Squared-error and cross-entropy losses, their normalised hybrid, and the
//! per-epoch schedules that pick the hybrid's mixing weights.
//!
//! Every loss here is a batch mean: the per-pattern sum over outputs is
//! averaged over the rows of the batch. Output-error signals are the
//! derivative of that mean with respect to the output layer's
//! pre-activations, so [`crate::nn::Network::backward`] only has to sum.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardTrace, Network};

/// Outputs are clamped into `[EPS, 1 - EPS]` before taking logarithms.
pub const CE_CLAMP: f64 = 1e-12;

/// Norms at or below this are treated as degenerate.
pub const MIN_NORM: f64 = 1e-12;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Which loss a schedule starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    CeToSe,
    SeToCe,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VariantKind {
    Static(MixWeights),
    Adaptive(Direction),
    Reactive(Direction),
}

/// The nine loss configurations, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossVariant {
    Ce100Se0,
    Ce75Se25,
    Ce50Se50,
    Ce25Se75,
    Ce0Se100,
    CeToSe,
    SeToCe,
    CeSwSe,
    SeSwCe,
}

impl LossVariant {
    pub const ALL: [LossVariant; 9] = [
        LossVariant::Ce100Se0,
        LossVariant::Ce75Se25,
        LossVariant::Ce50Se50,
        LossVariant::Ce25Se75,
        LossVariant::Ce0Se100,
        LossVariant::CeToSe,
        LossVariant::SeToCe,
        LossVariant::CeSwSe,
        LossVariant::SeSwCe,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LossVariant::Ce100Se0 => "CE100SE0",
            LossVariant::Ce75Se25 => "CE75SE25",
            LossVariant::Ce50Se50 => "CE50SE50",
            LossVariant::Ce25Se75 => "CE25SE75",
            LossVariant::Ce0Se100 => "CE0SE100",
            LossVariant::CeToSe => "CEtoSE",
            LossVariant::SeToCe => "SEtoCE",
            LossVariant::CeSwSe => "CEswSE",
            LossVariant::SeSwCe => "SEswCE",
        }
    }

    /// 1-based position in reporting order.
    pub fn ordinal(self) -> usize {
        LossVariant::ALL.iter().position(|&v| v == self).unwrap() + 1
    }

    pub fn kind(self) -> VariantKind {
        let fixed = |se, ce| VariantKind::Static(MixWeights { se, ce });
        match self {
            LossVariant::Ce100Se0 => fixed(0.0, 1.0),
            LossVariant::Ce75Se25 => fixed(0.25, 0.75),
            LossVariant::Ce50Se50 => fixed(0.5, 0.5),
            LossVariant::Ce25Se75 => fixed(0.75, 0.25),
            LossVariant::Ce0Se100 => fixed(1.0, 0.0),
            LossVariant::CeToSe => VariantKind::Adaptive(Direction::CeToSe),
            LossVariant::SeToCe => VariantKind::Adaptive(Direction::SeToCe),
            LossVariant::CeSwSe => VariantKind::Reactive(Direction::CeToSe),
            LossVariant::SeSwCe => VariantKind::Reactive(Direction::SeToCe),
        }
    }

    pub fn is_reactive(self) -> bool {
        matches!(self.kind(), VariantKind::Reactive(_))
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

impl Serialize for LossVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for LossVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Mixing proportions: `se` scales the normalised squared error, `ce` the
/// normalised cross entropy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub se: f64,
    pub ce: f64,
}

impl MixWeights {
    pub const SE_ONLY: MixWeights = MixWeights { se: 1.0, ce: 0.0 };
    pub const CE_ONLY: MixWeights = MixWeights { se: 0.0, ce: 1.0 };

    pub fn new(se: f64, ce: f64) -> Result<Self> {
        let w = MixWeights { se, ce };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.se.is_finite()
            && self.ce.is_finite()
            && self.se >= 0.0
            && self.ce >= 0.0
            && (self.se + self.ce - 1.0).abs() <= WEIGHT_SUM_TOL;
        if ok {
            Ok(())
        } else {
            Err(Error::MixWeights {
                se: self.se,
                ce: self.ce,
            })
        }
    }
}

/// Pre-training loss magnitudes that put both terms of the hybrid on a comparable scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossNorms {
    pub max_se: f64,
    pub max_ce: f64,
}

impl LossNorms {
    pub fn new(max_se: f64, max_ce: f64) -> Result<Self> {
        for (name, v) in [("max_se", max_se), ("max_ce", max_ce)] {
            if !v.is_finite() || v <= MIN_NORM {
                return Err(Error::DegenerateNorm(format!("{name} = {v}")));
            }
        }
        Ok(LossNorms { max_se, max_ce })
    }
}

/// How cross entropy is read for a given output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CeForm {
    /// Independent Bernoulli outputs (sigmoid): −Σ_k [t log o + (1−t) log(1−o)].
    Binary,
    /// One distribution per pattern (softmax): −Σ_k t log o.
    Categorical,
}

impl CeForm {
    pub fn for_activation(act: Activation) -> Result<Self> {
        match act {
            Activation::Sigmoid => Ok(CeForm::Binary),
            Activation::Softmax => Ok(CeForm::Categorical),
            other => Err(Error::Architecture(format!(
                "cross entropy needs sigmoid or softmax outputs, not {other}"
            ))),
        }
    }
}

fn check_pair(targets: &ArrayView2<f64>, outputs: &ArrayView2<f64>) -> Result<()> {
    if targets.dim() != outputs.dim() {
        return Err(Error::shape(
            format!("targets {:?}", targets.dim()),
            format!("outputs {:?}", outputs.dim()),
        ));
    }
    if targets.nrows() == 0 {
        return Err(Error::Empty("loss over zero patterns".into()));
    }
    Ok(())
}

fn check_binary_targets(targets: &ArrayView2<f64>) -> Result<()> {
    match targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        Some(&value) => Err(Error::InvalidTarget { value }),
        None => Ok(()),
    }
}

/// Mean over patterns of Σ_k (t − o)².
pub fn eval_se(targets: ArrayView2<f64>, outputs: ArrayView2<f64>) -> Result<f64> {
    check_pair(&targets, &outputs)?;
    let mut total = 0.0;
    Zip::from(&targets).and(&outputs).for_each(|&t, &o| {
        let r = t - o;
        total += r * r;
    });
    Ok(total / targets.nrows() as f64)
}

/// Mean over patterns of the cross entropy in the given form.
pub fn eval_ce(targets: ArrayView2<f64>, outputs: ArrayView2<f64>, form: CeForm) -> Result<f64> {
    check_pair(&targets, &outputs)?;
    check_binary_targets(&targets)?;
    let mut total = 0.0;
    Zip::from(&targets).and(&outputs).for_each(|&t, &o| {
        let o = o.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        match form {
            CeForm::Binary => {
                if t == 1.0 {
                    total -= o.ln();
                } else {
                    total -= (1.0 - o).ln();
                }
            }
            CeForm::Categorical => {
                if t == 1.0 {
                    total -= o.ln();
                }
            }
        }
    });
    Ok(total / targets.nrows() as f64)
}

/// s_se · E_se / max_se + s_ce · E_ce / max_ce. Zero-weight terms are not evaluated.
pub fn eval_hybrid(
    targets: ArrayView2<f64>,
    outputs: ArrayView2<f64>,
    form: CeForm,
    weights: MixWeights,
    norms: &LossNorms,
) -> Result<f64> {
    weights.validate()?;
    check_pair(&targets, &outputs)?;
    let mut total = 0.0;
    if weights.se > 0.0 {
        total += weights.se * (eval_se(targets, outputs)? / norms.max_se);
    }
    if weights.ce > 0.0 {
        total += weights.ce * (eval_ce(targets, outputs, form)? / norms.max_ce);
    }
    Ok(total)
}

fn check_trace_targets(targets: &ArrayView2<f64>, trace: &ForwardTrace) -> Result<()> {
    check_pair(targets, &trace.outputs().view())
}

/// ∂E_se/∂z for the output layer (batch mean).
pub fn grad_se(targets: ArrayView2<f64>, trace: &ForwardTrace) -> Result<Array2<f64>> {
    check_trace_targets(&targets, trace)?;
    let p = targets.nrows() as f64;
    let outputs = trace.outputs();
    let mut g = Array2::zeros(outputs.raw_dim());
    Zip::from(&mut g)
        .and(&targets)
        .and(outputs)
        .for_each(|g, &t, &o| *g = 2.0 * (o - t) / p);
    match trace.output_activation {
        Activation::Identity => {}
        Activation::Sigmoid => {
            Zip::from(&mut g).and(outputs).for_each(|g, &o| *g *= o * (1.0 - o));
        }
        Activation::Relu => {
            Zip::from(&mut g)
                .and(trace.output_pre_activations())
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
        }
        Activation::Softmax => {
            // Jacobian of softmax: ∂o_k/∂z_j = o_k (δ_kj − o_j)
            for (mut g_row, o_row) in g.rows_mut().into_iter().zip(outputs.rows()) {
                let dot: f64 = g_row.iter().zip(o_row.iter()).map(|(g, o)| g * o).sum();
                Zip::from(&mut g_row).and(&o_row).for_each(|g, &o| *g = o * (*g - dot));
            }
        }
    }
    Ok(g)
}

/// ∂E_ce/∂z for the output layer (batch mean).
pub fn grad_ce(targets: ArrayView2<f64>, trace: &ForwardTrace) -> Result<Array2<f64>> {
    check_trace_targets(&targets, trace)?;
    check_binary_targets(&targets)?;
    let form = CeForm::for_activation(trace.output_activation)?;
    let p = targets.nrows() as f64;
    let outputs = trace.outputs();
    let mut g = Array2::zeros(outputs.raw_dim());
    match form {
        CeForm::Binary => {
            Zip::from(&mut g)
                .and(&targets)
                .and(outputs)
                .for_each(|g, &t, &o| *g = (o - t) / p);
        }
        CeForm::Categorical => {
            for ((mut g_row, t_row), o_row) in g.rows_mut().into_iter().zip(targets.rows()).zip(outputs.rows()) {
                let mass = t_row.sum();
                Zip::from(&mut g_row)
                    .and(&t_row)
                    .and(&o_row)
                    .for_each(|g, &t, &o| *g = (o * mass - t) / p);
            }
        }
    }
    Ok(g)
}

/// Output-layer error signal of the hybrid loss. Zero-weight terms are skipped,
/// so (1, 0) and (0, 1) reproduce the normalised single-loss signals exactly.
pub fn grad_output(
    targets: ArrayView2<f64>,
    trace: &ForwardTrace,
    weights: MixWeights,
    norms: &LossNorms,
) -> Result<Array2<f64>> {
    weights.validate()?;
    check_trace_targets(&targets, trace)?;
    let mut out: Option<Array2<f64>> = None;
    if weights.se > 0.0 {
        let mut g = grad_se(targets, trace)?;
        g.mapv_inplace(|v| weights.se * (v / norms.max_se));
        out = Some(g);
    }
    if weights.ce > 0.0 {
        let mut g = grad_ce(targets, trace)?;
        g.mapv_inplace(|v| weights.ce * (v / norms.max_ce));
        out = Some(match out {
            Some(se) => se + g,
            None => g,
        });
    }
    Ok(out.expect("validated weights are not both zero"))
}

/// Loss values of the untrained network over a training fold.
pub fn estimate_norms(net: &Network, features: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<LossNorms> {
    if features.nrows() == 0 {
        return Err(Error::Empty("cannot estimate norms on an empty fold".into()));
    }
    let outputs = net.predict(features)?;
    let max_se = eval_se(targets, outputs.view())?;
    if !max_se.is_finite() || max_se <= MIN_NORM {
        return Err(Error::DegenerateNorm(format!("max_se = {max_se}")));
    }
    let form = CeForm::for_activation(net.output_activation())?;
    let max_ce = eval_ce(targets, outputs.view(), form)?;
    LossNorms::new(max_se, max_ce)
}

/// Linear 1%-per-epoch transfer from the starting loss to the other, complete at epoch 100.
pub fn adaptive_weights(direction: Direction, epoch: usize) -> MixWeights {
    let remaining = 100 - epoch.min(100);
    let start = remaining as f64 / 100.0;
    let other = 1.0 - start;
    match direction {
        Direction::SeToCe => MixWeights { se: start, ce: other },
        Direction::CeToSe => MixWeights { se: other, ce: start },
    }
}

/// All weight on the starting loss until the switch, all on the other afterwards.
pub fn reactive_weights(switched: bool, direction: Direction) -> MixWeights {
    match (direction, switched) {
        (Direction::SeToCe, false) | (Direction::CeToSe, true) => MixWeights::SE_ONLY,
        (Direction::SeToCe, true) | (Direction::CeToSe, false) => MixWeights::CE_ONLY,
    }
}

/// Per-run schedule state for one loss variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub variant: LossVariant,
    pub epoch: usize,
    pub switched: bool,
    pub switch_epoch: Option<usize>,
    pub current_weights: MixWeights,
}

impl ScheduleState {
    pub fn new(variant: LossVariant) -> Self {
        let mut state = ScheduleState {
            variant,
            epoch: 0,
            switched: false,
            switch_epoch: None,
            current_weights: MixWeights::SE_ONLY,
        };
        state.current_weights = state.compute();
        state
    }

    fn compute(&self) -> MixWeights {
        match self.variant.kind() {
            VariantKind::Static(w) => w,
            VariantKind::Adaptive(dir) => adaptive_weights(dir, self.epoch),
            VariantKind::Reactive(dir) => reactive_weights(self.switched, dir),
        }
    }

    /// Moves the schedule to `epoch` and returns the weights that epoch trains with.
    pub fn advance_to(&mut self, epoch: usize) -> MixWeights {
        self.epoch = epoch;
        self.current_weights = self.compute();
        self.current_weights
    }

    /// Flips a reactive schedule to its second loss. Returns `false` when the
    /// variant is not reactive or has already switched.
    pub fn trigger_switch(&mut self, epoch: usize) -> bool {
        if !self.variant.is_reactive() || self.switched {
            return false;
        }
        self.switched = true;
        self.switch_epoch = Some(epoch);
        self.current_weights = self.compute();
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchSpec, Layer};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn trace_for(outputs: Array2<f64>, z: Array2<f64>, act: Activation) -> ForwardTrace {
        ForwardTrace {
            inputs: Array2::zeros((outputs.nrows(), 1)),
            pre_activations: vec![z],
            activations: vec![outputs],
            output_activation: act,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn labels_round_trip_and_order() {
        let labels: Vec<&str> = LossVariant::ALL.iter().map(|v| v.label()).collect();
        assert_eq!(
            labels,
            ["CE100SE0", "CE75SE25", "CE50SE50", "CE25SE75", "CE0SE100", "CEtoSE", "SEtoCE", "CEswSE", "SEswCE"]
        );
        for v in LossVariant::ALL {
            assert_eq!(v.label().parse::<LossVariant>().unwrap(), v);
        }
        assert!(matches!("SEswSE".parse::<LossVariant>(), Err(Error::UnknownVariant(_))));
        assert_eq!(LossVariant::SeSwCe.ordinal(), 9);
    }

    #[test]
    fn static_kinds_bind_first_weight_to_se() {
        for v in LossVariant::ALL {
            if let VariantKind::Static(w) = v.kind() {
                w.validate().unwrap();
            }
        }
        assert_eq!(LossVariant::Ce100Se0.kind(), VariantKind::Static(MixWeights::CE_ONLY));
        assert_eq!(
            LossVariant::Ce75Se25.kind(),
            VariantKind::Static(MixWeights { se: 0.25, ce: 0.75 })
        );
        assert_eq!(LossVariant::Ce0Se100.kind(), VariantKind::Static(MixWeights::SE_ONLY));
    }

    #[test]
    fn se_values() {
        let t = array![[1.0, 0.0]];
        let o = array![[0.8, 0.2]];
        assert_eq!(eval_se(t.view(), t.view()).unwrap(), 0.0);
        assert_abs_diff_eq!(eval_se(t.view(), o.view()).unwrap(), 0.08, epsilon = 1e-15);
        let t2 = array![[1.0, 0.0], [1.0, 0.0]];
        let o2 = array![[0.8, 0.2], [0.8, 0.2]];
        assert_abs_diff_eq!(eval_se(t2.view(), o2.view()).unwrap(), 0.08, epsilon = 1e-15);
        assert!(eval_se(t.view(), t2.view()).is_err());
    }

    #[test]
    fn ce_values() {
        let one = array![[1.0]];
        assert_abs_diff_eq!(eval_ce(one.view(), one.view(), CeForm::Binary).unwrap(), 0.0, epsilon = 1e-11);
        let v = eval_ce(one.view(), array![[0.8]].view(), CeForm::Binary).unwrap();
        assert_abs_diff_eq!(v, 0.22314, epsilon = 1e-5);
        assert_abs_diff_eq!(v, -(0.8f64).ln(), epsilon = 1e-15);

        let mut t = Array2::zeros((1, 10));
        t[[0, 3]] = 1.0;
        let o = Array2::from_elem((1, 10), 0.1);
        assert_abs_diff_eq!(
            eval_ce(t.view(), o.view(), CeForm::Categorical).unwrap(),
            std::f64::consts::LN_10,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ce_rejects_soft_targets() {
        let r = eval_ce(array![[0.5]].view(), array![[0.5]].view(), CeForm::Binary);
        assert!(matches!(r, Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn ce_clamps_saturated_outputs() {
        let v = eval_ce(array![[1.0]].view(), array![[0.0]].view(), CeForm::Binary).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -(CE_CLAMP).ln(), epsilon = 1e-9);
    }

    #[test]
    fn hybrid_degenerate_weights_are_bitwise_single_losses() {
        let t = array![[1.0], [0.0], [1.0]];
        let o = array![[0.7], [0.4], [0.95]];
        let norms = LossNorms::new(0.25, 0.7).unwrap();
        let se = eval_hybrid(t.view(), o.view(), CeForm::Binary, MixWeights::SE_ONLY, &norms).unwrap();
        assert_eq!(se, eval_se(t.view(), o.view()).unwrap() / 0.25);
        let ce = eval_hybrid(t.view(), o.view(), CeForm::Binary, MixWeights::CE_ONLY, &norms).unwrap();
        assert_eq!(ce, eval_ce(t.view(), o.view(), CeForm::Binary).unwrap() / 0.7);
    }

    #[test]
    fn hybrid_half_half_hand_value() {
        // E_se = 0.08 for t=[1,0], o=[0.8,0.2]; E_ce = −ln 0.8 for t=[1], o=[0.8].
        let norms = LossNorms::new(0.25, 0.7).unwrap();
        let half = MixWeights::new(0.5, 0.5).unwrap();
        let e_se = 0.08;
        let e_ce = -(0.8f64).ln();
        let expected = 0.5 * e_se / 0.25 + 0.5 * e_ce / 0.7;
        assert_abs_diff_eq!(expected, 0.319388, epsilon = 1e-6);

        // a single sigmoid output with t=1, o=0.8 has E_ce = −ln 0.8 but E_se = 0.04,
        // so the hand value is checked term by term
        let t = array![[1.0]];
        let o = array![[0.8]];
        let got = eval_hybrid(t.view(), o.view(), CeForm::Binary, half, &norms).unwrap();
        assert_abs_diff_eq!(got, 0.5 * 0.04 / 0.25 + 0.5 * e_ce / 0.7, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_rejects_bad_weights() {
        let t = array![[1.0]];
        let norms = LossNorms::new(1.0, 1.0).unwrap();
        let bad = MixWeights { se: 0.6, ce: 0.6 };
        assert!(matches!(
            eval_hybrid(t.view(), t.view(), CeForm::Binary, bad, &norms),
            Err(Error::MixWeights { .. })
        ));
        assert!(MixWeights::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn norms_must_be_positive() {
        assert!(LossNorms::new(0.0, 1.0).is_err());
        assert!(LossNorms::new(1.0, f64::NAN).is_err());
        assert!(LossNorms::new(0.25, 0.69).is_ok());
    }

    #[test]
    fn pure_ce_sigmoid_signal_is_output_minus_target() {
        let o = 0.8;
        let trace = trace_for(array![[o]], array![[logit(o)]], Activation::Sigmoid);
        let norms = LossNorms::new(1.0, 1.0).unwrap();
        let g = grad_output(array![[1.0]].view(), &trace, MixWeights::CE_ONLY, &norms).unwrap();
        assert_abs_diff_eq!(g[[0, 0]], -0.2, epsilon = 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_signal() {
        let t = array![[0.0, 1.0, 0.0]];
        let trace = trace_for(t.clone(), array![[0.0, 0.0, 0.0]], Activation::Softmax);
        let norms = LossNorms::new(0.5, 0.5).unwrap();
        let g = grad_output(t.view(), &trace, MixWeights::new(0.5, 0.5).unwrap(), &norms).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    /// Central differences of the hybrid loss with respect to output pre-activations.
    fn fd_output_error(t: &Array2<f64>, z: &Array2<f64>, act: Activation, w: MixWeights, norms: &LossNorms) -> Array2<f64> {
        let outputs_of = |z: &Array2<f64>| -> Array2<f64> {
            let layer = Layer {
                weights: Array2::eye(z.ncols()),
                biases: ndarray::Array1::zeros(z.ncols()),
                activation: act,
            };
            Network::from_layers(z.ncols(), vec![layer]).unwrap().predict(z.view()).unwrap()
        };
        let form = CeForm::for_activation(act).unwrap();
        let h = 1e-5;
        let mut g = Array2::zeros(z.raw_dim());
        for idx in 0..z.len() {
            let (r, c) = (idx / z.ncols(), idx % z.ncols());
            let mut zp = z.clone();
            zp[[r, c]] += h;
            let mut zm = z.clone();
            zm[[r, c]] -= h;
            let ep = eval_hybrid(t.view(), outputs_of(&zp).view(), form, w, norms).unwrap();
            let em = eval_hybrid(t.view(), outputs_of(&zm).view(), form, w, norms).unwrap();
            g[[r, c]] = (ep - em) / (2.0 * h);
        }
        g
    }

    #[test]
    fn output_error_matches_finite_differences() {
        let norms = LossNorms::new(0.37, 0.81).unwrap();
        let z_sig = array![[0.3, -1.2], [2.0, 0.1], [-0.4, 0.9]];
        let t_sig = array![[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
        let z_soft = array![[0.3, -1.2, 0.5], [2.0, 0.1, -0.7]];
        let t_soft = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        for w in [MixWeights::SE_ONLY, MixWeights::CE_ONLY, MixWeights::new(0.25, 0.75).unwrap()] {
            for (z, t, act) in [
                (&z_sig, &t_sig, Activation::Sigmoid),
                (&z_soft, &t_soft, Activation::Softmax),
            ] {
                let layer = Layer {
                    weights: Array2::eye(z.ncols()),
                    biases: ndarray::Array1::zeros(z.ncols()),
                    activation: act,
                };
                let net = Network::from_layers(z.ncols(), vec![layer]).unwrap();
                let trace = net.forward(z.view()).unwrap();
                let analytic = grad_output(t.view(), &trace, w, &norms).unwrap();
                let numeric = fd_output_error(t, z, act, w, &norms);
                for (a, n) in analytic.iter().zip(numeric.iter()) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                    assert!(rel < 1e-5, "{act} {w:?}: analytic {a} vs numeric {n}");
                }
            }
        }
    }

    #[test]
    fn norms_from_zero_networks() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        let sig = Network::zeros(&ArchSpec::mlp(3, &[2], 1, Activation::Sigmoid)).unwrap();
        let t = array![[1.0], [0.0], [0.0], [1.0], [1.0]];
        let norms = estimate_norms(&sig, x.view(), t.view()).unwrap();
        assert_abs_diff_eq!(norms.max_se, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(norms.max_ce, std::f64::consts::LN_2, epsilon = 1e-12);

        let half = Array2::from_elem((5, 1), 0.5);
        assert!(matches!(
            estimate_norms(&sig, x.view(), half.view()),
            Err(Error::DegenerateNorm(_))
        ));

        let soft = Network::zeros(&ArchSpec::mlp(3, &[2], 10, Activation::Softmax)).unwrap();
        let t = Array2::from_shape_fn((5, 10), |(i, j)| if j == i { 1.0 } else { 0.0 });
        let norms = estimate_norms(&soft, x.view(), t.view()).unwrap();
        assert_abs_diff_eq!(norms.max_ce, std::f64::consts::LN_10, epsilon = 1e-12);

        assert!(matches!(
            estimate_norms(&sig, Array2::zeros((0, 3)).view(), Array2::zeros((0, 1)).view()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn adaptive_endpoints_and_midpoint() {
        assert_eq!(adaptive_weights(Direction::SeToCe, 0), MixWeights::SE_ONLY);
        assert_eq!(adaptive_weights(Direction::SeToCe, 50), MixWeights { se: 0.5, ce: 0.5 });
        assert_eq!(adaptive_weights(Direction::SeToCe, 100), MixWeights::CE_ONLY);
        assert_eq!(adaptive_weights(Direction::SeToCe, 250), MixWeights::CE_ONLY);
        assert_eq!(adaptive_weights(Direction::CeToSe, 0), MixWeights::CE_ONLY);
        assert_eq!(adaptive_weights(Direction::CeToSe, 100), MixWeights::SE_ONLY);
    }

    #[test]
    fn adaptive_sums_are_exact() {
        for dir in [Direction::SeToCe, Direction::CeToSe] {
            for e in 0..=150 {
                let w = adaptive_weights(dir, e);
                assert_eq!(w.se + w.ce, 1.0, "epoch {e}");
                w.validate().unwrap();
            }
        }
    }

    #[test]
    fn reactive_weights_table() {
        assert_eq!(reactive_weights(false, Direction::SeToCe), MixWeights::SE_ONLY);
        assert_eq!(reactive_weights(true, Direction::SeToCe), MixWeights::CE_ONLY);
        assert_eq!(reactive_weights(false, Direction::CeToSe), MixWeights::CE_ONLY);
        assert_eq!(reactive_weights(true, Direction::CeToSe), MixWeights::SE_ONLY);
    }

    #[test]
    fn schedule_switches_once() {
        let mut s = ScheduleState::new(LossVariant::SeSwCe);
        assert_eq!(s.advance_to(5), MixWeights::SE_ONLY);
        assert!(s.trigger_switch(23));
        assert!(!s.trigger_switch(30));
        assert_eq!(s.switch_epoch, Some(23));
        assert_eq!(s.advance_to(24), MixWeights::CE_ONLY);

        let mut s = ScheduleState::new(LossVariant::Ce50Se50);
        assert!(!s.trigger_switch(3));
        assert_eq!(s.switch_epoch, None);
    }
}
