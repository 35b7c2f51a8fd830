//! Central finite-difference verification of the analytic gradients of a
//! whole model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::model::{forward, init_params, instance_loss, EncodedInstance, EncoderKind, ModelSpec};
use super::params::ParamSet;
use super::tape::Tape;
use super::train::batch_gradients;
use super::{NnError, Result};

pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
    /// Analytic and numeric gradients are both exactly zero everywhere.
    pub zero_vs_zero: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub encoder: EncoderKind,
    pub tolerance: f64,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed).collect()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            return Ok(self);
        }
        let list: Vec<String> = self
            .failures()
            .iter()
            .map(|t| format!("{} (max rel err {:.3e})", t.name, t.max_rel_error))
            .collect();
        Err(NnError::GradCheck(list.join(", ")))
    }
}

/// Central difference on the stencil `x + 2h, x + h, x - h, x - 2h`.
/// Truncation error is O(h^4); the three-point rule's O(h^2) term is too
/// large near `squash(0)`, where the third derivative is unbounded.
fn five_point([p2, p1, m1, m2]: [f64; 4]) -> f64 {
    // differences first, so a flat loss gives exactly zero
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP)
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Two tweets of lengths 5 and 4 over an 8-word, 5-character vocabulary.
pub fn tiny_batch(seed: u64) -> Vec<EncodedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    [5usize, 4]
        .iter()
        .enumerate()
        .map(|(i, &len)| EncodedInstance {
            id: format!("g{i}"),
            word_ids: (0..len).map(|_| rng.random_range(0..8)).collect(),
            char_ids: (0..len)
                .map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(0..5)).collect())
                .collect(),
            label: i % 3,
            lang: i % 2,
        })
        .collect()
}

fn batch_loss(spec: &ModelSpec, params: &ParamSet, batch: &[EncodedInstance], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for inst in batch {
        let mut tape = Tape::new(params);
        let fwd = forward(&mut tape, spec, inst, Mode::Train, &mut rng)?;
        let loss = instance_loss(&mut tape, spec, &fwd, inst)?;
        total += tape.scalar(loss);
    }
    Ok(total / batch.len() as f64)
}

/// Checks `spec` at tiny dimensions with freshly initialized parameters.
/// Dropout stays active with masks fixed by reseeding before every pass.
pub fn grad_check(spec: &ModelSpec, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let params = init_params(spec, 8, 5, seed)?;
    grad_check_with(spec, &params, &tiny_batch(seed), tolerance, seed)
}

pub fn grad_check_with(
    spec: &ModelSpec,
    params: &ParamSet,
    batch: &[EncodedInstance],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(NnError::EmptyData("gradient check"));
    }
    let mut work = params.clone();
    for name in params.names() {
        work.set_trainable(name, true);
    }
    let refs: Vec<&EncodedInstance> = batch.iter().collect();
    let (_, analytic) = batch_gradients(spec, &work, &refs, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed))?;

    let mut tensors = Vec::with_capacity(work.len());
    for id in 0..work.len() {
        let (rows, cols) = work.value(id).dim();
        let mut check = TensorCheck {
            name: work.name(id).to_string(),
            elements: rows * cols,
            max_rel_error: 0.0,
            max_abs_diff: 0.0,
            zero_vs_zero: true,
            passed: true,
        };
        for r in 0..rows {
            for c in 0..cols {
                let orig = work.value(id)[[r, c]];
                let mut at = [0.0; 4];
                for (slot, k) in at.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                    work.value_mut(id)[[r, c]] = orig + k * FD_STEP;
                    *slot = batch_loss(spec, &work, batch, seed)?;
                }
                work.value_mut(id)[[r, c]] = orig;
                let numeric = five_point(at);
                let a = analytic.get(id)[[r, c]];
                if a != 0.0 || numeric != 0.0 {
                    check.zero_vs_zero = false;
                }
                check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
                check.max_abs_diff = check.max_abs_diff.max((a - numeric).abs());
            }
        }
        check.passed = check.max_rel_error < tolerance;
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport {
        encoder: spec.encoder,
        tolerance,
        step: FD_STEP,
        tensors,
        max_rel_error,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_point_is_exact_on_quartics() {
        let f = |x: f64| 3.0 * x.powi(4) - x.powi(3) + 2.0 * x;
        let x = 0.7;
        let at = [2.0, 1.0, -1.0, -2.0].map(|k| f(x + k * FD_STEP));
        let exact = 12.0 * x.powi(3) - 3.0 * x * x + 2.0;
        assert!((five_point(at) - exact).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
        assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bilstm_conv_passes() {
        let report = grad_check(&ModelSpec::tiny(EncoderKind::BilstmConv), 1e-4, 1).unwrap();
        assert!(report.passed, "{:?}", report.failures());
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn bigru_capsule_passes() {
        let report = grad_check(&ModelSpec::tiny(EncoderKind::BigruCapsule), 1e-4, 2).unwrap();
        assert!(report.passed, "{:?}", report.failures());
    }

    #[test]
    fn dead_head_is_zero_vs_zero() {
        let spec = ModelSpec::tiny(EncoderKind::Bigru).with_mtl(0.0);
        let report = grad_check(&spec, 1e-4, 3).unwrap().into_result().unwrap();
        for name in ["head.lang.w", "head.lang.b"] {
            let t = report.tensors.iter().find(|t| t.name == name).unwrap();
            assert!(t.zero_vs_zero && t.passed, "{t:?}");
        }
        let sent = report.tensors.iter().find(|t| t.name == "head.sent.w").unwrap();
        assert!(!sent.zero_vs_zero);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // a tolerance no floating-point difference can meet
        let report = grad_check(&ModelSpec::tiny(EncoderKind::HanAttn), 0.0, 4).unwrap();
        assert!(!report.passed);
        match report.into_result() {
            Err(NnError::GradCheck(msg)) => assert!(msg.contains("max rel err")),
            other => panic!("{other:?}"),
        }
    }
}
