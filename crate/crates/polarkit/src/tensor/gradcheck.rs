//! Central-difference verification of the reverse sweep.
//!
//! The checker perturbs leaf coordinates one at a time, re-runs the forward
//! closure, and compares the finite-difference quotient against the analytic
//! gradient. All probing runs in f64; a coordinate passes when the absolute
//! error is below [`ABS_TOL`] or the relative error is below [`REL_TOL`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autograd::GradStore;
use super::Tensor;
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Absolute-error gate, used where the gradient is near zero.
pub const ABS_TOL: f64 = 1e-6;
/// Relative-error gate away from zero.
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks `d f / d leaf` for every listed leaf against central differences.
///
/// `f` must rebuild the graph from the captured leaves on every call, because
/// the probe mutates leaf storage in place between calls. `samples_per_leaf`
/// bounds how many coordinates of each leaf are probed (0 means all), with the
/// subset drawn deterministically from `seed`.
pub fn check_gradients<F>(
    name: &str,
    leaves: &[&Tensor<f64>],
    f: F,
    samples_per_leaf: usize,
    seed: u64,
) -> GradCheckReport
where
    F: Fn() -> Tensor<f64>,
{
    let loss = f();
    assert_eq!(loss.shape(), [1, 1, 1, 1], "gradcheck target must be scalar");
    let store = loss.backward().expect("scalar loss");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        coords_checked: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failures: 0,
    };

    for leaf in leaves {
        let analytic: Vec<f64> = match store.get(leaf) {
            Some(g) => g.to_vec(),
            None => vec![0.0; leaf.numel()],
        };
        let n = leaf.numel();
        let coords: Vec<usize> = if samples_per_leaf == 0 || samples_per_leaf >= n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, samples_per_leaf).into_vec()
        };
        for j in coords {
            let orig = leaf.data()[j];
            leaf.update_data(|d| d[j] = orig + FD_STEP);
            let plus = f().item();
            leaf.update_data(|d| d[j] = orig - FD_STEP);
            let minus = f().item();
            leaf.update_data(|d| d[j] = orig);
            let fd = (plus - minus) / (2.0 * FD_STEP);

            let abs_err = (analytic[j] - fd).abs();
            let denom = analytic[j].abs().max(fd.abs());
            let rel_err = if denom > ABS_TOL { abs_err / denom } else { 0.0 };
            report.coords_checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs_err);
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if abs_err >= ABS_TOL && rel_err >= REL_TOL {
                report.failures += 1;
            }
        }
    }
    report
}

/// Largest absolute element-wise difference between the gradients two stores
/// hold for the listed leaves; a missing entry counts as all zeros.
pub fn compare_gradients<T: Scalar>(
    a: &GradStore<T>,
    b: &GradStore<T>,
    leaves: &[&Tensor<T>],
) -> f64 {
    let mut worst = 0.0f64;
    for leaf in leaves {
        let zeros = vec![T::zero(); leaf.numel()];
        let ga = a.get(leaf).unwrap_or(&zeros);
        let gb = b.get(leaf).unwrap_or(&zeros);
        for (&x, &y) in ga.iter().zip(gb.iter()) {
            worst = worst.max((x.to_f64() - y.to_f64()).abs());
        }
    }
    worst
}
