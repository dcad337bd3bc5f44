//! Iteratively reweighted least-squares solver with multiplicative
//! column weights.
//!
//! Each iteration solves the minimum-norm problem in a space rescaled by
//! the previous estimate, `x_i = C_i (K C_i)^+ y` with `C_i =
//! diag(x_{i-1})`, which drives small entries toward exact zero. The
//! solve works one time sample at a time; samples are independent and run
//! in parallel.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{PsdFactor, DEFAULT_RCOND};
use crate::model::{Diagnostics, LeadField, Measurements, SourceEstimate};
use crate::parallel::{map_indexed, Parallelism};
use crate::solvers::check_inputs;
use crate::solvers::linear::{mne_solve, LinearOptions};

/// Rank cutoff for the weighted Gram `K C^2 K^T`, whose eigenvalues are
/// squared singular values of `K C`; squaring the shared 1e-12 singular
/// value cutoff keeps one numerical policy across solvers.
const GRAM_RCOND: f64 = DEFAULT_RCOND * DEFAULT_RCOND;

/// Starting point of the reweighting recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FocussInit {
    /// All-ones weights; the first iterate is the plain minimum-norm fit.
    #[default]
    Uniform,
    /// Warm start from a minimum-norm solve with default regularization.
    Mne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocussOptions {
    pub max_iter: usize,
    /// Relative change of the iterate below which a sample has converged.
    pub tol: f64,
    #[serde(default)]
    pub init: FocussInit,
    /// Entries below `prune * max|x|` are frozen at zero. The default sits
    /// below the Gram rank cutoff, so pruning never changes results; it
    /// only skips columns the recursion has already annihilated.
    #[serde(default = "default_prune")]
    pub prune: f64,
    /// Execution mode for the per-sample loop; not part of the persisted
    /// configuration because it never changes results.
    #[serde(skip, default)]
    pub parallelism: Parallelism,
}

fn default_prune() -> f64 {
    1e-12
}

impl Default for FocussOptions {
    fn default() -> Self {
        FocussOptions {
            max_iter: 50,
            tol: 1e-6,
            init: FocussInit::Uniform,
            prune: default_prune(),
            parallelism: Parallelism::default(),
        }
    }
}

impl FocussOptions {
    fn check(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("focuss max_iter must be >= 1".to_string()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("focuss tol must be > 0".to_string()));
        }
        if !(0.0..1.0).contains(&self.prune) {
            return Err(Error::Config(
                "focuss prune must lie in [0, 1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// One-sample solve: `x_i = C_i (K C_i)^+ y` until the relative change
/// drops below `tol`. Entries that reach exact zero stay zero because the
/// weight matrix annihilates them.
pub fn focuss_solve_sample(
    gain: &Array2<f64>,
    y: ArrayView1<f64>,
    x0: Array1<f64>,
    opts: &FocussOptions,
) -> Result<(Array1<f64>, usize, bool)> {
    opts.check()?;
    if gain.nrows() != y.len() {
        return Err(Error::Data(format!(
            "gain has {} rows but sample has {} entries",
            gain.nrows(),
            y.len()
        )));
    }
    let n = gain.nrows();
    let mut x = x0;
    let mut active: Vec<usize> = (0..x.len()).filter(|&j| x[j] != 0.0).collect();
    for iter in 1..=opts.max_iter {
        let mut scaled = Array2::zeros((n, active.len()));
        for (mut col, &j) in scaled.columns_mut().into_iter().zip(&active) {
            let c = x[j];
            col.assign(&gain.column(j));
            col.mapv_inplace(|v| v * c);
        }
        let gram = scaled.dot(&scaled.t());
        let rhs = y.insert_axis(ndarray::Axis(1));
        let z = PsdFactor::new(gram.view(), GRAM_RCOND).solve(rhs);
        let projected = scaled.t().dot(&z.column(0));
        let mut next = Array1::zeros(x.len());
        for (&j, &p) in active.iter().zip(projected.iter()) {
            next[j] = x[j] * p;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::solver(
                "focuss",
                format!("diverged at iteration {iter}"),
            ));
        }
        let peak = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for &j in &active {
            if next[j].abs() < opts.prune * peak {
                next[j] = 0.0;
            }
        }
        let prev_norm = x.dot(&x).sqrt();
        let delta = (&next - &x).mapv(|v| v * v).sum().sqrt();
        x = next;
        active.retain(|&j| x[j] != 0.0);
        if prev_norm == 0.0 || delta <= opts.tol * prev_norm {
            return Ok((x, iter, true));
        }
    }
    Ok((x, opts.max_iter, false))
}

/// Runs the per-sample recursion over every measurement column.
pub fn focuss_solve(lf: &LeadField, y: &Measurements, opts: &FocussOptions) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    opts.check()?;
    let c = lf.n_columns();
    let t = y.n_samples();
    let init: Array2<f64> = match opts.init {
        FocussInit::Uniform => Array2::ones((c, t)),
        FocussInit::Mne => mne_solve(lf, y, &LinearOptions::default())?.amplitudes,
    };
    let solved = map_indexed(opts.parallelism, t, |ti| {
        focuss_solve_sample(
            &lf.gain,
            y.data.column(ti),
            init.column(ti).to_owned(),
            opts,
        )
    });
    let mut amplitudes = Array2::zeros((c, t));
    let mut iterations = 0usize;
    let mut converged = true;
    for (ti, result) in solved.into_iter().enumerate() {
        let (x, iters, ok) = result?;
        iterations = iterations.max(iters);
        converged &= ok;
        for (j, &v) in x.iter().enumerate() {
            amplitudes[[j, ti]] = v;
        }
    }
    let residual = (&y.data - &lf.gain.dot(&amplitudes))
        .mapv(|v| v * v)
        .sum()
        .sqrt();
    Ok(SourceEstimate {
        amplitudes,
        solver: "focuss".to_string(),
        iterations,
        converged,
        residual_norm: residual,
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn opts() -> FocussOptions {
        FocussOptions::default()
    }

    #[test]
    fn square_invertible_gain_converges_in_one_iteration() {
        let gain = array![[2.0, 0.0], [1.0, 1.0]];
        let y = array![4.0, 5.0];
        let (x, iters, converged) =
            focuss_solve_sample(&gain, y.view(), Array1::ones(2), &opts()).unwrap();
        assert_abs_diff_eq!(x, array![2.0, 3.0], epsilon = 1e-10);
        assert!(converged);
        assert!(iters <= 2, "took {iters} iterations");
    }

    #[test]
    fn symmetric_underdetermined_system_stays_at_fixed_point() {
        let gain = array![[1.0, 1.0]];
        let y = array![1.0];
        let (x, _, converged) =
            focuss_solve_sample(&gain, y.view(), Array1::ones(2), &opts()).unwrap();
        assert!(converged);
        assert_abs_diff_eq!(x, array![0.5, 0.5], epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_system_concentrates_on_the_stronger_column() {
        let gain = array![[2.0, 1.0]];
        let y = array![2.0];
        // Hand-iterated recurrence: x1 = [0.8, 0.4], x2 = [0.9412, 0.1176].
        let (x1, _, _) = focuss_solve_sample(
            &gain,
            y.view(),
            Array1::ones(2),
            &FocussOptions {
                max_iter: 1,
                ..opts()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(x1, array![0.8, 0.4], epsilon = 1e-12);
        let (x2, _, _) = focuss_solve_sample(
            &gain,
            y.view(),
            Array1::ones(2),
            &FocussOptions {
                max_iter: 2,
                ..opts()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(
            x2,
            array![0.94117647058823529, 0.11764705882352941],
            epsilon = 1e-10
        );
        let (x, _, converged) = focuss_solve_sample(&gain, y.view(), Array1::ones(2), &opts()).unwrap();
        assert!(converged);
        assert_abs_diff_eq!(x, array![1.0, 0.0], epsilon = 1e-6);
    }

    #[test]
    fn exact_zeros_never_reactivate() {
        let gain = array![[2.0, 1.0, 0.5], [0.0, 1.0, 1.0]];
        let y = array![2.0, 1.0];
        let x0 = array![1.0, 0.0, 1.0];
        let (x, _, _) = focuss_solve_sample(&gain, y.view(), x0, &opts()).unwrap();
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn zero_sample_returns_zero_immediately() {
        let gain = array![[2.0, 1.0]];
        let y = array![0.0];
        let (x, iters, converged) =
            focuss_solve_sample(&gain, y.view(), Array1::ones(2), &opts()).unwrap();
        assert!(converged);
        assert_eq!(iters, 2);
        assert_abs_diff_eq!(x, array![0.0, 0.0], epsilon = 1e-300);
    }

    #[test]
    fn rejects_bad_options() {
        let gain = array![[1.0, 1.0]];
        let y = array![1.0];
        let bad = FocussOptions {
            max_iter: 0,
            ..opts()
        };
        assert!(focuss_solve_sample(&gain, y.view(), Array1::ones(2), &bad).is_err());
        let bad = FocussOptions { tol: 0.0, ..opts() };
        assert!(focuss_solve_sample(&gain, y.view(), Array1::ones(2), &bad).is_err());
    }

    #[test]
    fn multi_sample_solve_matches_per_sample_runs() {
        let gain = array![[2.0, 1.0, 0.3], [0.1, 1.2, 0.9]];
        let lf = crate::testutil::toy_leadfield(gain.clone());
        let y = crate::testutil::measurements(array![[1.0, -2.0, 0.5], [0.5, 1.0, -0.1]]);
        for mode in [Parallelism::Sequential, Parallelism::default()] {
            let est = focuss_solve(
                &lf,
                &y,
                &FocussOptions {
                    parallelism: mode,
                    ..opts()
                },
            )
            .unwrap();
            for ti in 0..3 {
                let (x, _, _) =
                    focuss_solve_sample(&gain, y.data.column(ti), Array1::ones(3), &opts())
                        .unwrap();
                assert_abs_diff_eq!(est.amplitudes.column(ti).to_owned(), x, epsilon = 0.0);
            }
        }
    }
}
