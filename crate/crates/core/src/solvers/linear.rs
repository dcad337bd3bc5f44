//! Linear minimum-norm solvers and their regularization rules.
//!
//! The family solves `X = W^-1 K^T (K W^-1 K^T + alpha I)^+ Y` with a
//! source weighting `W` that is the identity (MNE), per-column gain energy
//! (depth-weighted MNE), or a gain-scaled squared graph Laplacian (LORETA).
//! sLORETA solves the identity-weight problem on average-referenced data
//! and standardizes each source by its resolution block.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, solve_psd, PsdFactor, DEFAULT_RCOND};
use crate::model::{Diagnostics, LeadField, Measurements, SourceEstimate};
use crate::solvers::check_inputs;

/// How the Tikhonov parameter is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    Fixed(f64),
    /// `0.01 * s1^2` for the largest singular value `s1` of the gain.
    SvdHeuristic,
    /// Maximum-curvature corner of the residual-norm / solution-norm curve
    /// over a log-spaced grid around the SVD heuristic.
    LCurve,
}

impl Default for AlphaRule {
    fn default() -> Self {
        AlphaRule::SvdHeuristic
    }
}

/// Source covariance model of the minimum-norm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceWeighting {
    #[default]
    Identity,
    /// `W = diag(|k_c|^2)`, compensating depth bias.
    DepthNorm,
    /// `W` from the squared graph Laplacian scaled by gain energy,
    /// promoting spatially smooth solutions.
    GraphLaplacian,
}

impl SourceWeighting {
    pub fn solver_name(self) -> &'static str {
        match self {
            SourceWeighting::Identity => "mne",
            SourceWeighting::DepthNorm => "wmne",
            SourceWeighting::GraphLaplacian => "loreta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LinearOptions {
    #[serde(default)]
    pub weighting: SourceWeighting,
    #[serde(default)]
    pub alpha: AlphaRule,
}

/// `0.01 * s1^2` where `s1` is the largest singular value of `gain`.
pub fn alpha_svd_heuristic(gain: &Array2<f64>) -> f64 {
    let gram = gain.dot(&gain.t());
    let (values, _) = eigh(gram.view());
    0.01 * values[0].max(0.0)
}

/// Largest-curvature corner of the L-curve `(log residual, log norm)` over
/// `alphas`. Candidates must be positive; ties pick the smaller alpha.
pub fn alpha_lcurve(gain: &Array2<f64>, data: &Array2<f64>, alphas: &[f64]) -> Result<f64> {
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Config(
            "l-curve candidates must be positive".to_string(),
        ));
    }
    let mut grid: Vec<f64> = alphas.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));
    grid.dedup();

    let gram = gain.dot(&gain.t());
    let kty = gain.t().dot(data);
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(grid.len());
    for &alpha in &grid {
        let mut reg = gram.clone();
        for i in 0..reg.nrows() {
            reg[[i, i]] += alpha;
        }
        let z = solve_psd(reg.view(), data.view(), DEFAULT_RCOND);
        let x = gain.t().dot(&z);
        let residual = (data - &gain.dot(&x)).mapv(|v| v * v).sum().sqrt();
        let norm = x.mapv(|v| v * v).sum().sqrt();
        let _ = &kty;
        points.push((alpha, residual.max(1e-300).ln(), norm.max(1e-300).ln()));
    }
    points.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
    if points.len() < 3 {
        return Err(Error::Degenerate(
            "l-curve needs at least 3 distinct curve points".to_string(),
        ));
    }
    // Menger curvature of consecutive point triples.
    let mut best = (f64::NEG_INFINITY, points[1].0);
    for w in points.windows(3) {
        let (x1, y1) = (w[0].1, w[0].2);
        let (x2, y2) = (w[1].1, w[1].2);
        let (x3, y3) = (w[2].1, w[2].2);
        let area2 = ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)).abs();
        let d12 = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
        let d23 = ((x3 - x2).powi(2) + (y3 - y2).powi(2)).sqrt();
        let d13 = ((x3 - x1).powi(2) + (y3 - y1).powi(2)).sqrt();
        let denom = d12 * d23 * d13;
        let curvature = if denom > 0.0 { 2.0 * area2 / denom } else { 0.0 };
        if curvature > best.0 {
            best = (curvature, w[1].0);
        }
    }
    Ok(best.1)
}

fn resolve_alpha(rule: &AlphaRule, gain: &Array2<f64>, data: &Array2<f64>) -> Result<f64> {
    match rule {
        AlphaRule::Fixed(a) if *a >= 0.0 && a.is_finite() => Ok(*a),
        AlphaRule::Fixed(a) => Err(Error::Config(format!(
            "alpha {a} must be finite and >= 0"
        ))),
        AlphaRule::SvdHeuristic => Ok(alpha_svd_heuristic(gain)),
        AlphaRule::LCurve => {
            let center = alpha_svd_heuristic(gain).max(1e-12);
            let grid: Vec<f64> = (-4..=4).map(|e| center * 10f64.powi(e)).collect();
            alpha_lcurve(gain, data, &grid)
        }
    }
}

/// Per-source graph Laplacian expanded over dof components: `(B x)_j =
/// deg(j) x_j - sum of neighbors`.
fn laplacian_apply(
    ss: &crate::model::SourceSpace,
    dof: usize,
    x: &Array2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for j in 0..ss.n_sources() {
        let neigh = &ss.adjacency[j];
        for c in 0..dof {
            let row = j * dof + c;
            let mut acc = neigh.len() as f64 * x[[row, 0]];
            for &n in neigh {
                acc -= x[[n * dof + c, 0]];
            }
            out[[row, 0]] = acc;
        }
    }
    out
}

/// `W^-1 K^T` for the chosen weighting, as a dense `C x N` matrix.
fn weighted_kt(lf: &LeadField, weighting: SourceWeighting) -> Array2<f64> {
    let gain = &lf.gain;
    match weighting {
        SourceWeighting::Identity => gain.t().to_owned(),
        SourceWeighting::DepthNorm => {
            let mut kt = gain.t().to_owned();
            for (mut row, col) in kt.rows_mut().into_iter().zip(gain.columns()) {
                let energy = col.dot(&col);
                if energy > 0.0 {
                    row.mapv_inplace(|v| v / energy);
                }
            }
            kt
        }
        SourceWeighting::GraphLaplacian => {
            // W = D^(1/2) B^T B D^(1/2) + loading, D = diag(|k_c|^2),
            // B the per-component graph Laplacian.
            let ss = &lf.source_space;
            let dof = lf.dof();
            let c = lf.n_columns();
            let d_sqrt: Vec<f64> = gain
                .columns()
                .into_iter()
                .map(|col| col.dot(&col).sqrt())
                .collect();
            let mut w = Array2::zeros((c, c));
            let mut unit = Array2::zeros((c, 1));
            for col in 0..c {
                unit.fill(0.0);
                unit[[col, 0]] = 1.0;
                let b1 = laplacian_apply(ss, dof, &unit);
                let b2 = laplacian_apply(ss, dof, &b1);
                for row in 0..c {
                    w[[row, col]] = d_sqrt[row] * b2[[row, 0]] * d_sqrt[col];
                }
            }
            let max_diag = (0..c).map(|i| w[[i, i]]).fold(0.0f64, f64::max).max(1e-300);
            for i in 0..c {
                w[[i, i]] += 1e-10 * max_diag;
            }
            PsdFactor::new(w.view(), DEFAULT_RCOND).solve(gain.t())
        }
    }
}

/// Minimum-norm family solve; covers MNE, depth-weighted MNE, and LORETA
/// through [`LinearOptions::weighting`].
pub fn mne_solve(lf: &LeadField, y: &Measurements, opts: &LinearOptions) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    let alpha = resolve_alpha(&opts.alpha, &lf.gain, &y.data)?;
    let wkt = weighted_kt(lf, opts.weighting);
    let mut gram = lf.gain.dot(&wkt);
    for i in 0..gram.nrows() {
        gram[[i, i]] += alpha;
    }
    let z = PsdFactor::new(gram.view(), DEFAULT_RCOND).solve(y.data.view());
    let amplitudes = wkt.dot(&z);
    let residual = (&y.data - &lf.gain.dot(&amplitudes))
        .mapv(|v| v * v)
        .sum()
        .sqrt();
    Ok(SourceEstimate {
        amplitudes,
        solver: opts.weighting.solver_name().to_string(),
        iterations: 1,
        converged: true,
        residual_norm: residual,
        diagnostics: Diagnostics::default(),
    })
}

/// Pseudo-inverse of a small symmetric PSD block.
fn pinv_sym(block: &Array2<f64>, rcond: f64) -> Array2<f64> {
    let (values, vectors) = eigh(block.view());
    let cutoff = rcond * values[0].max(0.0);
    let inv = Array1::from_iter(
        values
            .iter()
            .map(|&v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 }),
    );
    let mut scaled = vectors.t().to_owned();
    for (mut row, &iv) in scaled.rows_mut().into_iter().zip(inv.iter()) {
        row.mapv_inplace(|v| v * iv);
    }
    vectors.dot(&scaled)
}

/// Standardized low-resolution estimate: identity-weight minimum-norm on
/// average-referenced data, each source rescaled by the pseudo-inverse of
/// its resolution block so a single noiseless source localizes exactly.
pub fn sloreta_solve(lf: &LeadField, y: &Measurements, alpha: &AlphaRule) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    let n = lf.n_electrodes();
    let alpha = resolve_alpha(alpha, &lf.gain, &y.data)?;
    // H = I - 1 1^T / N centers channels; the centered Gram is rank N-1, so
    // everything downstream uses pseudo-inverses.
    let centered_gain = {
        let mut g = lf.gain.clone();
        let col_means = g.mean_axis(ndarray::Axis(0)).expect("nonempty gain");
        for mut row in g.rows_mut() {
            row -= &col_means;
        }
        g
    };
    let mut m_c = centered_gain.dot(&centered_gain.t());
    let h_diag = 1.0 - 1.0 / n as f64;
    let h_off = -1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            m_c[[i, j]] += alpha * if i == j { h_diag } else { h_off };
        }
    }
    let m_pinv = PsdFactor::new(m_c.view(), DEFAULT_RCOND).solve(Array2::eye(n).view());
    // T = K^T H M^+; H is absorbed because M^+ H = M^+.
    let t_op = centered_gain.t().dot(&m_pinv);
    let raw = t_op.dot(&y.data);

    let dof = lf.dof();
    let n_sources = lf.source_space.n_sources();
    let t_k = t_op.dot(&centered_gain);
    let mut amplitudes = Array2::zeros(raw.dim());
    match dof {
        1 => {
            for j in 0..n_sources {
                let s = t_k[[j, j]];
                if s > DEFAULT_RCOND {
                    let scale = 1.0 / s.sqrt();
                    for t in 0..raw.ncols() {
                        amplitudes[[j, t]] = raw[[j, t]] * scale;
                    }
                }
            }
        }
        _ => {
            for j in 0..n_sources {
                let rows = j * dof..(j + 1) * dof;
                let block = t_k
                    .slice(ndarray::s![rows.clone(), rows.clone()])
                    .to_owned();
                let inv = pinv_sym(&block, DEFAULT_RCOND);
                for t in 0..raw.ncols() {
                    let x = raw.slice(ndarray::s![rows.clone(), t]).to_owned();
                    let power = x.dot(&inv.dot(&x)).max(0.0);
                    let norm = x.dot(&x).sqrt();
                    if norm > 0.0 {
                        let scale = power.sqrt() / norm;
                        for (c, &v) in x.iter().enumerate() {
                            amplitudes[[j * dof + c, t]] = v * scale;
                        }
                    }
                }
            }
        }
    }
    let residual = (&y.data - &lf.gain.dot(&raw)).mapv(|v| v * v).sum().sqrt();
    Ok(SourceEstimate {
        amplitudes,
        solver: "sloreta".to_string(),
        iterations: 1,
        converged: true,
        residual_norm: residual,
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NoiseSpec, Scenario};
    use crate::simulate::simulate_measurements;
    use crate::testutil::{measurements, small_sphere, toy_leadfield};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identity_gain_recovers_input_at_zero_alpha() {
        let lf = toy_leadfield(Array2::eye(3));
        let y = measurements(array![[1.0], [0.0], [0.0]]);
        let opts = LinearOptions {
            alpha: AlphaRule::Fixed(0.0),
            ..Default::default()
        };
        let est = mne_solve(&lf, &y, &opts).unwrap();
        assert_abs_diff_eq!(est.amplitudes, array![[1.0], [0.0], [0.0]], epsilon = 1e-10);
        assert!(est.residual_norm < 1e-10);
    }

    #[test]
    fn orthonormal_rows_give_adjoint_solution() {
        // K with orthonormal rows: minimum-norm solution is K^T y.
        let gain = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let lf = toy_leadfield(gain.clone());
        let y = measurements(array![[2.0], [-3.0]]);
        let opts = LinearOptions {
            alpha: AlphaRule::Fixed(0.0),
            ..Default::default()
        };
        let est = mne_solve(&lf, &y, &opts).unwrap();
        assert_abs_diff_eq!(est.amplitudes, gain.t().dot(&y.data), epsilon = 1e-10);
    }

    #[test]
    fn small_system_matches_explicit_inverse() {
        // Oracle: X = K^T (K K^T + a I)^-1 Y with the 2x2 inverse by hand.
        let gain = array![[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]];
        let lf = toy_leadfield(gain.clone());
        let y = measurements(array![[1.0], [2.0]]);
        let alpha = 0.3;
        let g = gain.dot(&gain.t());
        let a11 = g[[0, 0]] + alpha;
        let a12 = g[[0, 1]];
        let a22 = g[[1, 1]] + alpha;
        let det = a11 * a22 - a12 * a12;
        let z = array![
            [(a22 * y.data[[0, 0]] - a12 * y.data[[1, 0]]) / det],
            [(-a12 * y.data[[0, 0]] + a11 * y.data[[1, 0]]) / det]
        ];
        let expected = gain.t().dot(&z);
        let est = mne_solve(
            &lf,
            &y,
            &LinearOptions {
                alpha: AlphaRule::Fixed(alpha),
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(est.amplitudes, expected, epsilon = 1e-10);
    }

    #[test]
    fn residual_grows_with_alpha() {
        let gain = array![[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]];
        let lf = toy_leadfield(gain);
        let y = measurements(array![[1.0], [2.0]]);
        let mut prev = -1.0;
        for alpha in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let est = mne_solve(
                &lf,
                &y,
                &LinearOptions {
                    alpha: AlphaRule::Fixed(alpha),
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                est.residual_norm >= prev - 1e-12,
                "residual not monotone at alpha {alpha}"
            );
            prev = est.residual_norm;
        }
    }

    #[test]
    fn normal_equations_hold_for_every_weighting() {
        let gain = array![
            [1.0, 2.0, 0.5, -1.0],
            [0.0, 1.0, -1.0, 0.3],
            [0.5, -0.5, 2.0, 1.0]
        ];
        let lf = toy_leadfield(gain.clone());
        let y = measurements(array![[1.0], [2.0], [-1.0]]);
        let alpha = 0.2;
        for weighting in [
            SourceWeighting::Identity,
            SourceWeighting::DepthNorm,
            SourceWeighting::GraphLaplacian,
        ] {
            let est = mne_solve(
                &lf,
                &y,
                &LinearOptions {
                    weighting,
                    alpha: AlphaRule::Fixed(alpha),
                },
            )
            .unwrap();
            // (K W^-1 K^T + a I) z = Y reconstructs Y from the returned X:
            // K X + a z = Y where X = W^-1 K^T z.
            let wkt = super::weighted_kt(&lf, weighting);
            let mut gram = gain.dot(&wkt);
            for i in 0..gram.nrows() {
                gram[[i, i]] += alpha;
            }
            let z = solve_psd(gram.view(), y.data.view(), DEFAULT_RCOND);
            let rebuilt = wkt.dot(&z);
            let rel = (&rebuilt - &est.amplitudes).mapv(|v| v * v).sum().sqrt()
                / est.amplitudes.mapv(|v| v * v).sum().sqrt().max(1e-300);
            assert!(rel <= 1e-8, "{weighting:?}: relative error {rel}");
        }
    }

    #[test]
    fn svd_heuristic_is_a_hundredth_of_top_singular_value_squared() {
        let gain = array![[2.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(alpha_svd_heuristic(&gain), 0.04, epsilon = 1e-12);
        // Scaling the gain by c scales alpha by c^2.
        let scaled = gain.mapv(|v| 3.0 * v);
        assert_abs_diff_eq!(alpha_svd_heuristic(&scaled), 0.36, epsilon = 1e-12);
    }

    #[test]
    fn svd_heuristic_matches_power_iteration() {
        let lf = toy_leadfield(array![
            [1.0, 2.0, 0.5, -1.0],
            [0.0, 1.0, -1.0, 0.3],
            [0.5, -0.5, 2.0, 1.0]
        ]);
        // Power iteration on K K^T as an independent oracle.
        let g = lf.gain.dot(&lf.gain.t());
        let mut v = Array1::from_elem(g.nrows(), 1.0);
        for _ in 0..500 {
            let w = g.dot(&v);
            let n = w.dot(&w).sqrt();
            v = w / n;
        }
        let lambda = v.dot(&g.dot(&v));
        assert_abs_diff_eq!(
            alpha_svd_heuristic(&lf.gain),
            0.01 * lambda,
            epsilon = 1e-9
        );
    }

    #[test]
    fn lcurve_picks_the_max_curvature_corner() {
        let gain = array![
            [1.0, 0.5, 0.2, 0.1],
            [0.5, 1.0, 0.5, 0.2],
            [0.2, 0.5, 1.0, 0.5]
        ];
        let lf = toy_leadfield(gain.clone());
        let y = measurements(array![[1.0], [-0.5], [0.25]]);
        let alphas = [1e-4, 1e-2, 1.0, 1e2];
        let picked = alpha_lcurve(&lf.gain, &y.data, &alphas).unwrap();
        // Oracle: recompute all four curve points and the Menger curvature
        // of each interior triple directly.
        let mut pts = Vec::new();
        for &a in &alphas {
            let mut g = gain.dot(&gain.t());
            for i in 0..g.nrows() {
                g[[i, i]] += a;
            }
            let z = solve_psd(g.view(), y.data.view(), DEFAULT_RCOND);
            let x = gain.t().dot(&z);
            let r = (&y.data - &gain.dot(&x)).mapv(|v| v * v).sum().sqrt();
            let n = x.mapv(|v| v * v).sum().sqrt();
            pts.push((a, r.ln(), n.ln()));
        }
        let mut best = (f64::NEG_INFINITY, 0.0);
        for w in pts.windows(3) {
            let area2 =
                ((w[1].1 - w[0].1) * (w[2].2 - w[0].2) - (w[2].1 - w[0].1) * (w[1].2 - w[0].2))
                    .abs();
            let d = |a: &(f64, f64, f64), b: &(f64, f64, f64)| {
                ((a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()
            };
            let k = 2.0 * area2 / (d(&w[0], &w[1]) * d(&w[1], &w[2]) * d(&w[0], &w[2]));
            if k > best.0 {
                best = (k, w[1].0);
            }
        }
        assert_eq!(picked, best.1);
    }

    #[test]
    fn lcurve_rejects_degenerate_grids() {
        let gain = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![[1.0], [1.0]];
        assert!(alpha_lcurve(&gain, &y, &[0.1, 0.1, 0.1]).is_err());
        assert!(alpha_lcurve(&gain, &y, &[0.0, 0.1, 1.0]).is_err());
        assert!(alpha_lcurve(&gain, &y, &[0.1, 1.0]).is_err());
    }

    #[test]
    fn sloreta_localizes_single_source_exactly() {
        let lf = small_sphere(1, 20.0, 32);
        for &true_idx in &[3, 40, lf.source_space.n_sources() - 5] {
            let scenario = Scenario {
                active_indices: vec![true_idx],
                active_orientations: None,
                waveforms: array![[1.0, 0.8]],
                fs: 100.0,
                noise: NoiseSpec::none(),
                seed: 0,
            };
            let y = simulate_measurements(&lf, &scenario).unwrap();
            let est = sloreta_solve(&lf, &y, &AlphaRule::SvdHeuristic).unwrap();
            let power: Vec<f64> = (0..lf.source_space.n_sources())
                .map(|j| est.amplitudes.row(j).dot(&est.amplitudes.row(j)))
                .collect();
            let best = power
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(best, true_idx);
        }
    }

    #[test]
    fn sloreta_zero_data_zero_estimate() {
        let lf = toy_leadfield(array![[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]]);
        let y = measurements(Array2::zeros((2, 3)));
        let est = sloreta_solve(&lf, &y, &AlphaRule::Fixed(0.1)).unwrap();
        assert!(est.amplitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sloreta_scales_linearly_with_data() {
        let lf = toy_leadfield(array![
            [1.0, 2.0, 0.5, -1.0],
            [0.0, 1.0, -1.0, 0.3],
            [0.5, -0.5, 2.0, 1.0]
        ]);
        let y1 = measurements(array![[1.0], [2.0], [-1.0]]);
        let y2 = measurements(array![[3.0], [6.0], [-3.0]]);
        let a = sloreta_solve(&lf, &y1, &AlphaRule::Fixed(0.1)).unwrap();
        let b = sloreta_solve(&lf, &y2, &AlphaRule::Fixed(0.1)).unwrap();
        assert_abs_diff_eq!(b.amplitudes, a.amplitudes.mapv(|v| 3.0 * v), epsilon = 1e-9);
    }
}
