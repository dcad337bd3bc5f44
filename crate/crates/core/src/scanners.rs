//! Subspace scanning and variation-operator solvers.
//!
//! Three families live here: signal-subspace estimation plus a truncated
//! recursive MUSIC scan, a first-difference variation operator over the
//! source grid with an operator-splitting solver for total-variation (+
//! optional l1) costs, and a watershed-style automatic threshold that
//! turns amplitude maps into active index sets.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, svd_thin, PsdFactor, DEFAULT_RCOND};
use crate::model::{Diagnostics, LeadField, Measurements, SourceEstimate, SourceSpace, Validate};
use crate::parallel::{map_indexed, Parallelism};
use crate::solvers::{check_inputs, Regularization};

/// Candidates whose projected topography shrinks below this fraction of
/// its original norm are treated as projected out (localizer zero).
const PROJECTION_GUARD: f64 = 1e-12;

/// Fraction of the top eigenvalue above which an eigenvalue counts as
/// signal when sizing the subspace.
const SIGNAL_EIGENVALUE_RATIO: f64 = 0.01;

/// Watershed regions whose peak falls below this fraction of the global
/// maximum are discarded.
const KEEP_FRACTION: f64 = 0.1;

/// Singular values of the projected subspace below this absolute level
/// count as annihilated directions; basis columns are unit vectors, so
/// the scale is fixed.
const ANNIHILATION_TOL: f64 = 1e-9;

/// Signal subspace of a measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    /// Orthonormal basis of the retained subspace, at most `n_tilde`
    /// columns. Directions with no energy in the window (eigenvalues at
    /// the numerical-rank cutoff) are never included, so rank-deficient
    /// windows yield fewer columns than the scan budget.
    pub basis: Array2<f64>,
    /// All eigenvalues of `Y Y^T`, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalue-count estimate of the true source number.
    pub n_est: usize,
    /// Scan budget; `n_est + 2` unless a hint overrides it.
    pub n_tilde: usize,
    /// Set when the window had fewer samples than channels, which makes
    /// the covariance estimate rank-deficient.
    pub short_window: bool,
}

impl Validate for SubspaceModel {
    const OBJECT: &'static str = "subspace model";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let gram = self.basis.t().dot(&self.basis);
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - expect).abs() > 1e-9 {
                    out.push("basis is not orthonormal".to_string());
                    break;
                }
            }
            if !out.is_empty() {
                break;
            }
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            out.push("eigenvalues are not descending".to_string());
        }
        if self.basis.ncols() > self.n_tilde {
            out.push("basis is wider than the scan budget".to_string());
        }
        out
    }
}

/// Eigendecomposition of `Y Y^T` with the drop-detection sizing rule.
pub fn estimate_signal_subspace(
    y: &Measurements,
    n_tilde_hint: Option<usize>,
) -> Result<SubspaceModel> {
    y.validate()?;
    let n = y.n_channels();
    let cov = y.data.dot(&y.data.t());
    let (values, vectors) = eigh(cov.view());
    if !(values[0] > 0.0) {
        return Err(Error::Data("empty signal: measurements have rank 0".to_string()));
    }
    let n_est = values
        .iter()
        .filter(|&&v| v >= SIGNAL_EIGENVALUE_RATIO * values[0])
        .count();
    let n_tilde = n_tilde_hint.unwrap_or(n_est + 2).clamp(1, n);
    let rank = values
        .iter()
        .filter(|&&v| v > DEFAULT_RCOND * values[0])
        .count();
    Ok(SubspaceModel {
        basis: vectors.slice(s![.., ..n_tilde.min(rank)]).to_owned(),
        eigenvalues: values.to_vec(),
        n_est,
        n_tilde,
        short_window: y.n_samples() < n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapMusicOptions {
    /// Overrides the scan budget derived from the eigenvalue drop.
    #[serde(default)]
    pub n_tilde_hint: Option<usize>,
    /// Scanning stops when the max localizer falls below this fraction of
    /// the first iteration's maximum.
    pub drop_factor: f64,
    #[serde(skip, default)]
    pub parallelism: Parallelism,
}

impl Default for TrapMusicOptions {
    fn default() -> Self {
        TrapMusicOptions {
            n_tilde_hint: None,
            drop_factor: 0.5,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrapMusicOptions {
    fn check(&self) -> Result<()> {
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return Err(Error::Config(
                "trap-music drop_factor must lie in (0, 1]".to_string(),
            ));
        }
        if self.n_tilde_hint == Some(0) {
            return Err(Error::Config(
                "trap-music n_tilde_hint must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// `I - U_r U_r^T` over the numerically nonzero left singular directions
/// of `b`.
fn out_projector(b: &Array2<f64>) -> Array2<f64> {
    let n = b.nrows();
    let mut q = Array2::eye(n);
    if b.ncols() == 0 {
        return q;
    }
    let (u, sv, _) = svd_thin(b.view());
    let cutoff = DEFAULT_RCOND * sv[0];
    for (i, &s_i) in sv.iter().enumerate() {
        if s_i > cutoff && s_i > 0.0 {
            let col = u.column(i);
            for r in 0..n {
                for c in 0..n {
                    q[[r, c]] -= col[r] * col[c];
                }
            }
        }
    }
    q
}

/// Projector onto the leading `keep` left singular directions of `a`,
/// skipping directions the out-projection annihilated.
fn leading_projector(a: &Array2<f64>, keep: usize) -> Array2<f64> {
    let (u, sv, _) = svd_thin(a.view());
    let n = a.nrows();
    let mut proj = Array2::zeros((n, n));
    if sv.is_empty() {
        return proj;
    }
    for i in 0..keep.min(sv.len()) {
        if sv[i] > ANNIHILATION_TOL {
            let col = u.column(i);
            for r in 0..n {
                for c in 0..n {
                    proj[[r, c]] += col[r] * col[c];
                }
            }
        }
    }
    proj
}

/// Subspace correlation of one source block: largest value of
/// `||R q|| / ||q||` over unit combinations `q` of the projected block
/// columns, zero when the block is already projected out.
fn localizer(
    qk: ArrayView2<f64>,
    rqk: ArrayView2<f64>,
    original_norm: f64,
) -> f64 {
    let dof = qk.ncols();
    if dof == 1 {
        let q = qk.column(0);
        let qn = q.dot(&q).sqrt();
        if qn <= PROJECTION_GUARD * original_norm {
            return 0.0;
        }
        let r = rqk.column(0);
        (r.dot(&r).sqrt() / qn).min(1.0)
    } else {
        let g = qk.t().dot(&qk);
        let (g_vals, g_vecs) = eigh(g.view());
        if !(g_vals[0] > (PROJECTION_GUARD * original_norm).powi(2)) {
            return 0.0;
        }
        let h = rqk.t().dot(&rqk);
        // Whiten the block metric: W = G^{-1/2} H G^{-1/2} on the kept
        // eigendirections, then take the top eigenvalue.
        let cutoff = g_vals[0] * DEFAULT_RCOND * DEFAULT_RCOND;
        let mut basis = Vec::new();
        for (i, &v) in g_vals.iter().enumerate() {
            if v > cutoff {
                basis.push(g_vecs.column(i).mapv(|x| x / v.sqrt()));
            }
        }
        let k = basis.len();
        let mut w = Array2::zeros((k, k));
        for (a, va) in basis.iter().enumerate() {
            let hva = h.dot(va);
            for (b, vb) in basis.iter().enumerate() {
                w[[a, b]] = vb.dot(&hva);
            }
        }
        let (w_vals, _) = eigh(w.view());
        w_vals[0].max(0.0).sqrt().min(1.0)
    }
}

fn scan(
    lf: &LeadField,
    subspace: &SubspaceModel,
    opts: &TrapMusicOptions,
    truncate: bool,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let dof = lf.dof();
    let m = lf.source_space.n_sources();
    let n = lf.n_electrodes();
    let column_norms: Vec<f64> = (0..m)
        .map(|j| {
            lf.gain
                .slice(s![.., j * dof..(j + 1) * dof])
                .mapv(|v| v * v)
                .sum()
                .sqrt()
        })
        .collect();

    let mut found: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut first_max = 0.0;
    for i in 1..=subspace.n_tilde {
        let q = if found.is_empty() {
            Array2::eye(n)
        } else {
            let mut b = Array2::zeros((n, found.len() * dof));
            for (fi, &j) in found.iter().enumerate() {
                b.slice_mut(s![.., fi * dof..(fi + 1) * dof])
                    .assign(&lf.gain.slice(s![.., j * dof..(j + 1) * dof]));
            }
            out_projector(&b)
        };
        let qu = q.dot(&subspace.basis);
        let keep = if truncate {
            subspace.n_tilde - i + 1
        } else {
            subspace.n_tilde
        };
        let r_proj = leading_projector(&qu, keep);
        let qk = q.dot(&lf.gain);
        let rqk = r_proj.dot(&qk);
        let values = map_indexed(opts.parallelism, m, |j| {
            localizer(
                qk.slice(s![.., j * dof..(j + 1) * dof]),
                rqk.slice(s![.., j * dof..(j + 1) * dof]),
                column_norms[j],
            )
        });
        let mut best: Option<(f64, usize)> = None;
        for (j, &v) in values.iter().enumerate() {
            if found.contains(&j) {
                continue;
            }
            if best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        let (max_value, max_index) = best.expect("scan budget never exceeds source count");
        if values.iter().all(|&v| v == 0.0) {
            if i == 1 {
                return Err(Error::solver(
                    "trap-music",
                    "degenerate projection: every candidate topography is annihilated".to_string(),
                ));
            }
            trace.push(0.0);
            break;
        }
        trace.push(max_value);
        if i == 1 {
            first_max = max_value;
        } else if max_value < opts.drop_factor * first_max {
            break;
        }
        found.push(max_index);
    }
    Ok((found, trace))
}

/// Truncated recursive subspace scan: per iteration projects out all
/// previously found topographies, shrinks the signal projector by one
/// dimension, and picks the source with the highest subspace correlation.
/// Stops at the scan budget or when the maximum localizer drops below
/// `drop_factor` times the first iteration's maximum.
pub fn trap_music(
    lf: &LeadField,
    subspace: &SubspaceModel,
    opts: &TrapMusicOptions,
) -> Result<(Vec<usize>, Vec<f64>)> {
    lf.validate()?;
    subspace.validate()?;
    opts.check()?;
    if subspace.basis.nrows() != lf.n_electrodes() {
        return Err(Error::Data(format!(
            "subspace has {} channels but lead field has {}",
            subspace.basis.nrows(),
            lf.n_electrodes()
        )));
    }
    scan(lf, subspace, opts, true)
}

/// End-to-end scanner: estimates the signal subspace from `y`, runs the
/// scan, and fits amplitudes of the found sources by least squares.
pub fn trap_music_solve(
    lf: &LeadField,
    y: &Measurements,
    opts: &TrapMusicOptions,
) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    let subspace = estimate_signal_subspace(y, opts.n_tilde_hint)?;
    let (found, trace) = trap_music(lf, &subspace, opts)?;
    let dof = lf.dof();
    let mut amplitudes = Array2::zeros((lf.n_columns(), y.n_samples()));
    if !found.is_empty() {
        let mut b = Array2::zeros((lf.n_electrodes(), found.len() * dof));
        for (fi, &j) in found.iter().enumerate() {
            b.slice_mut(s![.., fi * dof..(fi + 1) * dof])
                .assign(&lf.gain.slice(s![.., j * dof..(j + 1) * dof]));
        }
        let gram = b.t().dot(&b);
        let rhs = b.t().dot(&y.data);
        let x = PsdFactor::new(gram.view(), DEFAULT_RCOND).solve(rhs.view());
        for (fi, &j) in found.iter().enumerate() {
            amplitudes
                .slice_mut(s![j * dof..(j + 1) * dof, ..])
                .assign(&x.slice(s![fi * dof..(fi + 1) * dof, ..]));
        }
    }
    let residual = (&y.data - &lf.gain.dot(&amplitudes))
        .mapv(|v| v * v)
        .sum()
        .sqrt();
    Ok(SourceEstimate {
        amplitudes,
        solver: "trap-music".to_string(),
        iterations: trace.len(),
        converged: true,
        residual_norm: residual,
        diagnostics: Diagnostics {
            localizer_trace: Some(trace),
            found_sources: Some(found),
            ..Diagnostics::default()
        },
    })
}

/// First-difference operator over level-1 grid edges: row `e` carries +1
/// on the lower-indexed endpoint and -1 on the higher one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariationOperator {
    /// `(low, high)` endpoints per edge, lexicographically sorted.
    pub edges: Vec<(usize, usize)>,
    pub n_sources: usize,
}

impl Validate for VariationOperator {
    const OBJECT: &'static str = "variation operator";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.edges.iter().any(|&(a, b)| a >= b || b >= self.n_sources) {
            out.push("edges must satisfy low < high < n_sources".to_string());
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            out.push("edges must be strictly ascending".to_string());
        }
        out
    }
}

impl VariationOperator {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// `V x` expanded per dof component: `P*dof x T`.
    pub fn apply(&self, x: &Array2<f64>, dof: usize) -> Array2<f64> {
        let t = x.ncols();
        let mut out = Array2::zeros((self.edges.len() * dof, t));
        for (e, &(lo, hi)) in self.edges.iter().enumerate() {
            for c in 0..dof {
                for ti in 0..t {
                    out[[e * dof + c, ti]] = x[[lo * dof + c, ti]] - x[[hi * dof + c, ti]];
                }
            }
        }
        out
    }

    /// `V^T z`: scatters edge differences back onto sources.
    pub fn apply_transpose(&self, z: &Array2<f64>, dof: usize) -> Array2<f64> {
        let t = z.ncols();
        let mut out = Array2::zeros((self.n_sources * dof, t));
        for (e, &(lo, hi)) in self.edges.iter().enumerate() {
            for c in 0..dof {
                for ti in 0..t {
                    let v = z[[e * dof + c, ti]];
                    out[[lo * dof + c, ti]] += v;
                    out[[hi * dof + c, ti]] -= v;
                }
            }
        }
        out
    }

    /// Dense `V^T V` over all dof components.
    fn gram(&self, dof: usize) -> Array2<f64> {
        let c = self.n_sources * dof;
        let mut g = Array2::zeros((c, c));
        for &(lo, hi) in &self.edges {
            for comp in 0..dof {
                let a = lo * dof + comp;
                let b = hi * dof + comp;
                g[[a, a]] += 1.0;
                g[[b, b]] += 1.0;
                g[[a, b]] -= 1.0;
                g[[b, a]] -= 1.0;
            }
        }
        g
    }
}

/// Builds the edge list from level-1 grid adjacency.
pub fn variation_operator(ss: &SourceSpace) -> VariationOperator {
    let mut edges = Vec::new();
    for (i, neigh) in ss.adjacency.iter().enumerate() {
        for &j in neigh {
            if i < j {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    VariationOperator {
        edges,
        n_sources: ss.n_sources(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SissyOptions {
    /// Weight of the variation penalty.
    pub lambda: Regularization,
    /// Weight of the extra elementwise l1 penalty relative to `lambda`;
    /// zero gives the pure total-variation solver.
    pub l1_ratio: f64,
    /// Splitting penalty weight of the augmented Lagrangian.
    pub rho: f64,
    pub max_iter: usize,
    /// Relative primal and dual residual tolerance.
    pub tol: f64,
}

impl Default for SissyOptions {
    fn default() -> Self {
        SissyOptions {
            lambda: Regularization::FractionOfMax(0.1),
            l1_ratio: 0.1,
            rho: 1.0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

impl SissyOptions {
    fn check(&self) -> Result<()> {
        let value = match self.lambda {
            Regularization::Absolute(a) => a,
            Regularization::FractionOfMax(f) => f,
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Config("sissy lambda must be > 0".to_string()));
        }
        if !(self.l1_ratio >= 0.0) {
            return Err(Error::Config("sissy l1_ratio must be >= 0".to_string()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config("sissy rho must be > 0".to_string()));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("sissy max_iter must be >= 1".to_string()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("sissy tol must be > 0".to_string()));
        }
        Ok(())
    }

    pub fn solver_name(&self) -> &'static str {
        if self.l1_ratio == 0.0 {
            "vb-sccd"
        } else {
            "sissy"
        }
    }
}

fn soft_threshold(x: &mut Array2<f64>, threshold: f64) {
    if threshold <= 0.0 {
        return;
    }
    x.mapv_inplace(|v| {
        if v > threshold {
            v - threshold
        } else if v < -threshold {
            v + threshold
        } else {
            0.0
        }
    });
}

/// Variation-penalized solve of
/// `1/2 ||Y - KX||_F^2 + lambda (||VX||_1 + l1_ratio ||X||_1)`
/// by operator splitting with scaled dual variables. The normal matrix is
/// factored once; each iteration costs one triangular solve plus the
/// elementwise proximal steps.
pub fn sissy_solve_with(
    lf: &LeadField,
    y: &Measurements,
    v: &VariationOperator,
    opts: &SissyOptions,
) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    v.validate()?;
    opts.check()?;
    if v.n_sources != lf.source_space.n_sources() {
        return Err(Error::Data(format!(
            "variation operator covers {} sources, lead field has {}",
            v.n_sources,
            lf.source_space.n_sources()
        )));
    }
    let dof = lf.dof();
    let c = lf.n_columns();
    let t = y.n_samples();
    let lambda = match opts.lambda {
        Regularization::Absolute(a) => a,
        Regularization::FractionOfMax(f) => f * crate::solvers::alpha_max(lf, y),
    };
    if lambda == 0.0 {
        // FractionOfMax on all-zero data.
        let x = Array2::zeros((c, t));
        return Ok(SourceEstimate {
            amplitudes: x,
            solver: opts.solver_name().to_string(),
            iterations: 0,
            converged: true,
            residual_norm: 0.0,
            diagnostics: Diagnostics::default(),
        });
    }
    let rho = opts.rho;

    let mut normal = lf.gain.t().dot(&lf.gain);
    normal += &v.gram(dof).mapv(|g| g * rho);
    for i in 0..c {
        normal[[i, i]] += rho;
    }
    let factor = PsdFactor::new(normal.view(), DEFAULT_RCOND);
    let kty = lf.gain.t().dot(&y.data);

    let mut x = Array2::zeros((c, t));
    let mut z_edges = Array2::zeros((v.n_edges() * dof, t));
    let mut z_id = Array2::zeros((c, t));
    let mut u_edges = Array2::zeros((v.n_edges() * dof, t));
    let mut u_id = Array2::zeros((c, t));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let mut rhs = kty.clone();
        rhs += &v
            .apply_transpose(&(&z_edges - &u_edges), dof)
            .mapv(|w| w * rho);
        rhs += &(&z_id - &u_id).mapv(|w| w * rho);
        x = factor.solve(rhs.view());

        let vx = v.apply(&x, dof);
        let prev_z_edges = z_edges.clone();
        let prev_z_id = z_id.clone();
        z_edges = &vx + &u_edges;
        soft_threshold(&mut z_edges, lambda / rho);
        z_id = &x + &u_id;
        soft_threshold(&mut z_id, lambda * opts.l1_ratio / rho);
        u_edges += &(&vx - &z_edges);
        u_id += &(&x - &z_id);

        let objective = 0.5 * (&y.data - &lf.gain.dot(&x)).mapv(|w| w * w).sum()
            + lambda * vx.mapv(f64::abs).sum()
            + lambda * opts.l1_ratio * x.mapv(f64::abs).sum();
        trace.push(objective);

        let primal = ((&vx - &z_edges).mapv(|w| w * w).sum()
            + (&x - &z_id).mapv(|w| w * w).sum())
        .sqrt();
        let dual = rho
            * (v.apply_transpose(&(&z_edges - &prev_z_edges), dof)
                .mapv(|w| w * w)
                .sum()
                + (&z_id - &prev_z_id).mapv(|w| w * w).sum())
            .sqrt();
        let primal_scale = (vx.mapv(|w| w * w).sum() + x.mapv(|w| w * w).sum())
            .sqrt()
            .max((z_edges.mapv(|w| w * w).sum() + z_id.mapv(|w| w * w).sum()).sqrt())
            .max(f64::MIN_POSITIVE);
        let dual_scale = (rho
            * (v.apply_transpose(&u_edges, dof).mapv(|w| w * w).sum()
                + u_id.mapv(|w| w * w).sum())
            .sqrt())
        .max(f64::MIN_POSITIVE);
        if primal <= opts.tol * primal_scale && dual <= opts.tol * dual_scale {
            converged = true;
            break;
        }
    }

    // The consensus copy carries the exact zeros the l1 prox produces.
    let amplitudes = if opts.l1_ratio > 0.0 { z_id } else { x };
    let residual = (&y.data - &lf.gain.dot(&amplitudes))
        .mapv(|w| w * w)
        .sum()
        .sqrt();
    Ok(SourceEstimate {
        amplitudes,
        solver: opts.solver_name().to_string(),
        iterations,
        converged,
        residual_norm: residual,
        diagnostics: Diagnostics {
            objective_trace: Some(trace),
            ..Diagnostics::default()
        },
    })
}

/// [`sissy_solve_with`] over the level-1 variation operator of the lead
/// field's own source space.
pub fn sissy_solve(lf: &LeadField, y: &Measurements, opts: &SissyOptions) -> Result<SourceEstimate> {
    let v = variation_operator(&lf.source_space);
    sissy_solve_with(lf, y, &v, opts)
}

/// Watershed labeling by descending immersion: every node joins the basin
/// of its highest already-labeled neighbor (or starts one when it is a
/// local maximum among labeled nodes), then regions whose peak is below
/// 10% of the global maximum are dropped. Returns the union of surviving
/// regions, ascending. Zero-amplitude nodes stay background.
pub fn automatic_threshold(map: ArrayView1<f64>, adjacency: &[Vec<usize>]) -> Vec<usize> {
    assert_eq!(map.len(), adjacency.len());
    let mut order: Vec<usize> = (0..map.len()).filter(|&j| map[j] > 0.0).collect();
    order.sort_by(|&a, &b| {
        map[b]
            .partial_cmp(&map[a])
            .expect("amplitude maps must be finite")
            .then(a.cmp(&b))
    });
    if order.is_empty() {
        return Vec::new();
    }
    let global_max = map[order[0]];
    let mut region: Vec<Option<usize>> = vec![None; map.len()];
    let mut region_peak: Vec<f64> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for &j in &order {
        let mut best: Option<usize> = None;
        for &nb in &adjacency[j] {
            if let Some(r) = region[nb] {
                let better = match best {
                    None => true,
                    Some(cur) => {
                        region_peak[r] > region_peak[cur]
                            || (region_peak[r] == region_peak[cur] && r < cur)
                    }
                };
                if better {
                    best = Some(r);
                }
            }
        }
        let r = match best {
            Some(r) => r,
            None => {
                region_peak.push(map[j]);
                members.push(Vec::new());
                region_peak.len() - 1
            }
        };
        region[j] = Some(r);
        members[r].push(j);
    }
    let mut kept: Vec<usize> = members
        .iter()
        .enumerate()
        .filter(|(r, _)| region_peak[*r] >= KEEP_FRACTION * global_max)
        .flat_map(|(_, m)| m.iter().copied())
        .collect();
    kept.sort_unstable();
    kept
}
