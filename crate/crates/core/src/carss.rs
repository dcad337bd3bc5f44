//! Certainty-based reduction of the solution space.
//!
//! Stage I matches scalp-topography peaks against precomputed per-column
//! peak signatures and keeps only sources whose certainty clears a
//! threshold; Stage II runs any solver on the column-restricted lead
//! field and scatters the estimate back to full size.

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LeadField, Measurements, SourceEstimate, Validate};
use crate::parallel::{map_indexed, Parallelism};
use crate::solvers::{check_inputs, solve, SolverSpec};

/// Scalp extrema below this fraction of the column's absolute maximum do
/// not count as peaks.
const PEAK_FLOOR: f64 = 0.2;

/// What one source column looks like on the scalp: where its topography
/// peaks and how it is shaped around that peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSignature {
    /// Electrode with the largest absolute topography value.
    pub peak_electrode: usize,
    /// Peak electrode plus its level-1 neighbors, ascending.
    pub electrodes: Vec<usize>,
    /// Unit-norm topography values on `electrodes`.
    pub shape: Vec<f64>,
}

impl Validate for PeakSignature {
    const OBJECT: &'static str = "peak signature";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.electrodes.contains(&self.peak_electrode) {
            out.push("neighborhood must contain the peak electrode".to_string());
        }
        if self.electrodes.windows(2).any(|w| w[0] >= w[1]) {
            out.push("neighborhood electrodes must be strictly ascending".to_string());
        }
        if self.shape.len() != self.electrodes.len() {
            out.push("shape length must match the neighborhood".to_string());
        }
        let norm = self.shape.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm != 0.0 && (norm - 1.0).abs() > 1e-9 {
            out.push("shape must be unit norm".to_string());
        }
        out
    }
}

/// One signature per gain column; reusable across every trial that shares
/// the lead field.
pub fn build_signatures(lf: &LeadField) -> Result<Vec<PeakSignature>> {
    lf.validate()?;
    if !lf.normalized {
        return Err(Error::Config(
            "peak signatures require a column-normalized lead field".to_string(),
        ));
    }
    let adjacency = &lf.electrodes.adjacency;
    if adjacency.iter().all(|a| a.is_empty()) {
        return Err(Error::Config(
            "peak signatures require electrode adjacency".to_string(),
        ));
    }
    let mut table = Vec::with_capacity(lf.n_columns());
    for c in 0..lf.n_columns() {
        let topo = lf.gain.column(c);
        let mut peak = 0;
        for (i, v) in topo.iter().enumerate() {
            if v.abs() > topo[peak].abs() {
                peak = i;
            }
        }
        let mut electrodes: Vec<usize> = adjacency[peak].clone();
        electrodes.push(peak);
        electrodes.sort_unstable();
        electrodes.dedup();
        let mut shape: Vec<f64> = electrodes.iter().map(|&e| topo[e]).collect();
        let norm = shape.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut shape {
                *v /= norm;
            }
        }
        table.push(PeakSignature {
            peak_electrode: peak,
            electrodes,
            shape,
        });
    }
    Ok(table)
}

/// Electrodes whose absolute value strictly exceeds every level-1
/// neighbor and clears the relative floor.
pub fn detect_scalp_peaks(y_t: ArrayView1<f64>, adjacency: &[Vec<usize>]) -> Vec<usize> {
    let max_abs = y_t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = PEAK_FLOOR * max_abs;
    (0..y_t.len())
        .filter(|&e| {
            let v = y_t[e].abs();
            v > floor && adjacency[e].iter().all(|&nb| y_t[nb].abs() < v)
        })
        .collect()
}

/// Sign-folded cosine between the signature shape and the measured
/// topography on the signature's electrodes. Zero unless some detected
/// peak coincides with, or is level-1 adjacent to, the signature's peak.
pub fn certainty(
    sig: &PeakSignature,
    y_t: ArrayView1<f64>,
    peaks: &[usize],
    adjacency: &[Vec<usize>],
) -> f64 {
    let admissible = peaks
        .iter()
        .any(|&p| p == sig.peak_electrode || adjacency[sig.peak_electrode].contains(&p));
    if !admissible {
        return 0.0;
    }
    let mut dot = 0.0;
    let mut norm_sq = 0.0;
    for (i, &e) in sig.electrodes.iter().enumerate() {
        dot += sig.shape[i] * y_t[e];
        norm_sq += y_t[e] * y_t[e];
    }
    if norm_sq == 0.0 {
        return 0.0;
    }
    (dot.abs() / norm_sq.sqrt()).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarssOptions {
    /// Sources at or above this certainty survive the reduction.
    pub tau: f64,
    /// Every `sample_stride`-th time column is scored.
    pub sample_stride: usize,
    #[serde(skip, default)]
    pub parallelism: Parallelism,
}

impl Default for CarssOptions {
    fn default() -> Self {
        CarssOptions {
            tau: 0.5,
            sample_stride: 10,
            parallelism: Parallelism::default(),
        }
    }
}

impl CarssOptions {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "carss tau {} must lie in [0, 1]",
                self.tau
            )));
        }
        if self.sample_stride < 1 {
            return Err(Error::Config("carss sample_stride must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Outcome of Stage I.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    /// Surviving source indices, ascending.
    pub kept: Vec<usize>,
    /// Best certainty over the sampled columns, per kept source.
    pub certainties: Vec<f64>,
    /// Time indices that were scored.
    pub sampled_columns: Vec<usize>,
    /// Detected peak electrodes per sampled column.
    pub peak_electrodes: Vec<Vec<usize>>,
    pub n_sources: usize,
    /// `kept.len() / n_sources`.
    pub reduction_ratio: f64,
}

impl Validate for ReductionReport {
    const OBJECT: &'static str = "reduction report";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kept.windows(2).any(|w| w[0] >= w[1]) {
            out.push("kept indices must be strictly ascending".to_string());
        }
        if self.kept.iter().any(|&j| j >= self.n_sources) {
            out.push("kept indices must address existing sources".to_string());
        }
        if self.certainties.len() != self.kept.len() {
            out.push("one certainty per kept source required".to_string());
        }
        if self.certainties.iter().any(|c| !(0.0..=1.0).contains(c)) {
            out.push("certainties must lie in [0, 1]".to_string());
        }
        if self.sampled_columns.len() != self.peak_electrodes.len() {
            out.push("one peak list per sampled column required".to_string());
        }
        out
    }
}

/// Stage I with a prebuilt signature table: scores every source on the
/// strided time columns and keeps those at or above `tau`, topping up
/// with the most certain remainder until at least `min(N, M)` sources
/// survive so Stage II always has a workable space.
pub fn reduce_with_signatures(
    lf: &LeadField,
    signatures: &[PeakSignature],
    y: &Measurements,
    opts: &CarssOptions,
) -> Result<ReductionReport> {
    check_inputs(lf, y)?;
    opts.check()?;
    if signatures.len() != lf.n_columns() {
        return Err(Error::Data(format!(
            "{} signatures for {} gain columns",
            signatures.len(),
            lf.n_columns()
        )));
    }
    let dof = lf.dof();
    let m = lf.source_space.n_sources();
    let adjacency = &lf.electrodes.adjacency;

    let sampled_columns: Vec<usize> = (0..y.n_samples()).step_by(opts.sample_stride).collect();
    let peak_electrodes: Vec<Vec<usize>> = sampled_columns
        .iter()
        .map(|&t| detect_scalp_peaks(y.data.column(t), adjacency))
        .collect();

    let best = map_indexed(opts.parallelism, m, |j| {
        let mut c = 0.0f64;
        for (si, &t) in sampled_columns.iter().enumerate() {
            let y_t = y.data.column(t);
            for col in j * dof..(j + 1) * dof {
                c = c.max(certainty(
                    &signatures[col],
                    y_t,
                    &peak_electrodes[si],
                    adjacency,
                ));
            }
        }
        c
    });

    let mut kept: Vec<usize> = (0..m).filter(|&j| best[j] >= opts.tau).collect();
    let floor = lf.n_electrodes().min(m);
    if kept.len() < floor {
        let mut rest: Vec<usize> = (0..m).filter(|&j| best[j] < opts.tau).collect();
        rest.sort_by(|&a, &b| {
            best[b]
                .partial_cmp(&best[a])
                .expect("certainties are finite")
                .then(a.cmp(&b))
        });
        kept.extend(rest.into_iter().take(floor - kept.len()));
        kept.sort_unstable();
    }
    let certainties = kept.iter().map(|&j| best[j]).collect();
    Ok(ReductionReport {
        reduction_ratio: kept.len() as f64 / m as f64,
        kept,
        certainties,
        sampled_columns,
        peak_electrodes,
        n_sources: m,
    })
}

/// Stage I end to end: builds the signature table and reduces.
pub fn reduce_solution_space(
    lf: &LeadField,
    y: &Measurements,
    opts: &CarssOptions,
) -> Result<ReductionReport> {
    let signatures = build_signatures(lf)?;
    reduce_with_signatures(lf, &signatures, y, opts)
}

/// Stage II: runs `spec` on the lead field restricted to the report's
/// sources and scatters the estimate back to full size, zero elsewhere.
/// Solver-internal diagnostics are kept with source indices remapped to
/// the full space; the report's kept set replaces any solver-internal
/// restriction note.
pub fn solve_reduced(
    spec: &SolverSpec,
    lf: &LeadField,
    y: &Measurements,
    report: &ReductionReport,
) -> Result<SourceEstimate> {
    check_inputs(lf, y)?;
    report.validate()?;
    if report.n_sources != lf.source_space.n_sources() {
        return Err(Error::Data(format!(
            "report covers {} sources, lead field has {}",
            report.n_sources,
            lf.source_space.n_sources()
        )));
    }
    let reduced_lf = lf.restrict(&report.kept);
    let inner = solve(spec, &reduced_lf, y)?;

    let dof = lf.dof();
    let t = y.n_samples();
    let mut amplitudes = Array2::zeros((lf.n_columns(), t));
    for (r, &j) in report.kept.iter().enumerate() {
        amplitudes
            .slice_mut(s![j * dof..(j + 1) * dof, ..])
            .assign(&inner.amplitudes.slice(s![r * dof..(r + 1) * dof, ..]));
    }
    let mut diagnostics = inner.diagnostics;
    if let Some(found) = diagnostics.found_sources.take() {
        diagnostics.found_sources = Some(found.into_iter().map(|r| report.kept[r]).collect());
    }
    if let Some(vars) = diagnostics.source_variances.take() {
        let mut full = vec![0.0; lf.source_space.n_sources()];
        for (r, &j) in report.kept.iter().enumerate() {
            full[j] = vars[r];
        }
        diagnostics.source_variances = Some(full);
    }
    diagnostics.reduced_support = Some(report.kept.clone());
    Ok(SourceEstimate {
        amplitudes,
        solver: inner.solver,
        iterations: inner.iterations,
        converged: inner.converged,
        residual_norm: inner.residual_norm,
        diagnostics,
    })
}
