//! Shared data model: source spaces, electrode arrays, lead fields,
//! simulation scenarios, measurements, and solver output.
//!
//! Units are fixed throughout the crate: positions in millimeters, source
//! amplitudes in nanoampere-meters, potentials in microvolts. Every type
//! serializes with serde and checks its structural invariants through
//! [`Validate`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on unit norms and on-sphere checks.
pub const GEOMETRY_TOL: f64 = 1e-6;

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Euclidean distance between two points in mm.
pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm3(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Structural invariant checking.
///
/// `violations` is pure: it never mutates the object and returns one human
/// readable description per failed invariant (empty means valid).
pub trait Validate {
    const OBJECT: &'static str;

    fn violations(&self) -> Vec<String>;

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(Self::OBJECT, v))
        }
    }
}

fn check_adjacency(adjacency: &[Vec<usize>], n: usize, out: &mut Vec<String>) {
    if adjacency.len() != n {
        out.push(format!(
            "adjacency has {} lists for {} nodes",
            adjacency.len(),
            n
        ));
        return;
    }
    for (i, neigh) in adjacency.iter().enumerate() {
        for &j in neigh {
            if j >= n {
                out.push(format!("adjacency[{i}] references out-of-range node {j}"));
            } else if j == i {
                out.push(format!("adjacency[{i}] contains a self loop"));
            } else if !adjacency[j].contains(&i) {
                out.push(format!("adjacency is asymmetric for pair ({i}, {j})"));
            }
        }
        if neigh.windows(2).any(|w| w[0] >= w[1]) {
            out.push(format!("adjacency[{i}] is not strictly ascending"));
        }
    }
}

/// Dipole orientation model of a source space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationModel {
    /// One unit moment direction per source; one gain column per source.
    Fixed(Vec<[f64; 3]>),
    /// Unconstrained moments; three gain columns (x, y, z) per source.
    Free,
}

/// Volumetric dipole grid inside a spherical head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpace {
    /// Dipole positions in mm, head center at the origin.
    pub positions: Vec<[f64; 3]>,
    pub orientations: OrientationModel,
    /// Declared head radius in mm; all sources lie strictly inside.
    pub head_radius: f64,
    /// Lattice step in mm when the grid is a regular lattice.
    pub grid_spacing: Option<f64>,
    /// Level-1 neighbor lists, strictly ascending, symmetric, no self loops.
    pub adjacency: Vec<Vec<usize>>,
}

impl SourceSpace {
    pub fn n_sources(&self) -> usize {
        self.positions.len()
    }

    /// Columns contributed per source: 1 for fixed orientations, 3 for free.
    pub fn dof(&self) -> usize {
        match self.orientations {
            OrientationModel::Fixed(_) => 1,
            OrientationModel::Free => 3,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.n_sources() * self.dof()
    }

    /// Distance of source `i` from the head center in mm.
    pub fn depth_radius(&self, i: usize) -> f64 {
        norm3(&self.positions[i])
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        distance(&self.positions[i], &self.positions[j])
    }

    /// Indices reachable from `idx` in at most `levels` adjacency hops,
    /// including `idx` itself, sorted ascending.
    pub fn neighborhood(&self, idx: usize, levels: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_sources()];
        seen[idx] = true;
        let mut frontier = vec![idx];
        for _ in 0..levels {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        (0..self.n_sources()).filter(|&i| seen[i]).collect()
    }
}

impl Validate for SourceSpace {
    const OBJECT: &'static str = "source space";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.positions.len();
        if n == 0 {
            out.push("source space has no positions".to_string());
        }
        if !(self.head_radius > 0.0) {
            out.push(format!("head radius {} is not positive", self.head_radius));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                out.push(format!("position {i} has non-finite coordinates"));
            } else if norm3(p) >= self.head_radius {
                out.push(format!(
                    "position {i} at radius {:.3} is not inside head radius {}",
                    norm3(p),
                    self.head_radius
                ));
            }
        }
        if let OrientationModel::Fixed(dirs) = &self.orientations {
            if dirs.len() != n {
                out.push(format!(
                    "{} orientations for {} sources",
                    dirs.len(),
                    n
                ));
            }
            for (i, d) in dirs.iter().enumerate() {
                let len = norm3(d);
                if !len.is_finite() || (len - 1.0).abs() > GEOMETRY_TOL {
                    out.push(format!("orientation {i} has norm {len:.6}, expected 1"));
                }
            }
        }
        if let Some(s) = self.grid_spacing {
            if !(s > 0.0) {
                out.push(format!("grid spacing {s} is not positive"));
            }
        }
        check_adjacency(&self.adjacency, n, &mut out);
        out
    }
}

/// Scalp electrode montage on a sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeArray {
    /// Electrode positions in mm, on the scalp sphere.
    pub positions: Vec<[f64; 3]>,
    pub scalp_radius: f64,
    /// Level-1 neighbor lists on the scalp, same conventions as source adjacency.
    pub adjacency: Vec<Vec<usize>>,
}

impl ElectrodeArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

impl Validate for ElectrodeArray {
    const OBJECT: &'static str = "electrode array";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.positions.is_empty() {
            out.push("electrode array is empty".to_string());
        }
        if !(self.scalp_radius > 0.0) {
            out.push(format!(
                "scalp radius {} is not positive",
                self.scalp_radius
            ));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                out.push(format!("electrode {i} has non-finite coordinates"));
                continue;
            }
            let r = norm3(p);
            if (r - self.scalp_radius).abs() > GEOMETRY_TOL * self.scalp_radius {
                out.push(format!(
                    "electrode {i} at radius {r:.6} is off the scalp sphere {}",
                    self.scalp_radius
                ));
            }
        }
        check_adjacency(&self.adjacency, self.positions.len(), &mut out);
        out
    }
}

/// Forward gain matrix tying a source space to an electrode array.
///
/// Column layout: source-major, component-minor. For free orientations the
/// columns of source `j` are `3j, 3j+1, 3j+2` (x, y, z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadField {
    /// `n_electrodes x n_columns` gain, microvolts per unit source amplitude.
    pub gain: Array2<f64>,
    pub source_space: SourceSpace,
    pub electrodes: ElectrodeArray,
    /// Euclidean norms the columns carried before normalization; all ones
    /// when `normalized` is false.
    pub column_weights: Vec<f64>,
    pub normalized: bool,
}

impl LeadField {
    pub fn n_electrodes(&self) -> usize {
        self.gain.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.gain.ncols()
    }

    pub fn dof(&self) -> usize {
        self.source_space.dof()
    }

    /// Column indices belonging to source `j`.
    pub fn source_columns(&self, j: usize) -> std::ops::Range<usize> {
        let d = self.dof();
        j * d..(j + 1) * d
    }

    /// Lead field restricted to the given sources (ascending, deduplicated
    /// by the caller). Column order follows `kept`; adjacency is the induced
    /// subgraph with indices remapped.
    pub fn restrict(&self, kept: &[usize]) -> LeadField {
        let dof = self.dof();
        let mut remap = vec![usize::MAX; self.source_space.n_sources()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let positions: Vec<[f64; 3]> = kept.iter().map(|&j| self.source_space.positions[j]).collect();
        let orientations = match &self.source_space.orientations {
            OrientationModel::Fixed(dirs) => {
                OrientationModel::Fixed(kept.iter().map(|&j| dirs[j]).collect())
            }
            OrientationModel::Free => OrientationModel::Free,
        };
        let adjacency: Vec<Vec<usize>> = kept
            .iter()
            .map(|&j| {
                self.source_space.adjacency[j]
                    .iter()
                    .filter_map(|&n| (remap[n] != usize::MAX).then_some(remap[n]))
                    .collect()
            })
            .collect();
        let mut gain = Array2::zeros((self.n_electrodes(), kept.len() * dof));
        let mut column_weights = Vec::with_capacity(kept.len() * dof);
        for (new, &old) in kept.iter().enumerate() {
            for c in 0..dof {
                gain.column_mut(new * dof + c)
                    .assign(&self.gain.column(old * dof + c));
                column_weights.push(self.column_weights[old * dof + c]);
            }
        }
        LeadField {
            gain,
            source_space: SourceSpace {
                positions,
                orientations,
                head_radius: self.source_space.head_radius,
                grid_spacing: self.source_space.grid_spacing,
                adjacency,
            },
            electrodes: self.electrodes.clone(),
            column_weights,
            normalized: self.normalized,
        }
    }
}

impl Validate for LeadField {
    const OBJECT: &'static str = "lead field";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.source_space.violations());
        out.extend(self.electrodes.violations());
        let expect = (self.electrodes.len(), self.source_space.n_columns());
        if self.gain.dim() != expect {
            out.push(format!(
                "gain is {:?}, geometry implies {:?}",
                self.gain.dim(),
                expect
            ));
        }
        if self.gain.iter().any(|v| !v.is_finite()) {
            out.push("gain contains non-finite entries".to_string());
        }
        if self.column_weights.len() != self.gain.ncols() {
            out.push(format!(
                "{} column weights for {} columns",
                self.column_weights.len(),
                self.gain.ncols()
            ));
        }
        if self.column_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            out.push("column weights must be positive and finite".to_string());
        }
        if self.normalized {
            for (c, col) in self.gain.columns().into_iter().enumerate() {
                let n = col.dot(&col).sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    out.push(format!("normalized flag set but column {c} has norm {n:.3e}"));
                    break;
                }
            }
        }
        out
    }
}

/// Noise model attached to a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// Flat spectrum.
    White,
    /// Power spectral density falling as 1/f.
    Pink,
    /// Power spectral density falling as 1/f^2.
    Brown,
    /// White noise scaled to a percentage of the clean signal peak.
    SensorPercent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Peak amplitude in microvolts, or percent of signal peak for
    /// `SensorPercent`. Ignored for `None`.
    pub amplitude: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            amplitude: 0.0,
        }
    }
}

/// Ground-truth description of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Active source indices, strictly ascending.
    pub active_indices: Vec<usize>,
    /// Unit moment directions per active source; required for free-orientation
    /// spaces, must be absent for fixed-orientation spaces.
    pub active_orientations: Option<Vec<[f64; 3]>>,
    /// `n_active x n_samples` waveforms in nanoampere-meters.
    pub waveforms: Array2<f64>,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub noise: NoiseSpec,
    /// Seed that reproduces the noise realization.
    pub seed: u64,
}

impl Scenario {
    pub fn n_active(&self) -> usize {
        self.active_indices.len()
    }

    pub fn n_samples(&self) -> usize {
        self.waveforms.ncols()
    }

    /// Range and orientation-model compatibility against a source space.
    pub fn check_against(&self, space: &SourceSpace) -> Result<()> {
        if let Some(&max) = self.active_indices.iter().max() {
            if max >= space.n_sources() {
                return Err(Error::Config(format!(
                    "active index {max} out of range for {} sources",
                    space.n_sources()
                )));
            }
        }
        match (&space.orientations, &self.active_orientations) {
            (OrientationModel::Fixed(_), Some(_)) => Err(Error::Config(
                "scenario carries free orientations but the source space has fixed orientations"
                    .to_string(),
            )),
            (OrientationModel::Free, None) => Err(Error::Config(
                "free-orientation source space needs per-source orientations in the scenario"
                    .to_string(),
            )),
            _ => Ok(()),
        }
    }
}

impl Validate for Scenario {
    const OBJECT: &'static str = "scenario";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.active_indices.windows(2).any(|w| w[0] >= w[1]) {
            out.push("active indices must be strictly ascending".to_string());
        }
        if self.waveforms.nrows() != self.active_indices.len() {
            out.push(format!(
                "{} waveform rows for {} active sources",
                self.waveforms.nrows(),
                self.active_indices.len()
            ));
        }
        if self.waveforms.iter().any(|v| !v.is_finite()) {
            out.push("waveforms contain non-finite samples".to_string());
        }
        if !(self.fs > 0.0) {
            out.push(format!("sampling rate {} is not positive", self.fs));
        }
        if let Some(dirs) = &self.active_orientations {
            if dirs.len() != self.active_indices.len() {
                out.push(format!(
                    "{} orientations for {} active sources",
                    dirs.len(),
                    self.active_indices.len()
                ));
            }
            for (i, d) in dirs.iter().enumerate() {
                let len = norm3(d);
                if !len.is_finite() || (len - 1.0).abs() > GEOMETRY_TOL {
                    out.push(format!("active orientation {i} has norm {len:.6}, expected 1"));
                }
            }
        }
        if !(self.noise.amplitude >= 0.0) {
            out.push(format!(
                "noise amplitude {} is negative or non-finite",
                self.noise.amplitude
            ));
        }
        out
    }
}

/// Multichannel scalp recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    /// `n_electrodes x n_samples` potentials in microvolts.
    pub data: Array2<f64>,
    pub fs: f64,
    /// Free-form description of how the data came to be.
    pub provenance: String,
}

impl Measurements {
    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }
}

impl Validate for Measurements {
    const OBJECT: &'static str = "measurements";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.data.is_empty() {
            out.push("measurements are empty".to_string());
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            out.push("measurements contain non-finite samples".to_string());
        }
        if !(self.fs > 0.0) {
            out.push(format!("sampling rate {} is not positive", self.fs));
        }
        out
    }
}

/// Optional per-solver output beyond the amplitude matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Objective value per iteration for descent-type solvers.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective_trace: Option<Vec<f64>>,
    /// Per-source variance hyperparameters (sparse Bayesian learning).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_variances: Option<Vec<f64>>,
    /// Maximum localizer value per scan iteration (subspace scanners).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub localizer_trace: Option<Vec<f64>>,
    /// Source indices a scanner committed to, in discovery order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub found_sources: Option<Vec<usize>>,
    /// Source indices a reduced solve was restricted to.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reduced_support: Option<Vec<usize>>,
}

/// Inverse-solver output on a fixed source space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    /// `n_columns x n_samples` amplitude estimates, column layout matching
    /// the lead field.
    pub amplitudes: Array2<f64>,
    pub solver: String,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius norm of the data residual `Y - K X`.
    pub residual_norm: f64,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl Validate for SourceEstimate {
    const OBJECT: &'static str = "source estimate";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.amplitudes.iter().any(|v| !v.is_finite()) {
            out.push("amplitudes contain non-finite entries".to_string());
        }
        if !(self.residual_norm >= 0.0) {
            out.push(format!(
                "residual norm {} is negative or non-finite",
                self.residual_norm
            ));
        }
        if self.solver.is_empty() {
            out.push("solver name is empty".to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_source_space() -> SourceSpace {
        SourceSpace {
            positions: vec![[0.0, 0.0, 10.0], [0.0, 0.0, 20.0]],
            orientations: OrientationModel::Fixed(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
            head_radius: 85.0,
            grid_spacing: Some(10.0),
            adjacency: vec![vec![1], vec![0]],
        }
    }

    fn two_electrodes() -> ElectrodeArray {
        ElectrodeArray {
            positions: vec![[0.0, 0.0, 85.0], [0.0, 85.0, 0.0]],
            scalp_radius: 85.0,
            adjacency: vec![vec![1], vec![0]],
        }
    }

    #[test]
    fn valid_objects_pass() {
        assert!(two_source_space().validate().is_ok());
        assert!(two_electrodes().validate().is_ok());
    }

    #[test]
    fn orientation_norm_violation_is_reported() {
        let mut ss = two_source_space();
        if let OrientationModel::Fixed(dirs) = &mut ss.orientations {
            dirs[1] = [0.0, 0.0, 1.001];
        }
        let v = ss.violations();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("norm"), "unexpected message: {}", v[0]);
    }

    #[test]
    fn asymmetric_adjacency_is_reported() {
        let mut ss = two_source_space();
        ss.adjacency = vec![vec![1], vec![]];
        assert!(ss
            .violations()
            .iter()
            .any(|m| m.contains("asymmetric")));
    }

    #[test]
    fn electrode_off_sphere_is_reported() {
        let mut ea = two_electrodes();
        ea.positions[0] = [0.0, 0.0, 84.0];
        assert!(ea.violations().iter().any(|m| m.contains("off the scalp")));
    }

    #[test]
    fn source_outside_head_is_reported() {
        let mut ss = two_source_space();
        ss.positions[0] = [0.0, 0.0, 90.0];
        assert!(ss.violations().iter().any(|m| m.contains("not inside")));
    }

    #[test]
    fn validate_is_pure() {
        let ss = two_source_space();
        let first = ss.violations();
        let second = ss.violations();
        assert_eq!(first, second);
        assert!(ss.validate().is_ok());
    }

    #[test]
    fn neighborhood_levels_nest() {
        let ss = SourceSpace {
            positions: (0..5).map(|i| [0.0, 0.0, 5.0 + i as f64]).collect(),
            orientations: OrientationModel::Free,
            head_radius: 85.0,
            grid_spacing: Some(1.0),
            adjacency: vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]],
        };
        assert_eq!(ss.neighborhood(2, 0), vec![2]);
        assert_eq!(ss.neighborhood(2, 1), vec![1, 2, 3]);
        assert_eq!(ss.neighborhood(2, 2), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn scenario_against_space_checks_orientation_model() {
        let ss = two_source_space();
        let sc = Scenario {
            active_indices: vec![0],
            active_orientations: Some(vec![[1.0, 0.0, 0.0]]),
            waveforms: array![[1.0, 2.0]],
            fs: 100.0,
            noise: NoiseSpec::none(),
            seed: 0,
        };
        assert!(sc.validate().is_ok());
        assert!(sc.check_against(&ss).is_err());
    }

    #[test]
    fn restrict_full_set_is_identity() {
        let lf = LeadField {
            gain: array![[1.0, 2.0], [3.0, 4.0]],
            source_space: two_source_space(),
            electrodes: two_electrodes(),
            column_weights: vec![1.0, 1.0],
            normalized: false,
        };
        assert!(lf.validate().is_ok());
        let r = lf.restrict(&[0, 1]);
        assert_eq!(r, lf);
        let only1 = lf.restrict(&[1]);
        assert_eq!(only1.gain, array![[2.0], [4.0]]);
        assert_eq!(only1.source_space.adjacency, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn serde_round_trips_every_model_type() {
        let ss = two_source_space();
        let ea = two_electrodes();
        let lf = LeadField {
            gain: array![[1.0, 0.5], [0.25, 4.0]],
            source_space: ss.clone(),
            electrodes: ea.clone(),
            column_weights: vec![1.0, 1.0],
            normalized: false,
        };
        let sc = Scenario {
            active_indices: vec![0, 1],
            active_orientations: None,
            waveforms: array![[0.1, 0.2], [0.3, 0.4]],
            fs: 1000.0,
            noise: NoiseSpec {
                kind: NoiseKind::Pink,
                amplitude: 1.5,
            },
            seed: 99,
        };
        let me = Measurements {
            data: array![[1.0, -2.0], [0.5, 0.25]],
            fs: 1000.0,
            provenance: "test".to_string(),
        };
        let est = SourceEstimate {
            amplitudes: array![[0.0, 1.0], [2.0, 3.0]],
            solver: "mne".to_string(),
            iterations: 1,
            converged: true,
            residual_norm: 0.0,
            diagnostics: Diagnostics::default(),
        };

        macro_rules! round_trip {
            ($v:expr, $t:ty) => {{
                let json = serde_json::to_string(&$v).unwrap();
                let back: $t = serde_json::from_str(&json).unwrap();
                assert_eq!(back, $v);
            }};
        }
        round_trip!(ss, SourceSpace);
        round_trip!(ea, ElectrodeArray);
        round_trip!(lf, LeadField);
        round_trip!(sc, Scenario);
        round_trip!(me, Measurements);
        round_trip!(est, SourceEstimate);
    }
}
