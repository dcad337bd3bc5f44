//! Spherical head model: electrode cap, volumetric dipole grid, forward
//! gain matrix, and lead-field file I/O.
//!
//! The forward model is an infinite homogeneous conductor: a dipole with
//! moment `m` at `r_d` produces `V = m . (r_e - r_d) / (4 pi sigma |r_e -
//! r_d|^3)` at electrode `r_e`. Distances are mm, moments nAm, potentials
//! microvolts.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ElectrodeArray, LeadField, OrientationModel, SourceSpace, Validate};

/// Converts the dipole formula evaluated in mm/nAm into microvolts.
const MM_NAM_TO_UV: f64 = 1e3;

/// Sources live strictly inside this fraction of the head radius.
pub const SOURCE_SHELL_FRACTION: f64 = 0.9;

/// Neighbors an electrode keeps before symmetrization.
pub const ELECTRODE_NEIGHBORS: usize = 6;

/// Geometry of a spherical single-shell head model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub head_radius_mm: f64,
    /// Conductivity in S/m.
    pub conductivity: f64,
    pub grid_spacing_mm: f64,
    pub n_electrodes: usize,
    /// Polar angle from the vertex covered by the electrode cap, degrees.
    pub cap_angle_deg: f64,
    /// 1 for fixed radial orientations, 3 for free orientations.
    pub dof: usize,
}

impl Default for SphereSpec {
    fn default() -> Self {
        SphereSpec {
            head_radius_mm: 85.0,
            conductivity: 0.33,
            grid_spacing_mm: 10.0,
            n_electrodes: 64,
            cap_angle_deg: 120.0,
            dof: 1,
        }
    }
}

impl SphereSpec {
    fn check(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.head_radius_mm > 0.0) {
            bad.push(format!("head radius {} must be positive", self.head_radius_mm));
        }
        if !(self.conductivity > 0.0) {
            bad.push(format!("conductivity {} must be positive", self.conductivity));
        }
        if !(self.grid_spacing_mm > 0.0) {
            bad.push(format!("grid spacing {} must be positive", self.grid_spacing_mm));
        }
        if self.n_electrodes <= ELECTRODE_NEIGHBORS {
            bad.push(format!(
                "need more than {ELECTRODE_NEIGHBORS} electrodes, got {}",
                self.n_electrodes
            ));
        }
        if !(self.cap_angle_deg > 0.0 && self.cap_angle_deg <= 180.0) {
            bad.push(format!(
                "cap angle {} must be in (0, 180]",
                self.cap_angle_deg
            ));
        }
        if self.dof != 1 && self.dof != 3 {
            bad.push(format!("dof {} must be 1 or 3", self.dof));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Potential in microvolts at `electrode` from a dipole at `position` with
/// moment `moment` (nAm) in a homogeneous conductor of the given
/// conductivity (S/m). Positions in mm.
pub fn dipole_potential(
    position: &[f64; 3],
    moment: &[f64; 3],
    electrode: &[f64; 3],
    conductivity: f64,
) -> f64 {
    let d = [
        electrode[0] - position[0],
        electrode[1] - position[1],
        electrode[2] - position[2],
    ];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dot = moment[0] * d[0] + moment[1] * d[1] + moment[2] * d[2];
    MM_NAM_TO_UV * dot / (4.0 * std::f64::consts::PI * conductivity * r * r * r)
}

/// Quasi-uniform electrode cap: golden-angle spiral over polar angles
/// `[0, cap_angle]` from the vertex.
pub fn cap_electrodes(radius: f64, n: usize, cap_angle_deg: f64) -> ElectrodeArray {
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let cos_cap = cap_angle_deg.to_radians().cos();
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let frac = (i as f64 + 0.5) / n as f64;
            let cos_theta = 1.0 - frac * (1.0 - cos_cap);
            let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            [
                radius * sin_theta * phi.cos(),
                radius * sin_theta * phi.sin(),
                radius * cos_theta,
            ]
        })
        .collect();
    let adjacency = nearest_neighbor_adjacency(&positions, ELECTRODE_NEIGHBORS);
    ElectrodeArray {
        positions,
        scalp_radius: radius,
        adjacency,
    }
}

/// Symmetrized k-nearest-neighbor graph (geodesic order equals chord order
/// on a common sphere).
pub fn nearest_neighbor_adjacency(positions: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            crate::model::distance(&positions[i], &positions[a])
                .partial_cmp(&crate::model::distance(&positions[i], &positions[b]))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k.min(order.len())) {
            if !adjacency[i].contains(&j) {
                adjacency[i].push(j);
            }
            if !adjacency[j].contains(&i) {
                adjacency[j].push(i);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

/// Level-1 lattice adjacency: neighbors within `sqrt(3)` spacings (plus a
/// relative tolerance), i.e. the 26-neighborhood on a cubic grid.
pub fn grid_adjacency(positions: &[[f64; 3]], spacing: f64) -> Vec<Vec<usize>> {
    let threshold = (3.0f64.sqrt() + 1e-6) * spacing;
    let cell = |p: &[f64; 3]| {
        [
            (p[0] / spacing).round() as i64,
            (p[1] / spacing).round() as i64,
            (p[2] / spacing).round() as i64,
        ]
    };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    for (i, p) in positions.iter().enumerate() {
        let c = cell(p);
        let mut neigh = Vec::new();
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                for dz in -2..=2i64 {
                    if let Some(ids) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in ids {
                            if j != i && crate::model::distance(p, &positions[j]) <= threshold {
                                neigh.push(j);
                            }
                        }
                    }
                }
            }
        }
        neigh.sort_unstable();
        neigh.dedup();
        adjacency[i] = neigh;
    }
    adjacency
}

/// Half-offset cubic lattice strictly inside the source shell.
fn lattice_positions(spec: &SphereSpec) -> Vec<[f64; 3]> {
    let limit = SOURCE_SHELL_FRACTION * spec.head_radius_mm;
    let s = spec.grid_spacing_mm;
    let reach = (limit / s).ceil() as i64 + 1;
    let mut positions = Vec::new();
    for i in -reach..reach {
        for j in -reach..reach {
            for k in -reach..reach {
                let p = [
                    s * (i as f64 + 0.5),
                    s * (j as f64 + 0.5),
                    s * (k as f64 + 0.5),
                ];
                if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() < limit {
                    positions.push(p);
                }
            }
        }
    }
    positions
}

/// Builds the full lead field for a spherical spec. Deterministic: equal
/// specs produce equal lead fields.
pub fn generate_sphere_leadfield(spec: &SphereSpec) -> Result<LeadField> {
    spec.check()?;
    let positions = lattice_positions(spec);
    if positions.is_empty() {
        return Err(Error::Degenerate(format!(
            "grid spacing {} mm leaves no sources inside {:.1} mm",
            spec.grid_spacing_mm,
            SOURCE_SHELL_FRACTION * spec.head_radius_mm
        )));
    }
    let orientations = if spec.dof == 1 {
        OrientationModel::Fixed(
            positions
                .iter()
                .map(|p| {
                    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    [p[0] / r, p[1] / r, p[2] / r]
                })
                .collect(),
        )
    } else {
        OrientationModel::Free
    };
    let adjacency = grid_adjacency(&positions, spec.grid_spacing_mm);
    let source_space = SourceSpace {
        positions,
        orientations,
        head_radius: spec.head_radius_mm,
        grid_spacing: Some(spec.grid_spacing_mm),
        adjacency,
    };
    let electrodes = cap_electrodes(spec.head_radius_mm, spec.n_electrodes, spec.cap_angle_deg);

    let n = electrodes.len();
    let m = source_space.n_sources();
    let dof = source_space.dof();
    let mut gain = Array2::zeros((n, m * dof));
    let axes: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let columns = crate::parallel::map_indexed(crate::parallel::Parallelism::default(), m, |j| {
        let pos = source_space.positions[j];
        let mut cols = vec![vec![0.0; n]; dof];
        for c in 0..dof {
            let moment = match &source_space.orientations {
                OrientationModel::Fixed(dirs) => dirs[j],
                OrientationModel::Free => axes[c],
            };
            for (e, col) in cols[c].iter_mut().enumerate() {
                *col = dipole_potential(&pos, &moment, &electrodes.positions[e], spec.conductivity);
            }
        }
        cols
    });
    for (j, cols) in columns.into_iter().enumerate() {
        for (c, col) in cols.into_iter().enumerate() {
            for (e, v) in col.into_iter().enumerate() {
                gain[[e, j * dof + c]] = v;
            }
        }
    }

    let lf = LeadField {
        column_weights: vec![1.0; m * dof],
        gain,
        source_space,
        electrodes,
        normalized: false,
    };
    lf.validate()?;
    Ok(lf)
}

/// Rescales every gain column to unit Euclidean norm, folding the removed
/// scale into `column_weights`. Idempotent.
pub fn normalize_columns(lf: &LeadField) -> Result<LeadField> {
    if lf.normalized {
        return Ok(lf.clone());
    }
    let mut gain = lf.gain.clone();
    let mut weights = lf.column_weights.clone();
    for (c, mut col) in gain.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::Data(format!(
                "cannot normalize zero gain column {c}"
            )));
        }
        col.mapv_inplace(|v| v / norm);
        weights[c] *= norm;
    }
    Ok(LeadField {
        gain,
        source_space: lf.source_space.clone(),
        electrodes: lf.electrodes.clone(),
        column_weights: weights,
        normalized: true,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct LeadFieldHeader {
    format_version: u32,
    units: HashMap<String, String>,
    n_electrodes: usize,
    n_sources: usize,
    dof: usize,
    head_radius_mm: f64,
    scalp_radius_mm: f64,
    grid_spacing_mm: Option<f64>,
    normalized: bool,
    column_weights: Vec<f64>,
    electrode_positions: Vec<[f64; 3]>,
    source_positions: Vec<[f64; 3]>,
    /// `"free"` or one unit vector per source.
    orientations: serde_json::Value,
    source_adjacency: Vec<Vec<usize>>,
    electrode_adjacency: Vec<Vec<usize>>,
    /// Path of the gain matrix relative to the header; `.csv` is parsed as
    /// comma-separated rows, anything else as column-major f64 little-endian.
    gain_file: String,
}

/// On-disk gain encodings supported by [`save_leadfield`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainFormat {
    /// Column-major f64 little-endian, one flat block.
    Binary,
    /// Comma-separated rows, for small matrices.
    Csv,
}

/// Writes `leadfield.json` plus the gain matrix into `dir`.
pub fn save_leadfield(lf: &LeadField, dir: &Path, format: GainFormat) -> Result<PathBuf> {
    lf.validate()?;
    std::fs::create_dir_all(dir)?;
    let gain_file = match format {
        GainFormat::Binary => "gain.f64le",
        GainFormat::Csv => "gain.csv",
    };
    let header = LeadFieldHeader {
        format_version: 1,
        units: [
            ("position".to_string(), "mm".to_string()),
            ("potential".to_string(), "uV".to_string()),
            ("amplitude".to_string(), "nAm".to_string()),
        ]
        .into_iter()
        .collect(),
        n_electrodes: lf.n_electrodes(),
        n_sources: lf.source_space.n_sources(),
        dof: lf.dof(),
        head_radius_mm: lf.source_space.head_radius,
        scalp_radius_mm: lf.electrodes.scalp_radius,
        grid_spacing_mm: lf.source_space.grid_spacing,
        normalized: lf.normalized,
        column_weights: lf.column_weights.clone(),
        electrode_positions: lf.electrodes.positions.clone(),
        source_positions: lf.source_space.positions.clone(),
        orientations: match &lf.source_space.orientations {
            OrientationModel::Free => serde_json::Value::String("free".to_string()),
            OrientationModel::Fixed(dirs) => serde_json::to_value(dirs)?,
        },
        source_adjacency: lf.source_space.adjacency.clone(),
        electrode_adjacency: lf.electrodes.adjacency.clone(),
        gain_file: gain_file.to_string(),
    };
    let header_path = dir.join("leadfield.json");
    std::fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;

    let gain_path = dir.join(gain_file);
    match format {
        GainFormat::Binary => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&gain_path)?);
            for col in lf.gain.columns() {
                for &v in col {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        GainFormat::Csv => {
            let mut text = String::new();
            for row in lf.gain.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            std::fs::write(&gain_path, text)?;
        }
    }
    Ok(header_path)
}

fn read_gain(path: &Path, n: usize, cols: usize) -> Result<Array2<f64>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let gain = if is_csv {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| {
                Error::Data(format!("{}: line {}: {e}", path.display(), lineno + 1))
            })?;
            rows.push(row);
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Data(format!(
                "{}: expected {n} x {cols} matrix",
                path.display()
            )));
        }
        Array2::from_shape_fn((n, cols), |(i, j)| rows[i][j])
    } else {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != n * cols * 8 {
            return Err(Error::Data(format!(
                "{}: {} bytes, expected {} for {n} x {cols} f64 matrix",
                path.display(),
                bytes.len(),
                n * cols * 8
            )));
        }
        let mut gain = Array2::zeros((n, cols));
        for c in 0..cols {
            for r in 0..n {
                let off = (c * n + r) * 8;
                gain[[r, c]] = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            }
        }
        gain
    };
    if gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{}: gain contains non-finite entries",
            path.display()
        )));
    }
    Ok(gain)
}

/// Loads a lead field from a header path or a directory containing
/// `leadfield.json`.
pub fn load_leadfield(path: &Path) -> Result<LeadField> {
    let header_path = if path.is_dir() {
        path.join("leadfield.json")
    } else {
        path.to_path_buf()
    };
    let header: LeadFieldHeader =
        serde_json::from_str(&std::fs::read_to_string(&header_path)?)?;
    if header.format_version != 1 {
        return Err(Error::Data(format!(
            "unsupported lead field format version {}",
            header.format_version
        )));
    }
    if header.electrode_positions.len() != header.n_electrodes
        || header.source_positions.len() != header.n_sources
    {
        return Err(Error::Data(
            "header counts disagree with position arrays".to_string(),
        ));
    }
    let orientations = if header.orientations == serde_json::Value::String("free".to_string()) {
        if header.dof != 3 {
            return Err(Error::Data("free orientations require dof 3".to_string()));
        }
        OrientationModel::Free
    } else {
        if header.dof != 1 {
            return Err(Error::Data("fixed orientations require dof 1".to_string()));
        }
        OrientationModel::Fixed(serde_json::from_value(header.orientations.clone())?)
    };
    let source_adjacency = if !header.source_adjacency.is_empty() {
        header.source_adjacency.clone()
    } else if let Some(s) = header.grid_spacing_mm {
        grid_adjacency(&header.source_positions, s)
    } else {
        vec![Vec::new(); header.n_sources]
    };
    let electrode_adjacency = if !header.electrode_adjacency.is_empty() {
        header.electrode_adjacency.clone()
    } else {
        nearest_neighbor_adjacency(&header.electrode_positions, ELECTRODE_NEIGHBORS)
    };
    let gain_path = header_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&header.gain_file);
    let gain = read_gain(&gain_path, header.n_electrodes, header.n_sources * header.dof)?;
    let lf = LeadField {
        gain,
        source_space: SourceSpace {
            positions: header.source_positions,
            orientations,
            head_radius: header.head_radius_mm,
            grid_spacing: header.grid_spacing_mm,
            adjacency: source_adjacency,
        },
        electrodes: ElectrodeArray {
            positions: header.electrode_positions,
            scalp_radius: header.scalp_radius_mm,
            adjacency: electrode_adjacency,
        },
        column_weights: header.column_weights,
        normalized: header.normalized,
    };
    lf.validate()?;
    Ok(lf)
}
