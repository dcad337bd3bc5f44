//! Shared fixtures for unit tests.

use ndarray::Array2;

use crate::headmodel::{generate_sphere_leadfield, normalize_columns, SphereSpec};
use crate::model::{
    ElectrodeArray, LeadField, Measurements, OrientationModel, SourceSpace, Validate,
};

/// Lead field around an arbitrary gain: sources on a line with chain
/// adjacency, electrodes on a circle, all geometry valid.
pub(crate) fn toy_leadfield(gain: Array2<f64>) -> LeadField {
    let n = gain.nrows();
    let m = gain.ncols();
    assert!(m < 70, "toy source line leaves the head beyond 70 columns");
    let electrodes = ElectrodeArray {
        positions: (0..n)
            .map(|i| {
                let phi = i as f64 / n as f64 * std::f64::consts::PI;
                [85.0 * phi.cos(), 85.0 * phi.sin(), 0.0]
            })
            .collect(),
        scalp_radius: 85.0,
        adjacency: (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect(),
    };
    let source_space = SourceSpace {
        positions: (0..m).map(|j| [10.0 + j as f64, 0.0, 0.0]).collect(),
        orientations: OrientationModel::Fixed(vec![[0.0, 0.0, 1.0]; m]),
        head_radius: 85.0,
        grid_spacing: None,
        adjacency: (0..m)
            .map(|j| {
                let mut a = Vec::new();
                if j > 0 {
                    a.push(j - 1);
                }
                if j + 1 < m {
                    a.push(j + 1);
                }
                a
            })
            .collect(),
    };
    let lf = LeadField {
        column_weights: vec![1.0; m],
        gain,
        source_space,
        electrodes,
        normalized: false,
    };
    lf.validate().unwrap();
    lf
}

pub(crate) fn measurements(data: Array2<f64>) -> Measurements {
    Measurements {
        data,
        fs: 1000.0,
        provenance: "test".to_string(),
    }
}

/// Normalized spherical lead field small enough for unit tests.
pub(crate) fn small_sphere(dof: usize, grid_spacing_mm: f64, n_electrodes: usize) -> LeadField {
    let spec = SphereSpec {
        dof,
        grid_spacing_mm,
        n_electrodes,
        ..SphereSpec::default()
    };
    normalize_columns(&generate_sphere_leadfield(&spec).unwrap()).unwrap()
}
