//! Inverse solvers and the campaign-facing dispatch layer.
//!
//! Each solver family lives in its own module with a plain function entry
//! point; [`SolverSpec`] wraps them behind one serde-friendly enum so
//! campaign configs and the CLI can name any solver uniformly.

pub mod focuss;
pub mod linear;
pub mod mxne;
pub mod sbl;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LeadField, Measurements, SourceEstimate, Validate};

pub use crate::scanners::{SissyOptions, TrapMusicOptions};

pub use focuss::{focuss_solve, FocussInit, FocussOptions};
pub use linear::{
    alpha_lcurve, alpha_svd_heuristic, mne_solve, sloreta_solve, AlphaRule, LinearOptions,
    SourceWeighting,
};
pub use mxne::{alpha_max, irmxne_solve, mxne_solve, prox_l21, MxneOptions, Regularization};
pub use sbl::{sbl_solve, SblOptions, SblVariant};

/// A solver choice plus its options, as written in campaign configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "kebab-case")]
pub enum SolverSpec {
    /// Minimum-norm family; the weighting picks mne/wmne/loreta.
    Mne {
        #[serde(default)]
        options: LinearOptions,
    },
    Sloreta {
        #[serde(default)]
        alpha: AlphaRule,
    },
    Focuss {
        #[serde(default)]
        options: FocussOptions,
    },
    Mxne {
        #[serde(default)]
        options: MxneOptions,
    },
    /// Iteratively reweighted mixed-norm estimate.
    Irmxne {
        #[serde(default)]
        options: MxneOptions,
    },
    Sbl {
        #[serde(default)]
        options: SblOptions,
    },
    /// Total-variation (+ optional l1) regularized solver; alpha 0 gives
    /// the pure total-variation variant.
    Sissy {
        #[serde(default)]
        options: SissyOptions,
    },
    TrapMusic {
        #[serde(default)]
        options: TrapMusicOptions,
    },
}

impl SolverSpec {
    /// Stable name used in reports and result rows.
    pub fn name(&self) -> String {
        match self {
            SolverSpec::Mne { options } => options.weighting.solver_name().to_string(),
            SolverSpec::Sloreta { .. } => "sloreta".to_string(),
            SolverSpec::Focuss { .. } => "focuss".to_string(),
            SolverSpec::Mxne { .. } => "mxne".to_string(),
            SolverSpec::Irmxne { .. } => "irmxne".to_string(),
            SolverSpec::Sbl { options } => match options.variant {
                SblVariant::Wipf => "sbl-wipf".to_string(),
                SblVariant::Zhang => "sbl-zhang".to_string(),
            },
            SolverSpec::Sissy { options } => {
                if options.l1_ratio == 0.0 {
                    "vb-sccd".to_string()
                } else {
                    "sissy".to_string()
                }
            }
            SolverSpec::TrapMusic { .. } => "trap-music".to_string(),
        }
    }
}

/// Shape and validity checks shared by every solver entry point.
pub(crate) fn check_inputs(lf: &LeadField, y: &Measurements) -> Result<()> {
    lf.validate()?;
    y.validate()?;
    if lf.n_electrodes() != y.n_channels() {
        return Err(Error::Data(format!(
            "lead field has {} electrodes but measurements have {} channels",
            lf.n_electrodes(),
            y.n_channels()
        )));
    }
    Ok(())
}

/// Runs the solver a [`SolverSpec`] describes.
pub fn solve(spec: &SolverSpec, lf: &LeadField, y: &Measurements) -> Result<SourceEstimate> {
    match spec {
        SolverSpec::Mne { options } => mne_solve(lf, y, options),
        SolverSpec::Sloreta { alpha } => sloreta_solve(lf, y, alpha),
        SolverSpec::Focuss { options } => focuss_solve(lf, y, options),
        SolverSpec::Mxne { options } => mxne_solve(lf, y, options),
        SolverSpec::Irmxne { options } => irmxne_solve(lf, y, options),
        SolverSpec::Sbl { options } => sbl_solve(lf, y, options),
        SolverSpec::Sissy { options } => crate::scanners::sissy_solve(lf, y, options),
        SolverSpec::TrapMusic { options } => crate::scanners::trap_music_solve(lf, y, options),
    }
}
