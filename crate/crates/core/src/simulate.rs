//! Synthetic data generation: ERP waveforms, colored noise, scenario
//! sampling under depth/distance constraints, and forward projection to
//! scalp measurements.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    LeadField, Measurements, NoiseKind, NoiseSpec, OrientationModel, Scenario, SourceSpace,
    Validate,
};
use crate::rng::stream;

/// Attempts before constraint sampling gives up.
pub const REJECTION_LIMIT: usize = 1_000_000;

/// One Gaussian component of an event-related potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErpPeak {
    pub latency_ms: f64,
    /// Full width at half maximum.
    pub width_ms: f64,
    pub amplitude: f64,
}

/// Sum-of-Gaussians ERP template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpSpec {
    pub peaks: Vec<ErpPeak>,
}

impl Default for ErpSpec {
    /// Late positive complex: peaks at 500/300/200 ms, FWHM 200/300/100 ms,
    /// amplitudes 1.0/1.2/0.6.
    fn default() -> Self {
        ErpSpec {
            peaks: vec![
                ErpPeak {
                    latency_ms: 500.0,
                    width_ms: 200.0,
                    amplitude: 1.0,
                },
                ErpPeak {
                    latency_ms: 300.0,
                    width_ms: 300.0,
                    amplitude: 1.2,
                },
                ErpPeak {
                    latency_ms: 200.0,
                    width_ms: 100.0,
                    amplitude: 0.6,
                },
            ],
        }
    }
}

/// Samples the ERP template at `fs` Hz for `n_samples` samples starting at
/// t = 0. Widths are FWHM: sigma = width / (2 sqrt(2 ln 2)).
pub fn erp_waveform(spec: &ErpSpec, fs: f64, n_samples: usize) -> Array1<f64> {
    let fwhm_to_sigma = 2.0 * (2.0 * 2.0f64.ln()).sqrt();
    Array1::from_shape_fn(n_samples, |t| {
        let t_ms = t as f64 / fs * 1000.0;
        spec.peaks
            .iter()
            .map(|p| {
                let sigma = p.width_ms / fwhm_to_sigma;
                p.amplitude * (-((t_ms - p.latency_ms) / sigma).powi(2) / 2.0).exp()
            })
            .sum()
    })
}

fn scale_to_peak(mut data: Array2<f64>, amplitude: f64) -> Array2<f64> {
    for mut row in data.rows_mut() {
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let s = amplitude / peak;
            row.mapv_inplace(|v| v * s);
        }
    }
    data
}

/// Power-spectrum exponent for the 1/f^beta families.
fn spectral_exponent(kind: NoiseKind) -> Option<f64> {
    match kind {
        NoiseKind::Pink => Some(1.0),
        NoiseKind::Brown => Some(2.0),
        _ => None,
    }
}

/// Multichannel noise with per-channel peak amplitude scaled to `amplitude`.
///
/// White noise is i.i.d. Gaussian. Pink and brown noise shape white
/// spectra in the frequency domain (amplitude falling as f^(-1/2) and
/// f^(-1) respectively) with a Hermitian-symmetric spectrum and the DC bin
/// zeroed. Channel `c` draws from the substream `(seed, c)`, so channels
/// are independent and the matrix is identical however the loop runs.
pub fn gen_noise(
    kind: NoiseKind,
    n_channels: usize,
    n_samples: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if matches!(kind, NoiseKind::SensorPercent) {
        return Err(Error::Config(
            "sensor noise is relative to a clean signal; use add_sensor_noise".to_string(),
        ));
    }
    if amplitude < 0.0 || !amplitude.is_finite() {
        return Err(Error::Config(format!("noise amplitude {amplitude} must be finite and >= 0")));
    }
    let mut out = Array2::zeros((n_channels, n_samples));
    if matches!(kind, NoiseKind::None) || amplitude == 0.0 || n_samples == 0 {
        return Ok(out);
    }
    match kind {
        NoiseKind::White => {
            for c in 0..n_channels {
                let mut rng = stream(seed, &[c as u64]);
                for v in out.row_mut(c) {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
        NoiseKind::Pink | NoiseKind::Brown => {
            if n_samples < 2 {
                return Err(Error::Config(format!(
                    "{n_samples} sample(s) cannot carry a shaped spectrum"
                )));
            }
            let beta = spectral_exponent(kind).expect("colored kinds have an exponent");
            let fft = FftPlanner::new().plan_fft_inverse(n_samples);
            for c in 0..n_channels {
                let mut rng = stream(seed, &[c as u64]);
                let mut spectrum = vec![Complex::new(0.0, 0.0); n_samples];
                let half = n_samples / 2;
                for k in 1..=half {
                    let gain = (k as f64).powf(-beta / 2.0);
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    if n_samples % 2 == 0 && k == half {
                        spectrum[k] = Complex::new(gain * re, 0.0);
                    } else {
                        spectrum[k] = Complex::new(gain * re, gain * im);
                        spectrum[n_samples - k] = spectrum[k].conj();
                    }
                }
                fft.process(&mut spectrum);
                for (v, s) in out.row_mut(c).iter_mut().zip(&spectrum) {
                    *v = s.re;
                }
            }
        }
        NoiseKind::None | NoiseKind::SensorPercent => unreachable!(),
    }
    Ok(scale_to_peak(out, amplitude))
}

/// Adds white Gaussian sensor noise with standard deviation
/// `percent / 100 * max |data|`.
pub fn add_sensor_noise(data: &Array2<f64>, percent: f64, seed: u64) -> Result<Array2<f64>> {
    if percent < 0.0 || !percent.is_finite() {
        return Err(Error::Config(format!(
            "sensor noise percentage {percent} must be finite and >= 0"
        )));
    }
    let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let std = percent / 100.0 * peak;
    let mut out = data.clone();
    if std == 0.0 {
        return Ok(out);
    }
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = stream(seed, &[c as u64]);
        for v in row.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += std * g;
        }
    }
    Ok(out)
}

/// Least-squares slope of the log10 mean periodogram against log10
/// frequency bin, DC and Nyquist excluded. Pink noise fits near -1, brown
/// near -2, white near 0.
pub fn spectral_slope(data: &Array2<f64>) -> f64 {
    let n = data.ncols();
    assert!(n >= 8, "need at least 8 samples to fit a spectral slope");
    let fft = FftPlanner::new().plan_fft_forward(n);
    let half = n / 2;
    let mut power = vec![0.0f64; half];
    for row in data.rows() {
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        for k in 1..half {
            power[k] += buf[k].norm_sqr();
        }
    }
    let points: Vec<(f64, f64)> = (1..half)
        .filter(|&k| power[k] > 0.0)
        .map(|k| ((k as f64).log10(), (power[k] / data.nrows() as f64).log10()))
        .collect();
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Projects a scenario through a lead field and applies its noise model.
pub fn simulate_measurements(lf: &LeadField, scenario: &Scenario) -> Result<Measurements> {
    scenario.validate()?;
    scenario.check_against(&lf.source_space)?;
    let n = lf.n_electrodes();
    let t = scenario.n_samples();
    let dof = lf.dof();
    let mut clean = Array2::zeros((n, t));
    for (a, &j) in scenario.active_indices.iter().enumerate() {
        let waveform = scenario.waveforms.row(a);
        let moment: [f64; 3] = match &scenario.active_orientations {
            Some(dirs) => dirs[a],
            None => [1.0, 0.0, 0.0],
        };
        for c in 0..dof {
            let weight = if dof == 1 { 1.0 } else { moment[c] };
            if weight == 0.0 {
                continue;
            }
            let col = lf.gain.column(j * dof + c);
            for (e, &g) in col.iter().enumerate() {
                let gw = g * weight;
                for (s, &w) in waveform.iter().enumerate() {
                    clean[[e, s]] += gw * w;
                }
            }
        }
    }
    let data = match scenario.noise.kind {
        NoiseKind::None => clean,
        NoiseKind::SensorPercent => {
            add_sensor_noise(&clean, scenario.noise.amplitude, scenario.seed)?
        }
        kind => {
            let noise = gen_noise(kind, n, t, scenario.noise.amplitude, scenario.seed)?;
            clean + noise
        }
    };
    let m = Measurements {
        data,
        fs: scenario.fs,
        provenance: format!(
            "simulated: {} active source(s), noise {:?} amplitude {}, seed {}",
            scenario.n_active(),
            scenario.noise.kind,
            scenario.noise.amplitude,
            scenario.seed
        ),
    };
    m.validate()?;
    Ok(m)
}

/// Depth shell a subset of sampled sources must fall in, with an optional
/// within-shell proximity cap (for clustered deep sources).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBand {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_radius_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_radius_mm: Option<f64>,
    /// Maximum pairwise distance between sources of this band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pair_distance_mm: Option<f64>,
}

/// Constraint set one simulated trial must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseSpec {
    pub name: String,
    pub bands: Vec<DepthBand>,
    /// Minimum pairwise distance across all sampled sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pair_distance_mm: Option<f64>,
}

impl TestCaseSpec {
    pub fn n_sources(&self) -> usize {
        self.bands.iter().map(|b| b.count).sum()
    }

    /// Looks up one of the named stock cases (tc-i .. tc-iv).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tc-i" => Some(Self::single_source()),
            "tc-ii" => Some(Self::three_shallow()),
            "tc-iii" => Some(Self::five_mixed()),
            "tc-iv" => Some(Self::seven_clustered()),
            _ => None,
        }
    }

    /// Single source anywhere in the grid.
    pub fn single_source() -> Self {
        TestCaseSpec {
            name: "tc-i".to_string(),
            bands: vec![DepthBand {
                count: 1,
                min_radius_mm: None,
                max_radius_mm: None,
                max_pair_distance_mm: None,
            }],
            min_pair_distance_mm: None,
        }
    }

    /// Three well-separated shallow sources: pairwise >= 80 mm, radius >= 90 mm.
    pub fn three_shallow() -> Self {
        TestCaseSpec {
            name: "tc-ii".to_string(),
            bands: vec![DepthBand {
                count: 3,
                min_radius_mm: Some(90.0),
                max_radius_mm: None,
                max_pair_distance_mm: None,
            }],
            min_pair_distance_mm: Some(80.0),
        }
    }

    /// Five mixed-depth sources: three deep (<= 60 mm), one intermediate
    /// (60..80 mm), one shallow (>= 70 mm), pairwise >= 70 mm.
    pub fn five_mixed() -> Self {
        TestCaseSpec {
            name: "tc-iii".to_string(),
            bands: vec![
                DepthBand {
                    count: 3,
                    min_radius_mm: None,
                    max_radius_mm: Some(60.0),
                    max_pair_distance_mm: None,
                },
                DepthBand {
                    count: 1,
                    min_radius_mm: Some(60.0),
                    max_radius_mm: Some(80.0),
                    max_pair_distance_mm: None,
                },
                DepthBand {
                    count: 1,
                    min_radius_mm: Some(70.0),
                    max_radius_mm: None,
                    max_pair_distance_mm: None,
                },
            ],
            min_pair_distance_mm: Some(70.0),
        }
    }

    /// Seven sources: four clustered deep (pairwise <= 55 mm), one
    /// intermediate (60..70 mm), two shallow (>= 70 mm).
    pub fn seven_clustered() -> Self {
        TestCaseSpec {
            name: "tc-iv".to_string(),
            bands: vec![
                DepthBand {
                    count: 4,
                    min_radius_mm: None,
                    max_radius_mm: Some(55.0),
                    max_pair_distance_mm: Some(55.0),
                },
                DepthBand {
                    count: 1,
                    min_radius_mm: Some(60.0),
                    max_radius_mm: Some(70.0),
                    max_pair_distance_mm: None,
                },
                DepthBand {
                    count: 2,
                    min_radius_mm: Some(70.0),
                    max_radius_mm: None,
                    max_pair_distance_mm: None,
                },
            ],
            min_pair_distance_mm: None,
        }
    }
}

fn band_satisfied(ss: &SourceSpace, band: &DepthBand, chosen: &[usize]) -> bool {
    if let Some(cap) = band.max_pair_distance_mm {
        for (a, &i) in chosen.iter().enumerate() {
            for &j in &chosen[a + 1..] {
                if ss.pair_distance(i, j) > cap {
                    return false;
                }
            }
        }
    }
    true
}

/// Rejection-samples a ground-truth scenario satisfying `tc` on `ss`.
///
/// All sources share the ERP template; orientations are uniform on the unit
/// sphere for free-orientation spaces. Deterministic in `seed`.
pub fn sample_scenario(
    tc: &TestCaseSpec,
    ss: &SourceSpace,
    erp: &ErpSpec,
    fs: f64,
    n_samples: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Scenario> {
    if tc.n_sources() == 0 {
        return Err(Error::Config(format!("test case {} has no sources", tc.name)));
    }
    let pools: Vec<Vec<usize>> = tc
        .bands
        .iter()
        .map(|band| {
            (0..ss.n_sources())
                .filter(|&i| {
                    let r = ss.depth_radius(i);
                    band.min_radius_mm.is_none_or(|lo| r >= lo)
                        && band.max_radius_mm.is_none_or(|hi| r <= hi)
                })
                .collect()
        })
        .collect();
    for (b, pool) in pools.iter().enumerate() {
        if pool.len() < tc.bands[b].count {
            return Err(Error::Degenerate(format!(
                "test case {}: band {b} needs {} sources but only {} grid points qualify",
                tc.name,
                tc.bands[b].count,
                pool.len()
            )));
        }
    }

    let mut rng = stream(seed, &[0x5ce0]);
    let mut attempts = 0usize;
    let indices = 'search: loop {
        attempts += 1;
        if attempts > REJECTION_LIMIT {
            return Err(Error::Degenerate(format!(
                "test case {}: no admissible source set within {REJECTION_LIMIT} attempts",
                tc.name
            )));
        }
        let mut all: Vec<usize> = Vec::with_capacity(tc.n_sources());
        for (band, pool) in tc.bands.iter().zip(&pools) {
            let mut chosen: Vec<usize> = Vec::with_capacity(band.count);
            // Draw without replacement, also excluding earlier bands.
            let mut available: Vec<usize> =
                pool.iter().copied().filter(|i| !all.contains(i)).collect();
            if available.len() < band.count {
                continue 'search;
            }
            available.shuffle(&mut rng);
            chosen.extend(available.into_iter().take(band.count));
            if !band_satisfied(ss, band, &chosen) {
                continue 'search;
            }
            all.extend(chosen);
        }
        if let Some(min_pair) = tc.min_pair_distance_mm {
            for (a, &i) in all.iter().enumerate() {
                for &j in &all[a + 1..] {
                    if ss.pair_distance(i, j) < min_pair {
                        continue 'search;
                    }
                }
            }
        }
        all.sort_unstable();
        break all;
    };

    let active_orientations = match ss.orientations {
        OrientationModel::Fixed(_) => None,
        OrientationModel::Free => Some(
            indices
                .iter()
                .map(|_| {
                    let v: [f64; 3] = UnitSphere.sample(&mut rng);
                    v
                })
                .collect(),
        ),
    };
    let waveform = erp_waveform(erp, fs, n_samples);
    let mut waveforms = Array2::zeros((indices.len(), n_samples));
    for mut row in waveforms.rows_mut() {
        row.assign(&waveform);
    }
    let scenario = Scenario {
        active_indices: indices,
        active_orientations,
        waveforms,
        fs,
        noise,
        seed: rng.random(),
    };
    scenario.validate()?;
    Ok(scenario)
}
