//! Scoring of source estimates against simulated ground truth: collapsed
//! amplitude maps, local peak extraction, success and hit/false rates, the
//! A' detection statistic, localization error, and spatial dispersion.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SourceSpace;

/// Knobs shared by every metric of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    /// Adjacency levels a peak may sit from a true source and still count.
    pub adjacency_levels: usize,
    /// Peaks below this fraction of the map maximum are ignored.
    pub peak_floor_fraction: f64,
    /// Sample range `[start, end)` the amplitude collapse runs over; `None`
    /// means the full record.
    pub collapse_window: Option<(usize, usize)>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            adjacency_levels: 2,
            peak_floor_fraction: 0.1,
            collapse_window: None,
        }
    }
}

/// Collapses a `dof*M x T` amplitude matrix to one nonnegative value per
/// source: the RMS over the window of the per-sample Euclidean norm across
/// the source's components.
pub fn collapse_amplitude(
    amplitudes: &Array2<f64>,
    dof: usize,
    window: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    if dof == 0 || amplitudes.nrows() % dof != 0 {
        return Err(Error::Config(format!(
            "{} amplitude rows do not split into dof {dof} blocks",
            amplitudes.nrows()
        )));
    }
    if window.is_empty() || window.end > amplitudes.ncols() {
        return Err(Error::Config(format!(
            "collapse window {window:?} is empty or exceeds {} samples",
            amplitudes.ncols()
        )));
    }
    let n_sources = amplitudes.nrows() / dof;
    let len = window.len() as f64;
    Ok((0..n_sources)
        .map(|j| {
            let mut acc = 0.0;
            for t in window.clone() {
                let mut norm_sq = 0.0;
                for c in 0..dof {
                    let v = amplitudes[[j * dof + c, t]];
                    norm_sq += v * v;
                }
                acc += norm_sq;
            }
            (acc / len).sqrt()
        })
        .collect())
}

/// Indices whose map value strictly exceeds every level-1 neighbor and
/// reaches `floor_fraction` of the map maximum. Plateaus of equal maxima
/// yield no peak.
pub fn local_peaks(map: &[f64], adjacency: &[Vec<usize>], floor_fraction: f64) -> Vec<usize> {
    assert_eq!(map.len(), adjacency.len(), "map and adjacency disagree");
    let max = map.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = floor_fraction * max;
    (0..map.len())
        .filter(|&i| map[i] >= floor && adjacency[i].iter().all(|&j| map[i] > map[j]))
        .collect()
}

/// Hop distance from each of `from` to every node, capped at `levels`
/// (entries beyond the cap are `usize::MAX`).
fn hop_distances(ss: &SourceSpace, from: usize, levels: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; ss.n_sources()];
    dist[from] = 0;
    let mut frontier = vec![from];
    for level in 1..=levels {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &ss.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = level;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Per-true-source detection: true when some peak lies within
/// `levels` adjacency hops of it.
pub fn success_per_source(
    truth: &[usize],
    peaks: &[usize],
    ss: &SourceSpace,
    levels: usize,
) -> Vec<bool> {
    truth
        .iter()
        .map(|&t| {
            let dist = hop_distances(ss, t, levels);
            peaks.iter().any(|&p| dist[p] != usize::MAX)
        })
        .collect()
}

/// Fraction of true sources detected within `levels` hops.
pub fn success_rate(truth: &[usize], peaks: &[usize], ss: &SourceSpace, levels: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = success_per_source(truth, peaks, ss, levels)
        .iter()
        .filter(|&&h| h)
        .count();
    hits as f64 / truth.len() as f64
}

/// Hit rate and false rate under greedy nearest-first one-to-one matching.
///
/// Pairs (true source, peak) within `levels` hops are matched in order of
/// hop distance (ties by true index, then peak index); each side matches at
/// most once. Hit rate is matched truths over truth count, false rate is
/// unmatched peaks over `max(1, peak count)`.
pub fn hit_false_rates(
    truth: &[usize],
    peaks: &[usize],
    ss: &SourceSpace,
    levels: usize,
) -> (f64, f64) {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, &t) in truth.iter().enumerate() {
        let dist = hop_distances(ss, t, levels);
        for (pi, &p) in peaks.iter().enumerate() {
            if dist[p] != usize::MAX {
                pairs.push((dist[p], ti, pi));
            }
        }
    }
    pairs.sort_unstable();
    let mut truth_used = vec![false; truth.len()];
    let mut peak_used = vec![false; peaks.len()];
    let mut matched = 0usize;
    for (_, ti, pi) in pairs {
        if !truth_used[ti] && !peak_used[pi] {
            truth_used[ti] = true;
            peak_used[pi] = true;
            matched += 1;
        }
    }
    let hit_rate = if truth.is_empty() {
        0.0
    } else {
        matched as f64 / truth.len() as f64
    };
    let false_rate = (peaks.len() - matched) as f64 / (peaks.len().max(1)) as f64;
    (hit_rate, false_rate)
}

/// Detection statistic `A' = ((HR - FR) + 1) / 2`; 1 is perfect, 0.5 is
/// chance level.
pub fn a_prime(hit_rate: f64, false_rate: f64) -> f64 {
    ((hit_rate - false_rate) + 1.0) / 2.0
}

/// Dipole localization error in mm: the symmetric average of (a) mean
/// distance from each true source to its nearest peak and (b) mean distance
/// from each peak to its nearest true source.
pub fn dle_mm(truth: &[usize], peaks: &[usize], ss: &SourceSpace) -> Result<f64> {
    if truth.is_empty() || peaks.is_empty() {
        return Err(Error::Degenerate(
            "localization error needs at least one true source and one peak".to_string(),
        ));
    }
    let nearest = |from: usize, to: &[usize]| {
        to.iter()
            .map(|&j| ss.pair_distance(from, j))
            .fold(f64::INFINITY, f64::min)
    };
    let forward: f64 =
        truth.iter().map(|&t| nearest(t, peaks)).sum::<f64>() / truth.len() as f64;
    let backward: f64 =
        peaks.iter().map(|&p| nearest(p, truth)).sum::<f64>() / peaks.len() as f64;
    Ok(0.5 * (forward + backward))
}

/// Spatial dispersion in mm: amplitude-weighted RMS distance of the map to
/// the nearest true source, `sqrt(sum d_j^2 s_j^2 / sum s_j^2)`.
pub fn spatial_dispersion_mm(map: &[f64], truth: &[usize], ss: &SourceSpace) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Degenerate(
            "spatial dispersion needs at least one true source".to_string(),
        ));
    }
    assert_eq!(map.len(), ss.n_sources(), "map and source space disagree");
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &s) in map.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let d = truth
            .iter()
            .map(|&t| ss.pair_distance(j, t))
            .fold(f64::INFINITY, f64::min);
        num += d * d * s * s;
        den += s * s;
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "spatial dispersion of an all-zero map is undefined".to_string(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Everything the campaign records about one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateScores {
    pub success_per_source: Vec<bool>,
    pub sr_mean: f64,
    pub hit_rate: f64,
    pub false_rate: f64,
    pub a_prime: f64,
    /// `None` when no peak crossed the floor.
    pub dle_mm: Option<f64>,
    /// `None` when the collapsed map is all zero.
    pub sd_mm: Option<f64>,
    pub n_peaks: usize,
}

/// Scores an amplitude matrix against the true active set.
pub fn score_estimate(
    amplitudes: &Array2<f64>,
    truth: &[usize],
    ss: &SourceSpace,
    cfg: &EvaluationConfig,
) -> Result<EstimateScores> {
    let window = match cfg.collapse_window {
        Some((a, b)) => a..b,
        None => 0..amplitudes.ncols(),
    };
    let map = collapse_amplitude(amplitudes, ss.dof(), window)?;
    let peaks = local_peaks(&map, &ss.adjacency, cfg.peak_floor_fraction);
    let per_source = success_per_source(truth, &peaks, ss, cfg.adjacency_levels);
    let sr_mean = success_rate(truth, &peaks, ss, cfg.adjacency_levels);
    let (hit_rate, false_rate) = hit_false_rates(truth, &peaks, ss, cfg.adjacency_levels);
    Ok(EstimateScores {
        sr_mean,
        hit_rate,
        false_rate,
        a_prime: a_prime(hit_rate, false_rate),
        dle_mm: dle_mm(truth, &peaks, ss).ok(),
        sd_mm: spatial_dispersion_mm(&map, truth, ss).ok(),
        n_peaks: peaks.len(),
        success_per_source: per_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OrientationModel;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    /// Straight line of sources 10 mm apart, chained adjacency.
    fn line_space(n: usize) -> SourceSpace {
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|i| [10.0 * i as f64 - 5.0 * n as f64, 0.0, 0.0])
            .collect();
        let adjacency = (0..n)
            .map(|i| {
                let mut a = Vec::new();
                if i > 0 {
                    a.push(i - 1);
                }
                if i + 1 < n {
                    a.push(i + 1);
                }
                a
            })
            .collect();
        SourceSpace {
            positions,
            orientations: OrientationModel::Free,
            head_radius: 500.0,
            grid_spacing: Some(10.0),
            adjacency,
        }
    }

    #[test]
    fn collapse_of_constant_block_is_its_norm() {
        // One source, dof 3, components (3, 4, 0) at every sample.
        let amplitudes = array![[3.0, 3.0], [4.0, 4.0], [0.0, 0.0]];
        let map = collapse_amplitude(&amplitudes, 3, 0..2).unwrap();
        assert_abs_diff_eq!(map[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn collapse_rejects_bad_windows_and_shapes() {
        let amplitudes = Array2::zeros((3, 4));
        assert!(collapse_amplitude(&amplitudes, 2, 0..4).is_err());
        assert!(collapse_amplitude(&amplitudes, 3, 2..2).is_err());
        assert!(collapse_amplitude(&amplitudes, 3, 0..5).is_err());
    }

    #[test]
    fn local_peaks_strictness_and_floor() {
        let ss = line_space(7);
        // Clear peak at 1, plateau at 3/4, sub-floor bump at 6.
        let map = [0.1, 1.0, 0.1, 0.5, 0.5, 0.0, 0.05];
        assert_eq!(local_peaks(&map, &ss.adjacency, 0.1), vec![1]);
        let zeros = [0.0; 7];
        assert!(local_peaks(&zeros, &ss.adjacency, 0.1).is_empty());
        let mut single = [0.0; 7];
        single[3] = 0.4;
        assert_eq!(local_peaks(&single, &ss.adjacency, 0.1), vec![3]);
    }

    #[test]
    fn success_counts_only_nearby_peaks() {
        let ss = line_space(9);
        // Truth at 4; peak at 6 is 2 hops away, peak at 8 is 4 hops away.
        assert_eq!(success_rate(&[4], &[6], &ss, 2), 1.0);
        assert_eq!(success_rate(&[4], &[8], &ss, 2), 0.0);
        assert_eq!(
            success_per_source(&[0, 4], &[5], &ss, 2),
            vec![false, true]
        );
    }

    #[test]
    fn hit_and_false_rates_match_hand_counts() {
        let ss = line_space(9);
        // One truth, two peaks, one matching: HR 1, FR 1/2.
        let (hr, fr) = hit_false_rates(&[4], &[4, 8], &ss, 2);
        assert_abs_diff_eq!(hr, 1.0);
        assert_abs_diff_eq!(fr, 0.5);
        // A peak matches at most one truth.
        let (hr, fr) = hit_false_rates(&[3, 5], &[4], &ss, 2);
        assert_abs_diff_eq!(hr, 0.5);
        assert_abs_diff_eq!(fr, 0.0);
        // No peaks at all.
        let (hr, fr) = hit_false_rates(&[4], &[], &ss, 2);
        assert_eq!((hr, fr), (0.0, 0.0));
    }

    #[test]
    fn a_prime_reference_points() {
        assert_abs_diff_eq!(a_prime(1.0, 0.0), 1.0);
        assert_abs_diff_eq!(a_prime(0.0, 0.0), 0.5);
        assert_abs_diff_eq!(a_prime(0.0, 1.0), 0.0);
    }

    #[test]
    fn dle_of_one_extra_peak_is_quarter_distance() {
        let ss = line_space(9);
        // Truth {4}, peaks {4, 8}: forward mean 0, backward mean d/2.
        let d = ss.pair_distance(4, 8);
        let dle = dle_mm(&[4], &[4, 8], &ss).unwrap();
        assert_abs_diff_eq!(dle, d / 4.0, epsilon = 1e-12);
        assert!(dle_mm(&[4], &[], &ss).is_err());
        assert!(dle_mm(&[], &[4], &ss).is_err());
    }

    #[test]
    fn spatial_dispersion_weighted_rms() {
        let ss = line_space(9);
        // Equal mass at the truth (d 0) and one source 10 mm away: sqrt(50).
        let mut map = vec![0.0; 9];
        map[4] = 1.0;
        map[5] = 1.0;
        let sd = spatial_dispersion_mm(&map, &[4], &ss).unwrap();
        assert_abs_diff_eq!(sd, 50.0f64.sqrt(), epsilon = 1e-12);
        assert!(spatial_dispersion_mm(&vec![0.0; 9], &[4], &ss).is_err());
    }

    #[test]
    fn score_estimate_on_perfect_recovery() {
        let ss = line_space(9);
        let mut amplitudes = Array2::zeros((27, 4));
        amplitudes[[4 * 3, 0]] = 2.0;
        amplitudes[[4 * 3 + 1, 1]] = 2.0;
        let scores = score_estimate(&amplitudes, &[4], &ss, &EvaluationConfig::default()).unwrap();
        assert_eq!(scores.n_peaks, 1);
        assert_abs_diff_eq!(scores.a_prime, 1.0);
        assert_abs_diff_eq!(scores.sr_mean, 1.0);
        assert_eq!(scores.dle_mm, Some(0.0));
        assert_eq!(scores.sd_mm, Some(0.0));
    }

    proptest! {
        #[test]
        fn a_prime_stays_in_unit_interval(hr in 0.0f64..=1.0, fr in 0.0f64..=1.0) {
            let v = a_prime(hr, fr);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn success_is_monotone_in_levels(truth in 0usize..9, peak in 0usize..9) {
            let ss = line_space(9);
            let mut prev = 0.0;
            for levels in 0..5 {
                let sr = success_rate(&[truth], &[peak], &ss, levels);
                prop_assert!(sr >= prev);
                prev = sr;
            }
        }

        #[test]
        fn spatial_dispersion_is_scale_invariant(scale in 0.001f64..1000.0) {
            let ss = line_space(9);
            let map = vec![0.0, 0.1, 0.0, 0.4, 1.0, 0.3, 0.0, 0.2, 0.0];
            let scaled: Vec<f64> = map.iter().map(|v| v * scale).collect();
            let a = spatial_dispersion_mm(&map, &[4], &ss).unwrap();
            let b = spatial_dispersion_mm(&scaled, &[4], &ss).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
