//! Empirical Wasserstein-1 distances and exponential-rate fitting.
//!
//! 1D Euclidean distances are exact (sorted matching); 1D torus distances use
//! the exact circular transport formula (the optimal rotation of the sorted
//! matching, found through the weighted median of the CDF difference); higher
//! dimensions use a sliced estimate with seeded directions, or coordinate
//! projections on the torus.

use crate::exec;
use crate::rng::ParticleRng;
use crate::sde::{ParticleEnsemble, TAU};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty ensemble")]
    Empty,
    #[error("ensembles live on different spaces")]
    SpaceMismatch,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{0}")]
    DegenerateFit(String),
}

/// Number of random directions for the sliced estimate.
pub const SLICED_DIRECTIONS: usize = 64;
const SLICE_SEED_SALT: u64 = 0x51ed_f00d_2288_aa11;

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Deterministic resample of a sorted vector down to `m` evenly spaced order
/// statistics.
fn resample_sorted(v: &[f64], m: usize) -> Vec<f64> {
    let n = v.len();
    if n == m {
        return v.to_vec();
    }
    (0..m).map(|i| v[i * n / m]).collect()
}

/// Exact W1 between two equal-weight 1D samples on the line.
pub fn w1_line(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sa = sorted(a.to_vec());
    let sb = sorted(b.to_vec());
    let m = sa.len().min(sb.len());
    let sa = resample_sorted(&sa, m);
    let sb = resample_sorted(&sb, m);
    Ok(sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / m as f64)
}

/// Exact W1 between two equal-weight samples on the circle `[0, 2π)`.
///
/// With `G(t) = F_a(t) - F_b(t)` piecewise constant, the circular cost is
/// `min_c ∫ |G - c| dt`, attained at the weighted median of the levels of G.
pub fn w1_circle(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sa = sorted(a.to_vec());
    let sb = sorted(b.to_vec());
    let m = sa.len().min(sb.len());
    let sa = resample_sorted(&sa, m);
    let sb = resample_sorted(&sb, m);
    let w = 1.0 / m as f64;

    // Merge events; build segments (length, level of G on the segment).
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * m);
    for &x in &sa {
        events.push((x, w));
    }
    for &y in &sb {
        events.push((y, -w));
    }
    events.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let mut segments: Vec<(f64, f64)> = Vec::with_capacity(events.len() + 1);
    let mut level = 0.0;
    let mut prev = 0.0;
    for &(x, jump) in &events {
        if x > prev {
            segments.push((x - prev, level));
        }
        level += jump;
        prev = x;
    }
    if TAU > prev {
        segments.push((TAU - prev, level));
    }

    // Weighted median of levels, weights = segment lengths.
    let mut by_level = segments.clone();
    by_level.sort_by(|p, q| p.1.partial_cmp(&q.1).unwrap());
    let total: f64 = by_level.iter().map(|s| s.0).sum();
    let mut acc = 0.0;
    let mut median = by_level.last().unwrap().1;
    for &(len, lvl) in &by_level {
        acc += len;
        if acc >= 0.5 * total {
            median = lvl;
            break;
        }
    }
    Ok(segments
        .iter()
        .map(|&(len, lvl)| len * (lvl - median).abs())
        .sum())
}

fn project(e: &ParticleEnsemble, dir: &[f64]) -> Vec<f64> {
    (0..e.len())
        .map(|i| {
            e.position(i)
                .iter()
                .zip(dir)
                .map(|(x, u)| x * u)
                .sum::<f64>()
        })
        .collect()
}

fn seeded_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count);
    for s in 0..count {
        let mut rng = ParticleRng::new(SLICE_SEED_SALT, s as u64);
        loop {
            let mut v = vec![0.0; dim];
            rng.fill_standard_normals(&mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                v.iter_mut().for_each(|x| *x /= norm);
                dirs.push(v);
                break;
            }
        }
    }
    dirs
}

/// Empirical W1 between two ensembles.
///
/// Exact in one dimension (line or circle); sliced with
/// [`SLICED_DIRECTIONS`] fixed seeded directions in higher Euclidean
/// dimension; averaged over coordinate projections on the torus.
pub fn w1(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.space.is_torus() != b.space.is_torus() {
        return Err(MetricsError::SpaceMismatch);
    }
    let d = a.dim();
    let torus = a.space.is_torus();
    if d == 1 {
        return if torus {
            w1_circle(&a.coordinate(0), &b.coordinate(0))
        } else {
            w1_line(&a.coordinate(0), &b.coordinate(0))
        };
    }
    if torus {
        let per_axis: Vec<f64> = (0..d)
            .map(|axis| w1_circle(&a.coordinate(axis), &b.coordinate(axis)))
            .collect::<Result<_, _>>()?;
        return Ok(per_axis.iter().sum::<f64>() / d as f64);
    }
    let dirs = seeded_directions(d, SLICED_DIRECTIONS);
    let vals = exec::ordered_map(&dirs, |dir| {
        w1_line(&project(a, dir), &project(b, dir)).expect("non-empty projections")
    });
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// W1 plus a bootstrap standard error over particle resampling.
pub fn w1_with_bootstrap(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64), MetricsError> {
    let base = w1(a, b)?;
    if reps < 2 {
        return Ok((base, 0.0));
    }
    let reps_idx: Vec<usize> = (0..reps).collect();
    let vals: Vec<f64> = exec::ordered_map(&reps_idx, |&r| {
        let mut rng = ParticleRng::new(seed ^ 0xb007_57a9, r as u64);
        let ra = resample_ensemble(a, &mut rng);
        let rb = resample_ensemble(b, &mut rng);
        w1(&ra, &rb).expect("bootstrap resample is non-empty")
    });
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((base, var.sqrt()))
}

fn resample_ensemble(e: &ParticleEnsemble, rng: &mut ParticleRng) -> ParticleEnsemble {
    let n = e.len();
    let d = e.dim();
    let mut positions = Vec::with_capacity(n * d);
    for _ in 0..n {
        let j = (rng.next_u64() % n as u64) as usize;
        positions.extend_from_slice(e.position(j));
    }
    let mut out = ParticleEnsemble::from_positions(d, positions, e.space);
    out.t = e.t;
    out
}

/// A time series of W1 distances with per-point standard errors.
#[derive(Debug, Clone)]
pub struct RateSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub ses: Vec<f64>,
}

/// Result of a log-linear decay fit `value ≈ C e^{-rate t}`.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// True when noise-floor points were dropped from the requested window.
    pub shrunk: bool,
}

/// Fit an exponential decay rate on `window = (t_min, t_max)`.
///
/// Points whose value is below 3 standard errors (the sampling noise floor)
/// are dropped; if fewer than 4 points survive the fit is refused.
pub fn decay_rate(series: &RateSeries, window: (f64, f64)) -> Result<RateFit, MetricsError> {
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut shrunk = false;
    for ((&t, &v), &se) in series
        .times
        .iter()
        .zip(&series.values)
        .zip(&series.ses)
    {
        if t < window.0 || t > window.1 {
            continue;
        }
        if v <= 0.0 || v <= 3.0 * se {
            shrunk = true;
            continue;
        }
        ts.push(t);
        logs.push(v.ln());
    }
    if ts.len() < 4 {
        return Err(MetricsError::DegenerateFit(format!(
            "only {} usable points in the window; the series sits at the sampling \
             noise floor (try a larger ensemble or a shorter window)",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / n;
    let lbar = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        sxx += (t - tbar) * (t - tbar);
        sxy += (t - tbar) * (l - lbar);
        syy += (l - lbar) * (l - lbar);
    }
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateFit("window has zero width".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        rate: -slope,
        prefactor: (lbar - slope * tbar).exp(),
        r_squared: r2,
        window: (ts[0], *ts.last().unwrap()),
        shrunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::Space;

    fn ens(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::from_positions(1, xs.to_vec(), Space::Euclidean)
    }

    fn tens(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::from_positions(1, xs.to_vec(), Space::Torus { beta: 1.0 })
    }

    #[test]
    fn identical_ensembles_have_zero_distance() {
        let a = ens(&[0.3, -1.0, 2.0]);
        assert_eq!(w1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_give_translation_distance() {
        let a = ens(&[0.0; 50]);
        let b = ens(&[1.0; 50]);
        assert_eq!(w1(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn translated_gaussians_match_analytic_w1() {
        let m = 0.7;
        let a = ParticleEnsemble::gaussian(100_000, 1, &[0.0], 1.0, 1);
        let b = ParticleEnsemble::gaussian(100_000, 1, &[m], 1.0, 2);
        let d = w1(&a, &b).unwrap();
        assert!((d - m).abs() < 0.02, "W1 {d}, expected {m}");
    }

    #[test]
    fn exact_translation_property() {
        let a = ens(&[0.1, 0.5, -0.3, 2.2, 1.1]);
        let c = 0.37;
        let shifted: Vec<f64> = a.positions().iter().map(|x| x + c).collect();
        let b = ens(&shifted);
        assert!((w1(&a, &b).unwrap() - c).abs() < 1e-15);
    }

    #[test]
    fn symmetry_and_triangle_inequality() {
        let mut rng = ParticleRng::new(77, 0);
        for _ in 0..20 {
            let mut xs = vec![0.0; 64];
            let mut ys = vec![0.0; 64];
            let mut zs = vec![0.0; 64];
            rng.fill_standard_normals(&mut xs);
            rng.fill_standard_normals(&mut ys);
            rng.fill_standard_normals(&mut zs);
            ys.iter_mut().for_each(|y| *y = *y * 2.0 + 0.5);
            zs.iter_mut().for_each(|z| *z = *z * 0.5 - 1.0);
            let (a, b, c) = (ens(&xs), ens(&ys), ens(&zs));
            let ab = w1(&a, &b).unwrap();
            let ba = w1(&b, &a).unwrap();
            assert_eq!(ab, ba);
            let ac = w1(&a, &c).unwrap();
            let cb = w1(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn circle_distance_of_two_points() {
        // Points at 0.2 and 6.0: the short way around is 2π - 5.8.
        let a = tens(&[0.2; 10]);
        let b = tens(&[6.0; 10]);
        let expect = TAU - 5.8;
        assert!((w1(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn circle_beats_naive_line_matching() {
        // Mass near 0 vs mass near 2π: circular distance is small.
        let a = tens(&[0.05, 0.1, 0.15]);
        let b = tens(&[TAU - 0.05, TAU - 0.1, TAU - 0.15]);
        let d = w1(&a, &b).unwrap();
        assert!(d < 0.35, "circular W1 {d}");
    }

    #[test]
    fn sliced_w1_detects_translation() {
        let n = 20_000;
        let a = ParticleEnsemble::gaussian(n, 2, &[0.0, 0.0], 1.0, 11);
        let b = ParticleEnsemble::gaussian(n, 2, &[1.0, 0.0], 1.0, 12);
        // Sliced W1 of a unit translation is E|u·e1| = 2/π for random directions.
        let d = w1(&a, &b).unwrap();
        assert!((d - 2.0 / std::f64::consts::PI).abs() < 0.05, "sliced {d}");
    }

    #[test]
    fn unequal_sizes_resample_to_smaller() {
        let a = ens(&vec![0.0; 1000]);
        let b = ens(&vec![1.0; 100]);
        assert!((w1(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_exponential_recovers_rate() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        let values: Vec<f64> = times.iter().map(|t| 2.0 * (-0.8 * t).exp()).collect();
        let ses = vec![0.0; times.len()];
        let fit = decay_rate(
            &RateSeries {
                times,
                values,
                ses,
            },
            (0.0, 10.0),
        )
        .unwrap();
        assert!((fit.rate - 0.8).abs() < 1e-6);
        assert!((fit.prefactor - 2.0).abs() < 1e-6);
        assert!(fit.r_squared > 0.999999);
        assert!(!fit.shrunk);
    }

    #[test]
    fn noise_floor_points_are_dropped() {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.25).collect();
        let floor = 0.05;
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-1.0 * t).exp() + floor)
            .collect();
        // Mark the tail as pure noise via large standard errors.
        let ses: Vec<f64> = values
            .iter()
            .map(|&v| if v < 2.0 * floor { v } else { 1e-4 })
            .collect();
        let fit = decay_rate(
            &RateSeries {
                times,
                values,
                ses,
            },
            (0.0, 10.0),
        )
        .unwrap();
        assert!(fit.shrunk);
        assert!((fit.rate - 1.0).abs() < 0.2, "rate {}", fit.rate);
    }

    #[test]
    fn all_noise_series_is_refused() {
        let series = RateSeries {
            times: vec![0.0, 1.0, 2.0, 3.0],
            values: vec![0.01; 4],
            ses: vec![0.02; 4],
        };
        assert!(decay_rate(&series, (0.0, 3.0)).is_err());
    }
}
