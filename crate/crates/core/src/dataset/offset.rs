//! Clock-offset estimation by normalised cross-correlation.
//!
//! Strain and the mean resistance change are resampled onto grids with the
//! logger's sampling interval. Every integer lag with enough overlap gets a
//! Pearson coefficient; the lag with the largest magnitude wins (so either
//! sign of gauge response is found) and is refined by a parabola through its
//! neighbours.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::sync::{check_channels, check_sorted, sampling_interval};
use super::{DatasetError, MechanicalSample, ResistanceSample};

const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    /// Seconds to add to the mechanical clock to reach the logger clock.
    pub offset: f64,
    /// Pearson coefficient at the chosen lag; negative for an inverse response.
    pub correlation: f64,
}

pub fn estimate_offset(mech: &[MechanicalSample], res: &[ResistanceSample]) -> Result<f64, DatasetError> {
    estimate_offset_detailed(mech, res).map(|e| e.offset)
}

pub fn estimate_offset_detailed(
    mech: &[MechanicalSample],
    res: &[ResistanceSample],
) -> Result<OffsetEstimate, DatasetError> {
    if mech.len() < MIN_SAMPLES || res.len() < MIN_SAMPLES {
        return Err(DatasetError::InsufficientVariation);
    }
    check_sorted(mech.iter().map(|m| m.time), "mechanical")?;
    check_sorted(res.iter().map(|r| r.t), "resistance")?;
    let channels = check_channels(res)?;
    if channels == 0 {
        return Err(DatasetError::InsufficientVariation);
    }
    let step = sampling_interval(res.iter().map(|r| r.t)).ok_or(DatasetError::InsufficientVariation)?;

    let baseline = &res[0].resistances;
    let change: Vec<(f64, f64)> = res
        .iter()
        .map(|r| {
            let d: f64 = r.resistances.iter().zip(baseline).map(|(a, b)| a - b).sum();
            (r.t, d / channels as f64)
        })
        .collect();
    let strain: Vec<(f64, f64)> = mech.iter().map(|m| (m.time, m.strain)).collect();

    let x = resample(&strain, step);
    let y = resample(&change, step);
    if x.len() < MIN_SAMPLES || y.len() < MIN_SAMPLES {
        return Err(DatasetError::InsufficientVariation);
    }
    let x = centred(x)?;
    let y = centred(y)?;

    let table = LagTable::new(&x, &y);
    let mut best: Option<(isize, f64)> = None;
    for lag in table.lags() {
        if let Some(c) = table.pearson(lag) {
            if best.is_none_or(|(_, b)| c.abs() > b.abs()) {
                best = Some((lag, c));
            }
        }
    }
    let (lag, correlation) = best.ok_or(DatasetError::InsufficientVariation)?;

    let sign = correlation.signum();
    let delta = match (table.pearson(lag - 1), table.pearson(lag + 1)) {
        (Some(a), Some(c)) => {
            let (a, b, c) = (sign * a, sign * correlation, sign * c);
            let curvature = a - 2.0 * b + c;
            if curvature < 0.0 {
                (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    let offset = (lag as f64 + delta) * step + change[0].0 - strain[0].0;
    Ok(OffsetEstimate { offset, correlation })
}

/// Linear interpolation onto `first + i * step` up to the last sample.
fn resample(series: &[(f64, f64)], step: f64) -> Vec<f64> {
    let first = series[0].0;
    let last = series[series.len() - 1].0;
    let count = ((last - first) / step + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for i in 0..count {
        let t = first + i as f64 * step;
        while j + 2 < series.len() && series[j + 1].0 < t {
            j += 1;
        }
        let (t0, v0) = series[j];
        let (t1, v1) = series[(j + 1).min(series.len() - 1)];
        let v = if t1 > t0 {
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            v0 + w * (v1 - v0)
        } else {
            v0
        };
        out.push(v);
    }
    out
}

fn centred(mut v: Vec<f64>) -> Result<Vec<f64>, DatasetError> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter_mut().for_each(|x| *x -= mean);
    let std = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if std.is_nan() || std <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(DatasetError::InsufficientVariation);
    }
    Ok(v)
}

/// Pairs `x[i]` with `y[i + lag]`.
struct LagTable {
    nx: usize,
    ny: usize,
    min_overlap: usize,
    cross: Vec<f64>,
    px: Vec<f64>,
    px2: Vec<f64>,
    py: Vec<f64>,
    py2: Vec<f64>,
}

fn prefix(v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for &x in v {
        acc += f(x);
        out.push(acc);
    }
    out
}

impl LagTable {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let (nx, ny) = (x.len(), y.len());
        let len = (nx + ny - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let pad = |v: &[f64]| {
            let mut buf: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
            buf.resize(len, Complex::new(0.0, 0.0));
            buf
        };
        let mut fx = pad(x);
        let mut fy = pad(y);
        forward.process(&mut fx);
        forward.process(&mut fy);
        let mut prod: Vec<Complex<f64>> = fx.iter().zip(&fy).map(|(a, b)| a.conj() * b).collect();
        inverse.process(&mut prod);
        let cross = prod.iter().map(|c| c.re / len as f64).collect();
        Self {
            nx,
            ny,
            min_overlap: MIN_SAMPLES.max(nx.min(ny).div_ceil(2)),
            cross,
            px: prefix(x, |v| v),
            px2: prefix(x, |v| v * v),
            py: prefix(y, |v| v),
            py2: prefix(y, |v| v * v),
        }
    }

    fn lags(&self) -> std::ops::Range<isize> {
        -(self.nx as isize) + 1..self.ny as isize
    }

    fn pearson(&self, lag: isize) -> Option<f64> {
        if !self.lags().contains(&lag) {
            return None;
        }
        let i0 = (-lag).max(0) as usize;
        let i1 = (self.nx as isize).min(self.ny as isize - lag) as usize;
        if i1 <= i0 || i1 - i0 < self.min_overlap {
            return None;
        }
        let (j0, j1) = ((i0 as isize + lag) as usize, (i1 as isize + lag) as usize);
        let n = (i1 - i0) as f64;
        let sx = self.px[i1] - self.px[i0];
        let sx2 = self.px2[i1] - self.px2[i0];
        let sy = self.py[j1] - self.py[j0];
        let sy2 = self.py2[j1] - self.py2[j0];
        let len = self.cross.len() as isize;
        let sxy = self.cross[lag.rem_euclid(len) as usize];
        let cov = sxy - sx * sy / n;
        let vx = sx2 - sx * sx / n;
        let vy = sy2 - sy * sy / n;
        if vx <= 0.0 || vy <= 0.0 {
            return None;
        }
        Some(cov / (vx * vy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{generate_sync_pair, SyncPairSpec};

    /// Straight Pearson coefficient over the overlap, no FFT or prefix sums.
    fn direct_pearson(x: &[f64], y: &[f64], lag: isize) -> Option<f64> {
        let pairs: Vec<(f64, f64)> = (0..x.len())
            .filter_map(|i| {
                let j = i as isize + lag;
                (j >= 0 && (j as usize) < y.len()).then(|| (x[i], y[j as usize]))
            })
            .collect();
        let n = pairs.len() as f64;
        if pairs.len() < MIN_SAMPLES.max(x.len().min(y.len()).div_ceil(2)) {
            return None;
        }
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pairs.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = pairs.iter().map(|(a, _)| (a - mx).powi(2)).sum();
        let vy: f64 = pairs.iter().map(|(_, b)| (b - my).powi(2)).sum();
        Some(cov / (vx * vy).sqrt())
    }

    #[test]
    fn lag_table_matches_direct_correlation() {
        let x: Vec<f64> = (0..57).map(|i| ((i * i) % 13) as f64 - 6.0 + (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..41).map(|i| ((i * 7) % 11) as f64 + (i as f64 * 0.2).cos()).collect();
        let table = LagTable::new(&x, &y);
        for lag in -70..60 {
            match (table.pearson(lag), direct_pearson(&x, &y, lag)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "lag {lag}: {a} vs {b}"),
                (None, None) => {}
                other => panic!("lag {lag}: {other:?}"),
            }
        }
    }

    #[test]
    fn recovers_table1_offset() {
        let spec = SyncPairSpec { offset: 164.038, ..SyncPairSpec::default() };
        let pair = generate_sync_pair(&spec, 11);
        let est = estimate_offset_detailed(&pair.mechanical, &pair.resistance).unwrap();
        assert!((est.offset - 164.038).abs() <= 1.0 / spec.res_rate, "{est:?}");
        assert!(est.correlation > 0.9);
    }

    #[test]
    fn zero_offset_and_inverse_response() {
        let spec = SyncPairSpec { offset: 0.0, gauge_factor: -3.0, ..SyncPairSpec::default() };
        let pair = generate_sync_pair(&spec, 3);
        let est = estimate_offset_detailed(&pair.mechanical, &pair.resistance).unwrap();
        assert!(est.offset.abs() <= 1.0 / spec.res_rate, "{est:?}");
        assert!(est.correlation < -0.9);
    }

    #[test]
    fn constant_series_rejected() {
        let mech: Vec<_> = (0..50).map(|i| MechanicalSample::new(i as f64, 0.001)).collect();
        let res: Vec<_> = (0..50).map(|i| ResistanceSample { t: i as f64, resistances: vec![50.0] }).collect();
        assert_eq!(estimate_offset(&mech, &res), Err(DatasetError::InsufficientVariation));
        assert_eq!(estimate_offset(&mech[..5], &res), Err(DatasetError::InsufficientVariation));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::dataset::synthetic::{generate_sync_pair, SyncPairSpec};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn recovers_offset_at_ten_percent_noise(offset in -300.0f64..300.0, seed in any::<u64>()) {
            let spec = SyncPairSpec { offset, noise_fraction: 0.1, ..SyncPairSpec::default() };
            let pair = generate_sync_pair(&spec, seed);
            let est = estimate_offset(&pair.mechanical, &pair.resistance).unwrap();
            prop_assert!((est - offset).abs() <= 1.0 / spec.res_rate, "offset {} estimate {}", offset, est);
        }
    }
}
