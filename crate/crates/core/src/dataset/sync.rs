//! Joins mechanical samples to logger samples across the two clocks.
//!
//! A mechanical sample at `time` is matched to the logger sample nearest to
//! `time + offset`. When that nearest sample is further away than half the
//! sampling interval (the smaller of the two series' intervals), the
//! resistances are linearly interpolated between the bracketing samples and
//! `t` is set to `time + offset`. Mechanical samples whose shifted time falls
//! outside the logger range are dropped.

use super::{AlignedRecord, DatasetError, MechanicalSample, ResistanceSample};

/// Median positive spacing of a sorted time axis; `None` with fewer than two
/// distinct instants.
pub fn sampling_interval(times: impl IntoIterator<Item = f64>) -> Option<f64> {
    let times: Vec<f64> = times.into_iter().collect();
    let mut diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if diffs.is_empty() {
        return None;
    }
    diffs.sort_by(f64::total_cmp);
    Some(diffs[diffs.len() / 2])
}

pub(crate) fn check_sorted(
    times: impl IntoIterator<Item = f64>,
    series: &'static str,
) -> Result<(), DatasetError> {
    let mut prev = f64::NEG_INFINITY;
    for (index, t) in times.into_iter().enumerate() {
        if !t.is_finite() || t < prev {
            return Err(DatasetError::Unsorted { series, index });
        }
        prev = t;
    }
    Ok(())
}

pub(crate) fn check_channels(res: &[ResistanceSample]) -> Result<usize, DatasetError> {
    let expected = res.first().map_or(0, |s| s.resistances.len());
    if let Some(s) = res.iter().find(|s| s.resistances.len() != expected) {
        return Err(DatasetError::ChannelMismatch {
            expected,
            found: s.resistances.len(),
        });
    }
    Ok(expected)
}

pub fn synchronize(
    mech: &[MechanicalSample],
    res: &[ResistanceSample],
    offset: f64,
) -> Result<Vec<AlignedRecord>, DatasetError> {
    if mech.is_empty() {
        return Err(DatasetError::EmptySeries("mechanical"));
    }
    if res.is_empty() {
        return Err(DatasetError::EmptySeries("resistance"));
    }
    check_sorted(mech.iter().map(|m| m.time), "mechanical")?;
    check_sorted(res.iter().map(|r| r.t), "resistance")?;
    check_channels(res)?;

    let res_interval = sampling_interval(res.iter().map(|r| r.t));
    let mech_interval = sampling_interval(mech.iter().map(|m| m.time));
    let half_gap = match (res_interval, mech_interval) {
        (Some(a), Some(b)) => Some(0.5 * a.min(b)),
        (Some(a), None) | (None, Some(a)) => Some(0.5 * a),
        (None, None) => None,
    };
    let first = res[0].t;
    let last = res[res.len() - 1].t;
    // Rounding slack for single-sample series and exact-hit targets.
    let eps = 1e-9 * first.abs().max(last.abs()).max(1.0);
    let tolerance = half_gap.unwrap_or(0.0).max(eps);

    let mut out = Vec::new();
    for m in mech {
        let target = m.time + offset;
        if target < first - tolerance || target > last + tolerance {
            continue;
        }
        let idx = res.partition_point(|r| r.t < target);
        let nearest = match (idx.checked_sub(1), res.get(idx)) {
            (Some(lo), Some(hi)) => {
                if target - res[lo].t <= hi.t - target {
                    lo
                } else {
                    idx
                }
            }
            (Some(lo), None) => lo,
            (None, _) => idx,
        };
        let gap = (res[nearest].t - target).abs();
        let bracketed = idx > 0 && idx < res.len();
        if gap > tolerance && bracketed {
            let (a, b) = (&res[idx - 1], &res[idx]);
            let w = (target - a.t) / (b.t - a.t);
            let resistances = a
                .resistances
                .iter()
                .zip(&b.resistances)
                .map(|(ra, rb)| ra + w * (rb - ra))
                .collect();
            out.push(AlignedRecord {
                time: m.time,
                strain: m.strain,
                t: target,
                resistances,
            });
        } else {
            out.push(AlignedRecord {
                time: m.time,
                strain: m.strain,
                t: res[nearest].t,
                resistances: res[nearest].resistances.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(DatasetError::NoOverlap);
    }
    Ok(out)
}
