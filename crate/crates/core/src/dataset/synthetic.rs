//! Seeded synthetic series for testing alignment and training.
//!
//! Strain follows a cyclic load plus a smooth autoregressive wander, so the
//! signal has no exploitable periodicity for the offset estimator and the
//! tail of a chronological split stays inside the range seen in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AlignedRecord, MechanicalSample, ResistanceSample};

/// Nominal unstrained resistances per channel, in ohm.
pub const BASE_OHMS: [f64; 8] = [51.0, 42.9, 47.0, 47.0, 100.0, 100.0, 120.0, 120.0];

/// Strain as a function of mechanical time, sampled on a fixed knot grid and
/// linearly interpolated between knots.
#[derive(Debug, Clone)]
pub struct StrainProcess {
    start: f64,
    knot_step: f64,
    knots: Vec<f64>,
}

impl StrainProcess {
    /// `knot_step` seconds between knots, lag-one correlation `phi`.
    pub fn generate(start: f64, end: f64, knot_step: f64, phi: f64, cycle_period: f64, rng: &mut ChaCha8Rng) -> Self {
        let count = ((end - start) / knot_step).ceil() as usize + 2;
        let innovation = Normal::new(0.0, (1.0 - phi * phi).sqrt()).expect("valid std");
        let mut state: f64 = Normal::new(0.0, 1.0).expect("valid std").sample(rng);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let knots = (0..count)
            .map(|i| {
                let tau = start + i as f64 * knot_step;
                let value = 2e-3 + 1e-3 * (tau * std::f64::consts::TAU / cycle_period + phase).sin() + 4e-4 * state;
                state = phi * state + innovation.sample(rng);
                value
            })
            .collect();
        Self { start, knot_step, knots }
    }

    pub fn at(&self, tau: f64) -> f64 {
        let pos = ((tau - self.start) / self.knot_step).max(0.0);
        let i = (pos.floor() as usize).min(self.knots.len() - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        self.knots[i] + w * (self.knots[i + 1] - self.knots[i])
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncPairSpec {
    /// Mechanical recording length in seconds.
    pub duration: f64,
    pub mech_rate: f64,
    pub res_rate: f64,
    pub channels: usize,
    /// Resistance noise std as a fraction of each channel's signal std.
    pub noise_fraction: f64,
    /// Logger clock minus mechanical clock, seconds.
    pub offset: f64,
    /// Seconds the logger runs before the mechanical recording starts.
    pub lead: f64,
    /// Seconds the logger runs after it ends.
    pub tail: f64,
    /// Relative resistance change per unit strain on channel 0.
    pub gauge_factor: f64,
}

impl Default for SyncPairSpec {
    fn default() -> Self {
        Self {
            duration: 600.0,
            mech_rate: 10.0,
            res_rate: 2.0,
            channels: 2,
            noise_fraction: 0.1,
            offset: 164.038,
            lead: 20.0,
            tail: 20.0,
            gauge_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncPair {
    pub mechanical: Vec<MechanicalSample>,
    pub resistance: Vec<ResistanceSample>,
    /// Exact join at the true offset; only present when both series share a
    /// sampling rate, so every mechanical sample has a logger twin.
    pub aligned: Option<Vec<AlignedRecord>>,
}

pub fn generate_sync_pair(spec: &SyncPairSpec, seed: u64) -> SyncPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead_samples = (spec.lead * spec.res_rate).round() as i64;
    let tail_samples = (spec.tail * spec.res_rate).round() as i64;
    let mech_count = (spec.duration * spec.mech_rate).round() as i64 + 1;
    let res_count = (spec.duration * spec.res_rate).round() as i64 + 1 + lead_samples + tail_samples;

    let start = -(lead_samples as f64) / spec.res_rate;
    let end = start + res_count as f64 / spec.res_rate;
    let process = StrainProcess::generate(start, end, 1.0, 0.95, 97.0, &mut rng);

    let mechanical: Vec<MechanicalSample> = (0..mech_count)
        .map(|i| {
            let tau = i as f64 / spec.mech_rate;
            MechanicalSample::new(tau, process.at(tau))
        })
        .collect();

    let taus: Vec<f64> = (0..res_count)
        .map(|j| (j - lead_samples) as f64 / spec.res_rate)
        .collect();
    let strains: Vec<f64> = taus.iter().map(|&tau| process.at(tau)).collect();
    let mut columns: Vec<Vec<f64>> = (0..spec.channels)
        .map(|c| {
            let base = BASE_OHMS[c % BASE_OHMS.len()];
            let gauge = spec.gauge_factor * (1.0 + 0.1 * c as f64);
            strains.iter().map(|e| base * (1.0 + gauge * e)).collect()
        })
        .collect();
    for column in &mut columns {
        let std = population_std(column) * spec.noise_fraction;
        if std > 0.0 {
            let noise = Normal::new(0.0, std).expect("finite std");
            column.iter_mut().for_each(|r| *r += noise.sample(&mut rng));
        }
    }
    let resistance: Vec<ResistanceSample> = taus
        .iter()
        .enumerate()
        .map(|(j, tau)| ResistanceSample {
            t: tau + spec.offset,
            resistances: columns.iter().map(|col| col[j]).collect(),
        })
        .collect();

    let aligned = (spec.mech_rate == spec.res_rate).then(|| {
        mechanical
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let j = i as i64 + lead_samples;
                resistance.get(j as usize).map(|r| AlignedRecord {
                    time: m.time,
                    strain: m.strain,
                    t: r.t,
                    resistances: r.resistances.clone(),
                })
            })
            .collect()
    });

    SyncPair {
        mechanical,
        resistance,
        aligned,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetSpec {
    pub rows: usize,
    pub channels: usize,
    /// Target noise std as a fraction of the strain std.
    pub noise_fraction: f64,
    pub sample_rate: f64,
    /// Logger clock minus mechanical clock, seconds.
    pub offset: f64,
}

impl Default for TrainingSetSpec {
    fn default() -> Self {
        Self {
            rows: 1000,
            channels: 2,
            noise_fraction: 0.01,
            sample_rate: 10.0,
            offset: 164.038,
        }
    }
}

/// Aligned records whose strain column is standardised (zero mean, unit
/// population std) and carries the configured noise; the resistances are a
/// mildly nonlinear, noise-free function of the underlying strain.
pub fn generate_training_set(spec: &TrainingSetSpec, seed: u64) -> Vec<AlignedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = spec.rows as f64 / spec.sample_rate;
    let process = StrainProcess::generate(0.0, duration, 1.0 / spec.sample_rate, 0.98, duration / 5.0, &mut rng);
    let times: Vec<f64> = (0..spec.rows).map(|i| i as f64 / spec.sample_rate).collect();
    let strains: Vec<f64> = times.iter().map(|&t| process.at(t)).collect();

    let gains: Vec<(f64, f64)> = (0..spec.channels)
        .map(|_| (rng.random_range(1.5..4.0), rng.random_range(-80.0..80.0)))
        .collect();
    let noise_std = population_std(&strains) * spec.noise_fraction;
    let noisy: Vec<f64> = if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).expect("finite std");
        strains.iter().map(|e| e + noise.sample(&mut rng)).collect()
    } else {
        strains.clone()
    };
    let mean = noisy.iter().sum::<f64>() / noisy.len().max(1) as f64;
    let std = population_std(&noisy);

    times
        .iter()
        .zip(&strains)
        .zip(&noisy)
        .map(|((&time, &e), &target)| AlignedRecord {
            time,
            strain: if std > 0.0 { (target - mean) / std } else { 0.0 },
            t: time + spec.offset,
            resistances: gains
                .iter()
                .enumerate()
                .map(|(c, (g, k))| BASE_OHMS[c % BASE_OHMS.len()] * (1.0 + g * e + k * e * e))
                .collect(),
        })
        .collect()
}
