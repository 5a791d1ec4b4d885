//! Sinc3 decimation filter.
//!
//! Three cascaded boxcar (moving-average) stages of length `N` run at the
//! modulator rate; every `N`-th output is kept. The magnitude response is
//! `|sin(pi f N / fs) / (N sin(pi f / fs))|^3`, which has nulls at every
//! multiple of `fs / N`. With the default 10 Hz output rate both 50 Hz and
//! 60 Hz mains land on a null.

use serde::{Deserialize, Serialize};

use super::AdcError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinc3Config {
    /// Modulator (input) sample rate in Hz.
    pub modulator_rate: f64,
    /// Boxcar length and decimation factor.
    pub decimation: usize,
}

impl Default for Sinc3Config {
    fn default() -> Self {
        Self {
            modulator_rate: 76_800.0,
            decimation: 7_680,
        }
    }
}

impl Sinc3Config {
    /// Output data rate in Hz; also the spacing of the spectral nulls.
    pub fn output_data_rate(&self) -> f64 {
        self.modulator_rate / self.decimation as f64
    }

    /// Modulator samples needed for one fully settled output.
    pub fn settling_samples(&self) -> usize {
        3 * self.decimation
    }

    pub fn validate(&self) -> Result<(), AdcError> {
        if !(self.modulator_rate.is_finite() && self.modulator_rate > 0.0) || self.decimation == 0 {
            return Err(AdcError::InvalidFilter(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Boxcar {
    window: Vec<f64>,
    pos: usize,
    sum: f64,
}

impl Boxcar {
    fn new(len: usize) -> Self {
        Self {
            window: vec![0.0; len],
            pos: 0,
            sum: 0.0,
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        self.sum += x - self.window[self.pos];
        self.window[self.pos] = x;
        self.pos += 1;
        if self.pos == self.window.len() {
            self.pos = 0;
            // Re-anchor the running sum once per window so rounding cannot drift.
            self.sum = self.window.iter().sum();
        }
        self.sum / self.window.len() as f64
    }

    fn reset(&mut self) {
        self.window.iter_mut().for_each(|v| *v = 0.0);
        self.pos = 0;
        self.sum = 0.0;
    }
}

/// Streaming sinc3 decimator.
#[derive(Debug, Clone)]
pub struct Sinc3Decimator {
    stages: [Boxcar; 3],
    decimation: usize,
    count: usize,
}

impl Sinc3Decimator {
    pub fn new(decimation: usize) -> Self {
        assert!(decimation > 0, "decimation must be positive");
        Self {
            stages: [Boxcar::new(decimation), Boxcar::new(decimation), Boxcar::new(decimation)],
            decimation,
            count: 0,
        }
    }

    /// Feeds one modulator sample; returns an output every `decimation` inputs.
    pub fn push(&mut self, x: f64) -> Option<f64> {
        let y = self.stages.iter_mut().fold(x, |acc, s| s.push(acc));
        self.count += 1;
        self.count.is_multiple_of(self.decimation).then_some(y)
    }

    /// True once enough samples have passed for the output to be free of
    /// start-up transient.
    pub fn settled(&self) -> bool {
        self.count + 2 >= 3 * self.decimation
    }

    pub fn reset(&mut self) {
        self.stages.iter_mut().for_each(Boxcar::reset);
        self.count = 0;
    }
}

/// Runs one settled conversion: feeds `settling_samples()` inputs produced by
/// `sample(t)` on the modulator grid ending at `end_time`, and returns the last
/// decimated output.
pub fn convert_window(config: &Sinc3Config, end_time: f64, mut sample: impl FnMut(f64) -> f64) -> f64 {
    let n = config.settling_samples();
    let dt = 1.0 / config.modulator_rate;
    let mut filter = Sinc3Decimator::new(config.decimation);
    let mut last = 0.0;
    for i in 0..n {
        let t = end_time - (n - 1 - i) as f64 * dt;
        if let Some(y) = filter.push(sample(t)) {
            last = y;
        }
    }
    debug_assert!(filter.settled());
    last
}

/// Measured peak gain of the filter for a unit sinusoid at `frequency`,
/// taken as the worst case over `phases` evenly spaced starting phases.
pub fn measured_gain(config: &Sinc3Config, frequency: f64, phases: usize) -> f64 {
    let phases = phases.max(1);
    (0..phases)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / phases as f64;
            convert_window(config, 0.0, |t| {
                (2.0 * std::f64::consts::PI * frequency * t + phi).sin()
            })
            .abs()
        })
        .fold(0.0, f64::max)
}
