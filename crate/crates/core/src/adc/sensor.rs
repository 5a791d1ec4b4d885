use serde::{Deserialize, Serialize};

use super::{AdcError, CHANNELS, EXCITATION_CURRENT, VREF};

/// Sinusoidal pickup superimposed on a channel's resistance, in ohm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// What one sensor channel presents to the converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelInput {
    pub resistance: f64,
    /// Standard deviation of additive white Gaussian noise, ohm.
    pub noise_std: f64,
    pub interference: Option<Interference>,
}

impl ChannelInput {
    pub const fn ideal(resistance: f64) -> Self {
        Self {
            resistance,
            noise_std: 0.0,
            interference: None,
        }
    }
}

/// Resistive sensors wired to the eight converter inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    channels: [ChannelInput; CHANNELS],
    excitation_current: f64,
}

/// The bench fixture: two 47 ohm, two 100 ohm and four 120 ohm resistors.
pub const FIXTURE_OHMS: [f64; CHANNELS] = [47.0, 47.0, 100.0, 100.0, 120.0, 120.0, 120.0, 120.0];

impl SensorModel {
    pub fn new(resistances: [f64; CHANNELS]) -> Self {
        Self {
            channels: resistances.map(ChannelInput::ideal),
            excitation_current: EXCITATION_CURRENT,
        }
    }

    pub fn fixture() -> Self {
        Self::new(FIXTURE_OHMS)
    }

    pub fn with_excitation(mut self, ampere: f64) -> Result<Self, AdcError> {
        if !(ampere.is_finite() && ampere > 0.0) {
            return Err(AdcError::InvalidSensor(format!("excitation current {ampere} A")));
        }
        self.excitation_current = ampere;
        Ok(self)
    }

    pub fn excitation_current(&self) -> f64 {
        self.excitation_current
    }

    /// Upper end of the representable range, `Vref / I_exc`.
    pub fn full_scale_ohms(&self) -> f64 {
        VREF / self.excitation_current
    }

    pub fn channel(&self, channel: usize) -> Result<&ChannelInput, AdcError> {
        self.channels.get(channel).ok_or(AdcError::InvalidChannel(channel))
    }

    pub fn set_channel(&mut self, channel: usize, input: ChannelInput) -> Result<(), AdcError> {
        if !(input.noise_std.is_finite() && input.noise_std >= 0.0) {
            return Err(AdcError::InvalidSensor(format!("noise std {}", input.noise_std)));
        }
        if !input.resistance.is_finite() {
            return Err(AdcError::InvalidSensor(format!("resistance {}", input.resistance)));
        }
        if let Some(i) = input.interference {
            if !(i.amplitude.is_finite() && i.frequency.is_finite() && i.phase.is_finite()) {
                return Err(AdcError::InvalidSensor("non-finite interference".into()));
            }
        }
        let slot = self
            .channels
            .get_mut(channel)
            .ok_or(AdcError::InvalidChannel(channel))?;
        *slot = input;
        Ok(())
    }

    pub fn set_resistance(&mut self, channel: usize, ohms: f64) -> Result<(), AdcError> {
        let mut input = *self.channel(channel)?;
        input.resistance = ohms;
        self.set_channel(channel, input)
    }

    pub fn set_noise(&mut self, channel: usize, std: f64) -> Result<(), AdcError> {
        let mut input = *self.channel(channel)?;
        input.noise_std = std;
        self.set_channel(channel, input)
    }

    pub fn channels(&self) -> &[ChannelInput; CHANNELS] {
        &self.channels
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::new([0.0; CHANNELS])
    }
}
