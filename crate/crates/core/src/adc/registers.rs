//! Register map of the emulated converter.
//!
//! Only the addresses exercised by the acquisition procedure are modelled.
//! Channel registers live at odd addresses `0x09..=0x17`, one per sensor.

use std::collections::BTreeMap;

use super::AdcError;

pub const STATUS: u8 = 0x00;
pub const ADC_CONTROL: u8 = 0x01;
pub const DATA: u8 = 0x02;
pub const IO_CONTROL_1: u8 = 0x03;
pub const CHANNEL_BASE: u8 = 0x09;
pub const CONFIG_0: u8 = 0x19;
pub const FILTER_0: u8 = 0x21;

/// Number of sensor channels (and channel registers).
pub const CHANNELS: usize = 8;

/// Enable bit of a channel register; writing it arms a conversion.
pub const CHANNEL_ENABLE: u32 = 0x8000;

/// RDY flag in STATUS. Set while a conversion is in flight or before the
/// first conversion, cleared when DATA holds a fresh result.
pub const STATUS_RDY: u32 = 0x80;

/// Excitation-current magnitude fields of IO_CONTROL_1 (bits 8..=13).
pub const IO_CURRENT_MASK: u32 = 0x3F00;

pub const VALUE_MASK: u32 = 0xFF_FFFF;

/// Address of the channel register for `channel` (0-based).
pub const fn channel_register(channel: usize) -> u8 {
    CHANNEL_BASE + 2 * channel as u8
}

/// Inverse of [`channel_register`].
pub fn channel_of(addr: u8) -> Option<usize> {
    if (CHANNEL_BASE..=channel_register(CHANNELS - 1)).contains(&addr)
        && (addr - CHANNEL_BASE).is_multiple_of(2)
    {
        Some(((addr - CHANNEL_BASE) / 2) as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

/// Access class of a known register, `None` for unmapped addresses.
pub fn access(addr: u8) -> Option<Access> {
    match addr {
        STATUS | DATA => Some(Access::ReadOnly),
        ADC_CONTROL | IO_CONTROL_1 | CONFIG_0 | FILTER_0 => Some(Access::ReadWrite),
        a if channel_of(a).is_some() => Some(Access::ReadWrite),
        _ => None,
    }
}

/// Addressable register state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFile {
    values: BTreeMap<u8, u32>,
}

impl RegisterFile {
    /// Power-on state: every register zero, RDY set.
    pub fn power_on() -> Self {
        let mut values: BTreeMap<u8, u32> = [STATUS, ADC_CONTROL, DATA, IO_CONTROL_1, CONFIG_0, FILTER_0]
            .into_iter()
            .chain((0..CHANNELS).map(channel_register))
            .map(|a| (a, 0))
            .collect();
        values.insert(STATUS, STATUS_RDY);
        Self { values }
    }

    pub fn get(&self, addr: u8) -> Result<u32, AdcError> {
        self.values
            .get(&addr)
            .copied()
            .ok_or(AdcError::UnknownRegister(addr))
    }

    /// Bus-side write: rejects unknown and read-only addresses.
    pub fn write(&mut self, addr: u8, value: u32) -> Result<(), AdcError> {
        match access(addr) {
            None => Err(AdcError::UnknownRegister(addr)),
            Some(Access::ReadOnly) => Err(AdcError::ReadOnlyRegister(addr)),
            Some(Access::ReadWrite) if value > VALUE_MASK => {
                Err(AdcError::ValueOutOfRange { addr, value })
            }
            Some(Access::ReadWrite) => {
                self.values.insert(addr, value);
                Ok(())
            }
        }
    }

    /// Internal write used by the conversion logic for DATA and STATUS.
    pub(crate) fn set_internal(&mut self, addr: u8, value: u32) {
        debug_assert!(access(addr).is_some());
        self.values.insert(addr, value & VALUE_MASK);
    }

    pub fn rdy(&self) -> bool {
        self.values[&STATUS] & STATUS_RDY != 0
    }

    pub fn channel_armed(&self, channel: usize) -> bool {
        channel < CHANNELS && self.values[&channel_register(channel)] & CHANNEL_ENABLE != 0
    }

    pub fn excitation_on(&self) -> bool {
        self.values[&IO_CONTROL_1] & IO_CURRENT_MASK != 0
    }
}

impl Default for RegisterFile {
    fn default() -> Self {
        Self::power_on()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_addresses_are_odd() {
        let addrs: Vec<u8> = (0..CHANNELS).map(channel_register).collect();
        assert_eq!(addrs, vec![0x09, 0x0B, 0x0D, 0x0F, 0x11, 0x13, 0x15, 0x17]);
        for (ch, a) in addrs.iter().enumerate() {
            assert_eq!(channel_of(*a), Some(ch));
        }
        assert_eq!(channel_of(0x0A), None);
        assert_eq!(channel_of(0x19), None);
    }

    #[test]
    fn power_on_values() {
        let regs = RegisterFile::power_on();
        assert!(regs.rdy());
        assert_eq!(regs.get(DATA).unwrap(), 0);
        assert_eq!(regs.get(CONFIG_0).unwrap(), 0);
        assert!(!regs.excitation_on());
    }

    #[test]
    fn bus_write_rules() {
        let mut regs = RegisterFile::power_on();
        assert_eq!(regs.write(DATA, 5), Err(AdcError::ReadOnlyRegister(DATA)));
        assert_eq!(regs.write(STATUS, 0), Err(AdcError::ReadOnlyRegister(STATUS)));
        assert_eq!(regs.write(0x40, 0), Err(AdcError::UnknownRegister(0x40)));
        assert_eq!(
            regs.write(CONFIG_0, 0x100_0000),
            Err(AdcError::ValueOutOfRange { addr: CONFIG_0, value: 0x100_0000 })
        );
        regs.write(IO_CONTROL_1, 0x003811).unwrap();
        assert!(regs.excitation_on());
        regs.write(IO_CONTROL_1, 0x000011).unwrap();
        assert!(!regs.excitation_on());
    }
}
