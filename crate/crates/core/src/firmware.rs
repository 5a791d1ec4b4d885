//! Node firmware: converter bring-up followed by a timer-driven scan.
//!
//! Each tick walks the active channels in order and, per channel, enables the
//! excitation current, arms the channel, polls RDY, reads DATA, converts the
//! code to ohm, then switches excitation off and disarms the channel. The
//! resulting resistances go out as one [`TelemetryFrame`] carrying the tick
//! counter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adc::{
    code_to_resistance, AdcError, RegisterBus, ADC_CONTROL, CONFIG_0, DATA, FILTER_0,
    IO_CONTROL_1, STATUS, STATUS_RDY,
};
use crate::wire::{TelemetryFrame, WireError};

/// Register choreography for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelStep {
    pub io_control_on: u32,
    pub channel_reg: u8,
    pub arm_value: u32,
    pub io_control_off: u32,
    pub disarm_value: u32,
}

const fn step(io_on: u32, reg: u8, arm: u32, io_off: u32, disarm: u32) -> ChannelStep {
    ChannelStep {
        io_control_on: io_on,
        channel_reg: reg,
        arm_value: arm,
        io_control_off: io_off,
        disarm_value: disarm,
    }
}

pub const CHANNEL_PLAN: [ChannelStep; 8] = [
    step(0x003811, 0x09, 0x8011, 0x000011, 0x0011),
    step(0x003833, 0x0B, 0x8051, 0x000033, 0x0051),
    step(0x003855, 0x0D, 0x8091, 0x000055, 0x0091),
    step(0x003877, 0x0F, 0x80D1, 0x000077, 0x00D1),
    step(0x003899, 0x11, 0x8111, 0x000099, 0x0111),
    step(0x0038BB, 0x13, 0x8151, 0x0000BB, 0x0151),
    step(0x0038DD, 0x15, 0x8191, 0x0000DD, 0x0191),
    step(0x0038FF, 0x17, 0x81D1, 0x0000FF, 0x01D1),
];

/// Writes issued after the converter reset, in order.
pub const INIT_SEQUENCE: [RegisterWrite; 4] = [
    RegisterWrite { addr: 0x09, value: 0x0011 },
    RegisterWrite { addr: CONFIG_0, value: 0x0070 },
    RegisterWrite { addr: ADC_CONTROL, value: 0x0500 },
    RegisterWrite { addr: FILTER_0, value: 0x060030 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWrite {
    pub addr: u8,
    pub value: u32,
}

/// Bus activity recorded while tracing is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusEvent {
    Reset,
    Write(RegisterWrite),
    ReadData { value: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    /// Channels 0 and 1 only.
    Two,
    Eight,
}

impl ChannelMode {
    pub fn count(self) -> usize {
        match self {
            ChannelMode::Two => 2,
            ChannelMode::Eight => 8,
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            2 => Some(ChannelMode::Two),
            8 => Some(ChannelMode::Eight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmwareConfig {
    pub node_id: u16,
    /// Seconds between timer interrupts.
    pub tick_period: f64,
    pub channels: ChannelMode,
    /// STATUS polls allowed per conversion before giving up.
    pub poll_budget: u32,
}

impl Default for FirmwareConfig {
    fn default() -> Self {
        Self {
            node_id: 0,
            tick_period: 10.0,
            channels: ChannelMode::Eight,
            poll_budget: 1000,
        }
    }
}

impl FirmwareConfig {
    /// Sub-second profile.
    pub fn fast() -> Self {
        Self {
            tick_period: 0.2,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum FirmwareError {
    #[error("bus error: {0}")]
    Bus(#[from] AdcError),
    #[error("conversion on channel {channel} did not finish within {polls} polls")]
    ConversionTimeout { channel: usize, polls: u32 },
    #[error("tick before init")]
    NotInitialized,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] WireError),
}

pub struct Firmware<B> {
    bus: B,
    config: FirmwareConfig,
    counter: u32,
    last_resistances: Vec<f64>,
    initialized: bool,
    trace: Option<Vec<BusEvent>>,
}

impl<B: RegisterBus> Firmware<B> {
    pub fn new(bus: B, config: FirmwareConfig) -> Result<Self, FirmwareError> {
        if !(config.tick_period.is_finite() && config.tick_period > 0.0) {
            return Err(FirmwareError::InvalidConfig(format!(
                "tick period {}",
                config.tick_period
            )));
        }
        if config.poll_budget == 0 {
            return Err(FirmwareError::InvalidConfig("poll budget 0".into()));
        }
        Ok(Self {
            last_resistances: vec![0.0; config.channels.count()],
            bus,
            config,
            counter: 0,
            initialized: false,
            trace: None,
        })
    }

    pub fn config(&self) -> &FirmwareConfig {
        &self.config
    }

    pub fn counter(&self) -> u32 {
        self.counter
    }

    pub fn last_resistances(&self) -> &[f64] {
        &self.last_resistances
    }

    pub fn bus(&self) -> &B {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut B {
        &mut self.bus
    }

    pub fn into_bus(self) -> B {
        self.bus
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn clear_trace(&mut self) {
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
    }

    /// Register writes since the last clear, in issue order.
    pub fn capture_trace(&self) -> Vec<RegisterWrite> {
        self.events()
            .iter()
            .filter_map(|e| match e {
                BusEvent::Write(w) => Some(*w),
                _ => None,
            })
            .collect()
    }

    pub fn events(&self) -> &[BusEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Converter bring-up. Link and timer setup have no bus activity here;
    /// the caller's scheduler owns the timer.
    pub fn init(&mut self) -> Result<(), FirmwareError> {
        self.initialized = false;
        self.bus.reset()?;
        self.record(BusEvent::Reset);
        for w in INIT_SEQUENCE {
            self.write(w.addr, w.value)?;
        }
        self.counter = 0;
        self.initialized = true;
        Ok(())
    }

    /// One timer interrupt. On error no frame is produced and the counter is
    /// left unchanged.
    pub fn run_tick(&mut self, now: f64) -> Result<TelemetryFrame, FirmwareError> {
        if !self.initialized {
            return Err(FirmwareError::NotInitialized);
        }
        self.bus.set_clock(now);
        let n = self.config.channels.count();
        let mut resistances = Vec::with_capacity(n);
        for (channel, plan) in CHANNEL_PLAN.iter().take(n).enumerate() {
            match self.acquire(channel, plan) {
                Ok(r) => resistances.push(r),
                Err(e) => {
                    // Leave the converter idle before reporting the failure.
                    let _ = self.write(IO_CONTROL_1, plan.io_control_off);
                    let _ = self.write(plan.channel_reg, plan.disarm_value);
                    return Err(e);
                }
            }
        }
        let frame = TelemetryFrame::new(self.config.node_id, self.counter, resistances)?;
        self.last_resistances.clone_from(&frame.resistances);
        self.counter = self.counter.wrapping_add(1);
        Ok(frame)
    }

    fn acquire(&mut self, channel: usize, plan: &ChannelStep) -> Result<f64, FirmwareError> {
        self.write(IO_CONTROL_1, plan.io_control_on)?;
        self.write(plan.channel_reg, plan.arm_value)?;
        let mut ready = false;
        for _ in 0..self.config.poll_budget {
            if self.bus.read_register(STATUS)? & STATUS_RDY == 0 {
                ready = true;
                break;
            }
        }
        if !ready {
            return Err(FirmwareError::ConversionTimeout {
                channel,
                polls: self.config.poll_budget,
            });
        }
        let code = self.bus.read_register(DATA)?;
        self.record(BusEvent::ReadData { value: code });
        let ohms = code_to_resistance(code)?;
        self.write(IO_CONTROL_1, plan.io_control_off)?;
        self.write(plan.channel_reg, plan.disarm_value)?;
        Ok(ohms)
    }

    fn write(&mut self, addr: u8, value: u32) -> Result<(), FirmwareError> {
        self.bus.write_register(addr, value)?;
        self.record(BusEvent::Write(RegisterWrite { addr, value }));
        Ok(())
    }

    fn record(&mut self, event: BusEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(event);
        }
    }
}

/// The write sequence one full tick must produce, derived from [`CHANNEL_PLAN`].
pub fn expected_tick_writes(channels: ChannelMode) -> Vec<RegisterWrite> {
    CHANNEL_PLAN
        .iter()
        .take(channels.count())
        .flat_map(|p| {
            [
                RegisterWrite { addr: IO_CONTROL_1, value: p.io_control_on },
                RegisterWrite { addr: p.channel_reg, value: p.arm_value },
                RegisterWrite { addr: IO_CONTROL_1, value: p.io_control_off },
                RegisterWrite { addr: p.channel_reg, value: p.disarm_value },
            ]
        })
        .collect()
}

/// Renders a trace as `Reg=0xAA Data=0xVVVVVV` lines.
pub fn format_trace(writes: &[RegisterWrite]) -> String {
    let mut out = String::new();
    for w in writes {
        writeln!(out, "Reg=0x{:02X} Data=0x{:06X}", w.addr, w.value).expect("write to String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{AdcConfig, AdcEmulator, SensorModel, LSB_OHMS};

    fn firmware(sensor: SensorModel, config: FirmwareConfig) -> Firmware<AdcEmulator> {
        let adc = AdcEmulator::new(sensor, AdcConfig::default()).unwrap();
        let mut fw = Firmware::new(adc, config).unwrap();
        fw.enable_trace();
        fw.init().unwrap();
        fw
    }

    /// Emulator wrapper that faults on one register address.
    struct FaultyBus {
        inner: AdcEmulator,
        reject: u8,
    }

    impl RegisterBus for FaultyBus {
        fn reset(&mut self) -> Result<(), AdcError> {
            self.inner.reset();
            Ok(())
        }
        fn write_register(&mut self, addr: u8, value: u32) -> Result<(), AdcError> {
            if addr == self.reject {
                return Err(AdcError::BusFault(addr));
            }
            self.inner.write_register(addr, value)
        }
        fn read_register(&mut self, addr: u8) -> Result<u32, AdcError> {
            self.inner.read_register(addr)
        }
    }

    #[test]
    fn init_trace_and_counter() {
        let fw = firmware(SensorModel::default(), FirmwareConfig::default());
        assert_eq!(fw.capture_trace(), INIT_SEQUENCE.to_vec());
        assert_eq!(fw.events()[0], BusEvent::Reset);
        assert_eq!(fw.counter(), 0);
    }

    #[test]
    fn init_propagates_bus_error() {
        let bus = FaultyBus {
            inner: AdcEmulator::new(SensorModel::default(), AdcConfig::default()).unwrap(),
            reject: CONFIG_0,
        };
        let mut fw = Firmware::new(bus, FirmwareConfig::default()).unwrap();
        assert!(matches!(fw.init(), Err(FirmwareError::Bus(AdcError::BusFault(0x19)))));
        assert!(matches!(fw.run_tick(0.0), Err(FirmwareError::NotInitialized)));
    }

    #[test]
    fn counters_advance_per_tick() {
        let mut fw = firmware(SensorModel::default(), FirmwareConfig::default());
        let a = fw.run_tick(0.0).unwrap();
        let b = fw.run_tick(10.0).unwrap();
        assert_eq!((a.counter, b.counter), (0, 1));
        assert!(a.resistances.iter().all(|r| *r == 0.0));
        assert_eq!(fw.counter(), 2);
    }

    #[test]
    fn fixture_reads_within_half_lsb() {
        let mut fw = firmware(SensorModel::fixture(), FirmwareConfig::default());
        let frame = fw.run_tick(0.0).unwrap();
        assert_eq!(frame.resistances.len(), 8);
        for (r, want) in frame.resistances.iter().zip(crate::adc::FIXTURE_OHMS) {
            assert!((r - want).abs() <= 0.5 * LSB_OHMS, "{r} vs {want}");
        }
    }

    #[test]
    fn tick_trace_is_32_writes() {
        let mut fw = firmware(SensorModel::fixture(), FirmwareConfig::default());
        fw.clear_trace();
        assert!(fw.capture_trace().is_empty());
        fw.run_tick(0.0).unwrap();
        let trace = fw.capture_trace();
        assert_eq!(trace.len(), 32);
        assert_eq!(trace[0], RegisterWrite { addr: 0x03, value: 0x003811 });
        assert_eq!(trace, expected_tick_writes(ChannelMode::Eight));
        let arm = trace.iter().position(|w| *w == RegisterWrite { addr: 0x13, value: 0x8151 });
        let disarm = trace.iter().position(|w| *w == RegisterWrite { addr: 0x13, value: 0x0151 });
        assert!(arm.unwrap() < disarm.unwrap());
    }

    #[test]
    fn arm_precedes_read_precedes_io_off() {
        let mut fw = firmware(SensorModel::fixture(), FirmwareConfig::default());
        fw.clear_trace();
        fw.run_tick(0.0).unwrap();
        let events = fw.events();
        for plan in CHANNEL_PLAN {
            let arm = events
                .iter()
                .position(|e| *e == BusEvent::Write(RegisterWrite { addr: plan.channel_reg, value: plan.arm_value }))
                .unwrap();
            let off = events
                .iter()
                .position(|e| *e == BusEvent::Write(RegisterWrite { addr: IO_CONTROL_1, value: plan.io_control_off }))
                .unwrap();
            let read = events[arm..].iter().position(|e| matches!(e, BusEvent::ReadData { .. })).unwrap() + arm;
            assert!(arm < read && read < off);
        }
    }

    #[test]
    fn two_channel_mode_scans_first_pair() {
        let mut fw = firmware(
            SensorModel::fixture(),
            FirmwareConfig { channels: ChannelMode::Two, ..Default::default() },
        );
        fw.clear_trace();
        let frame = fw.run_tick(0.0).unwrap();
        assert_eq!(frame.resistances.len(), 2);
        assert_eq!(fw.capture_trace(), expected_tick_writes(ChannelMode::Two));
    }

    #[test]
    fn stalled_conversion_times_out_without_counting() {
        let adc = AdcEmulator::new(
            SensorModel::fixture(),
            AdcConfig { conversion_polls: u32::MAX, ..Default::default() },
        )
        .unwrap();
        let mut fw = Firmware::new(adc, FirmwareConfig::default()).unwrap();
        fw.init().unwrap();
        assert!(matches!(
            fw.run_tick(0.0),
            Err(FirmwareError::ConversionTimeout { channel: 0, polls: 1000 })
        ));
        assert_eq!(fw.counter(), 0);
    }

    #[test]
    fn failed_tick_does_not_increment() {
        let bus = FaultyBus {
            inner: AdcEmulator::new(SensorModel::fixture(), AdcConfig::default()).unwrap(),
            reject: 0x11,
        };
        let mut fw = Firmware::new(bus, FirmwareConfig::default()).unwrap();
        fw.init().unwrap();
        assert!(fw.run_tick(0.0).is_err());
        assert_eq!(fw.counter(), 0);
        // Two-channel mode never touches 0x11.
        let bus = fw.into_bus();
        let mut fw = Firmware::new(bus, FirmwareConfig { channels: ChannelMode::Two, ..Default::default() }).unwrap();
        fw.init().unwrap();
        assert_eq!(fw.run_tick(0.0).unwrap().counter, 0);
        assert_eq!(fw.counter(), 1);
    }

    #[test]
    fn invalid_config() {
        let adc = AdcEmulator::new(SensorModel::default(), AdcConfig::default()).unwrap();
        let cfg = FirmwareConfig { tick_period: 0.0, ..Default::default() };
        assert!(Firmware::new(adc, cfg).is_err());
        assert_eq!(FirmwareConfig::fast().tick_period, 0.2);
    }

    #[test]
    fn trace_rendering() {
        let text = format_trace(&INIT_SEQUENCE);
        assert_eq!(
            text,
            "Reg=0x09 Data=0x000011\nReg=0x19 Data=0x000070\nReg=0x01 Data=0x000500\nReg=0x21 Data=0x060030\n"
        );
    }
}
