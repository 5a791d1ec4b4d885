use shm_core::adc::{AdcConfig, AdcEmulator, SensorModel};
use shm_core::firmware::{
    expected_tick_writes, format_trace, BusEvent, ChannelMode, Firmware, FirmwareConfig,
};

const TICK_GOLDEN: &str = include_str!("data/tick_trace.golden");
const INIT_GOLDEN: &str = include_str!("data/init_trace.golden");

fn traced_firmware(channels: ChannelMode) -> Firmware<AdcEmulator> {
    let adc = AdcEmulator::new(SensorModel::fixture(), AdcConfig::default()).unwrap();
    let mut fw = Firmware::new(adc, FirmwareConfig { channels, ..FirmwareConfig::default() }).unwrap();
    fw.enable_trace();
    fw
}

#[test]
fn init_matches_golden() {
    let mut fw = traced_firmware(ChannelMode::Eight);
    fw.init().unwrap();
    assert_eq!(fw.events()[0], BusEvent::Reset);
    assert_eq!(format_trace(&fw.capture_trace()), INIT_GOLDEN);
}

#[test]
fn eight_channel_tick_matches_golden_byte_for_byte() {
    let mut fw = traced_firmware(ChannelMode::Eight);
    fw.init().unwrap();
    fw.clear_trace();
    fw.run_tick(0.0).unwrap();
    let writes = fw.capture_trace();
    assert_eq!(writes.len(), 32);
    assert_eq!(format_trace(&writes).as_bytes(), TICK_GOLDEN.as_bytes());
    assert_eq!(writes, expected_tick_writes(ChannelMode::Eight));
}

#[test]
fn arm_precedes_read_precedes_io_off() {
    let mut fw = traced_firmware(ChannelMode::Eight);
    fw.init().unwrap();
    fw.clear_trace();
    fw.run_tick(0.0).unwrap();
    let events = fw.events();
    let reads: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, BusEvent::ReadData { .. }))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(reads.len(), 8);
    for (ch, &read) in reads.iter().enumerate() {
        // io on, arm, read, io off, disarm per channel.
        let base = ch * 5;
        assert_eq!(read, base + 2);
        assert!(matches!(events[base + 1], BusEvent::Write(w) if w.value & 0x8000 != 0));
        assert!(matches!(events[base + 3], BusEvent::Write(w) if w.addr == 0x03 && w.value & 0x3F00 == 0));
    }
}

#[test]
fn two_channel_tick_is_golden_prefix() {
    let mut fw = traced_firmware(ChannelMode::Two);
    fw.init().unwrap();
    fw.clear_trace();
    let frame = fw.run_tick(0.0).unwrap();
    assert_eq!(frame.resistances.len(), 2);
    let text = format_trace(&fw.capture_trace());
    let prefix: String = TICK_GOLDEN.lines().take(8).map(|l| format!("{l}\n")).collect();
    assert_eq!(text, prefix);
}
