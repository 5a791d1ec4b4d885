//! Simulated radio link: serialisation delay at a capped bit rate, fixed
//! latency, and independent frame loss.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode, encode, TelemetryFrame, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Bits per second.
    pub throughput: f64,
    /// Probability in `[0, 1]` that a frame is lost.
    pub loss: f64,
    /// Seconds added to every delivery.
    pub latency: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            throughput: 2_000_000.0,
            loss: 0.0,
            latency: 0.0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), WireError> {
        if !(self.throughput.is_finite() && self.throughput > 0.0) {
            return Err(WireError::InvalidLink(format!("throughput {}", self.throughput)));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(WireError::InvalidLink(format!("loss {}", self.loss)));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(WireError::InvalidLink(format!("latency {}", self.latency)));
        }
        Ok(())
    }

    /// When a message of `size` bytes handed over at `now` arrives.
    pub fn delivery_time(&self, size: usize, now: f64) -> f64 {
        now + self.latency + (size * 8) as f64 / self.throughput
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkOutcome {
    Delivered { at: f64, bytes: Vec<u8> },
    Dropped,
}

pub fn link_send<R: Rng + ?Sized>(
    frame: &TelemetryFrame,
    config: &LinkConfig,
    now: f64,
    rng: &mut R,
) -> Result<LinkOutcome, WireError> {
    config.validate()?;
    let bytes = encode(frame)?;
    if config.loss > 0.0 && rng.random_bool(config.loss) {
        return Ok(LinkOutcome::Dropped);
    }
    Ok(LinkOutcome::Delivered {
        at: config.delivery_time(bytes.len(), now),
        bytes,
    })
}

/// One node-to-gateway link. Frames leave in send order; a frame is never
/// handed out before every earlier frame on the link.
#[derive(Debug, Clone)]
pub struct VirtualLink {
    config: LinkConfig,
    rng: ChaCha8Rng,
    in_flight: VecDeque<(f64, Vec<u8>)>,
    sent: u64,
    dropped: u64,
}

impl VirtualLink {
    pub fn new(config: LinkConfig, seed: u64) -> Result<Self, WireError> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            in_flight: VecDeque::new(),
            sent: 0,
            dropped: 0,
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn send(&mut self, frame: &TelemetryFrame, now: f64) -> Result<LinkOutcome, WireError> {
        let outcome = link_send(frame, &self.config, now, &mut self.rng)?;
        self.sent += 1;
        match &outcome {
            LinkOutcome::Delivered { at, bytes } => self.in_flight.push_back((*at, bytes.clone())),
            LinkOutcome::Dropped => self.dropped += 1,
        }
        Ok(outcome)
    }

    /// Frames whose delivery time has passed by `now`, oldest first.
    pub fn receive(&mut self, now: f64) -> Vec<TelemetryFrame> {
        let mut out = Vec::new();
        while let Some((at, _)) = self.in_flight.front() {
            if *at > now {
                break;
            }
            let (_, bytes) = self.in_flight.pop_front().expect("front exists");
            out.push(decode(&bytes).expect("link carries frames it encoded"));
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.sent, self.dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(counter: u32) -> TelemetryFrame {
        TelemetryFrame::new(1, counter, vec![47.0, 100.0]).unwrap()
    }

    #[test]
    fn serialisation_delay() {
        let c = LinkConfig::default();
        assert!((c.delivery_time(30, 0.0) - 1.2e-4).abs() < 1e-15);
        let c = LinkConfig { latency: 0.05, ..c };
        let base = LinkConfig::default().delivery_time(30, 2.0);
        assert!((c.delivery_time(30, 2.0) - base - 0.05).abs() < 1e-12);
    }

    #[test]
    fn send_reports_delivery_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = frame(0);
        let out = link_send(&f, &LinkConfig::default(), 1.0, &mut rng).unwrap();
        match out {
            LinkOutcome::Delivered { at, bytes } => {
                assert_eq!(bytes.len(), 32);
                assert_eq!(at, 1.0 + 256.0 / 2e6);
            }
            LinkOutcome::Dropped => panic!("lossless link dropped"),
        }
    }

    #[test]
    fn total_loss_drops_everything() {
        let mut link = VirtualLink::new(LinkConfig { loss: 1.0, ..Default::default() }, 3).unwrap();
        for c in 0..100 {
            assert_eq!(link.send(&frame(c), c as f64).unwrap(), LinkOutcome::Dropped);
        }
        assert_eq!(link.stats(), (100, 100));
        assert!(link.receive(1e9).is_empty());
    }

    #[test]
    fn lossless_link_preserves_counter_order() {
        let mut link = VirtualLink::new(LinkConfig { latency: 0.01, ..Default::default() }, 0).unwrap();
        for c in 0..50 {
            link.send(&frame(c), c as f64 * 1e-5).unwrap();
        }
        let mut got = Vec::new();
        let mut t = 0.0;
        while link.in_flight() > 0 {
            t += 1e-4;
            got.extend(link.receive(t).into_iter().map(|f| f.counter));
        }
        assert_eq!(got, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn partial_loss_is_seeded() {
        let run = |seed| {
            let mut link = VirtualLink::new(LinkConfig { loss: 0.3, ..Default::default() }, seed).unwrap();
            (0..200).map(|c| link.send(&frame(c), 0.0).unwrap() == LinkOutcome::Dropped).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        let dropped = run(11).iter().filter(|d| **d).count();
        assert!((30..90).contains(&dropped), "dropped {dropped}");
    }

    #[test]
    fn invalid_configs() {
        assert!(LinkConfig { throughput: 0.0, ..Default::default() }.validate().is_err());
        assert!(LinkConfig { loss: 1.5, ..Default::default() }.validate().is_err());
        assert!(LinkConfig { latency: -1.0, ..Default::default() }.validate().is_err());
    }
}
