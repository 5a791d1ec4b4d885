use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use shm_core::wire::TelemetryFrame;

use super::store::CsvStore;
use super::GatewayError;

/// When a stored frame triggers a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRule {
    EveryFrame,
    /// Fires when any channel moved at least this many ohm since the last
    /// trigger. The first frame always fires.
    Delta(f64),
}

impl TriggerRule {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self {
            TriggerRule::Delta(d) if !(d.is_finite() && *d >= 0.0) => {
                Err(GatewayError::InvalidConfig(format!("delta threshold {d}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TriggerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerRule::EveryFrame => f.write_str("every-frame"),
            TriggerRule::Delta(d) => write!(f, "delta:{d}"),
        }
    }
}

impl FromStr for TriggerRule {
    type Err = String;

    /// `every-frame` or `delta:OHMS`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "every-frame" {
            return Ok(TriggerRule::EveryFrame);
        }
        let threshold = s
            .strip_prefix("delta:")
            .ok_or_else(|| format!("unknown trigger rule {s:?}"))?
            .parse::<f64>()
            .map_err(|e| format!("bad delta threshold: {e}"))?;
        let rule = TriggerRule::Delta(threshold);
        rule.validate().map_err(|e| e.to_string())?;
        Ok(rule)
    }
}

#[derive(Debug, Clone)]
pub struct TriggerState {
    rule: TriggerRule,
    reference: Option<Vec<f64>>,
}

impl TriggerState {
    pub fn new(rule: TriggerRule) -> Self {
        Self { rule, reference: None }
    }

    pub fn fire(&mut self, resistances: &[f64]) -> bool {
        let fired = match (self.rule, &self.reference) {
            (TriggerRule::EveryFrame, _) | (TriggerRule::Delta(_), None) => true,
            (TriggerRule::Delta(threshold), Some(reference)) => {
                reference.len() != resistances.len()
                    || reference
                        .iter()
                        .zip(resistances)
                        .any(|(a, b)| (b - a).abs() >= threshold)
            }
        };
        if fired {
            self.reference = Some(resistances.to_vec());
        }
        fired
    }
}

/// Remembers the most recent counters of one node.
#[derive(Debug, Clone)]
pub struct DuplicateFilter {
    capacity: usize,
    order: VecDeque<u32>,
    seen: HashSet<u32>,
}

impl DuplicateFilter {
    pub const DEFAULT_WINDOW: usize = 1024;

    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), order: VecDeque::new(), seen: HashSet::new() }
    }

    pub fn contains(&self, counter: u32) -> bool {
        self.seen.contains(&counter)
    }

    pub fn insert(&mut self, counter: u32) {
        if self.seen.insert(counter) {
            self.order.push_back(counter);
            if self.order.len() > self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.seen.remove(&old);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Stored { row: u64, trigger: bool },
    Duplicate,
}

struct NodeState {
    store: CsvStore,
    duplicates: DuplicateFilter,
    trigger: TriggerState,
}

/// Single owner of all per-node tables.
pub struct Ingestor {
    dir: PathBuf,
    rule: TriggerRule,
    nodes: HashMap<u16, NodeState>,
}

pub fn node_table_name(node_id: u16) -> String {
    format!("node_{node_id}.csv")
}

impl Ingestor {
    pub fn new(dir: PathBuf, rule: TriggerRule) -> Result<Self, GatewayError> {
        rule.validate()?;
        std::fs::create_dir_all(&dir).map_err(|e| GatewayError::Persistence(e.to_string()))?;
        Ok(Self { dir, rule, nodes: HashMap::new() })
    }

    pub fn table_path(&self, node_id: u16) -> PathBuf {
        self.dir.join(node_table_name(node_id))
    }

    /// Stores the frame as row `t` of its node's table unless its counter was
    /// already seen, then applies the trigger rule.
    pub fn ingest(&mut self, frame: &TelemetryFrame, t: f64) -> Result<IngestOutcome, GatewayError> {
        if !self.nodes.contains_key(&frame.node_id) {
            let (store, _) = CsvStore::open(&self.table_path(frame.node_id), frame.resistances.len())?;
            self.nodes.insert(
                frame.node_id,
                NodeState {
                    store,
                    duplicates: DuplicateFilter::new(DuplicateFilter::DEFAULT_WINDOW),
                    trigger: TriggerState::new(self.rule),
                },
            );
        }
        let node = self.nodes.get_mut(&frame.node_id).expect("inserted above");
        if node.duplicates.contains(frame.counter) {
            return Ok(IngestOutcome::Duplicate);
        }
        let row = node.store.append(t, &frame.resistances)?;
        node.duplicates.insert(frame.counter);
        let trigger = node.trigger.fire(&frame.resistances);
        Ok(IngestOutcome::Stored { row, trigger })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(counter: u32, r1: f64) -> TelemetryFrame {
        TelemetryFrame::new(3, counter, vec![r1, 42.0]).unwrap()
    }

    #[test]
    fn delta_rule_hand_trace() {
        let mut t = TriggerState::new(TriggerRule::Delta(0.5));
        let fired: Vec<bool> = [50.0, 50.2, 51.0].iter().map(|&r| t.fire(&[r, 42.0])).collect();
        assert_eq!(fired, vec![true, false, true]);
    }

    #[test]
    fn every_frame_rule() {
        let mut t = TriggerState::new(TriggerRule::EveryFrame);
        assert!((0..5).all(|_| t.fire(&[1.0])));
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("every-frame".parse::<TriggerRule>().unwrap(), TriggerRule::EveryFrame);
        assert_eq!("delta:0.5".parse::<TriggerRule>().unwrap(), TriggerRule::Delta(0.5));
        assert!("delta:-1".parse::<TriggerRule>().is_err());
        assert!("sometimes".parse::<TriggerRule>().is_err());
        assert_eq!(TriggerRule::Delta(0.5).to_string(), "delta:0.5");
    }

    #[test]
    fn duplicate_window_evicts_oldest() {
        let mut f = DuplicateFilter::new(2);
        f.insert(1);
        f.insert(2);
        assert!(f.contains(1));
        f.insert(3);
        assert!(!f.contains(1) && f.contains(2) && f.contains(3));
    }

    #[test]
    fn ingest_drops_duplicates_and_persists_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut ing = Ingestor::new(dir.path().to_path_buf(), TriggerRule::Delta(0.5)).unwrap();
        assert_eq!(ing.ingest(&frame(0, 50.0), 1.0).unwrap(), IngestOutcome::Stored { row: 0, trigger: true });
        assert_eq!(ing.ingest(&frame(1, 50.2), 2.0).unwrap(), IngestOutcome::Stored { row: 1, trigger: false });
        assert_eq!(ing.ingest(&frame(1, 50.2), 2.5).unwrap(), IngestOutcome::Duplicate);
        assert_eq!(ing.ingest(&frame(2, 51.0), 3.0).unwrap(), IngestOutcome::Stored { row: 2, trigger: true });
        let text = std::fs::read_to_string(ing.table_path(3)).unwrap();
        let rows = shm_core::dataset::parse_resistance_csv(&text).unwrap();
        let r1: Vec<f64> = rows.iter().map(|r| r.resistances[0]).collect();
        assert_eq!(r1, vec![50.0, 50.2, 51.0]);
    }
}
