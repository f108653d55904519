//! Per-timepoint valence labels as a contiguous run-length timeline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ValenceState;
use crate::error::{Error, Result};

pub const TIMELINE_SCHEMA_VERSION: u32 = 1;

/// Default debounce applied before generation.
pub const DEFAULT_MIN_SEGMENT_S: f64 = 1.0;

const PERMUTE_MAX_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffectSegment {
    pub state: ValenceState,
    pub start_s: f64,
    pub end_s: f64,
}

impl AffectSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Contiguous segments from 0 to `total_duration_s`; neighbours always differ
/// in state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectTimeline {
    schema_version: u32,
    total_duration_s: f64,
    segments: Vec<AffectSegment>,
}

impl AffectTimeline {
    pub fn new(segments: Vec<AffectSegment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::invalid("timeline needs at least one segment"))?;
        if first.start_s != 0.0 {
            return Err(Error::invalid("timeline must start at 0"));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.start_s < s.end_s) {
                return Err(Error::invalid(format!("segment {i}: start must precede end")));
            }
            if i > 0 {
                let prev = &segments[i - 1];
                if s.start_s != prev.end_s {
                    return Err(Error::invalid(format!("segment {i}: not contiguous")));
                }
                if s.state == prev.state {
                    return Err(Error::invalid(format!(
                        "segment {i}: same state as its predecessor"
                    )));
                }
            }
        }
        let total_duration_s = segments.last().expect("non-empty").end_s;
        Ok(AffectTimeline {
            schema_version: TIMELINE_SCHEMA_VERSION,
            total_duration_s,
            segments,
        })
    }

    /// Merges equal-state neighbours, then validates.
    fn from_runs(mut segments: Vec<AffectSegment>) -> Result<Self> {
        segments.dedup_by(|next, prev| {
            if next.state == prev.state {
                prev.end_s = next.end_s;
                true
            } else {
                false
            }
        });
        AffectTimeline::new(segments)
    }

    pub fn segments(&self) -> &[AffectSegment] {
        &self.segments
    }

    pub fn total_duration_s(&self) -> f64 {
        self.total_duration_s
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn states(&self) -> Vec<ValenceState> {
        self.segments.iter().map(|s| s.state).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            schema_version: u32,
            total_duration_s: f64,
            segments: Vec<AffectSegment>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::parse("timeline", e))?;
        if raw.schema_version != TIMELINE_SCHEMA_VERSION {
            return Err(Error::parse(
                "timeline",
                format!("unsupported schema_version {}", raw.schema_version),
            ));
        }
        let t = AffectTimeline::new(raw.segments)?;
        if t.total_duration_s != raw.total_duration_s {
            return Err(Error::parse("timeline", "total_duration_s does not match segments"));
        }
        Ok(t)
    }
}

/// Run-length encoding with segment boundaries at `index / rate`.
pub fn to_timeline(labels: &[ValenceState], sample_rate_hz: f64) -> Result<AffectTimeline> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot build a timeline from no labels"));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            segments.push(AffectSegment {
                state: labels[start],
                start_s: start as f64 / sample_rate_hz,
                end_s: i as f64 / sample_rate_hz,
            });
            start = i;
        }
    }
    AffectTimeline::new(segments)
}

/// Back to one label per timepoint at `sample_rate_hz`.
pub fn expand(timeline: &AffectTimeline, sample_rate_hz: f64) -> Vec<ValenceState> {
    let mut out = Vec::new();
    for seg in &timeline.segments {
        let end = (seg.end_s * sample_rate_hz).round() as usize;
        out.resize(end.max(out.len()), seg.state);
    }
    out
}

/// Folds segments shorter than `min_duration_s` into their longer neighbour
/// (the earlier one on ties), shortest first, until none remain.
pub fn smooth(timeline: &AffectTimeline, min_duration_s: f64) -> Result<AffectTimeline> {
    if !(min_duration_s >= 0.0) {
        return Err(Error::invalid("min_duration_s must be >= 0"));
    }
    let mut segs = timeline.segments.clone();
    while segs.len() > 1 {
        let shortest = segs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.duration_s() < min_duration_s)
            .min_by(|(ia, a), (ib, b)| {
                a.duration_s()
                    .total_cmp(&b.duration_s())
                    .then(ia.cmp(ib))
            })
            .map(|(i, _)| i);
        let Some(i) = shortest else { break };
        let into_prev = match (i.checked_sub(1).map(|j| &segs[j]), segs.get(i + 1)) {
            (Some(p), Some(n)) => p.duration_s() >= n.duration_s(),
            (Some(_), None) => true,
            (None, _) => false,
        };
        if into_prev {
            segs[i - 1].end_s = segs[i].end_s;
        } else {
            segs[i + 1].start_s = segs[i].start_s;
        }
        segs.remove(i);
        segs.dedup_by(|next, prev| {
            if next.state == prev.state {
                prev.end_s = next.end_s;
                true
            } else {
                false
            }
        });
    }
    AffectTimeline::new(segs)
}

/// Shuffles states over the fixed sequence of duration slots. Redraws until
/// the state sequence differs from the input, then merges any equal-state
/// neighbours the shuffle produced.
pub fn permute(timeline: &AffectTimeline, seed: u64) -> Result<AffectTimeline> {
    if timeline.len() < 2 {
        return Err(Error::invalid("permute needs at least two segments"));
    }
    let original = timeline.states();
    if original.iter().all(|&s| s == original[0]) {
        return Err(Error::invalid("all segments share one state; no distinct permutation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = original.clone();
    for _ in 0..PERMUTE_MAX_TRIES {
        states.shuffle(&mut rng);
        if states != original {
            let segs = timeline
                .segments
                .iter()
                .zip(&states)
                .map(|(slot, &state)| AffectSegment { state, ..*slot })
                .collect();
            return AffectTimeline::from_runs(segs);
        }
    }
    Err(Error::invalid(format!(
        "no distinct permutation found in {PERMUTE_MAX_TRIES} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ValenceState::*;

    fn seg(state: ValenceState, start_s: f64, end_s: f64) -> AffectSegment {
        AffectSegment { state, start_s, end_s }
    }

    fn states(codes: &[i64]) -> Vec<ValenceState> {
        codes.iter().map(|&c| ValenceState::from_code(c).unwrap()).collect()
    }

    #[test]
    fn run_length_example() {
        let t = to_timeline(&states(&[0, 0, 1, 1, 1, -1]), 1.0).unwrap();
        assert_eq!(
            t.segments(),
            [seg(Neutral, 0.0, 2.0), seg(Positive, 2.0, 5.0), seg(Negative, 5.0, 6.0)]
        );
        assert_eq!(t.total_duration_s(), 6.0);
    }

    #[test]
    fn uniform_and_alternating() {
        let t = to_timeline(&[Positive; 7], 2.0).unwrap();
        assert_eq!(t.segments(), [seg(Positive, 0.0, 3.5)]);
        let t = to_timeline(&[Positive, Negative, Positive, Negative], 10.0).unwrap();
        assert_eq!(t.len(), 4);
        for s in t.segments() {
            assert!((s.duration_s() - 0.1).abs() < 1e-12);
        }
        assert!(to_timeline(&[], 1.0).is_err());
    }

    #[test]
    fn smooth_examples() {
        let t = AffectTimeline::new(vec![
            seg(Positive, 0.0, 5.0),
            seg(Negative, 5.0, 5.2),
            seg(Positive, 5.2, 10.0),
        ])
        .unwrap();
        assert_eq!(smooth(&t, 0.0).unwrap(), t);
        assert_eq!(smooth(&t, 0.5).unwrap().segments(), [seg(Positive, 0.0, 10.0)]);

        let single = AffectTimeline::new(vec![seg(Neutral, 0.0, 0.3)]).unwrap();
        assert_eq!(smooth(&single, 1.0).unwrap(), single);
        assert!(smooth(&t, -1.0).is_err());
    }

    #[test]
    fn smooth_prefers_longer_then_earlier_neighbour() {
        let t = AffectTimeline::new(vec![
            seg(Positive, 0.0, 2.0),
            seg(Neutral, 2.0, 2.5),
            seg(Negative, 2.5, 6.0),
        ])
        .unwrap();
        assert_eq!(
            smooth(&t, 1.0).unwrap().segments(),
            [seg(Positive, 0.0, 2.0), seg(Negative, 2.0, 6.0)]
        );
        let tie = AffectTimeline::new(vec![
            seg(Positive, 0.0, 2.0),
            seg(Neutral, 2.0, 2.5),
            seg(Negative, 2.5, 4.5),
        ])
        .unwrap();
        assert_eq!(
            smooth(&tie, 1.0).unwrap().segments(),
            [seg(Positive, 0.0, 2.5), seg(Negative, 2.5, 4.5)]
        );
    }

    #[test]
    fn permute_two_segments() {
        let t = AffectTimeline::new(vec![seg(Positive, 0.0, 3.0), seg(Negative, 3.0, 5.0)]).unwrap();
        let p = permute(&t, 1).unwrap();
        assert_eq!(p.segments(), [seg(Negative, 0.0, 3.0), seg(Positive, 3.0, 5.0)]);
        assert_eq!(permute(&t, 9).unwrap(), permute(&t, 9).unwrap());
    }

    #[test]
    fn permute_rejects_single_state() {
        let t = AffectTimeline::new(vec![seg(Neutral, 0.0, 4.0)]).unwrap();
        assert!(permute(&t, 0).is_err());
    }

    #[test]
    fn json_roundtrip_and_schema_check() {
        let t = to_timeline(&states(&[1, 1, 0, -1, -1]), 2.0).unwrap();
        let text = t.to_json();
        assert_eq!(AffectTimeline::from_json(&text).unwrap(), t);
        let bad = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(AffectTimeline::from_json(&bad).is_err());
    }

    #[test]
    fn constructor_rejects_broken_timelines() {
        assert!(AffectTimeline::new(vec![]).is_err());
        assert!(AffectTimeline::new(vec![seg(Positive, 1.0, 2.0)]).is_err());
        assert!(AffectTimeline::new(vec![seg(Positive, 0.0, 1.0), seg(Positive, 1.0, 2.0)]).is_err());
        assert!(AffectTimeline::new(vec![seg(Positive, 0.0, 1.0), seg(Negative, 1.5, 2.0)]).is_err());
    }

    fn arb_labels() -> impl Strategy<Value = Vec<ValenceState>> {
        prop::collection::vec(
            (0usize..3, 1usize..30).prop_map(|(s, n)| vec![ValenceState::ALL[s]; n]),
            1..12,
        )
        .prop_map(|runs| runs.concat())
    }

    fn durations_sum(t: &AffectTimeline) -> f64 {
        t.segments().iter().map(AffectSegment::duration_s).sum()
    }

    proptest! {
        #[test]
        fn expand_inverts_to_timeline(labels in arb_labels(), rate in prop::sample::select(vec![1.0, 10.0, 128.0, 250.0])) {
            let t = to_timeline(&labels, rate).unwrap();
            prop_assert_eq!(expand(&t, rate), labels);
        }

        #[test]
        fn smooth_is_idempotent_and_keeps_duration(labels in arb_labels(), min in 0.0f64..2.0) {
            let t = to_timeline(&labels, 10.0).unwrap();
            let once = smooth(&t, min).unwrap();
            prop_assert_eq!(smooth(&once, min).unwrap(), once.clone());
            prop_assert_eq!(once.total_duration_s(), t.total_duration_s());
            prop_assert!((durations_sum(&once) - t.total_duration_s()).abs() < 1e-9);
            if once.len() > 1 {
                prop_assert!(once.segments().iter().all(|s| s.duration_s() >= min));
            }
        }

        #[test]
        fn permute_keeps_slots_and_duration(labels in arb_labels(), seed in any::<u64>()) {
            let t = to_timeline(&labels, 10.0).unwrap();
            prop_assume!(t.len() >= 2);
            let p = permute(&t, seed).unwrap();
            prop_assert_eq!(p.total_duration_s(), t.total_duration_s());
            let bounds: Vec<f64> = t.segments().iter().map(|s| s.end_s).collect();
            for s in p.segments() {
                prop_assert!(bounds.contains(&s.end_s));
            }
            prop_assert!((durations_sum(&p) - t.total_duration_s()).abs() < 1e-9);
        }
    }
}
