//! Browser capture logs through ingestion. The exporter below follows the
//! capture tool's key rules: key-down on '1'/'3' opens an interval, key-up
//! closes it, auto-repeat is coalesced, and a press of the other key closes
//! the open interval at that instant.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rym::data::{align_labels, parse_capture_log, CaptureKind, CaptureLog, CAPTURE_LOG_SCHEMA_VERSION};
use rym::{Recording, ValenceEvent, ValenceState};

#[derive(Debug, Clone, Copy)]
enum Key {
    Down(char),
    Up(char),
}

fn export(script: &[(f64, Key)], end_s: f64, confidence: Option<u8>) -> String {
    let mut intervals = Vec::new();
    let mut open: Option<(char, f64)> = None;
    for &(t, key) in script {
        match key {
            Key::Down(c) => {
                if ValenceState::from_key(c).is_none() {
                    continue;
                }
                match open {
                    Some((held, _)) if held == c => {}
                    Some((held, start)) => {
                        if t > start {
                            intervals.push(ValenceEvent::new(start, t, ValenceState::from_key(held).unwrap()));
                        }
                        open = Some((c, t));
                    }
                    None => open = Some((c, t)),
                }
            }
            Key::Up(c) => {
                if let Some((held, start)) = open {
                    if held == c {
                        if t > start {
                            intervals.push(ValenceEvent::new(start, t, ValenceState::from_key(c).unwrap()));
                        }
                        open = None;
                    }
                }
            }
        }
    }
    if let Some((held, start)) = open {
        intervals.push(ValenceEvent::new(start, end_s, ValenceState::from_key(held).unwrap()));
    }
    let log = CaptureLog {
        schema_version: CAPTURE_LOG_SCHEMA_VERSION,
        session_kind: CaptureKind::Recall,
        subject_id: "s01".into(),
        start_wall_clock: "2024-05-01T09:30:00Z".into(),
        intervals,
        confidence,
        preference: None,
        focus_lost: None,
    };
    serde_json::to_string_pretty(&log).unwrap()
}

/// The state a viewer of the script would assign to time `t`.
fn held_at(script: &[(f64, Key)], t: f64) -> ValenceState {
    let mut current = None;
    for &(at, key) in script {
        if at > t {
            break;
        }
        match key {
            Key::Down(c) if ValenceState::from_key(c).is_some() => current = Some(c),
            Key::Up(c) if current == Some(c) => current = None,
            _ => {}
        }
    }
    current.and_then(ValenceState::from_key).unwrap_or(ValenceState::Neutral)
}

/// Holds, auto-repeats, overlapping opposite presses and stray keys on a
/// 1 ms clock.
fn scripted_keys(seed: u64, duration_s: f64) -> Vec<(f64, Key)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut script = Vec::new();
    let mut t = rng.random_range(0..500) as f64 / 1000.0;
    while t < duration_s - 5.0 {
        let key = if rng.random_bool(0.5) { '1' } else { '3' };
        let hold = rng.random_range(200..3000) as f64 / 1000.0;
        script.push((t, Key::Down(key)));
        let mut r = t + 0.5;
        while r < t + hold {
            script.push((r, Key::Down(key)));
            r += 0.033;
        }
        if rng.random_bool(0.2) {
            script.push((t + hold / 2.0, Key::Down('2')));
        }
        if rng.random_bool(0.25) {
            // the other key goes down before this one is released
            let other = if key == '1' { '3' } else { '1' };
            let at = t + hold;
            script.push((at, Key::Down(other)));
            script.push((at + 0.1, Key::Up(key)));
            let up = at + rng.random_range(200..1500) as f64 / 1000.0;
            script.push((up, Key::Up(other)));
            t = up + rng.random_range(0..800) as f64 / 1000.0;
        } else {
            script.push((t + hold, Key::Up(key)));
            t += hold + rng.random_range(0..800) as f64 / 1000.0;
        }
        t = (t * 1000.0).round() / 1000.0;
    }
    script.sort_by(|a, b| a.0.total_cmp(&b.0));
    script
}

#[test]
fn scripted_sessions_ingest_with_zero_label_mismatches() {
    let rate = 250.0;
    let duration = 60.0;
    let n = (duration * rate) as usize;
    let rec = Recording::new("s01", rate, vec!["fz".into()], Array2::zeros((1, n))).unwrap();
    for seed in 0..20 {
        let script = scripted_keys(seed, duration);
        let log = parse_capture_log(&export(&script, duration, Some(5))).unwrap();
        assert_eq!(log.confidence, Some(5));
        let series = align_labels(&rec, &log.intervals).unwrap();
        let mismatches = (0..n)
            .filter(|&i| series.labels()[i] != held_at(&script, i as f64 / rate))
            .count();
        assert_eq!(mismatches, 0, "seed {seed}");
    }
}

#[test]
fn spec_examples() {
    let hold = [(2.0, Key::Down('1')), (5.0, Key::Up('1'))];
    let log = parse_capture_log(&export(&hold, 10.0, None)).unwrap();
    assert_eq!(log.intervals, [ValenceEvent::new(2.0, 5.0, ValenceState::Positive)]);

    let log = parse_capture_log(&export(&[], 10.0, None)).unwrap();
    assert!(log.intervals.is_empty());

    let overlap = [(1.0, Key::Down('1')), (4.0, Key::Down('3')), (4.5, Key::Up('1')), (6.0, Key::Up('3'))];
    let log = parse_capture_log(&export(&overlap, 10.0, None)).unwrap();
    assert_eq!(
        log.intervals,
        [
            ValenceEvent::new(1.0, 4.0, ValenceState::Positive),
            ValenceEvent::new(4.0, 6.0, ValenceState::Negative),
        ]
    );
}

#[test]
fn confidence_out_of_range_is_rejected() {
    let hold = [(2.0, Key::Down('1')), (5.0, Key::Up('1'))];
    let e = parse_capture_log(&export(&hold, 10.0, Some(8))).unwrap_err();
    assert!(e.to_string().contains("confidence"), "{e}");
    assert!(parse_capture_log(&export(&hold, 10.0, Some(0))).is_err());
    assert!(parse_capture_log(&export(&hold, 10.0, Some(7))).is_ok());
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let text = export(&[], 10.0, None);
    let extra = text.replacen('{', "{\"extra\": 1,", 1);
    assert!(parse_capture_log(&extra).is_err());
    let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(parse_capture_log(&bumped).is_err());
}
