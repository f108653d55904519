//! Label-conditional contrastive batch sampling across sessions.

use rand::Rng;

use crate::data::{extract_windows, LabeledSeries, ValenceState};
use crate::error::{Error, Result};

/// Address of one window: session index and window start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowRef {
    pub session: usize,
    pub window: usize,
}

/// Every window of every session, indexed by label.
#[derive(Debug, Clone)]
pub struct WindowPool {
    entries: Vec<WindowRef>,
    labels: Vec<ValenceState>,
    /// Position of each entry inside its label's list.
    rank_in_label: Vec<usize>,
    by_label: [Vec<usize>; 3],
    per_session: Vec<[usize; 3]>,
}

impl WindowPool {
    pub fn new(sessions: &[LabeledSeries], receptive_field: usize) -> Result<Self> {
        let mut entries = Vec::new();
        let mut labels = Vec::new();
        let mut rank_in_label = Vec::new();
        let mut by_label: [Vec<usize>; 3] = Default::default();
        let mut per_session = Vec::with_capacity(sessions.len());
        for (s, series) in sessions.iter().enumerate() {
            let windows = extract_windows(series, receptive_field)?;
            let mut hist = [0usize; 3];
            for w in 0..windows.len() {
                let label = windows.label(w);
                let list = &mut by_label[label.index()];
                rank_in_label.push(list.len());
                list.push(entries.len());
                entries.push(WindowRef {
                    session: s,
                    window: w,
                });
                labels.push(label);
                hist[label.index()] += 1;
            }
            per_session.push(hist);
        }
        if entries.is_empty() {
            return Err(Error::invalid("no sessions to sample from"));
        }
        for state in ValenceState::ALL {
            if by_label[state.index()].len() == 1 {
                return Err(Error::NoPositive(state));
            }
        }
        Ok(WindowPool {
            entries,
            labels,
            rank_in_label,
            by_label,
            per_session,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Window counts per label (`ValenceState::ALL` order) for one session.
    pub fn session_histogram(&self, session: usize) -> [usize; 3] {
        self.per_session[session]
    }

    pub fn label_of(&self, r: WindowRef) -> Option<ValenceState> {
        self.entries
            .iter()
            .position(|e| *e == r)
            .map(|i| self.labels[i])
    }

    fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.entries.len())
    }

    /// Uniform over same-label windows of any session, excluding the anchor.
    fn draw_positive<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> usize {
        let list = &self.by_label[self.labels[anchor].index()];
        let mut r = rng.random_range(0..list.len() - 1);
        if r >= self.rank_in_label[anchor] {
            r += 1;
        }
        list[r]
    }
}

/// `anchors[i]` pairs with `positives[i]`; every anchor is contrasted against
/// the full shared `negatives` list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<WindowRef>,
    pub positives: Vec<WindowRef>,
    pub negatives: Vec<WindowRef>,
}

pub fn sample_contrastive_batch<R: Rng + ?Sized>(
    pool: &WindowPool,
    batch_size: usize,
    rng: &mut R,
) -> ContrastiveBatch {
    let mut anchors = Vec::with_capacity(batch_size);
    let mut positives = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let a = pool.draw_index(rng);
        let p = pool.draw_positive(a, rng);
        anchors.push(pool.entries[a]);
        positives.push(pool.entries[p]);
    }
    let negatives = (0..batch_size)
        .map(|_| pool.entries[pool.draw_index(rng)])
        .collect();
    ContrastiveBatch {
        anchors,
        positives,
        negatives,
    }
}
