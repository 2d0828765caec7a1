use super::{PreprocessError, SignalOrder};
use crate::ingest::SignalRecord;

/// Value held by a signal's row until its first observation.
pub const UNSEEN_VALUE: f32 = 0.5;

/// First-in-first-out history of forward-filled signal values.
///
/// Column 0 is the most recent message step. Every push shifts the history by
/// one column and copies the previous newest column, overwriting only the rows
/// carried by the incoming message.
#[derive(Debug, Clone)]
pub struct DataQueue {
    m: usize,
    q: usize,
    /// Column-major ring buffer, `m` values per column.
    cells: Vec<f32>,
    labels: Vec<bool>,
    head: usize,
    steps: u64,
    initialized: Vec<bool>,
    uninitialized: usize,
    /// Maps a signal index to its row.
    row_of: Vec<usize>,
}

impl DataQueue {
    /// Empty queue with signals on rows in index order.
    pub fn new(m: usize, q: usize) -> Self {
        Self::with_rows(m, q, (0..m).collect())
    }

    /// Empty queue placing signal `order.permutation[r]` on row `r`.
    pub fn with_order(q: usize, order: &SignalOrder) -> Self {
        Self::with_rows(order.len(), q, order.inverse())
    }

    fn with_rows(m: usize, q: usize, row_of: Vec<usize>) -> Self {
        assert!(q > 0, "queue depth must be positive");
        Self {
            m,
            q,
            cells: vec![UNSEEN_VALUE; m * q],
            labels: vec![false; q],
            head: 0,
            steps: 0,
            initialized: vec![false; m],
            uninitialized: m,
            row_of,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.q
    }

    /// Number of records pushed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Whether each row has been observed at least once.
    pub fn initialized_mask(&self) -> &[bool] {
        &self.initialized
    }

    /// All rows observed and the full depth filled with real steps.
    pub fn is_warm(&self) -> bool {
        self.uninitialized == 0 && self.steps >= self.q as u64
    }

    /// Appends one already-scaled record as the newest column.
    pub fn push(&mut self, record: &SignalRecord) {
        let m = self.m;
        let prev = self.head;
        self.head = (self.head + self.q - 1) % self.q;
        if self.q > 1 {
            let (src, dst) = (prev * m, self.head * m);
            self.cells.copy_within(src..src + m, dst);
        }
        let base = self.head * m;
        for &(signal, value) in &record.values {
            let row = self.row_of[signal];
            self.cells[base + row] = (value as f32).clamp(0.0, 1.0);
            if !self.initialized[row] {
                self.initialized[row] = true;
                self.uninitialized -= 1;
            }
        }
        self.labels[self.head] = record.label.is_attack();
        self.steps += 1;
    }

    /// Value of `row` at column `col` (0 = newest).
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.cells[self.slot(col) * self.m + row]
    }

    /// The `m` values of column `col`.
    pub fn column(&self, col: usize) -> &[f32] {
        let s = self.slot(col) * self.m;
        &self.cells[s..s + self.m]
    }

    /// Attack label of the record that produced column `col`.
    pub fn label(&self, col: usize) -> bool {
        self.labels[self.slot(col)]
    }

    fn slot(&self, col: usize) -> usize {
        debug_assert!(col < self.q);
        (self.head + col) % self.q
    }
}

/// An `m × w` image sampled from the queue at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub period: usize,
    pub width: usize,
    pub m: usize,
    /// Row-major, `grid[row * width + k]`.
    pub grid: Vec<f32>,
    /// Index of the record behind column 0.
    pub origin_step: u64,
    /// Per-column attack flags: OR over the `period` raw steps a column stands for.
    pub labels: Vec<bool>,
}

impl View {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.grid[row * self.width + col]
    }

    pub fn is_attack(&self) -> bool {
        self.labels.iter().any(|&l| l)
    }
}

/// Samples one view per period: column `k` of the view for period `T` is queue
/// column `k * T`.
pub fn sample_views(queue: &DataQueue, periods: &[usize], w: usize) -> Result<Vec<View>, PreprocessError> {
    periods.iter().map(|&t| sample_view(queue, t, w)).collect()
}

pub(crate) fn sample_view(queue: &DataQueue, period: usize, w: usize) -> Result<View, PreprocessError> {
    if period == 0 {
        return Err(PreprocessError::ZeroPeriod);
    }
    if queue.q < w * period {
        return Err(PreprocessError::QueueTooShallow { q: queue.q, w, period });
    }
    let m = queue.m;
    let mut grid = vec![0.0; m * w];
    let mut labels = vec![false; w];
    for k in 0..w {
        let col = queue.column(k * period);
        for (row, &v) in col.iter().enumerate() {
            grid[row * w + k] = v;
        }
        labels[k] = (k * period..(k + 1) * period).any(|c| queue.label(c));
    }
    Ok(View { period, width: w, m, grid, origin_step: queue.steps.saturating_sub(1), labels })
}
