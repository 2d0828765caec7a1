//! Turning a record stream into fixed-shape images for the autoencoders.
//!
//! Records are scaled to `[0, 1]`, reordered so correlated signals sit on
//! neighbouring rows, forward-filled into a [`DataQueue`] and finally sampled
//! into one [`View`] per sampling period.

mod order;
mod queue;
mod scaler;

pub use order::{fit_order, pearson_matrix, select_per_critical, select_signals, Merge, SignalOrder};
pub use queue::{sample_views, DataQueue, View, UNSEEN_VALUE};
pub use scaler::Scaler;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("need at least two observations per signal, got {0}")]
    DegenerateInput(usize),
    #[error("budget {budget} is smaller than the {critical} critical signals")]
    BudgetTooSmall { budget: usize, critical: usize },
    #[error("budget {budget} exceeds the {total} available signals")]
    BudgetTooLarge { budget: usize, total: usize },
    #[error("signal index {0} out of range")]
    SignalOutOfRange(usize),
    #[error("signal {0} was never observed")]
    UnseenSignal(usize),
    #[error("queue depth {q} cannot hold {w} columns at period {period}")]
    QueueTooShallow { q: usize, w: usize, period: usize },
    #[error("invalid permutation of {0} signals")]
    InvalidPermutation(usize),
    #[error("sampling period must be positive")]
    ZeroPeriod,
}

/// Smallest queue depth that can serve every period at width `w`.
pub fn queue_depth(w: usize, periods: &[usize]) -> usize {
    w * periods.iter().copied().max().unwrap_or(1)
}
