//! Process-wide audit of which sample indices each pipeline phase reads.
//!
//! Every batch gather reports its phase and indices here. Recording is off
//! by default (one relaxed atomic load per gather); tests that check the
//! "unlearning never reads forgotten data" invariant switch it on, run a
//! pipeline, and inspect the drained log. Because the log is global, such
//! tests must not run concurrently with each other — keep them in one
//! serialized test binary.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

/// Which part of the pipeline asked for the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessPhase {
    /// Original federated training, before any unlearning request exists.
    Train,
    /// Full retraining on retained data.
    Retrain,
    /// FedEraser calibration rounds on retained data.
    Calibrate,
    /// Fisher information estimation on retained data.
    Fisher,
    /// Gradient ascent on the forgotten set (the only unlearning phase
    /// allowed to read it).
    Ascent,
    /// Post-unlearning fine-tuning rounds on retained data.
    FineTune,
    /// The target client's first local update after unlearning, on its
    /// retained data.
    PostUpdate,
    /// Accuracy / loss measurement; may read anything.
    Eval,
}

impl AccessPhase {
    /// Whether this phase may legitimately read forgotten samples once an
    /// unlearning request is in effect.
    pub fn may_read_forgotten(self) -> bool {
        matches!(self, AccessPhase::Ascent | AccessPhase::Eval)
    }
}

/// One batch gather: the phase plus the dataset indices it touched.
#[derive(Debug, Clone)]
pub struct AccessRecord {
    pub phase: AccessPhase,
    pub indices: Vec<usize>,
}

static ENABLED: AtomicBool = AtomicBool::new(false);
static LOG: Mutex<Vec<AccessRecord>> = Mutex::new(Vec::new());

/// Starts recording, clearing anything already logged.
pub fn enable() {
    LOG.lock().unwrap().clear();
    ENABLED.store(true, Ordering::SeqCst);
}

/// Stops recording and returns everything captured since [`enable`].
pub fn drain() -> Vec<AccessRecord> {
    ENABLED.store(false, Ordering::SeqCst);
    std::mem::take(&mut *LOG.lock().unwrap())
}

pub fn is_enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

/// Called by the batch gatherer; a no-op unless auditing is enabled.
pub fn record(phase: AccessPhase, indices: &[usize]) {
    if !ENABLED.load(Ordering::Relaxed) {
        return;
    }
    LOG.lock().unwrap().push(AccessRecord { phase, indices: indices.to_vec() });
}
