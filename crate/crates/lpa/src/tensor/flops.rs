//! Multiply-accumulate instrumentation for forward-pass matrix products.
//!
//! The counter charges exactly `m*k*n` units per matmul and nothing for
//! elementwise ops, softmax, or norms. Products are split into two
//! buckets:
//!
//! * `weight_macs` — products where one operand is a model parameter
//!   (the Q/K/V/O and FFN projections),
//! * `activation_macs` — activation-activation products (attention
//!   scores and the score-times-value product).
//!
//! [`FlopCount::weighted_flops`] reproduces the accounting convention used
//! by the closed forms in [`crate::accounting`]: projection MACs count as
//! separate multiply and add operations (2 units), activation MACs as one
//! fused unit. `8L*d_in*d_out + 2L^2*d_out` for a dense attention layer is
//! exactly that weighting of the measured products.
//!
//! State is per-thread; instrument a run from the thread that executes it.

use std::cell::Cell;

#[derive(Clone, Copy, Default)]
struct CounterState {
    enabled: bool,
    weight_macs: u64,
    activation_macs: u64,
}

thread_local! {
    static STATE: Cell<CounterState> = Cell::new(CounterState::default());
}

/// Snapshot of counted multiply-accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopCount {
    pub weight_macs: u64,
    pub activation_macs: u64,
}

impl FlopCount {
    /// One unit per scalar multiply-accumulate, every matmul alike.
    pub fn total_macs(&self) -> u64 {
        self.weight_macs + self.activation_macs
    }

    /// Projection MACs as mul+add pairs, activation MACs fused; the
    /// convention of the closed-form attention accounting.
    pub fn weighted_flops(&self) -> u64 {
        2 * self.weight_macs + self.activation_macs
    }
}

pub fn enable() {
    STATE.with(|s| {
        let mut st = s.get();
        st.enabled = true;
        s.set(st);
    });
}

pub fn disable() {
    STATE.with(|s| {
        let mut st = s.get();
        st.enabled = false;
        s.set(st);
    });
}

pub fn reset() {
    STATE.with(|s| {
        let st = s.get();
        s.set(CounterState {
            enabled: st.enabled,
            ..CounterState::default()
        });
    });
}

pub fn snapshot() -> FlopCount {
    STATE.with(|s| {
        let st = s.get();
        FlopCount {
            weight_macs: st.weight_macs,
            activation_macs: st.activation_macs,
        }
    })
}

/// Run `f` with a fresh enabled counter; restores the previous counter
/// state afterwards and returns what `f` accumulated.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, FlopCount) {
    let saved = STATE.with(|s| s.get());
    STATE.with(|s| {
        s.set(CounterState {
            enabled: true,
            ..CounterState::default()
        })
    });
    let result = f();
    let count = snapshot();
    STATE.with(|s| s.set(saved));
    (result, count)
}

pub(crate) fn record_matmul(macs: u64, weight: bool) {
    STATE.with(|s| {
        let mut st = s.get();
        if st.enabled {
            if weight {
                st.weight_macs += macs;
            } else {
                st.activation_macs += macs;
            }
            s.set(st);
        }
    });
}
