//! Deliberate kernel faults for exercising the self-check.

use std::cell::Cell;

thread_local! {
    static CONV_BACKWARD: Cell<bool> = const { Cell::new(false) };
}

pub fn conv_backward_fault() -> bool {
    CONV_BACKWARD.with(Cell::get)
}

/// Corrupts the conv kernel gradient on this thread until the guard drops.
pub fn inject_conv_backward_fault() -> FaultGuard {
    CONV_BACKWARD.with(|c| c.set(true));
    FaultGuard(())
}

pub struct FaultGuard(());

impl Drop for FaultGuard {
    fn drop(&mut self) {
        CONV_BACKWARD.with(|c| c.set(false));
    }
}
