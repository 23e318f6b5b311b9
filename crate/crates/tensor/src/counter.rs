//! Per-thread tally of convolution multiply-adds actually executed by forward
//! passes. Used to cross-check analytic FLOP estimates.

use std::cell::Cell;

thread_local! {
    static CONV_MACS: Cell<u64> = const { Cell::new(0) };
}

pub fn reset_conv_macs() {
    CONV_MACS.with(|c| c.set(0));
}

pub fn conv_macs() -> u64 {
    CONV_MACS.with(|c| c.get())
}

pub(crate) fn add_conv_macs(n: u64) {
    CONV_MACS.with(|c| c.set(c.get() + n));
}
