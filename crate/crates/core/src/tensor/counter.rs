//! Per-thread multiply counters bumped by the convolution and FFT kernels.
//!
//! Convolutions add the nominal multiply count of the window sum (padded taps
//! included). The FFT adds 10 per radix-2 butterfly it executes, so a full
//! power-of-two transform of an `h × w` plane contributes `5·h·w·log2(h·w)`.

use std::cell::Cell;

thread_local! {
    static CONV: Cell<u64> = const { Cell::new(0) };
    static FFT: Cell<u64> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCount {
    pub conv: u64,
    pub fft: u64,
}

impl MacCount {
    pub fn total(&self, include_fft: bool) -> u64 {
        if include_fft {
            self.conv + self.fft
        } else {
            self.conv
        }
    }
}

pub fn reset() {
    CONV.with(|c| c.set(0));
    FFT.with(|c| c.set(0));
}

pub fn read() -> MacCount {
    MacCount {
        conv: CONV.with(Cell::get),
        fft: FFT.with(Cell::get),
    }
}

/// Run `f` with zeroed counters and return its result plus what it counted.
/// Counters are restored to their previous values afterwards.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCount) {
    let before = read();
    reset();
    let out = f();
    let counted = read();
    CONV.with(|c| c.set(before.conv));
    FFT.with(|c| c.set(before.fft));
    (out, counted)
}

pub(crate) fn add_conv(n: u64) {
    CONV.with(|c| c.set(c.get() + n));
}

pub(crate) fn add_fft(n: u64) {
    FFT.with(|c| c.set(c.get() + n));
}
