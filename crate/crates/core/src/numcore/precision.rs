//! Working precision switch.
//!
//! Storage is always `f64`. In the default 32-bit mode every op result is
//! rounded to the nearest `f32`, so values behave like single-precision
//! tensors and serialize losslessly to 32-bit files. The 64-bit mode skips
//! the rounding and exists for gradient and equivalence oracles.
//!
//! The mode is per thread so that concurrently running tests cannot observe
//! each other's setting. New threads start from `ARFLOW_F64` (`1` selects
//! 64-bit mode).

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

fn env_default() -> Precision {
    match std::env::var("ARFLOW_F64") {
        Ok(v) if v.trim() == "1" => Precision::F64,
        _ => Precision::F32,
    }
}

thread_local! {
    static MODE: Cell<Precision> = Cell::new(env_default());
}

pub fn precision() -> Precision {
    MODE.with(|m| m.get())
}

pub fn set_precision(p: Precision) {
    MODE.with(|m| m.set(p));
}

/// Runs `f` under precision `p`, restoring the previous mode afterwards.
pub fn with_precision<R>(p: Precision, f: impl FnOnce() -> R) -> R {
    struct Restore(Precision);
    impl Drop for Restore {
        fn drop(&mut self) {
            set_precision(self.0);
        }
    }
    let _restore = Restore(precision());
    set_precision(p);
    f()
}

#[inline]
pub fn round(x: f64) -> f64 {
    match precision() {
        Precision::F32 => x as f32 as f64,
        Precision::F64 => x,
    }
}

pub fn round_slice(xs: &mut [f64]) {
    if precision() == Precision::F32 {
        for x in xs {
            *x = *x as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_switch_restores() {
        set_precision(Precision::F32);
        with_precision(Precision::F64, || {
            assert_eq!(precision(), Precision::F64);
            assert_eq!(round(0.1), 0.1);
        });
        assert_eq!(precision(), Precision::F32);
        assert_eq!(round(0.1), 0.1f32 as f64);
    }
}
