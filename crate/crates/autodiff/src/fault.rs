//! Fault injection used to prove the verification suite can fail. The flag
//! is per thread so an injected fault cannot leak into unrelated work.

use std::cell::Cell;

thread_local! {
    static FLIP_TANH_BACKWARD: Cell<bool> = const { Cell::new(false) };
}

/// Negates the tanh derivative in every subsequent backward pass on this
/// thread.
pub fn set_flip_tanh_backward(on: bool) {
    FLIP_TANH_BACKWARD.with(|f| f.set(on));
}

pub fn tanh_backward_flipped() -> bool {
    FLIP_TANH_BACKWARD.with(|f| f.get())
}
