//! Branch choices of piecewise-linear ops (`relu`, `clamp`).
//!
//! Central differences taken across a kink measure an average of two
//! slopes. [`record`] captures which piece every element took during one
//! evaluation; [`replay`] makes later evaluations on the same thread reuse
//! those pieces, so a perturbed evaluation stays on the smooth function
//! that agrees with the original one at the recorded point.

use std::cell::RefCell;

use crate::error::{Result, TensorError};

/// Per-op branch indices in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Branches {
    ops: Vec<Vec<u8>>,
}

impl Branches {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

enum Mode {
    Live,
    Record(Vec<Vec<u8>>),
    Replay(Branches, usize),
}

thread_local! {
    static MODE: RefCell<Mode> = const { RefCell::new(Mode::Live) };
}

/// Restores the previous mode even if the closure panics.
struct Restore(Option<Mode>);

impl Drop for Restore {
    fn drop(&mut self) {
        if let Some(m) = self.0.take() {
            MODE.with(|s| *s.borrow_mut() = m);
        }
    }
}

fn enter(mode: Mode) -> Restore {
    Restore(Some(MODE.with(|s| std::mem::replace(&mut *s.borrow_mut(), mode))))
}

/// Runs `f`, capturing the branch of every piecewise op it evaluates.
pub fn record<R>(f: impl FnOnce() -> R) -> (R, Branches) {
    let guard = enter(Mode::Record(Vec::new()));
    let out = f();
    let ops = MODE.with(|s| match std::mem::replace(&mut *s.borrow_mut(), Mode::Live) {
        Mode::Record(ops) => ops,
        _ => unreachable!("branch mode changed while recording"),
    });
    drop(guard);
    (out, Branches { ops })
}

/// Runs `f` with piecewise ops forced onto the branches in `b`. An op whose
/// size differs from the recording is an error.
pub fn replay<R>(b: &Branches, f: impl FnOnce() -> R) -> R {
    let _guard = enter(Mode::Replay(b.clone(), 0));
    f()
}

/// Branch of each of `n` elements: `live(i)` normally, the recorded choice
/// under [`replay`].
pub(crate) fn choose(op: &'static str, n: usize, live: impl Fn(usize) -> u8) -> Result<Vec<u8>> {
    MODE.with(|s| {
        let mut s = s.borrow_mut();
        match &mut *s {
            Mode::Live => Ok((0..n).map(live).collect()),
            Mode::Record(ops) => {
                let b: Vec<u8> = (0..n).map(live).collect();
                ops.push(b.clone());
                Ok(b)
            }
            Mode::Replay(rec, cursor) => {
                let b = rec.ops.get(*cursor).filter(|b| b.len() == n).cloned().ok_or_else(|| TensorError::InvalidArgument {
                    op,
                    msg: format!("branch replay diverged at piecewise op {}", *cursor),
                })?;
                *cursor += 1;
                Ok(b)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    use super::*;

    #[test]
    fn replay_keeps_recorded_pieces() {
        let run = |x: f64| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::new([3], vec![x, -x, 2.0 * x]).unwrap());
            let r = tape.relu(v).unwrap();
            let c = tape.clamp(r, 0.0, 1.5).unwrap();
            tape.value(c).data().to_vec()
        };
        let (live, b) = record(|| run(1.0));
        assert_eq!(live, [1.0, 0.0, 1.5]);
        assert_eq!(b.len(), 2);
        // x = -1 flips the relu pieces; the recording continues the live ones
        assert_eq!(replay(&b, || run(-1.0)), [-1.0, 0.0, 1.5]);
        assert_eq!(run(-1.0), [0.0, 1.0, 0.0]);
        assert!(replay(&Branches::default(), || {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::scalar(1.0));
            tape.relu(v).is_err()
        }));
    }
}
