use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Constant,
    /// Constant for the first half of training, then linear decay to zero.
    Linear,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduler::Constant => "constant",
            Scheduler::Linear => "linear",
        })
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "constant" => Ok(Scheduler::Constant),
            "linear" => Ok(Scheduler::Linear),
            _ => Err(Error::Config(format!("unknown scheduler {s:?} (constant, linear)"))),
        }
    }
}

/// Multiplier applied to the base learning rate at `iter`.
pub fn lr_factor(scheduler: Scheduler, iter: u64, total_iters: u64) -> f64 {
    match scheduler {
        Scheduler::Constant => 1.0,
        Scheduler::Linear => {
            let h = total_iters as f64 / 2.0;
            if h <= 0.0 {
                return 0.0;
            }
            let past = (iter as f64 - h).max(0.0);
            (1.0 - past / h).max(0.0)
        }
    }
}

/// `(lr_gen, lr_disc)` at `iter`.
pub fn lr_at(scheduler: Scheduler, iter: u64, total_iters: u64, lr_gen: f64, lr_disc: f64) -> (f64, f64) {
    let f = lr_factor(scheduler, iter, total_iters);
    (lr_gen * f, lr_disc * f)
}
