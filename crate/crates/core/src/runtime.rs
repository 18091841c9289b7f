//! Process-wide runtime switches.
//!
//! The zero-centered gradient penalty differentiates through an input gradient,
//! which needs the tensor backend to keep the backward graph of the backward pass.
//! The backend reads that switch from the environment once per thread, so it has
//! to be set before any gradient is computed.

use std::sync::Once;

/// Backend switch that keeps gradient tensors attached to their graph.
pub const SECOND_ORDER_ENV: &str = "CANDLE_GRAD_DO_NOT_DETACH";

/// When set to a non-empty value other than `0`, runs use a single compute
/// thread and wall-clock fields in metrics files are written as zero.
pub const DETERMINISTIC_ENV: &str = "UVCGAN2_DETERMINISTIC";

static INIT: Once = Once::new();

/// Enables second-order gradients. Call before spawning worker threads.
pub fn init() {
    INIT.call_once(|| {
        if std::env::var_os(SECOND_ORDER_ENV).is_none() {
            std::env::set_var(SECOND_ORDER_ENV, "1");
        }
        if deterministic() && std::env::var_os("RAYON_NUM_THREADS").is_none() {
            std::env::set_var("RAYON_NUM_THREADS", "1");
        }
    });
}

fn flag(name: &str) -> bool {
    match std::env::var(name) {
        Ok(v) => !v.is_empty() && v != "0",
        Err(_) => false,
    }
}

pub fn second_order_enabled() -> bool {
    flag(SECOND_ORDER_ENV)
}

pub fn deterministic() -> bool {
    flag(DETERMINISTIC_ENV)
}
