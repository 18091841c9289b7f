//! Exponential moving average of generator weights.
//!
//! The running average is kept in `f64` and copied into the averaged model
//! after every update, so long runs with momentum close to one do not stall
//! on `f32` rounding.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::params::{assign, ParamStore};

#[derive(Debug, Clone)]
pub struct Ema {
    momentum: f64,
    master: BTreeMap<String, Tensor>,
}

/// One update `m * avg + (1 - m) * live` in place of `avg`.
pub fn ema_update(avg: &Tensor, live: &Tensor, m: f64) -> Result<Tensor> {
    let live = live.to_dtype(avg.dtype())?;
    Ok(((avg * m)? + (live * (1.0 - m))?)?.detach())
}

impl Ema {
    /// Starts the average at the current values of `live`.
    pub fn new(live: &ParamStore, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("ema momentum must be in [0, 1), got {momentum}")));
        }
        let master = live
            .params()
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().to_dtype(DType::F64)?.copy()?.detach())))
            .collect::<Result<_>>()?;
        Ok(Self { momentum, master })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn master(&self) -> &BTreeMap<String, Tensor> {
        &self.master
    }

    /// Advances the average with `live` and writes it into `target`.
    pub fn update(&mut self, live: &ParamStore, target: &ParamStore) -> Result<()> {
        for (name, avg) in self.master.iter_mut() {
            let v = live
                .param(name)
                .ok_or_else(|| Error::InvalidArgument(format!("live model lacks {name}")))?;
            *avg = ema_update(avg, v.as_tensor(), self.momentum)?;
        }
        self.write_to(target)?;
        for (name, b) in live.buffers() {
            if let Some(t) = target.buffer(name) {
                assign(t, b.as_tensor())?;
            }
        }
        Ok(())
    }

    /// Copies the (rounded) average into the parameters of `target`.
    pub fn write_to(&self, target: &ParamStore) -> Result<()> {
        for (name, avg) in &self.master {
            let t = target
                .param(name)
                .ok_or_else(|| Error::InvalidArgument(format!("averaged model lacks {name}")))?;
            assign(t, avg)?;
        }
        Ok(())
    }

    /// Replaces the running average, e.g. from a checkpoint.
    pub fn load_master(&mut self, get: &dyn Fn(&str) -> Option<Tensor>) -> Result<()> {
        for (name, avg) in self.master.iter_mut() {
            let t = get(name).ok_or_else(|| Error::Checkpoint(format!("missing averaged tensor {name}")))?;
            if t.dims() != avg.dims() {
                return Err(Error::Checkpoint(format!("averaged tensor {name} has wrong shape")));
            }
            *avg = t.to_dtype(DType::F64)?.detach();
        }
        Ok(())
    }
}
