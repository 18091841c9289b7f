//! Named parameter storage shared by every network in the crate.
//!
//! Layers hold clones of the stored variables, so in-place updates made by the
//! optimizers or by checkpoint loading are visible to the layers immediately.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    Uniform(f64),
    Normal(f64),
}

impl Init {
    /// Uniform(±1/sqrt(fan_in)), the usual default for linear and conv layers.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform(1.0 / (fan_in.max(1) as f64).sqrt())
    }

    /// He-uniform for layers followed by a leaky ReLU with negative `slope`.
    pub fn he_leaky(fan_in: usize, slope: f64) -> Self {
        Init::Uniform((6.0 / ((1.0 + slope * slope) * fan_in.max(1) as f64)).sqrt())
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            Init::Const(v) => vec![v; n],
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn builder<'a>(&'a mut self, rng: &'a mut ChaCha8Rng) -> ParamBuilder<'a> {
        ParamBuilder {
            store: self,
            rng,
            prefix: String::new(),
        }
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Var> {
        self.buffers.get(name)
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Trainable variables whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Deep copy with fresh storage, optionally converting the element type.
    pub fn to_dtype(&self, dtype: DType) -> Result<ParamStore> {
        let conv = |m: &BTreeMap<String, Var>| -> Result<BTreeMap<String, Var>> {
            m.iter()
                .map(|(k, v)| {
                    let t = v.as_tensor().to_dtype(dtype)?.copy()?.detach();
                    Ok((k.clone(), Var::from_tensor(&t)?))
                })
                .collect()
        };
        Ok(ParamStore {
            params: conv(&self.params)?,
            buffers: conv(&self.buffers)?,
            dtype,
            device: self.device.clone(),
        })
    }

    pub fn deep_clone(&self) -> Result<ParamStore> {
        self.to_dtype(self.dtype)
    }

    /// Overwrites every value (parameters and buffers) with the same-named value from `other`.
    pub fn assign_from(&self, other: &ParamStore) -> Result<()> {
        for (table, src) in [(&self.params, &other.params), (&self.buffers, &other.buffers)] {
            for (name, var) in table {
                let s = src
                    .get(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                assign(var, s.as_tensor())?;
            }
        }
        Ok(())
    }

    /// Copies every buffer from the same-named buffer of `other`, where present.
    pub fn assign_buffers_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &self.buffers {
            if let Some(src) = other.buffers.get(name) {
                assign(var, src.as_tensor())?;
            }
        }
        Ok(())
    }
}

/// Copies `src` into `var`, converting dtype and checking the shape.
pub fn assign(var: &Var, src: &Tensor) -> Result<()> {
    if var.shape() != src.shape() {
        return Err(shape_err!(
            "cannot assign {:?} into variable of shape {:?}",
            src.dims(),
            var.dims()
        ));
    }
    let src = src.detach().to_dtype(var.dtype())?.contiguous()?;
    let src = if src.is_variable() { src.copy()? } else { src };
    var.set(&src)?;
    Ok(())
}

/// Hierarchical view into a [`ParamStore`] that creates missing entries.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    /// Returns the named parameter, creating it with `init` if absent.
    ///
    /// Initial values are always drawn, so the random stream does not depend on
    /// whether the store was pre-populated.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        self.get_in(full, shape, init, false)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        self.get_in(full, shape, init, true)
    }

    fn get_in(&mut self, full: String, shape: &[usize], init: Init, buffer: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = init.sample(n, self.rng);
        let table = if buffer {
            &mut self.store.buffers
        } else {
            &mut self.store.params
        };
        if let Some(v) = table.get(&full) {
            if v.dims() != shape {
                return Err(shape_err!(
                    "parameter {full} has shape {:?}, expected {:?}",
                    v.dims(),
                    shape
                ));
            }
            return Ok(v.as_tensor().clone());
        }
        let t = Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        table.insert(full, var);
        Ok(out)
    }

    /// Buffer variable handle, for state updated in place (power-iteration vectors).
    pub fn buffer_var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = self.full_name(name);
        self.get_in(full.clone(), shape, init, true)?;
        Ok(self.store.buffers[&full].clone())
    }
}
