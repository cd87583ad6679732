use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{NetError, Result};

/// Fan sizes used for Xavier initialization; `None` marks a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fan {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan: Fan,
}

impl ParamShape {
    pub fn weight(name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            fan: Fan::Weight { fan_in, fan_out },
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![len],
            fan: Fan::Bias,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Xavier-uniform half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Named trainable tensors in construction order.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    /// Xavier-uniform weights and zero biases, drawn in layout order from a
    /// ChaCha stream seeded with `seed`.
    pub fn xavier(layout: &[ParamShape], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(layout.len());
        for p in layout {
            let data: Vec<f32> = match p.fan {
                Fan::Bias => vec![0.0; p.numel()],
                Fan::Weight { fan_in, fan_out } => {
                    let a = xavier_bound(fan_in, fan_out) as f32;
                    (0..p.numel()).map(|_| rng.random_range(-a..a)).collect()
                }
            };
            tensors.push(Tensor::from_vec(data, p.shape.as_slice(), &Device::Cpu)?);
        }
        Self::from_tensors(layout, tensors)
    }

    /// Wraps loaded tensors after checking them against `layout`.
    pub fn from_tensors(layout: &[ParamShape], tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(NetError::InvalidSpec(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut set = Self {
            names: Vec::new(),
            vars: Vec::new(),
            index: HashMap::new(),
        };
        for (p, t) in layout.iter().zip(tensors) {
            if t.dims() != p.shape.as_slice() {
                return Err(NetError::Shape {
                    expected: p.shape.clone(),
                    got: t.dims().to_vec(),
                });
            }
            set.index.insert(p.name.clone(), set.names.len());
            set.names.push(p.name.clone());
            set.vars.push(Var::from_tensor(&t)?);
        }
        Ok(set)
    }

    /// Same as [`from_tensors`](Self::from_tensors) with tensors looked up by name.
    pub fn from_named(layout: &[ParamShape], mut named: HashMap<String, Tensor>) -> Result<Self> {
        let mut tensors = Vec::with_capacity(layout.len());
        for p in layout {
            let t = named
                .remove(&p.name)
                .ok_or_else(|| NetError::InvalidSpec(format!("missing parameter {}", p.name)))?;
            tensors.push(t.to_dtype(DType::F32)?);
        }
        if let Some(extra) = named.keys().next() {
            return Err(NetError::InvalidSpec(format!(
                "unexpected parameter {extra}"
            )));
        }
        Self::from_tensors(layout, tensors)
    }

    /// Checks names and shapes against `layout`.
    pub fn relayout(self, layout: &[ParamShape]) -> Result<Self> {
        let names_match = self.names.iter().eq(layout.iter().map(|p| &p.name));
        if !names_match {
            return Err(NetError::InvalidSpec(
                "parameter names do not match the spec".into(),
            ));
        }
        for (p, v) in layout.iter().zip(&self.vars) {
            if v.dims() != p.shape.as_slice() {
                return Err(NetError::Shape {
                    expected: p.shape.clone(),
                    got: v.dims().to_vec(),
                });
            }
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i].as_tensor()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.vars[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn count(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    /// Detached copies of the current values.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .vars
            .iter()
            .map(|v| v.as_tensor().copy())
            .collect::<candle_core::Result<_>>()?)
    }

    pub fn restore(&self, values: &[Tensor]) -> Result<()> {
        for (v, t) in self.vars.iter().zip(values) {
            v.set(t)?;
        }
        Ok(())
    }

    /// Overwrites one parameter, keeping its shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .var(name)
            .ok_or_else(|| NetError::InvalidSpec(format!("unknown parameter {name}")))?;
        v.set(&value.to_dtype(v.dtype())?)?;
        Ok(())
    }

    /// Copy converted to another floating point type.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .map(|v| Var::from_tensor(&v.as_tensor().to_dtype(dtype)?))
            .collect::<candle_core::Result<_>>()?;
        Ok(Self {
            names: self.names.clone(),
            vars,
            index: self.index.clone(),
        })
    }

    /// Name and tensor pairs in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.vars.iter().map(Var::as_tensor))
    }
}
