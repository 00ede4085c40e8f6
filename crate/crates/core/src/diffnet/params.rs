use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};
use crate::seed;

/// Layer layout of the regressor.
///
/// `channels[k]` is the output width of convolution block `k`; the last entry
/// is the embedding dimension. Every block halves the spatial size, so the
/// input height and width must be divisible by `2^blocks`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { input_height: 32, input_width: 32, channels: vec![8, 16] }
    }
}

pub(crate) const KERNEL: usize = 3;

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "channel list must be non-empty and positive, got {:?}",
                self.channels
            )));
        }
        let div = 1usize << self.channels.len();
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % div != 0
            || self.input_width % div != 0
        {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by {div} for {} pooling stages",
                self.input_height,
                self.input_width,
                self.channels.len()
            )));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.channels.last().expect("validated spec")
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Names and dimensions of every parameter array, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(2 * self.channels.len() + 2);
        let mut cin = 1;
        for (k, &cout) in self.channels.iter().enumerate() {
            out.push((format!("conv{}.weight", k + 1), vec![cout, cin, KERNEL, KERNEL]));
            out.push((format!("conv{}.bias", k + 1), vec![cout]));
            cin = cout;
        }
        out.push(("head.weight".to_string(), vec![cin]));
        out.push(("head.bias".to_string(), vec![1]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> ParamArray<T> {
    fn zeros(name: String, dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { name, dims, data: vec![T::zero(); n] }
    }
}

/// Named parameter store of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    spec: ModelSpec,
    arrays: Vec<ParamArray<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let arrays = spec.layout().into_iter().map(|(n, d)| ParamArray::zeros(n, d)).collect();
        Ok(Self { spec: spec.clone(), arrays })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        let mut rng = seed::rng(seed);
        for arr in &mut params.arrays {
            if arr.name.ends_with(".bias") {
                continue;
            }
            let (fan_in, fan_out) = match arr.dims.as_slice() {
                [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
                [d] => (*d, 1),
                _ => unreachable!("layout only has 1-d and 4-d arrays"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut arr.data {
                *w = T::of(rng.gen_range(-limit..limit));
            }
        }
        Ok(params)
    }

    /// Rebuilds a parameter store from arrays read elsewhere, checking them
    /// against the layout of `spec`.
    pub fn from_arrays(spec: &ModelSpec, arrays: Vec<ParamArray<T>>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != arrays.len() {
            return Err(Error::Config(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                arrays.len()
            )));
        }
        for ((name, dims), arr) in layout.iter().zip(&arrays) {
            if *name != arr.name || *dims != arr.dims {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    arr.name, arr.dims, name, dims
                )));
            }
            if arr.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Config(format!("parameter {} has wrong length", arr.name)));
            }
        }
        Ok(Self { spec: spec.clone(), arrays })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arrays(&self) -> &[ParamArray<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [ParamArray<T>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray<T>> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn len(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values flattened in storage order.
    pub fn flat(&self) -> Vec<T> {
        self.arrays.iter().flat_map(|a| a.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Usage(format!(
                "flat vector has {} entries, parameters have {}",
                values.len(),
                self.len()
            )));
        }
        let mut it = values.iter();
        for arr in &mut self.arrays {
            for v in &mut arr.data {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ParamArray {
                    name: a.name.clone(),
                    dims: a.dims.clone(),
                    data: a.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn array(&self, idx: usize) -> &[T] {
        &self.arrays[idx].data
    }

    /// `self ← decay·self + (1−decay)·other`, used for weight averaging.
    pub fn ema_update(&mut self, other: &Self, decay: T) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Usage("EMA between differently shaped models".into()));
        }
        let keep = T::one() - decay;
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = decay * *x + keep * y;
            }
        }
        Ok(())
    }
}

/// Gradient store congruent to a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    arrays: Vec<ParamArray<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            arrays: params
                .arrays
                .iter()
                .map(|a| ParamArray::zeros(a.name.clone(), a.dims.clone()))
                .collect(),
        }
    }

    pub fn arrays(&self) -> &[ParamArray<T>] {
        &self.arrays
    }

    pub(crate) fn array_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.arrays[idx].data
    }

    pub fn flat(&self) -> Vec<T> {
        self.arrays.iter().flat_map(|a| a.data.iter().copied()).collect()
    }

    pub fn fill_zero(&mut self) {
        for a in &mut self.arrays {
            a.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            a.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub(crate) fn congruent_with(&self, params: &ModelParams<T>) -> bool {
        self.arrays.len() == params.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&params.arrays)
                .all(|(g, p)| g.name == p.name && g.dims == p.dims)
    }
}
