//! The velocity network `v(x_τ, τ, c)`: an MLP over `[x | time embedding]`
//! with SiLU hidden activations and a linear output layer.
//!
//! Class conditioning, when enabled, is a learned per-class vector added to
//! the time-embedding slot, so the input width is `data_dim + time_embed_dim`
//! either way.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, LabRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub data_dim: usize,
    pub time_embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Size of the class table; `None` for an unconditional model.
    #[serde(default)]
    pub num_classes: Option<usize>,
    pub freq_base: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            data_dim: 2,
            time_embed_dim: 32,
            hidden: vec![128, 128],
            num_classes: None,
            freq_base: 1e4,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::Config("data_dim must be positive".into()));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time_embed_dim must be even and positive, got {}",
                self.time_embed_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.num_classes == Some(0) {
            return Err(Error::Config("num_classes must be positive when present".into()));
        }
        if !(self.freq_base > 0.0 && self.freq_base.is_finite()) {
            return Err(Error::Config("freq_base must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim
    }

    /// `(out, in)` of every linear layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.data_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Sinusoidal embedding: entry `2i` is `sin(τ / base^(2i/dim))`, entry `2i+1`
/// the matching cosine.
pub fn time_embed(tau: f64, dim: usize, base: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("time {tau} outside [0, 1]")));
    }
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Contract(format!("time embedding dim must be even, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = base.powf((2 * i) as f64 / dim as f64);
        let a = tau / freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

fn time_features(arch: &Architecture, taus: &[f64]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(taus.len() * arch.time_embed_dim);
    for &t in taus {
        data.extend(time_embed(t, arch.time_embed_dim, arch.freq_base)?);
    }
    Ok(Tensor::from_vec_unchecked(taus.len(), arch.time_embed_dim, data))
}

fn check_cond(arch: &Architecture, rows: usize, cond: Option<&[usize]>) -> Result<()> {
    match (arch.num_classes, cond) {
        (None, None) => Ok(()),
        (None, Some(_)) => Err(Error::Condition(
            "model has no class table but a class was given".into(),
        )),
        (Some(_), None) => Err(Error::Condition("conditional model needs a class id per row".into())),
        (Some(k), Some(c)) => {
            if c.len() != rows {
                return Err(Error::Condition(format!("{} class ids for {rows} rows", c.len())));
            }
            match c.iter().find(|&&id| id >= k) {
                Some(id) => Err(Error::Condition(format!("unknown class id {id} (table has {k})"))),
                None => Ok(()),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    arch: Architecture,
    layers: Vec<Linear>,
    cond_table: Option<Tensor>,
}

impl VelocityField {
    /// Weights uniform in `±1/√fan_in`, zero biases, class vectors `N(0, 0.02²)`.
    pub fn init(arch: Architecture, rng: &mut LabRng) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let bound = 1.0 / (inp as f64).sqrt();
                let w = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
                Linear {
                    weight: Tensor::from_vec_unchecked(out, inp, w),
                    bias: Tensor::zeros(1, out),
                }
            })
            .collect();
        let cond_table = arch
            .num_classes
            .map(|k| normal_tensor(rng, k, arch.time_embed_dim, 0.02));
        Ok(Self {
            arch,
            layers,
            cond_table,
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| Linear {
                weight: Tensor::zeros(out, inp),
                bias: Tensor::zeros(1, out),
            })
            .collect();
        let cond_table = arch.num_classes.map(|k| Tensor::zeros(k, arch.time_embed_dim));
        Ok(Self {
            arch,
            layers,
            cond_table,
        })
    }

    /// Reassembles a model from stored tensors, checking that shapes chain.
    pub fn from_parts(arch: Architecture, layers: Vec<Linear>, cond_table: Option<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Contract(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((out, inp), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.weight.shape() != (*out, *inp) || l.bias.shape() != (1, *out) {
                return Err(Error::Contract(format!(
                    "layer {i}: weight {:?} / bias {:?} do not match ({out}, {inp})",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        match (arch.num_classes, &cond_table) {
            (None, None) => {}
            (Some(k), Some(t)) if t.shape() == (k, arch.time_embed_dim) => {}
            _ => return Err(Error::Contract("class table does not match architecture".into())),
        }
        Ok(Self {
            arch,
            layers,
            cond_table,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn cond_table(&self) -> Option<&Tensor> {
        self.cond_table.as_ref()
    }

    pub fn cond_table_mut(&mut self) -> Option<&mut Tensor> {
        self.cond_table.as_mut()
    }

    pub(crate) fn replace_weight(&mut self, layer: usize, weight: Tensor) {
        debug_assert_eq!(self.layers[layer].weight.shape(), weight.shape());
        self.layers[layer].weight = weight;
    }

    /// Parameters in a fixed order: per layer weight then bias, then the class table.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), &l.weight));
            out.push((format!("layers.{i}.bias"), &l.bias));
        }
        if let Some(t) = &self.cond_table {
            out.push(("cond_table".to_string(), t));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(t) = &mut self.cond_table {
            out.push(t);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Bitwise equality of every parameter.
    pub fn bit_eq(&self, other: &VelocityField) -> bool {
        self.arch == other.arch
            && self
                .named_params()
                .iter()
                .zip(other.named_params())
                .all(|((n1, a), (n2, b))| *n1 == n2 && a.bit_eq(b))
    }

    pub fn forward(&self, x: &Tensor, tau: f64, cond: Option<&[usize]>) -> Result<Tensor> {
        self.forward_at(x, &vec![tau; x.rows()], cond)
    }

    /// Forward pass with one time value per row.
    pub fn forward_at(&self, x: &Tensor, taus: &[f64], cond: Option<&[usize]>) -> Result<Tensor> {
        if x.cols() != self.arch.data_dim || taus.len() != x.rows() {
            return Err(Error::dim("forward", x.shape(), (taus.len(), self.arch.data_dim)));
        }
        check_cond(&self.arch, x.rows(), cond)?;
        let mut tfeat = time_features(&self.arch, taus)?;
        if let (Some(table), Some(c)) = (&self.cond_table, cond) {
            tfeat = tfeat.add(&table.gather_rows(c)?)?;
        }
        let mut h = Tensor::concat_cols(&[x, &tfeat])?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul_nt(&l.weight)?.add_row(&l.bias)?;
            if i < last {
                h = h.silu();
            }
        }
        Ok(h)
    }

    /// Places the parameters on a graph, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let layers = self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        let cond_table = self.cond_table.as_ref().map(&mut leaf);
        BoundModel {
            arch: self.arch.clone(),
            layers,
            cond_table,
        }
    }
}

/// A model whose parameters live on a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    arch: Architecture,
    /// `(weight, bias)` per layer; the weight may be a derived node (base + adapter delta).
    pub layers: Vec<(Var, Var)>,
    pub cond_table: Option<Var>,
}

impl BoundModel {
    pub(crate) fn from_vars(arch: Architecture, layers: Vec<(Var, Var)>, cond_table: Option<Var>) -> Self {
        Self {
            arch,
            layers,
            cond_table,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// Parameter leaves in [`VelocityField::params_mut`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        out.extend(self.cond_table);
        out
    }

    pub fn forward(&self, g: &mut Graph, x: Var, taus: &[f64], cond: Option<&[usize]>) -> Result<Var> {
        let rows = g.value(x).rows();
        if g.value(x).cols() != self.arch.data_dim || taus.len() != rows {
            return Err(Error::dim(
                "forward",
                g.value(x).shape(),
                (taus.len(), self.arch.data_dim),
            ));
        }
        check_cond(&self.arch, rows, cond)?;
        let mut tfeat = g.constant(time_features(&self.arch, taus)?);
        if let (Some(table), Some(c)) = (self.cond_table, cond) {
            let rows = g.gather_rows(table, c)?;
            tfeat = g.add(tfeat, rows)?;
        }
        let mut h = g.concat_cols(&[x, tfeat])?;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul_nt(h, w)?;
            h = g.add_row(z, b)?;
            if i < last {
                h = g.silu(h);
            }
        }
        Ok(h)
    }
}
