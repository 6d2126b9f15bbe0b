//! Parameter containers, initialization, exact counting and the binary
//! parameter file.
//!
//! The containers are generic over the leaf type so that one layout serves
//! stored weights (`Params<Tensor>`), weights bound to a tape
//! (`Params<Var>`), gradients and optimizer moments.

use std::io::Write;
use std::path::Path;

use super::config::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[in × out]`, applied as `x · weight + bias`.
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub norm1: Norm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    /// Zero-initialized skip projection, present only for width-changing
    /// blocks with adaptive residuals enabled.
    pub residual_proj: Option<T>,
    pub norm2: Norm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub patch: Linear<T>,
    pub positional: Option<T>,
    pub cls_token: Option<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub pool_query: Option<T>,
    pub classifier: Linear<T>,
}

pub type ModelParams = Params<Tensor>;

/// What a parameter tensor is for; decides its initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    Gain,
    Embedding,
    ResidualProj,
}

impl<T> Linear<T> {
    fn try_map<U, E>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U, E>) -> Result<Linear<U>, E> {
        Ok(Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T> Norm<T> {
    fn try_map<U, E>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U, E>) -> Result<Norm<U>, E> {
        Ok(Norm {
            gain: f(&format!("{prefix}.gain"), &self.gain)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.gain"), &mut self.gain);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T> BlockParams<T> {
    fn try_map<U, E>(&self, p: &str, f: &mut impl FnMut(&str, &T) -> Result<U, E>) -> Result<BlockParams<U>, E> {
        Ok(BlockParams {
            norm1: self.norm1.try_map(&format!("{p}.norm1"), f)?,
            query: self.query.try_map(&format!("{p}.query"), f)?,
            key: self.key.try_map(&format!("{p}.key"), f)?,
            value: self.value.try_map(&format!("{p}.value"), f)?,
            out: self.out.try_map(&format!("{p}.out"), f)?,
            residual_proj: match &self.residual_proj {
                Some(t) => Some(f(&format!("{p}.residual_proj"), t)?),
                None => None,
            },
            norm2: self.norm2.try_map(&format!("{p}.norm2"), f)?,
            ff_in: self.ff_in.try_map(&format!("{p}.ff_in"), f)?,
            ff_out: self.ff_out.try_map(&format!("{p}.ff_out"), f)?,
        })
    }

    fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(&str, &mut T)) {
        self.norm1.visit_mut(&format!("{p}.norm1"), f);
        self.query.visit_mut(&format!("{p}.query"), f);
        self.key.visit_mut(&format!("{p}.key"), f);
        self.value.visit_mut(&format!("{p}.value"), f);
        self.out.visit_mut(&format!("{p}.out"), f);
        if let Some(t) = &mut self.residual_proj {
            f(&format!("{p}.residual_proj"), t);
        }
        self.norm2.visit_mut(&format!("{p}.norm2"), f);
        self.ff_in.visit_mut(&format!("{p}.ff_in"), f);
        self.ff_out.visit_mut(&format!("{p}.ff_out"), f);
    }
}

impl<T> Params<T> {
    /// Maps every leaf in canonical order, passing its dotted name.
    pub fn try_map<U, E>(&self, f: &mut impl FnMut(&str, &T) -> Result<U, E>) -> Result<Params<U>, E> {
        let patch = self.patch.try_map("patch", f)?;
        let positional = self.positional.as_ref().map(|t| f("positional", t)).transpose()?;
        let cls_token = self.cls_token.as_ref().map(|t| f("cls_token", t)).transpose()?;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.try_map(&format!("blocks.{i}"), f))
            .collect::<Result<Vec<_>, E>>()?;
        let pool_query = self.pool_query.as_ref().map(|t| f("pool_query", t)).transpose()?;
        let classifier = self.classifier.try_map("classifier", f)?;
        Ok(Params {
            patch,
            positional,
            cls_token,
            blocks,
            pool_query,
            classifier,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        self.try_map(&mut |n, t| Ok::<U, std::convert::Infallible>(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit(&self, mut f: impl FnMut(&str, &T)) {
        self.map(|n, t| f(n, t));
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        self.patch.visit_mut("patch", &mut f);
        if let Some(t) = &mut self.positional {
            f("positional", t);
        }
        if let Some(t) = &mut self.cls_token {
            f("cls_token", t);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), &mut f);
        }
        if let Some(t) = &mut self.pool_query {
            f("pool_query", t);
        }
        self.classifier.visit_mut("classifier", &mut f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _| out.push(n.to_string()));
        out
    }
}

impl<T> Linear<T> {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl<T> Norm<T> {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.push(&self.gain);
        out.push(&self.bias);
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}

impl<T> BlockParams<T> {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        self.norm1.leaves(out);
        self.query.leaves(out);
        self.key.leaves(out);
        self.value.leaves(out);
        self.out.leaves(out);
        out.extend(self.residual_proj.as_ref());
        self.norm2.leaves(out);
        self.ff_in.leaves(out);
        self.ff_out.leaves(out);
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        let BlockParams {
            norm1,
            query,
            key,
            value,
            out: out_proj,
            residual_proj,
            norm2,
            ff_in,
            ff_out,
        } = self;
        norm1.leaves_mut(out);
        query.leaves_mut(out);
        key.leaves_mut(out);
        value.leaves_mut(out);
        out_proj.leaves_mut(out);
        out.extend(residual_proj.as_mut());
        norm2.leaves_mut(out);
        ff_in.leaves_mut(out);
        ff_out.leaves_mut(out);
    }
}

impl<T> Params<T> {
    /// Every leaf in canonical order (the order of [`Params::names`]).
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.patch.leaves(&mut out);
        out.extend(self.positional.as_ref());
        out.extend(self.cls_token.as_ref());
        for b in &self.blocks {
            b.leaves(&mut out);
        }
        out.extend(self.pool_query.as_ref());
        self.classifier.leaves(&mut out);
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let Params {
            patch,
            positional,
            cls_token,
            blocks,
            pool_query,
            classifier,
        } = self;
        let mut out = Vec::new();
        patch.leaves_mut(&mut out);
        out.extend(positional.as_mut());
        out.extend(cls_token.as_mut());
        for b in blocks {
            b.leaves_mut(&mut out);
        }
        out.extend(pool_query.as_mut());
        classifier.leaves_mut(&mut out);
        out
    }
}

fn linear_shape(
    init: &mut impl FnMut(Role, &[usize]) -> Tensor,
    fan_in: usize,
    fan_out: usize,
) -> Linear<Tensor> {
    Linear {
        weight: init(Role::Weight, &[fan_in, fan_out]),
        bias: init(Role::Bias, &[fan_out]),
    }
}

fn norm_shape(init: &mut impl FnMut(Role, &[usize]) -> Tensor, d: usize) -> Norm<Tensor> {
    Norm {
        gain: init(Role::Gain, &[d]),
        bias: init(Role::Bias, &[d]),
    }
}

impl Params<Tensor> {
    /// Lays out every tensor implied by `config`, calling `init` once per
    /// tensor in canonical order.
    pub fn build(config: &ModelConfig, mut init: impl FnMut(Role, &[usize]) -> Tensor) -> Result<Self> {
        config.validate()?;
        let init = &mut init;
        let d0 = config.embed_dim();
        let patch = linear_shape(init, config.patch_dim(), d0);
        let positional = config
            .use_positional
            .then(|| init(Role::Embedding, &[config.num_patches(), d0]));
        let cls_token = (config.pooling == Pooling::Cls).then(|| init(Role::Embedding, &[1, d0]));
        let mut blocks = Vec::with_capacity(config.num_blocks());
        for i in 0..config.num_blocks() {
            let (d_in, d_out, hidden) = config.block_dims(i);
            blocks.push(BlockParams {
                norm1: norm_shape(init, d_in),
                query: linear_shape(init, d_in, d_out),
                key: linear_shape(init, d_in, d_out),
                value: linear_shape(init, d_in, d_out),
                out: linear_shape(init, d_out, d_out),
                residual_proj: (config.use_adaptive_residual && d_in != d_out)
                    .then(|| init(Role::ResidualProj, &[d_in, d_out])),
                norm2: norm_shape(init, d_out),
                ff_in: linear_shape(init, d_out, hidden),
                ff_out: linear_shape(init, hidden, d_out),
            });
        }
        let d_last = config.output_dim();
        let pool_query = (config.pooling == Pooling::Attention).then(|| init(Role::Weight, &[d_last, 1]));
        let classifier = linear_shape(init, d_last, config.num_classes);
        Ok(Params {
            patch,
            positional,
            cls_token,
            blocks,
            pool_query,
            classifier,
        })
    }

    /// Seeded initialization: Glorot-uniform weights, zero biases, unit
    /// norm gains, `N(0, 0.02²)` positional/class-token entries and exactly
    /// zero residual projections.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Self::build(config, |role, shape| {
            let numel: usize = shape.iter().product();
            let data = match role {
                Role::Weight => {
                    let (fan_in, fan_out) = (shape[0], shape[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..numel).map(|_| rng.uniform(-limit, limit)).collect()
                }
                Role::Bias | Role::ResidualProj => vec![0.0; numel],
                Role::Gain => vec![1.0; numel],
                Role::Embedding => (0..numel).map(|_| 0.02 * rng.normal()).collect(),
            };
            Tensor::new(shape, data).expect("init shape")
        })
    }

    /// Same layout with every entry zero.
    pub fn zeros_like_config(config: &ModelConfig) -> Result<Self> {
        Self::build(config, |_, shape| Tensor::zeros(shape))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|_, t| tape.param(t))
    }

    /// Records every tensor as a constant (inference without gradients).
    pub fn bind_constant(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|_, t| tape.constant(t.clone()))
    }
}

impl Params<Var> {
    /// Collects the gradient of every bound leaf after `tape.backward`.
    /// Leaves that received no gradient get zeros.
    pub fn gradients(&self, tape: &Tape) -> Result<ModelParams> {
        self.try_map(&mut |_, &v| {
            let shape = tape.value(v).shape().to_vec();
            match tape.grad(v) {
                Some(g) => Tensor::new(&shape, g.to_vec()),
                None => Ok(Tensor::zeros(&shape)),
            }
        })
    }
}

/// One line of the per-component parameter breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamComponent {
    pub name: String,
    pub count: usize,
}

/// Exact parameter count implied by `config`, with a per-component breakdown.
///
/// Computed from the config arithmetic alone (not from an instantiated
/// model), so agreement with [`ModelParams::num_scalars`] is a real check.
pub fn count_params(config: &ModelConfig) -> Result<(usize, Vec<ParamComponent>)> {
    config.validate()?;
    let linear = |i: usize, o: usize| i * o + o;
    let mut parts = Vec::new();
    let mut push = |name: String, count: usize| {
        if count > 0 {
            parts.push(ParamComponent { name, count });
        }
    };
    let d0 = config.embed_dim();
    push("patch_embedding".into(), linear(config.patch_dim(), d0));
    if config.use_positional {
        push("positional_table".into(), config.num_patches() * d0);
    }
    if config.pooling == Pooling::Cls {
        push("cls_token".into(), d0);
    }
    for i in 0..config.num_blocks() {
        let (d_in, d_out, hidden) = config.block_dims(i);
        push(format!("block{i}.norms"), 2 * d_in + 2 * d_out);
        push(format!("block{i}.attention_qkv"), 3 * linear(d_in, d_out));
        push(format!("block{i}.attention_out"), linear(d_out, d_out));
        if config.use_adaptive_residual && d_in != d_out {
            push(format!("block{i}.residual_proj"), d_in * d_out);
        }
        push(format!("block{i}.feed_forward"), linear(d_out, hidden) + linear(hidden, d_out));
    }
    if config.pooling == Pooling::Attention {
        push("pool_query".into(), config.output_dim());
    }
    push("classifier".into(), linear(config.output_dim(), config.num_classes));
    let total = parts.iter().map(|p| p.count).sum();
    Ok((total, parts))
}

/// Human-readable breakdown table.
pub fn format_breakdown(total: usize, parts: &[ParamComponent]) -> String {
    let mut s = String::new();
    for p in parts {
        s.push_str(&format!("{:<28} {:>10}\n", p.name, p.count));
    }
    s.push_str(&format!("{:<28} {:>10}\n", "total", total));
    s
}

const PARAMS_MAGIC: &[u8; 4] = b"ZVIT";
const PARAMS_VERSION: u32 = 1;

impl Params<Tensor> {
    /// Encodes as `ZVIT` | version u32 | count u32 | per tensor:
    /// name len u16, name, rank u8, extents u32…, values f64, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        let mut count = 0u32;
        self.visit(|_, _| count += 1);
        buf.extend_from_slice(&count.to_le_bytes());
        self.visit(|name, t| {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.rank() as u8);
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        });
        buf
    }

    /// Decodes a parameter file, checking every tensor against the layout
    /// implied by `config`.
    pub fn from_bytes(config: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut r = crate::data::container::Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != PARAMS_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:?}, expected \"ZVIT\""),
            });
        }
        let version = r.u32()?;
        if version != PARAMS_VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported parameter file version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut stored = std::collections::HashMap::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let at = r.offset();
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                detail: "tensor name is not UTF-8".into(),
            })?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let values = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&shape, values).map_err(|e| Error::Format {
                offset: r.offset(),
                detail: e.to_string(),
            })?;
            stored.insert(name, t);
        }
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.offset(),
                detail: format!("{} trailing bytes", r.remaining()),
            });
        }
        let template = Self::zeros_like_config(config)?;
        let params = template.try_map(&mut |name, t| {
            let s = stored
                .remove(name)
                .ok_or_else(|| Error::Validation(format!("parameter file lacks {name}")))?;
            if s.shape() != t.shape() {
                return Err(Error::Validation(format!(
                    "{name} has shape {:?}, config implies {:?}",
                    s.shape(),
                    t.shape()
                )));
            }
            Ok(s)
        })?;
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Validation(format!("parameter file has unexpected tensor {extra}")));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(config, &bytes)
    }
}
