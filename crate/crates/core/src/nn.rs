//! Small convolutional classifier with hand-written backpropagation.
//!
//! The network is a stack of `3x3` convolutions with ReLU, some of them
//! strided, followed by a bias-free `1x1` class head whose output is the raw
//! class activation map. It implements [`ClassifierModel`] and
//! [`TrainableClassifier`], the contract the trainer is written against.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;
use rand::RngCore;

use crate::cam::ClassifierModel;
use crate::rng;
use crate::{arg_err, shape_err, Result, Scalar, Tensor3};

/// Per-parameter-tensor gradient buffers, aligned with `params()`.
pub type Grads<T> = Vec<Vec<T>>;

/// A model that can be trained by the alternating trainer.
pub trait TrainableClassifier<T: Scalar>: ClassifierModel<T> + Clone {
    type Cache;

    fn forward_train(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Self::Cache)>;

    /// Backpropagates `grad_out` (same shape as the forward output).
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient with respect to the input is returned when `want_input`.
    fn backward(
        &self,
        cache: &Self::Cache,
        grad_out: &Tensor3<T>,
        grads: Option<&mut Grads<T>>,
        want_input: bool,
    ) -> Result<Option<Tensor3<T>>>;

    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn zero_grads(&self) -> Grads<T> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cout, cin * kernel * kernel]`
    pub weight: Vec<T>,
    /// Empty when the layer has no bias.
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-uniform initialization for a ReLU network.
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl RngCore,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = (0..cout * fan_in).map(|_| T::of(rng::uniform(rng, -bound, bound))).collect();
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            bias: if bias { vec![T::zero(); cout] } else { Vec::new() },
        }
    }

    #[inline]
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &Tensor3<T>, oh: usize, ow: usize) -> Vec<T> {
        let [cin, h, w] = x.shape();
        let k = self.kernel;
        let n = oh * ow;
        let mut cols = vec![T::zero(); cin * k * k * n];
        for c in 0..cin {
            let src = x.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor3<T> {
        let k = self.kernel;
        let n = oh * ow;
        let mut out = Tensor3::zeros(self.cin, h, w);
        for c in 0..self.cin {
            let dst = out.plane_mut(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and, for non-pointwise layers, the im2col buffer.
    pub fn forward(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Option<Vec<T>>)> {
        if x.channels() != self.cin {
            return Err(shape_err!("conv expects {} input channels, got {}", self.cin, x.channels()));
        }
        let (oh, ow) = self.output_size(x.height(), x.width());
        let n = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        let mut out = vec![T::zero(); self.cout * n];
        let cols = if self.is_pointwise() { None } else { Some(self.im2col(x, oh, ow)) };
        let b = cols.as_deref().unwrap_or(x.data());
        T::gemm(false, false, self.cout, n, kk, T::one(), &self.weight, b, T::zero(), &mut out);
        if !self.bias.is_empty() {
            for (o, &bv) in out.chunks_exact_mut(n).zip(&self.bias) {
                for v in o {
                    *v += bv;
                }
            }
        }
        Ok((Tensor3::from_vec(self.cout, oh, ow, out)?, cols))
    }

    pub fn backward(
        &self,
        input: &Tensor3<T>,
        cols: Option<&[T]>,
        grad_out: &Tensor3<T>,
        grads: Option<(&mut [T], &mut [T])>,
        want_input: bool,
    ) -> Result<Option<Tensor3<T>>> {
        let (oh, ow) = self.output_size(input.height(), input.width());
        if grad_out.shape() != [self.cout, oh, ow] {
            return Err(shape_err!("conv grad {:?} vs output [{},{oh},{ow}]", grad_out.shape(), self.cout));
        }
        let n = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        let b = cols.unwrap_or(input.data());
        if let Some((gw, gb)) = grads {
            T::gemm(false, true, self.cout, kk, n, T::one(), grad_out.data(), b, T::one(), gw);
            for (g, o) in gb.iter_mut().zip(grad_out.data().chunks_exact(n)) {
                *g += o.iter().copied().sum::<T>();
            }
        }
        if !want_input {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); kk * n];
        T::gemm(true, false, kk, n, self.cout, T::one(), &self.weight, grad_out.data(), T::zero(), &mut dcols);
        if self.is_pointwise() {
            return Ok(Some(Tensor3::from_vec(self.cin, input.height(), input.width(), dcols)?));
        }
        Ok(Some(self.col2im(&dcols, input.height(), input.width(), oh, ow)))
    }
}

/// Architecture of [`ToyCnn`].
#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub in_channels: usize,
    /// Output channels of each `3x3` block.
    pub widths: Vec<usize>,
    /// Stride of each block; the product is the map-to-image downsampling.
    pub strides: Vec<usize>,
    pub num_classes: usize,
}

impl CnnConfig {
    pub fn toy(num_classes: usize) -> Self {
        Self { in_channels: 3, widths: vec![16, 32, 32, 32], strides: vec![1, 2, 2, 1], num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(arg_err!("widths and strides must be non-empty and equally long"));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.widths.contains(&0) {
            return Err(arg_err!("layer widths and class count must be positive"));
        }
        if self.strides.iter().any(|&s| s == 0 || s > 2) {
            return Err(arg_err!("block strides must be 1 or 2"));
        }
        Ok(())
    }

    pub fn output_stride(&self) -> usize {
        self.strides.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCnn<T> {
    pub blocks: Vec<Conv2d<T>>,
    pub head: Conv2d<T>,
}

/// Intermediate values kept for [`ToyCnn::backward`].
pub struct CnnCache<T> {
    input: Tensor3<T>,
    cols: Vec<Option<Vec<T>>>,
    acts: Vec<Tensor3<T>>,
}

impl<T: Scalar> ToyCnn<T> {
    pub fn new(cfg: &CnnConfig, rng: &mut impl RngCore) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.widths.len());
        let mut cin = cfg.in_channels;
        for (&w, &s) in cfg.widths.iter().zip(&cfg.strides) {
            blocks.push(Conv2d::new(cin, w, 3, s, true, rng));
            cin = w;
        }
        let head = Conv2d::new(cin, cfg.num_classes, 1, 1, false, rng);
        Ok(Self { blocks, head })
    }

    pub fn feature_channels(&self) -> usize {
        self.head.cin
    }

    /// Output of the last ReLU block, the input of the class head.
    pub fn features(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut a = standardize(x);
        for b in &self.blocks {
            a = b.forward(&a)?.0;
            relu_inplace(&mut a);
        }
        Ok(a)
    }

    /// Output of every ReLU block, shallowest first.
    pub fn block_outputs(&self, x: &Tensor3<T>) -> Result<Vec<Tensor3<T>>> {
        let mut outs: Vec<Tensor3<T>> = Vec::with_capacity(self.blocks.len());
        let x = standardize(x);
        for b in &self.blocks {
            let mut a = b.forward(outs.last().unwrap_or(&x))?.0;
            relu_inplace(&mut a);
            outs.push(a);
        }
        Ok(outs)
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.blocks.iter().fold((h, w), |(h, w), b| b.output_size(h, w))
    }
}

/// Images arrive in `[0, 1]`; the first block sees them centred and scaled.
const INPUT_MEAN: f64 = 0.5;
const INPUT_SCALE: f64 = 4.0;

fn standardize<T: Scalar>(x: &Tensor3<T>) -> Tensor3<T> {
    let (m, s) = (T::of(INPUT_MEAN), T::of(INPUT_SCALE));
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = (*v - m) * s;
    }
    out
}

fn relu_inplace<T: Scalar>(t: &mut Tensor3<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

impl<T: Scalar> ClassifierModel<T> for ToyCnn<T> {
    fn num_classes(&self) -> usize {
        self.head.cout
    }

    fn forward(&self, image: &Tensor3<T>) -> Result<Tensor3<T>> {
        let f = self.features(image)?;
        Ok(self.head.forward(&f)?.0)
    }
}

impl<T: Scalar> TrainableClassifier<T> for ToyCnn<T> {
    type Cache = CnnCache<T>;

    fn forward_train(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, CnnCache<T>)> {
        let x = standardize(x);
        let mut cols = Vec::with_capacity(self.blocks.len());
        let mut acts: Vec<Tensor3<T>> = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (mut a, c) = b.forward(acts.last().unwrap_or(&x))?;
            relu_inplace(&mut a);
            cols.push(c);
            acts.push(a);
        }
        let out = self.head.forward(acts.last().expect("at least one block"))?.0;
        Ok((out, CnnCache { input: x, cols, acts }))
    }

    fn backward(
        &self,
        cache: &CnnCache<T>,
        grad_out: &Tensor3<T>,
        mut grads: Option<&mut Grads<T>>,
        want_input: bool,
    ) -> Result<Option<Tensor3<T>>> {
        let nb = self.blocks.len();
        let last = &cache.acts[nb - 1];
        let head_grads = grads.as_deref_mut().map(|g| {
            let (_, tail) = g.split_at_mut(2 * nb);
            (tail[0].as_mut_slice(), &mut [][..])
        });
        let mut g = self
            .head
            .backward(last, None, grad_out, head_grads, true)?
            .expect("input gradient requested");
        for i in (0..nb).rev() {
            // ReLU: pass gradient only where the activation was positive.
            for (gv, &a) in g.data_mut().iter_mut().zip(cache.acts[i].data()) {
                if a <= T::zero() {
                    *gv = T::zero();
                }
            }
            let input = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
            let layer_grads = grads.as_deref_mut().map(|gs| {
                let (w, rest) = gs[2 * i..].split_at_mut(1);
                (w[0].as_mut_slice(), rest[0].as_mut_slice())
            });
            let need = i > 0 || want_input;
            match self.blocks[i].backward(input, cache.cols[i].as_deref(), &g, layer_grads, need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        let s = T::of(INPUT_SCALE);
        for v in g.data_mut() {
            *v = *v * s;
        }
        Ok(Some(g))
    }

    fn params(&self) -> Vec<&[T]> {
        let mut p: Vec<&[T]> = Vec::with_capacity(2 * self.blocks.len() + 1);
        for b in &self.blocks {
            p.push(&b.weight);
            p.push(&b.bias);
        }
        p.push(&self.head.weight);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p: Vec<&mut [T]> = Vec::with_capacity(2 * self.blocks.len() + 1);
        for b in &mut self.blocks {
            p.push(&mut b.weight);
            p.push(&mut b.bias);
        }
        p.push(&mut self.head.weight);
        p
    }
}

/// FNV-1a over the bit patterns of all parameters; used to prove a network
/// was left untouched by an update phase.
pub fn param_hash<T: Scalar, M: TrainableClassifier<T>>(m: &M) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in m.params() {
        for v in p {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
