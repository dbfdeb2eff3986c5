//! The embedding network: a small stride-2 conv stack followed by a linear
//! embedding layer with unit-norm weight rows and no final activation.
//!
//! Forward and backward passes are hand-rolled (im2col + gemm) so that both
//! parameter gradients and pixel gradients are available; attacks differentiate
//! through the same code path as training.

mod adam;
mod layers;

pub use adam::Adam;
pub use layers::{col2im_accumulate, im2col};

use ndarray::{Array1, Array2, Array3, NdFloat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Embedding, LabeledImage};

/// Element type the network is generic over. f32 is the working precision;
/// f64 exists for high-accuracy gradient verification.
pub trait Scalar: NdFloat + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Layer-shape specification for the embedding network.
///
/// Every conv block is `kernel x kernel`, stride 2, pad `kernel/2`, followed
/// by a ReLU; the final linear layer maps the flattened activation to the
/// embedding and has no activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Input shape (H, W, C).
    pub input: (usize, usize, usize),
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
    /// Conv kernel size (odd).
    pub kernel: usize,
    /// Embedding dimension.
    pub embedding_dim: usize,
}

impl ArchDescriptor {
    /// Default desk-scale architecture: 4 conv blocks, embedding dim 64.
    pub fn small(input: (usize, usize, usize)) -> Self {
        Self {
            input,
            conv_channels: vec![16, 32, 64, 64],
            kernel: 3,
            embedding_dim: 64,
        }
    }

    /// Reduced architecture for fast CPU experiments.
    pub fn tiny(input: (usize, usize, usize)) -> Self {
        Self {
            input,
            conv_channels: vec![8, 16, 32],
            kernel: 3,
            embedding_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::Config("at least one conv block required".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        let (mut h, mut w, _) = self.input;
        for _ in &self.conv_channels {
            h = conv_out_dim(h, self.kernel, 2, self.kernel / 2);
            w = conv_out_dim(w, self.kernel, 2, self.kernel / 2);
            if h == 0 || w == 0 {
                return Err(Error::Config(
                    "input too small for the configured conv stack".into(),
                ));
            }
        }
        Ok(())
    }

    /// Spatial dims and channels after the final conv block.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w, _) = self.input;
        for _ in &self.conv_channels {
            h = conv_out_dim(h, self.kernel, 2, self.kernel / 2);
            w = conv_out_dim(w, self.kernel, 2, self.kernel / 2);
        }
        (h, w, *self.conv_channels.last().unwrap())
    }
}

pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(k) / stride + 1
}

#[derive(Debug, Clone)]
struct ConvLayer<S> {
    /// (k*k*cin, cout)
    weight: Array2<S>,
    bias: Array1<S>,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct LinearLayer<S> {
    /// (in, out); column j holds the weight vector of embedding unit j.
    weight: Array2<S>,
    bias: Array1<S>,
}

/// The embedding network. See [`ArchDescriptor`] for the topology.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    arch: ArchDescriptor,
    convs: Vec<ConvLayer<S>>,
    linear: LinearLayer<S>,
}

/// Working precision network used everywhere outside gradient verification.
pub type EmbeddingModel = Network<f32>;

/// Per-layer gradients (or optimizer moments), mirroring [`Network`] layout.
#[derive(Debug, Clone)]
pub struct GradStore<S> {
    conv_w: Vec<Array2<S>>,
    conv_b: Vec<Array1<S>>,
    lin_w: Array2<S>,
    lin_b: Array1<S>,
}

impl<S: Scalar> GradStore<S> {
    pub fn zeros_like(net: &Network<S>) -> Self {
        Self {
            conv_w: net
                .convs
                .iter()
                .map(|c| Array2::zeros(c.weight.raw_dim()))
                .collect(),
            conv_b: net
                .convs
                .iter()
                .map(|c| Array1::zeros(c.bias.raw_dim()))
                .collect(),
            lin_w: Array2::zeros(net.linear.weight.raw_dim()),
            lin_b: Array1::zeros(net.linear.bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &GradStore<S>) {
        for (a, b) in self.conv_w.iter_mut().zip(&other.conv_w) {
            *a += b;
        }
        for (a, b) in self.conv_b.iter_mut().zip(&other.conv_b) {
            *a += b;
        }
        self.lin_w += &other.lin_w;
        self.lin_b += &other.lin_b;
    }

    pub fn scale(&mut self, factor: S) {
        for a in self.conv_w.iter_mut() {
            a.mapv_inplace(|v| v * factor);
        }
        for a in self.conv_b.iter_mut() {
            a.mapv_inplace(|v| v * factor);
        }
        self.lin_w.mapv_inplace(|v| v * factor);
        self.lin_b.mapv_inplace(|v| v * factor);
    }

    /// Max |g| across all entries; the stop-gradient audit reads this.
    pub fn max_abs(&self) -> S {
        let mut m = S::zero();
        let mut upd = |it: &mut dyn Iterator<Item = S>| {
            for v in it {
                if v.abs() > m {
                    m = v.abs();
                }
            }
        };
        for a in &self.conv_w {
            upd(&mut a.iter().copied());
        }
        for a in &self.conv_b {
            upd(&mut a.iter().copied());
        }
        upd(&mut self.lin_w.iter().copied());
        upd(&mut self.lin_b.iter().copied());
        m
    }

    fn tensors(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            v.push(w.as_slice().unwrap());
            v.push(b.as_slice().unwrap());
        }
        v.push(self.lin_w.as_slice().unwrap());
        v.push(self.lin_b.as_slice().unwrap());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            v.push(w.as_slice_mut().unwrap());
            v.push(b.as_slice_mut().unwrap());
        }
        v.push(self.lin_w.as_slice_mut().unwrap());
        v.push(self.lin_b.as_slice_mut().unwrap());
        v
    }

    /// Gradient entry at the flat parameter index (same order as
    /// [`Network::get_param`]).
    pub fn get(&self, mut idx: usize) -> S {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }
}

/// Activations recorded during a cached forward pass.
pub struct Tape<S: Scalar> {
    /// im2col matrix per conv block.
    cols: Vec<Array2<S>>,
    /// Pre-ReLU activations per conv block, shape (oh, ow, cout).
    preact: Vec<Array3<S>>,
    /// Input spatial shape per conv block.
    in_shapes: Vec<(usize, usize, usize)>,
    /// Flattened input to the linear layer.
    flat: Array1<S>,
}

impl<S: Scalar> Network<S> {
    /// Initializes with He-uniform conv weights and a unit-norm embedding layer.
    pub fn init(arch: ArchDescriptor, rng: &mut impl rand::Rng) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel;
        let mut cin = arch.input.2;
        let mut convs = Vec::with_capacity(arch.conv_channels.len());
        for &cout in &arch.conv_channels {
            let fan_in = (k * k * cin) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let weight = Array2::from_shape_fn((k * k * cin, cout), |_| {
                S::from_f64(rng.random_range(-limit..limit))
            });
            convs.push(ConvLayer {
                weight,
                bias: Array1::zeros(cout),
                cin,
                cout,
            });
            cin = cout;
        }
        let (fh, fw, fc) = arch.feature_shape();
        let flat_dim = fh * fw * fc;
        let limit = (6.0 / flat_dim as f64).sqrt();
        let weight = Array2::from_shape_fn((flat_dim, arch.embedding_dim), |_| {
            S::from_f64(rng.random_range(-limit..limit))
        });
        let mut net = Self {
            arch,
            convs,
            linear: LinearLayer {
                weight,
                bias: Array1::zeros(0),
            },
        };
        net.linear.bias = Array1::zeros(net.arch.embedding_dim);
        net.renormalize_embedding_rows();
        Ok(net)
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    /// Projects each embedding unit's weight vector back to unit L2 norm.
    /// Applied after every optimizer step.
    pub fn renormalize_embedding_rows(&mut self) {
        for mut col in self.linear.weight.columns_mut() {
            let norm = col.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt();
            if norm > S::from_f64(1e-12) {
                col.mapv_inplace(|v| v / norm);
            }
        }
    }

    /// L2 norms of the embedding-layer weight rows (one per embedding unit).
    pub fn embedding_row_norms(&self) -> Vec<S> {
        self.linear
            .weight
            .columns()
            .into_iter()
            .map(|col| col.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt())
            .collect()
    }

    fn check_input(&self, pixels: &Array3<S>) -> Result<()> {
        let s = pixels.shape();
        let (h, w, c) = self.arch.input;
        if s != [h, w, c] {
            return Err(Error::Config(format!(
                "image shape {:?} does not match architecture input {:?}",
                s,
                (h, w, c)
            )));
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn forward(&self, pixels: &Array3<S>) -> Result<Array1<S>> {
        self.forward_cached(pixels).map(|(e, _)| e)
    }

    /// Forward pass recording everything needed for backward.
    pub fn forward_cached(&self, pixels: &Array3<S>) -> Result<(Array1<S>, Tape<S>)> {
        self.check_input(pixels)?;
        let k = self.arch.kernel;
        let pad = k / 2;
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        let mut in_shapes = Vec::with_capacity(self.convs.len());
        let mut cur = pixels.clone();
        for conv in &self.convs {
            let (h, w, _) = dims3(&cur);
            in_shapes.push(dims3(&cur));
            let oh = conv_out_dim(h, k, 2, pad);
            let ow = conv_out_dim(w, k, 2, pad);
            let col = im2col(&cur, k, 2, pad);
            let mut out2d = col.dot(&conv.weight);
            for mut row in out2d.rows_mut() {
                row += &conv.bias;
            }
            let pre = out2d
                .into_shape_with_order((oh, ow, conv.cout))
                .expect("conv output reshape");
            cur = pre.mapv(|v| if v > S::zero() { v } else { S::zero() });
            cols.push(col);
            preacts.push(pre);
        }
        let flat = Array1::from_iter(cur.iter().copied());
        let emb = flat.dot(&self.linear.weight) + &self.linear.bias;
        Ok((
            emb,
            Tape {
                cols,
                preact: preacts,
                in_shapes,
                flat,
            },
        ))
    }

    /// Backward pass from an embedding-space gradient.
    ///
    /// Returns pixel gradients and/or parameter gradients depending on the
    /// flags; attacks skip parameter gradients, the trainer usually skips
    /// pixel gradients.
    pub fn backward(
        &self,
        tape: &Tape<S>,
        d_emb: &Array1<S>,
        want_pixels: bool,
        want_params: bool,
    ) -> (Option<Array3<S>>, Option<GradStore<S>>) {
        let k = self.arch.kernel;
        let pad = k / 2;
        let mut grads = want_params.then(|| GradStore::zeros_like(self));

        // Linear layer.
        if let Some(g) = grads.as_mut() {
            for (i, &f) in tape.flat.iter().enumerate() {
                for (j, &de) in d_emb.iter().enumerate() {
                    g.lin_w[(i, j)] = f * de;
                }
            }
            g.lin_b.assign(d_emb);
        }
        let d_flat = self.linear.weight.dot(d_emb);

        // Conv stack, last block first.
        let (fh, fw, fc) = self.arch.feature_shape();
        let mut d_cur = d_flat
            .into_shape_with_order((fh, fw, fc))
            .expect("feature reshape");
        for (idx, conv) in self.convs.iter().enumerate().rev() {
            let pre = &tape.preact[idx];
            // ReLU mask.
            ndarray::Zip::from(&mut d_cur).and(pre).for_each(|d, &p| {
                if p <= S::zero() {
                    *d = S::zero();
                }
            });
            let (oh, ow, _) = dims3(pre);
            let d_out2d = d_cur
                .into_shape_with_order((oh * ow, conv.cout))
                .expect("grad reshape");
            if let Some(g) = grads.as_mut() {
                g.conv_w[idx] = tape.cols[idx].t().dot(&d_out2d);
                g.conv_b[idx] = d_out2d.sum_axis(ndarray::Axis(0));
            }
            let need_input = idx > 0 || want_pixels;
            if !need_input {
                return (None, grads);
            }
            let d_col = d_out2d.dot(&conv.weight.t());
            let (ih, iw, ic) = tape.in_shapes[idx];
            debug_assert_eq!(ic, conv.cin);
            d_cur = col2im_accumulate(&d_col, (ih, iw, ic), k, 2, pad);
        }
        (Some(d_cur), grads)
    }

    pub fn num_params(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum::<usize>()
            + self.linear.weight.len()
            + self.linear.bias.len()
    }

    fn param_slices(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        for c in &self.convs {
            v.push(c.weight.as_slice().unwrap());
            v.push(c.bias.as_slice().unwrap());
        }
        v.push(self.linear.weight.as_slice().unwrap());
        v.push(self.linear.bias.as_slice().unwrap());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        for c in self.convs.iter_mut() {
            v.push(c.weight.as_slice_mut().unwrap());
            v.push(c.bias.as_slice_mut().unwrap());
        }
        v.push(self.linear.weight.as_slice_mut().unwrap());
        v.push(self.linear.bias.as_slice_mut().unwrap());
        v
    }

    /// Parameter value at a flat index (conv blocks in order, weight then
    /// bias, then the linear layer).
    pub fn get_param(&self, mut idx: usize) -> S {
        for t in self.param_slices() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    /// Adds `delta` to the parameter at a flat index.
    pub fn nudge_param(&mut self, mut idx: usize, delta: S) {
        for t in self.param_slices_mut() {
            if idx < t.len() {
                t[idx] = t[idx] + delta;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    /// Named parameter tensors for checkpointing: (name, shape, data).
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<S>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                c.weight.shape().to_vec(),
                c.weight.iter().copied().collect(),
            ));
            out.push((
                format!("conv{i}.bias"),
                c.bias.shape().to_vec(),
                c.bias.iter().copied().collect(),
            ));
        }
        out.push((
            "linear.weight".into(),
            self.linear.weight.shape().to_vec(),
            self.linear.weight.iter().copied().collect(),
        ));
        out.push((
            "linear.bias".into(),
            self.linear.bias.shape().to_vec(),
            self.linear.bias.iter().copied().collect(),
        ));
        out
    }

    /// Rebuilds a network from exported tensors.
    pub fn from_tensors(
        arch: ArchDescriptor,
        tensors: &[(String, Vec<usize>, Vec<S>)],
    ) -> Result<Self> {
        arch.validate()?;
        let lookup = |name: &str| -> Result<(&Vec<usize>, &Vec<S>)> {
            tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|(_, s, d)| (s, d))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let to2 = |name: &str| -> Result<Array2<S>> {
            let (shape, data) = lookup(name)?;
            if shape.len() != 2 {
                return Err(Error::Checkpoint(format!("{name} is not rank 2")));
            }
            Array2::from_shape_vec((shape[0], shape[1]), data.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
        };
        let to1 = |name: &str| -> Result<Array1<S>> {
            let (shape, data) = lookup(name)?;
            if shape.len() != 1 {
                return Err(Error::Checkpoint(format!("{name} is not rank 1")));
            }
            Ok(Array1::from(data.clone()))
        };
        let mut convs = Vec::new();
        let mut cin = arch.input.2;
        for (i, &cout) in arch.conv_channels.iter().enumerate() {
            let weight = to2(&format!("conv{i}.weight"))?;
            let bias = to1(&format!("conv{i}.bias"))?;
            if weight.shape() != [arch.kernel * arch.kernel * cin, cout] || bias.len() != cout {
                return Err(Error::Checkpoint(format!(
                    "conv{i} tensor shape does not match architecture"
                )));
            }
            convs.push(ConvLayer {
                weight,
                bias,
                cin,
                cout,
            });
            cin = cout;
        }
        let weight = to2("linear.weight")?;
        let bias = to1("linear.bias")?;
        let (fh, fw, fc) = arch.feature_shape();
        if weight.shape() != [fh * fw * fc, arch.embedding_dim]
            || bias.len() != arch.embedding_dim
        {
            return Err(Error::Checkpoint(
                "linear tensor shape does not match architecture".into(),
            ));
        }
        Ok(Self {
            arch,
            convs,
            linear: LinearLayer { weight, bias },
        })
    }
}

impl Network<f32> {
    /// Same weights in double precision, for gradient verification.
    pub fn to_f64(&self) -> Network<f64> {
        Network {
            arch: self.arch.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| ConvLayer {
                    weight: c.weight.mapv(|v| v as f64),
                    bias: c.bias.mapv(|v| v as f64),
                    cin: c.cin,
                    cout: c.cout,
                })
                .collect(),
            linear: LinearLayer {
                weight: self.linear.weight.mapv(|v| v as f64),
                bias: self.linear.bias.mapv(|v| v as f64),
            },
        }
    }
}

pub(crate) fn dims3<S>(a: &Array3<S>) -> (usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2])
}

/// Embeds an image. Shape must match the model's architecture descriptor.
pub fn embed(model: &EmbeddingModel, image: &LabeledImage) -> Result<Embedding> {
    let v = model.forward(&image.pixels)?;
    Ok(Embedding::new(v))
}

pub use crate::types::{feature_distance, squared_feature_distance};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::Array3;
    use rand::Rng;

    fn tiny_net(seed: u64) -> Network<f32> {
        let arch = ArchDescriptor {
            input: (8, 8, 1),
            conv_channels: vec![4, 8],
            kernel: 3,
            embedding_dim: 6,
        };
        Network::init(arch, &mut rng_for(seed, &[0])).unwrap()
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Array3<f32> {
        let mut rng = rng_for(seed, &[1]);
        Array3::from_shape_fn((h, w, c), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = tiny_net(3);
        let img = random_image(8, 8, 1, 3);
        let a = net.forward(&img).unwrap();
        let b = net.forward(&img).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let net = tiny_net(3);
        let img = random_image(9, 8, 1, 3);
        assert!(matches!(net.forward(&img), Err(Error::Config(_))));
    }

    #[test]
    fn embedding_rows_are_unit_norm_after_init() {
        let net = tiny_net(4);
        for n in net.embedding_row_norms() {
            assert!((n - 1.0).abs() <= 1e-6, "norm {n}");
        }
    }

    #[test]
    fn embeddings_are_finite() {
        let net = tiny_net(5);
        let img = random_image(8, 8, 1, 9);
        let e = net.forward(&img).unwrap();
        assert!(e.iter().all(|v| v.is_finite()));
    }

    /// Central finite differences of ||F(x) - c||^2 with respect to pixels.
    fn fd_pixel_grad(net: &Network<f64>, img: &Array3<f64>, target: &Array1<f64>, h: f64) -> Array3<f64> {
        let loss = |p: &Array3<f64>| -> f64 {
            let e = net.forward(p).unwrap();
            e.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let mut g = Array3::zeros(img.raw_dim());
        let mut work = img.clone();
        for idx in 0..img.len() {
            let i3 = unflatten(idx, img);
            let orig = work[i3];
            work[i3] = orig + h;
            let up = loss(&work);
            work[i3] = orig - h;
            let down = loss(&work);
            work[i3] = orig;
            g[i3] = (up - down) / (2.0 * h);
        }
        g
    }

    fn unflatten(idx: usize, a: &Array3<f64>) -> (usize, usize, usize) {
        let s = a.shape();
        let c = idx % s[2];
        let w = (idx / s[2]) % s[1];
        let h = idx / (s[2] * s[1]);
        (h, w, c)
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        // f32 path at the spec'd tolerance and an f64 path at 1e-6.
        let net32 = tiny_net(7);
        let net64 = net32.to_f64();
        let img32 = random_image(8, 8, 1, 11);
        let img64 = img32.mapv(|v| v as f64);
        let mut rng = rng_for(7, &[2]);
        let target64: Array1<f64> =
            Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let target32 = target64.mapv(|v| v as f32);

        // Analytic gradient, f32.
        let (e32, tape32) = net32.forward_cached(&img32).unwrap();
        let d_emb32: Array1<f32> = (&e32 - &target32) * 2.0f32;
        let (gpix32, _) = net32.backward(&tape32, &d_emb32, true, false);
        let gpix32 = gpix32.unwrap();

        let fd32 = fd_pixel_grad(&net64, &img64, &target64, 1e-3);
        let num: f64 = gpix32
            .iter()
            .zip(fd32.iter())
            .map(|(&a, &b)| (a as f64 - b) * (a as f64 - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd32.iter().map(|&b| b * b).sum::<f64>().sqrt();
        assert!(num / den <= 1e-3, "f32 rel err {}", num / den);

        // Analytic gradient, f64, tighter step and tolerance.
        let (e64, tape64) = net64.forward_cached(&img64).unwrap();
        let d_emb64: Array1<f64> = (&e64 - &target64) * 2.0;
        let (gpix64, _) = net64.backward(&tape64, &d_emb64, true, false);
        let gpix64 = gpix64.unwrap();
        let fd64 = fd_pixel_grad(&net64, &img64, &target64, 1e-5);
        let num: f64 = gpix64
            .iter()
            .zip(fd64.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd64.iter().map(|&b| b * b).sum::<f64>().sqrt();
        assert!(num / den <= 1e-6, "f64 rel err {}", num / den);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let net32 = tiny_net(13);
        let mut net = net32.to_f64();
        let img = random_image(8, 8, 1, 17).mapv(|v| v as f64);
        let mut rng = rng_for(13, &[3]);
        let target: Array1<f64> = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));

        let (e, tape) = net.forward_cached(&img).unwrap();
        let d_emb: Array1<f64> = (&e - &target) * 2.0;
        let (_, grads) = net.backward(&tape, &d_emb, false, true);
        let grads = grads.unwrap();

        let n = net.num_params();
        let h = 1e-5;
        let mut checked = 0;
        for idx in (0..n).step_by(n / 64 + 1) {
            net.nudge_param(idx, h);
            let up: f64 = {
                let e = net.forward(&img).unwrap();
                e.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            net.nudge_param(idx, -2.0 * h);
            let down: f64 = {
                let e = net.forward(&img).unwrap();
                e.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            net.nudge_param(idx, h);
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(idx);
            let denom = fd.abs().max(1e-8);
            assert!(
                (an - fd).abs() / denom <= 1e-6 || (an - fd).abs() <= 1e-9,
                "param {idx}: analytic {an} vs fd {fd}"
            );
            checked += 1;
        }
        assert!(checked >= 32);
    }

    #[test]
    fn export_import_roundtrip_preserves_forward() {
        let net = tiny_net(19);
        let img = random_image(8, 8, 1, 23);
        let tensors = net.export_tensors();
        let restored = Network::<f32>::from_tensors(net.arch().clone(), &tensors).unwrap();
        let a = net.forward(&img).unwrap();
        let b = restored.forward(&img).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
