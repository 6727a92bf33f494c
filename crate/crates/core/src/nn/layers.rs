//! Layer kinds with exact forward and reverse passes on single images.
//!
//! Activations are stored channel-major, `[c][y][x]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gemm;

fn default_slope() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Zero padding that keeps the spatial size.
    #[default]
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Convolution followed by a leaky ReLU.
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "default_slope")]
        leaky_slope: f64,
        #[serde(default)]
        padding: Padding,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            leaky_slope: default_slope(),
            padding: Padding::Same,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool { window: 2, stride: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A layer bound to an input shape and a slice of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub offset: usize,
    pub n_weights: usize,
    pub n_bias: usize,
}

/// Per-image state saved by the forward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Cache {
    cols: Vec<f64>,
    argmax: Vec<usize>,
}

#[inline]
pub(crate) fn leaky(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn pads(kernel: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::Same => {
            let lo = (kernel - 1) / 2;
            (lo, kernel - 1 - lo)
        }
    }
}

impl Layer {
    pub(crate) fn build(spec: LayerSpec, input: Shape, offset: usize) -> Result<Self> {
        let (output, n_weights, n_bias) = match spec {
            LayerSpec::Conv {
                filters,
                kernel,
                leaky_slope,
                padding,
            } => {
                if filters == 0 || kernel == 0 {
                    return Err(Error::invalid("conv", "filters and kernel must be positive"));
                }
                if !(0.0..1.0).contains(&leaky_slope) {
                    return Err(Error::invalid("conv.leaky_slope", "must lie in [0, 1)"));
                }
                let (lo, hi) = pads(kernel, padding);
                if input.h + lo + hi < kernel || input.w + lo + hi < kernel {
                    return Err(Error::ShapeMismatch {
                        expected: format!("input at least {kernel}x{kernel}"),
                        got: format!("{}x{}", input.h, input.w),
                    });
                }
                let out = Shape {
                    c: filters,
                    h: input.h + lo + hi - kernel + 1,
                    w: input.w + lo + hi - kernel + 1,
                };
                (out, filters * input.c * kernel * kernel, filters)
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::invalid("maxpool", "window and stride must be positive"));
                }
                if input.h < window || input.w < window {
                    return Err(Error::ShapeMismatch {
                        expected: format!("input at least {window}x{window}"),
                        got: format!("{}x{}", input.h, input.w),
                    });
                }
                let out = Shape {
                    c: input.c,
                    h: (input.h - window) / stride + 1,
                    w: (input.w - window) / stride + 1,
                };
                (out, 0, 0)
            }
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return Err(Error::invalid("dense.units", "must be positive"));
                }
                (Shape { c: units, h: 1, w: 1 }, units * input.len(), units)
            }
        };
        Ok(Layer {
            spec,
            input,
            output,
            offset,
            n_weights,
            n_bias,
        })
    }

    pub(crate) fn param_count(&self) -> usize {
        self.n_weights + self.n_bias
    }

    /// Fan-in of one output unit.
    pub(crate) fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { kernel, .. } => self.input.c * kernel * kernel,
            LayerSpec::Dense { .. } => self.input.len(),
            LayerSpec::MaxPool { .. } => 0,
        }
    }

    fn weights<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w = &params[self.offset..self.offset + self.n_weights];
        let b = &params[self.offset + self.n_weights..self.offset + self.param_count()];
        (w, b)
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64], cache: &mut Cache, y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input.len());
        y.clear();
        y.resize(self.output.len(), 0.0);
        match self.spec {
            LayerSpec::Conv {
                kernel,
                leaky_slope,
                padding,
                ..
            } => {
                let (w, b) = self.weights(params);
                self.im2col(x, kernel, padding, &mut cache.cols);
                let hw = self.output.h * self.output.w;
                let ckk = self.input.c * kernel * kernel;
                gemm(
                    self.output.c,
                    ckk,
                    hw,
                    w,
                    ckk as isize,
                    1,
                    &cache.cols,
                    hw as isize,
                    1,
                    0.0,
                    y,
                );
                for (f, row) in y.chunks_exact_mut(hw).enumerate() {
                    for v in row {
                        *v = leaky(*v + b[f], leaky_slope);
                    }
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                cache.argmax.clear();
                cache.argmax.resize(self.output.len(), 0);
                let Shape { h, w, .. } = self.input;
                let (oh, ow) = (self.output.h, self.output.w);
                for c in 0..self.input.c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let idx = c * h * w + (oy * stride + dy) * w + ox * stride + dx;
                                    if x[idx] > best {
                                        best = x[idx];
                                        arg = idx;
                                    }
                                }
                            }
                            let o = c * oh * ow + oy * ow + ox;
                            y[o] = best;
                            cache.argmax[o] = arg;
                        }
                    }
                }
            }
            LayerSpec::Dense { units, activation } => {
                let (w, b) = self.weights(params);
                let n = x.len();
                for u in 0..units {
                    let z = crate::image::dot(&w[u * n..(u + 1) * n], x) + b[u];
                    y[u] = match activation {
                        Activation::Sigmoid => sigmoid(z),
                        Activation::Linear => z,
                    };
                }
            }
        }
    }

    /// Dense pre-activations `W x + b`.
    pub(crate) fn dense_logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = self.weights(params);
        let n = x.len();
        (0..self.output.c)
            .map(|u| crate::image::dot(&w[u * n..(u + 1) * n], x) + b[u])
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// writes the input gradient into `dx`. `dy` holds the gradient with
    /// respect to this layer's output and is overwritten.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        cache: &Cache,
        dy: &mut [f64],
        grad: &mut [f64],
        dx: Option<&mut Vec<f64>>,
    ) {
        match self.spec {
            LayerSpec::Conv {
                kernel,
                leaky_slope,
                padding,
                ..
            } => {
                let hw = self.output.h * self.output.w;
                let ckk = self.input.c * kernel * kernel;
                for (d, out) in dy.iter_mut().zip(y) {
                    if *out < 0.0 || (*out == 0.0 && leaky_slope == 0.0) {
                        *d *= leaky_slope;
                    }
                }
                let (gw, gb) = grad[self.offset..self.offset + self.param_count()].split_at_mut(self.n_weights);
                for (f, row) in dy.chunks_exact(hw).enumerate() {
                    gb[f] += row.iter().sum::<f64>();
                }
                gemm(
                    self.output.c,
                    hw,
                    ckk,
                    dy,
                    hw as isize,
                    1,
                    &cache.cols,
                    1,
                    hw as isize,
                    1.0,
                    gw,
                );
                if let Some(dx) = dx {
                    let (w, _) = self.weights(params);
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(
                        ckk,
                        self.output.c,
                        hw,
                        w,
                        1,
                        ckk as isize,
                        dy,
                        hw as isize,
                        1,
                        0.0,
                        &mut dcols,
                    );
                    dx.clear();
                    dx.resize(self.input.len(), 0.0);
                    self.col2im(&dcols, kernel, padding, dx);
                }
            }
            LayerSpec::MaxPool { .. } => {
                if let Some(dx) = dx {
                    dx.clear();
                    dx.resize(self.input.len(), 0.0);
                    for (o, d) in dy.iter().enumerate() {
                        dx[cache.argmax[o]] += d;
                    }
                }
            }
            LayerSpec::Dense { units, activation } => {
                if activation == Activation::Sigmoid {
                    for (d, p) in dy.iter_mut().zip(y) {
                        *d *= p * (1.0 - p);
                    }
                }
                let n = x.len();
                let (gw, gb) = grad[self.offset..self.offset + self.param_count()].split_at_mut(self.n_weights);
                for u in 0..units {
                    let d = dy[u];
                    gb[u] += d;
                    if d != 0.0 {
                        for (g, xi) in gw[u * n..(u + 1) * n].iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
                if let Some(dx) = dx {
                    let (w, _) = self.weights(params);
                    dx.clear();
                    dx.resize(n, 0.0);
                    for u in 0..units {
                        let d = dy[u];
                        if d != 0.0 {
                            for (o, wi) in dx.iter_mut().zip(&w[u * n..(u + 1) * n]) {
                                *o += d * wi;
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], k: usize, padding: Padding, cols: &mut Vec<f64>) {
        let (pad, _) = pads(k, padding);
        let Shape { c: nc, h, w } = self.input;
        let (oh, ow) = (self.output.h, self.output.w);
        let hw = oh * ow;
        cols.clear();
        cols.resize(nc * k * k * hw, 0.0);
        for c in 0..nc {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &x[c * h * w + iy as usize * w..][..w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize + kx as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], k: usize, padding: Padding, dx: &mut [f64]) {
        let (pad, _) = pads(k, padding);
        let Shape { c: nc, h, w } = self.input;
        let (oh, ow) = (self.output.h, self.output.w);
        let hw = oh * ow;
        for c in 0..nc {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut dx[c * h * w + iy as usize * w..][..w];
                        for ox in 0..ow {
                            let ix = ox as isize + kx as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(c: usize, h: usize, w: usize) -> Shape {
        Shape { c, h, w }
    }

    #[test]
    fn leaky_relu_sign_consistency() {
        for &x in &[-3.0, -1e-9, 0.0, 1e-9, 2.5] {
            let f = leaky(x, 0.01);
            assert_eq!(f >= 0.0, x >= 0.0);
            assert_eq!(f - 0.01 * x > 0.0, x > 0.0);
        }
    }

    #[test]
    fn output_shapes() {
        let c = Layer::build(LayerSpec::conv(4, 5), shape(1, 16, 16), 0).unwrap();
        assert_eq!(c.output, shape(4, 16, 16));
        assert_eq!(c.param_count(), 4 * 25 + 4);
        let v = Layer::build(
            LayerSpec::Conv {
                filters: 2,
                kernel: 3,
                leaky_slope: 0.01,
                padding: Padding::Valid,
            },
            shape(3, 8, 7),
            0,
        )
        .unwrap();
        assert_eq!(v.output, shape(2, 6, 5));
        let p = Layer::build(LayerSpec::pool2(), shape(4, 7, 7), 0).unwrap();
        assert_eq!(p.output, shape(4, 3, 3));
        assert!(Layer::build(LayerSpec::pool2(), shape(1, 1, 5), 0).is_err());
        assert!(Layer::build(
            LayerSpec::Conv {
                filters: 1,
                kernel: 5,
                leaky_slope: 0.01,
                padding: Padding::Valid
            },
            shape(1, 3, 3),
            0
        )
        .is_err());
    }

    #[test]
    fn identity_one_by_one_conv() {
        // 1x1 conv with weight 2 and bias -1 on a 3x3 image.
        let l = Layer::build(LayerSpec::conv(1, 1), shape(1, 3, 3), 0).unwrap();
        let params = [2.0, -1.0];
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let mut y = Vec::new();
        l.forward(&params, &x, &mut Cache::default(), &mut y);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(*yi, leaky(2.0 * xi - 1.0, 0.01));
        }
    }

    #[test]
    fn three_by_three_same_conv_by_hand() {
        // Box filter of ones on a 3x3 image: each output sums its in-bounds
        // neighborhood.
        let l = Layer::build(LayerSpec::conv(1, 3), shape(1, 3, 3), 0).unwrap();
        let mut params = vec![1.0; 9];
        params.push(0.0);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut y = Vec::new();
        l.forward(&params, &x, &mut Cache::default(), &mut y);
        assert_eq!(y, vec![12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
    }

    #[test]
    fn maxpool_routes_each_gradient_once() {
        let l = Layer::build(LayerSpec::pool2(), shape(2, 4, 4), 0).unwrap();
        let x: Vec<f64> = (0..32).map(|i| ((i * 7919) % 31) as f64).collect();
        let mut cache = Cache::default();
        let mut y = Vec::new();
        l.forward(&[], &x, &mut cache, &mut y);
        let mut dy: Vec<f64> = (0..8).map(|i| i as f64 + 1.0).collect();
        let total: f64 = dy.iter().sum();
        let mut dx = Vec::new();
        l.backward(&[], &x, &y, &cache, &mut dy, &mut [], Some(&mut dx));
        assert_eq!(dx.iter().sum::<f64>(), total);
        assert_eq!(dx.iter().filter(|v| **v != 0.0).count(), 8);
    }

    #[test]
    fn conv_bias_gradient_on_zero_input_is_downstream_sum() {
        let l = Layer::build(LayerSpec::conv(2, 3), shape(1, 4, 4), 0).unwrap();
        let mut params = vec![0.1; l.param_count()];
        params[18] = 0.5;
        params[19] = 0.25;
        let x = vec![0.0; 16];
        let mut cache = Cache::default();
        let mut y = Vec::new();
        l.forward(&params, &x, &mut cache, &mut y);
        let mut dy: Vec<f64> = (0..32).map(|i| (i as f64 - 10.0) * 0.1).collect();
        let s0: f64 = dy[..16].iter().sum();
        let s1: f64 = dy[16..].iter().sum();
        let mut grad = vec![0.0; l.param_count()];
        l.backward(&params, &x, &y, &cache, &mut dy, &mut grad, None);
        assert!((grad[18] - s0).abs() < 1e-12 && (grad[19] - s1).abs() < 1e-12);
        assert!(grad[..18].iter().all(|g| *g == 0.0));
    }
}
