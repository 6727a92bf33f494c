//! Multi-task network: a shared convolutional trunk feeding a detection
//! branch (posterior probability of signal presence) and an estimation
//! branch (signal parameters).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Cache, Layer, LayerSpec, Shape};
use super::loss::{detection_loss_grad, estimation_loss_grad};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::utility::UtilityFn;

/// Layer lists of the three blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub input_height: usize,
    pub trunk: Vec<LayerSpec>,
    pub detection: Vec<LayerSpec>,
    pub estimation: Vec<LayerSpec>,
}

impl Architecture {
    /// `shared` trunk convolutions; detection = pool + dense sigmoid;
    /// estimation = `est` convolutions + pool + dense linear.
    pub fn standard(
        width: usize,
        height: usize,
        shared: usize,
        est: usize,
        filters: usize,
        kernel: usize,
        theta_dim: usize,
    ) -> Self {
        let mut estimation: Vec<LayerSpec> = (0..est).map(|_| LayerSpec::conv(filters, kernel)).collect();
        estimation.push(LayerSpec::pool2());
        estimation.push(LayerSpec::Dense {
            units: theta_dim,
            activation: Activation::Linear,
        });
        Architecture {
            input_width: width,
            input_height: height,
            trunk: (0..shared).map(|_| LayerSpec::conv(filters, kernel)).collect(),
            detection: vec![
                LayerSpec::pool2(),
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            estimation,
        }
    }

    pub fn shared_convs(&self) -> usize {
        self.trunk
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn estimation_convs(&self) -> usize {
        self.estimation
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }
}

/// Fixed input and output scalings stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Network input is `(g - input_mean) / input_scale`.
    pub input_mean: f64,
    pub input_scale: f64,
    /// Estimate is `output_offset + output_scale * z`.
    pub output_offset: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(theta_dim: usize) -> Self {
        Scaling {
            input_mean: 0.0,
            input_scale: 1.0,
            output_offset: vec![0.0; theta_dim],
            output_scale: vec![1.0; theta_dim],
        }
    }
}

/// Detection and estimation outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// Approximate `p(H1 | g)`.
    pub p: f64,
    /// `ln(p / (1 - p))`, taken from the pre-sigmoid activation so that it
    /// stays finite when `p` rounds to 0 or 1.
    pub log_odds: f64,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Detection,
    Estimation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskNet {
    arch: Architecture,
    scaling: Scaling,
    layers: Vec<Layer>,
    /// Layer index ranges.
    trunk: std::ops::Range<usize>,
    det: std::ops::Range<usize>,
    est: std::ops::Range<usize>,
    params: Vec<f64>,
}

/// Forward state of one image along one path.
struct PathState {
    acts: Vec<Vec<f64>>,
    caches: Vec<Cache>,
}

impl MultiTaskNet {
    /// Builds the layer graph with all parameters zero.
    pub fn new(arch: Architecture, scaling: Scaling) -> Result<Self> {
        let input = Shape {
            c: 1,
            h: arch.input_height,
            w: arch.input_width,
        };
        if input.is_empty() {
            return Err(Error::invalid("net.input", "empty input shape"));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push_block = |specs: &[LayerSpec], start: Shape, layers: &mut Vec<Layer>| -> Result<Shape> {
            let mut shape = start;
            for &spec in specs {
                let l = Layer::build(spec, shape, offset)?;
                offset += l.param_count();
                shape = l.output;
                layers.push(l);
            }
            Ok(shape)
        };
        let trunk_out = push_block(&arch.trunk, input, &mut layers)?;
        let t_end = layers.len();
        let det_out = push_block(&arch.detection, trunk_out, &mut layers)?;
        let d_end = layers.len();
        let est_out = push_block(&arch.estimation, trunk_out, &mut layers)?;
        let e_end = layers.len();

        match arch.detection.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            }) => {}
            _ => return Err(Error::invalid("net.detection", "must end in a single sigmoid unit")),
        }
        match arch.estimation.last() {
            Some(LayerSpec::Dense {
                activation: Activation::Linear,
                ..
            }) => {}
            _ => return Err(Error::invalid("net.estimation", "must end in a linear dense layer")),
        }
        debug_assert_eq!(det_out.len(), 1);
        let theta_dim = est_out.len();
        if scaling.output_offset.len() != theta_dim || scaling.output_scale.len() != theta_dim {
            return Err(Error::DimensionMismatch {
                expected: theta_dim,
                got: scaling.output_offset.len(),
            });
        }
        if !(scaling.input_scale > 0.0) {
            return Err(Error::invalid("net.input_scale", "must be positive"));
        }
        let n = layers.iter().map(Layer::param_count).sum();
        Ok(MultiTaskNet {
            arch,
            scaling,
            layers,
            trunk: 0..t_end,
            det: t_end..d_end,
            est: d_end..e_end,
            params: vec![0.0; n],
        })
    }

    /// He-style Gaussian init (`std = sqrt(2 / fan_in)` for convolutions,
    /// `sqrt(1 / fan_in)` for dense heads); biases zero.
    pub fn init_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in &self.layers {
            let gain = match l.spec {
                LayerSpec::Conv { .. } => 2.0,
                _ => 1.0,
            };
            let std = (gain / l.fan_in().max(1) as f64).sqrt();
            for w in &mut self.params[l.offset..l.offset + l.n_weights] {
                let z: f64 = rng.sample(StandardNormal);
                *w = std * z;
            }
            self.params[l.offset + l.n_weights..l.offset + l.param_count()]
                .iter_mut()
                .for_each(|b| *b = 0.0);
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn theta_dim(&self) -> usize {
        self.scaling.output_offset.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter index ranges of the trunk, detection and estimation blocks.
    pub fn partitions(&self) -> [std::ops::Range<usize>; 3] {
        let span = |r: &std::ops::Range<usize>| {
            if r.is_empty() {
                let at = self.layers.get(r.start).map_or(self.params.len(), |l| l.offset);
                return at..at;
            }
            let first = &self.layers[r.start];
            let last = &self.layers[r.end - 1];
            first.offset..last.offset + last.param_count()
        };
        [span(&self.trunk), span(&self.det), span(&self.est)]
    }

    /// Parameter ranges updated by the given head's loss: the trunk plus
    /// that head's branch.
    pub fn trainable(&self, head: Head) -> Vec<std::ops::Range<usize>> {
        let [t, d, e] = self.partitions();
        match head {
            Head::Detection => vec![t, d],
            Head::Estimation => vec![t, e],
        }
    }

    fn path(&self, head: Head) -> Vec<usize> {
        let branch = match head {
            Head::Detection => self.det.clone(),
            Head::Estimation => self.est.clone(),
        };
        self.trunk.clone().chain(branch).collect()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_width * self.arch.input_height
    }

    fn check_input(&self, g: &Image) -> Result<()> {
        if g.width() != self.arch.input_width || g.height() != self.arch.input_height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.arch.input_width, self.arch.input_height),
                got: format!("{}x{}", g.width(), g.height()),
            });
        }
        Ok(())
    }

    pub(crate) fn standardize(&self, g: &[f64]) -> Vec<f64> {
        let s = &self.scaling;
        g.iter().map(|v| (v - s.input_mean) / s.input_scale).collect()
    }

    fn run(&self, layers: &[usize], x: Vec<f64>) -> PathState {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut caches = Vec::with_capacity(layers.len());
        acts.push(x);
        for &i in layers {
            let mut cache = Cache::default();
            let mut y = Vec::new();
            self.layers[i].forward(&self.params, acts.last().unwrap(), &mut cache, &mut y);
            acts.push(y);
            caches.push(cache);
        }
        PathState { acts, caches }
    }

    fn backprop(&self, layers: &[usize], state: &PathState, mut dy: Vec<f64>, grad: &mut [f64]) {
        let mut dx = Vec::new();
        for (k, &i) in layers.iter().enumerate().rev() {
            let want_dx = k > 0;
            self.layers[i].backward(
                &self.params,
                &state.acts[k],
                &state.acts[k + 1],
                &state.caches[k],
                &mut dy,
                grad,
                if want_dx { Some(&mut dx) } else { None },
            );
            if want_dx {
                std::mem::swap(&mut dy, &mut dx);
            }
        }
    }

    fn estimate_from(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.scaling.output_offset)
            .zip(&self.scaling.output_scale)
            .map(|((z, o), s)| o + s * z)
            .collect()
    }

    /// Both heads from one trunk pass.
    pub fn forward(&self, g: &Image) -> Result<NetOutput> {
        self.check_input(g)?;
        let trunk: Vec<usize> = self.trunk.clone().collect();
        let t = self.run(&trunk, self.standardize(g.pixels()));
        let feat = t.acts.last().unwrap().clone();
        let det: Vec<usize> = self.det.clone().collect();
        let (head, body) = det.split_last().expect("detection branch is non-empty");
        let d = self.run(body, feat.clone());
        let log_odds = self.layers[*head].dense_logits(&self.params, d.acts.last().unwrap())[0];
        let est: Vec<usize> = self.est.clone().collect();
        let e = self.run(&est, feat);
        Ok(NetOutput {
            p: super::layers::sigmoid(log_odds),
            log_odds,
            estimate: self.estimate_from(e.acts.last().unwrap()),
        })
    }

    pub fn forward_batch(&self, images: &[Image]) -> Result<Vec<NetOutput>> {
        images.par_iter().map(|g| self.forward(g)).collect()
    }

    /// Mean binary cross-entropy over `(input, label)` pairs and its
    /// gradient, accumulated into `grad` (trunk and detection entries).
    /// Inputs are already standardized.
    pub(crate) fn detection_gradient(&self, inputs: &[Vec<f64>], labels: &[f64], grad: &mut [f64]) -> f64 {
        let path = self.path(Head::Detection);
        let n = inputs.len() as f64;
        let chunks = chunk_gradients(self.params.len(), inputs.len(), |i, g| {
            let st = self.run(&path, inputs[i].clone());
            let p = st.acts.last().unwrap()[0];
            let (loss, dp) = detection_loss_grad(p, labels[i]);
            self.backprop(&path, &st, vec![dp / n], g);
            loss
        });
        reduce(chunks, grad) / n
    }

    /// Negative mean utility over signal-present `(input, theta)` pairs and
    /// its gradient (trunk and estimation entries).
    pub(crate) fn estimation_gradient(
        &self,
        inputs: &[Vec<f64>],
        thetas: &[Vec<f64>],
        u: &UtilityFn,
        grad: &mut [f64],
    ) -> f64 {
        let path = self.path(Head::Estimation);
        let n = inputs.len() as f64;
        let d = self.theta_dim();
        let chunks = chunk_gradients(self.params.len(), inputs.len(), |i, g| {
            let st = self.run(&path, inputs[i].clone());
            let est = self.estimate_from(st.acts.last().unwrap());
            let mut du = vec![0.0; d];
            let loss = estimation_loss_grad(&est, &thetas[i], u, &mut du);
            let dz: Vec<f64> = du
                .iter()
                .zip(&self.scaling.output_scale)
                .map(|(g, s)| g * s / n)
                .collect();
            if dz.iter().any(|v| *v != 0.0) {
                self.backprop(&path, &st, dz, g);
            }
            loss
        });
        reduce(chunks, grad) / n
    }

    /// Mean detection loss over labelled images and its gradient with
    /// respect to every parameter (zero outside trunk and detection branch).
    pub fn detection_loss_gradient(&self, images: &[Image], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        if images.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                got: labels.len(),
            });
        }
        let inputs = self.inputs(images)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.detection_gradient(&inputs, labels, &mut grad);
        Ok((loss, grad))
    }

    /// Estimation loss over signal-present images and its gradient.
    pub fn estimation_loss_gradient(
        &self,
        images: &[Image],
        thetas: &[Vec<f64>],
        u: &UtilityFn,
    ) -> Result<(f64, Vec<f64>)> {
        if images.is_empty() {
            return Err(Error::Empty("estimation batch"));
        }
        if images.len() != thetas.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                got: thetas.len(),
            });
        }
        if let Some(t) = thetas.iter().find(|t| t.len() != self.theta_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.theta_dim(),
                got: t.len(),
            });
        }
        let inputs = self.inputs(images)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.estimation_gradient(&inputs, thetas, u, &mut grad);
        Ok((loss, grad))
    }

    fn inputs(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        images
            .iter()
            .map(|g| {
                self.check_input(g)?;
                Ok(self.standardize(g.pixels()))
            })
            .collect()
    }
}

/// Fixed chunk size for gradient accumulation. Each chunk is summed
/// sequentially and chunks are reduced in index order, so the result does not
/// depend on the number of worker threads.
const CHUNK: usize = 8;

fn chunk_gradients<F>(n_params: usize, n_items: usize, f: F) -> Vec<(Vec<f64>, f64)>
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let n_chunks = n_items.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; n_params];
            let mut loss = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_items) {
                loss += f(i, &mut g);
            }
            (g, loss)
        })
        .collect()
}

fn reduce(chunks: Vec<(Vec<f64>, f64)>, grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (g, l) in chunks {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        loss += l;
    }
    loss
}
