//! Small CPU networks with manual backpropagation.
//!
//! Batches are processed in fixed chunks of [`CHUNK`] samples that run on
//! the rayon pool. Chunk results are combined in index order, so outputs do
//! not depend on the thread count.

mod layers;
mod real;
mod spec;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ParamVector, Rng};

use layers::{ConvGeom, PoolGeom};
pub use real::Real;
pub use spec::{LayerSpec, ModelSpec, Shape};

pub const CHUNK: usize = 32;

/// A mini-batch: `len` samples of shape `shape`, stored sample-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    inputs: Vec<T>,
    shape: Shape,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Real> Batch<T> {
    pub fn new(inputs: Vec<T>, shape: Shape, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty);
        }
        if inputs.len() != labels.len() * shape.size() {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * shape.size(),
                found: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            shape,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[T] {
        &self.inputs
    }

    pub fn inputs_mut(&mut self) -> &mut [T] {
        &mut self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            inputs: self.inputs.iter().map(|&x| U::of(x.as_f64())).collect(),
            shape: self.shape,
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks for sample `i` of a batch come from
    /// `(dropout_seed, layer, i)`.
    Train {
        dropout_seed: u64,
    },
    Eval,
}

enum LayerCache<T> {
    None,
    Conv { cols: Vec<T> },
    Relu { out: Vec<T> },
    Pool { arg: Vec<u32> },
    Dense { input: Vec<T> },
    Dropout { mask: Vec<T> },
}

struct ChunkCache<T> {
    n: usize,
    layers: Vec<LayerCache<T>>,
}

/// Activations saved by [`Network::forward`] for [`Network::backward`].
pub struct Cache<T> {
    chunks: Vec<ChunkCache<T>>,
    batch: usize,
}

#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// One vector per parameter group, in [`ModelSpec::param_groups`] order.
    pub grads: Vec<Vec<T>>,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Summed cross-entropy over rows of `logits` and `(softmax − onehot)·scale`.
/// Also returns the number of rows whose argmax equals the label.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
    scale: f64,
) -> (f64, Vec<T>, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = vec![T::zero(); logits.len()];
    let mut p = vec![0.0f64; classes];
    for ((row, g), &y) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let mut arg = 0;
        let mut max = f64::NEG_INFINITY;
        for (j, &z) in row.iter().enumerate() {
            let z = z.as_f64();
            if z > max {
                max = z;
                arg = j;
            }
        }
        if arg == y {
            correct += 1;
        }
        let mut total = 0.0;
        for (pj, &z) in p.iter_mut().zip(row) {
            *pj = (z.as_f64() - max).exp();
            total += *pj;
        }
        loss += total.ln() + max - row[y].as_f64();
        for (j, (gj, pj)) in g.iter_mut().zip(&p).enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *gj = T::of((pj / total - target) * scale);
        }
    }
    (loss, grad, correct)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    params: Vec<Vec<T>>,
}

impl<T: Real> Network<T> {
    pub fn zeros(spec: ModelSpec) -> Self {
        let params = spec.param_groups().iter().map(|g| vec![T::zero(); g.dim]).collect();
        Self { spec, params }
    }

    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `f` is drawn from `U(−1/√f, 1/√f)`. Group `i` draws from
    /// `Rng::derive_seed(seed, i)`.
    pub fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut net = Self::zeros(spec);
        for (li, layer) in net.spec.layers.iter().enumerate() {
            let fan_in = match *layer {
                LayerSpec::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
                LayerSpec::Dense { inputs, .. } => inputs,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let wg = net.spec.weight_group(li).expect("parameterized layer");
            for g in [wg, wg + 1] {
                let mut rng = Rng::new(Rng::derive_seed(seed, g as u64));
                for p in net.params[g].iter_mut() {
                    *p = T::of(rng.uniform_range(-bound, bound));
                }
            }
        }
        net
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Vec<T>>) -> Result<Self> {
        let mut net = Self::zeros(spec);
        net.check_params(&params)?;
        net.params = params;
        Ok(net)
    }

    fn check_params<P: AsRef<[U]>, U>(&self, params: &[P]) -> Result<()> {
        let groups = self.spec.param_groups();
        if params.len() != groups.len() {
            return Err(Error::DimensionMismatch {
                expected: groups.len(),
                found: params.len(),
            });
        }
        for (p, g) in params.iter().zip(groups) {
            if p.as_ref().len() != g.dim {
                return Err(Error::DimensionMismatch {
                    expected: g.dim,
                    found: p.as_ref().len(),
                });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    /// Copies optimizer-side `f64` parameters into the network.
    pub fn load(&mut self, params: &[ParamVector]) -> Result<()> {
        self.check_params(params)?;
        for (dst, src) in self.params.iter_mut().zip(params) {
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d = T::of(s);
            }
        }
        Ok(())
    }

    pub fn to_param_vectors(&self) -> Result<Vec<ParamVector>> {
        self.params
            .iter()
            .map(|p| ParamVector::new(p.iter().map(|x| x.as_f64()).collect()))
            .collect()
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.shape() != self.spec.input || batch.classes() != self.spec.classes {
            return Err(Error::Shape(format!(
                "batch of {} ({} classes) does not fit model input {} ({} classes)",
                batch.shape(),
                batch.classes(),
                self.spec.input,
                self.spec.classes
            )));
        }
        Ok(())
    }

    fn chunk_ranges(len: usize) -> Vec<(usize, usize)> {
        (0..len).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(len))).collect()
    }

    fn forward_chunk(&self, x: &[T], n: usize, offset: usize, mode: Mode) -> (Vec<T>, ChunkCache<T>) {
        let shapes = self.spec.shapes();
        let mut act = x.to_vec();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        for (li, layer) in self.spec.layers.iter().enumerate() {
            let (input, output) = (shapes[li], shapes[li + 1]);
            let cache = match *layer {
                LayerSpec::Conv2d {
                    kernel, stride, pad, ..
                } => {
                    let g = conv_geom(input, output, kernel, stride, pad);
                    let wg = self.spec.weight_group(li).expect("conv group");
                    let (y, cols) = layers::conv_forward(&g, n, &act, &self.params[wg], &self.params[wg + 1]);
                    act = y;
                    LayerCache::Conv { cols }
                }
                LayerSpec::Relu => {
                    for v in act.iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    LayerCache::Relu { out: act.clone() }
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    let g = pool_geom(input, output, kernel, stride);
                    let (y, arg) = layers::maxpool_forward(&g, n, &act);
                    act = y;
                    LayerCache::Pool { arg }
                }
                LayerSpec::Flatten => LayerCache::None,
                LayerSpec::Dense { inputs, outputs } => {
                    let wg = self.spec.weight_group(li).expect("dense group");
                    let y = layers::dense_forward(n, inputs, outputs, &act, &self.params[wg], &self.params[wg + 1]);
                    LayerCache::Dense {
                        input: std::mem::replace(&mut act, y),
                    }
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { dropout_seed } if rate > 0.0 => {
                        let keep = T::of(1.0 / (1.0 - rate));
                        let layer_seed = Rng::derive_seed(dropout_seed, li as u64);
                        let size = input.size();
                        let mut mask = vec![T::zero(); act.len()];
                        for (s, m) in mask.chunks_exact_mut(size).enumerate() {
                            let mut rng = Rng::new(Rng::derive_seed(layer_seed, (offset + s) as u64));
                            for mj in m.iter_mut() {
                                if rng.uniform() >= rate {
                                    *mj = keep;
                                }
                            }
                        }
                        for (a, &m) in act.iter_mut().zip(&mask) {
                            *a = *a * m;
                        }
                        LayerCache::Dropout { mask }
                    }
                    _ => LayerCache::None,
                },
            };
            caches.push(cache);
        }
        (act, ChunkCache { n, layers: caches })
    }

    /// Accumulates parameter gradients of one chunk into `grads`.
    fn backward_chunk(&self, cache: &ChunkCache<T>, dlogits: Vec<T>, grads: &mut [Vec<T>]) {
        let shapes = self.spec.shapes();
        let n = cache.n;
        let mut d = dlogits;
        for (li, layer) in self.spec.layers.iter().enumerate().rev() {
            let (input, output) = (shapes[li], shapes[li + 1]);
            let need_dx = li > 0;
            match (layer, &cache.layers[li]) {
                (
                    &LayerSpec::Conv2d {
                        kernel, stride, pad, ..
                    },
                    LayerCache::Conv { cols },
                ) => {
                    let g = conv_geom(input, output, kernel, stride, pad);
                    let wg = self.spec.weight_group(li).expect("conv group");
                    let (gw, gb) = split_pair(grads, wg);
                    match layers::conv_backward(&g, n, cols, &self.params[wg], &d, gw, gb, need_dx) {
                        Some(dx) => d = dx,
                        None => return,
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu { out }) => {
                    for (dj, &o) in d.iter_mut().zip(out) {
                        if o <= T::zero() {
                            *dj = T::zero();
                        }
                    }
                }
                (&LayerSpec::MaxPool2d { kernel, stride }, LayerCache::Pool { arg }) => {
                    d = layers::maxpool_backward(&pool_geom(input, output, kernel, stride), n, arg, &d);
                }
                (&LayerSpec::Dense { inputs, outputs }, LayerCache::Dense { input: x }) => {
                    let wg = self.spec.weight_group(li).expect("dense group");
                    let (gw, gb) = split_pair(grads, wg);
                    match layers::dense_backward(n, inputs, outputs, x, &self.params[wg], &d, gw, gb, need_dx) {
                        Some(dx) => d = dx,
                        None => return,
                    }
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    for (dj, &m) in d.iter_mut().zip(mask) {
                        *dj = *dj * m;
                    }
                }
                (LayerSpec::Flatten | LayerSpec::Dropout { .. }, LayerCache::None) => {}
                _ => unreachable!("cache does not match layer {li}"),
            }
        }
    }

    fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    /// Logits `(B × K)` and the cache needed by [`Network::backward`].
    pub fn forward(&self, batch: &Batch<T>, mode: Mode) -> Result<(Vec<T>, Cache<T>)> {
        self.check_batch(batch)?;
        let size = batch.shape().size();
        let parts: Vec<(Vec<T>, ChunkCache<T>)> = Self::chunk_ranges(batch.len())
            .into_par_iter()
            .map(|(s, e)| self.forward_chunk(&batch.inputs()[s * size..e * size], e - s, s, mode))
            .collect();
        let mut logits = Vec::with_capacity(batch.len() * self.spec.classes);
        let mut chunks = Vec::with_capacity(parts.len());
        for (l, c) in parts {
            logits.extend(l);
            chunks.push(c);
        }
        Ok((
            logits,
            Cache {
                chunks,
                batch: batch.len(),
            },
        ))
    }

    /// Parameter gradients for upstream gradient `dlogits` (`B × K`).
    pub fn backward(&self, cache: &Cache<T>, dlogits: &[T]) -> Result<Vec<Vec<T>>> {
        let k = self.spec.classes;
        if dlogits.len() != cache.batch * k {
            return Err(Error::DimensionMismatch {
                expected: cache.batch * k,
                found: dlogits.len(),
            });
        }
        let offsets: Vec<usize> = cache
            .chunks
            .iter()
            .scan(0, |acc, c| {
                let s = *acc;
                *acc += c.n;
                Some(s)
            })
            .collect();
        let parts: Vec<Vec<Vec<T>>> = cache
            .chunks
            .par_iter()
            .zip(offsets)
            .map(|(c, s)| {
                let mut g = self.zero_grads();
                self.backward_chunk(c, dlogits[s * k..(s + c.n) * k].to_vec(), &mut g);
                g
            })
            .collect();
        Ok(sum_in_order(self.zero_grads(), parts))
    }

    /// Mean cross-entropy and its gradient. Fails with diagnostics if the
    /// loss is not finite.
    pub fn loss_and_grad(&self, batch: &Batch<T>, mode: Mode) -> Result<LossGrad<T>> {
        self.check_batch(batch)?;
        let size = batch.shape().size();
        let k = self.spec.classes;
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, usize, f64, Vec<Vec<T>>)> = Self::chunk_ranges(batch.len())
            .into_par_iter()
            .map(|(s, e)| {
                let (logits, cache) = self.forward_chunk(&batch.inputs()[s * size..e * size], e - s, s, mode);
                let max_abs = logits.iter().fold(0.0f64, |m, z| m.max(z.as_f64().abs()));
                let (loss, dlogits, correct) = softmax_cross_entropy(&logits, &batch.labels()[s..e], k, scale);
                let mut g = self.zero_grads();
                self.backward_chunk(&cache, dlogits, &mut g);
                (loss, correct, max_abs, g)
            })
            .collect();
        let mut loss = 0.0;
        let mut correct = 0;
        let mut max_abs_logit = 0.0f64;
        let mut grads = Vec::with_capacity(parts.len());
        for (l, c, m, g) in parts {
            loss += l;
            correct += c;
            max_abs_logit = max_abs_logit.max(m);
            grads.push(g);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NanLoss {
                loss,
                batch: batch.len(),
                max_abs_logit,
            });
        }
        Ok(LossGrad {
            loss,
            grads: sum_in_order(self.zero_grads(), grads),
            correct,
        })
    }

    /// Mean loss and accuracy in eval mode.
    pub fn evaluate(&self, batch: &Batch<T>) -> Result<Evaluation> {
        self.check_batch(batch)?;
        let size = batch.shape().size();
        let k = self.spec.classes;
        let parts: Vec<(f64, usize)> = Self::chunk_ranges(batch.len())
            .into_par_iter()
            .map(|(s, e)| {
                let (logits, _) = self.forward_chunk(&batch.inputs()[s * size..e * size], e - s, s, Mode::Eval);
                let (loss, _, correct) = softmax_cross_entropy(&logits, &batch.labels()[s..e], k, 1.0);
                (loss, correct)
            })
            .collect();
        let (loss, correct) = parts.into_iter().fold((0.0, 0), |(l, c), (a, b)| (l + a, c + b));
        Ok(Evaluation {
            loss: loss / batch.len() as f64,
            accuracy: correct as f64 / batch.len() as f64,
        })
    }
}

fn sum_in_order<T: Real>(mut total: Vec<Vec<T>>, parts: Vec<Vec<Vec<T>>>) -> Vec<Vec<T>> {
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            for (a, b) in t.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    total
}

fn split_pair<T>(grads: &mut [Vec<T>], wg: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads[wg..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn conv_geom(input: Shape, output: Shape, k: usize, stride: usize, pad: usize) -> ConvGeom {
    match (input, output) {
        (Shape::Image { c, h, w }, Shape::Image { c: cout, h: oh, w: ow }) => ConvGeom {
            cin: c,
            h,
            w,
            cout,
            oh,
            ow,
            k,
            stride,
            pad,
        },
        _ => unreachable!("validated by ModelSpec"),
    }
}

fn pool_geom(input: Shape, output: Shape, k: usize, stride: usize) -> PoolGeom {
    match (input, output) {
        (Shape::Image { c, h, w }, Shape::Image { h: oh, w: ow, .. }) => PoolGeom {
            c,
            h,
            w,
            oh,
            ow,
            k,
            stride,
        },
        _ => unreachable!("validated by ModelSpec"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cnn() -> ModelSpec {
        ModelSpec::new(
            "tiny",
            Shape::Image { c: 2, h: 6, w: 6 },
            3,
            vec![
                LayerSpec::conv3x3(2, 4),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::dense(36, 8),
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::dense(8, 3),
            ],
        )
        .unwrap()
    }

    fn batch(spec: &ModelSpec, n: usize, seed: u64) -> Batch<f64> {
        let mut rng = Rng::new(seed);
        let x = (0..n * spec.input.size()).map(|_| rng.normal()).collect();
        let y = (0..n).map(|i| i % spec.classes).collect();
        Batch::new(x, spec.input, y, spec.classes).unwrap()
    }

    #[test]
    fn batch_validation() {
        let s = Shape::Flat(2);
        assert!(Batch::<f32>::new(vec![], s, vec![], 2).is_err());
        assert!(Batch::<f32>::new(vec![0.0; 3], s, vec![0, 1], 2).is_err());
        assert!(Batch::<f32>::new(vec![0.0; 4], s, vec![0, 2], 2).is_err());
        assert!(Batch::<f32>::new(vec![0.0; 4], s, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn simple_cnn_output_shape() {
        let spec = ModelSpec::simple_cnn(10).unwrap();
        let net = Network::<f32>::init(spec.clone(), 1);
        let b = batch(&spec, 3, 2).cast::<f32>();
        let (logits, _) = net.forward(&b, Mode::Eval).unwrap();
        assert_eq!(logits.len(), 3 * 10);
    }

    #[test]
    fn zero_weights_give_zero_logits_and_ln_k_loss() {
        let spec = ModelSpec::simple_cnn(10).unwrap();
        let net = Network::<f64>::zeros(spec.clone());
        let b = batch(&spec, 4, 3);
        let (logits, _) = net.forward(&b, Mode::Train { dropout_seed: 9 }).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        let lg = net.loss_and_grad(&b, Mode::Eval).unwrap();
        assert!((lg.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let spec = tiny_cnn();
        let net = Network::<f64>::zeros(spec);
        let other = Batch::new(vec![0.0; 8], Shape::Flat(8), vec![0], 3).unwrap();
        assert!(net.forward(&other, Mode::Eval).is_err());
    }

    #[test]
    fn dropout_is_seeded_and_off_in_eval() {
        let spec = tiny_cnn();
        let net = Network::<f64>::init(spec.clone(), 4);
        let b = batch(&spec, 5, 5);
        let f = |m| net.forward(&b, m).unwrap().0;
        assert_eq!(f(Mode::Eval), f(Mode::Eval));
        assert_eq!(f(Mode::Train { dropout_seed: 1 }), f(Mode::Train { dropout_seed: 1 }));
        assert_ne!(f(Mode::Train { dropout_seed: 1 }), f(Mode::Train { dropout_seed: 2 }));
        assert_ne!(f(Mode::Train { dropout_seed: 1 }), f(Mode::Eval));
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let logits = [1.0, -2.0, 0.5, 3.0, 3.0, -1.0];
        let (loss, g, correct) = softmax_cross_entropy(&logits, &[2, 0], 3, 1.0);
        assert!(loss > 0.0);
        assert_eq!(correct, 1);
        for row in g.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn forward_backward_matches_fused_path() {
        let spec = tiny_cnn();
        let net = Network::<f64>::init(spec.clone(), 6);
        let b = batch(&spec, 70, 7);
        let mode = Mode::Train { dropout_seed: 3 };
        let fused = net.loss_and_grad(&b, mode).unwrap();
        let (logits, cache) = net.forward(&b, mode).unwrap();
        let (loss, d, _) = softmax_cross_entropy(&logits, b.labels(), 3, 1.0 / 70.0);
        let grads = net.backward(&cache, &d).unwrap();
        assert!((loss / 70.0 - fused.loss).abs() < 1e-12);
        assert_eq!(grads, fused.grads);
        assert!(net.backward(&cache, &d[3..]).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let spec = tiny_cnn();
        let net = Network::<f64>::init(spec.clone(), 8);
        let b = batch(&spec, 9, 9);
        let mut x = b.inputs().to_vec();
        x.extend_from_slice(b.inputs());
        let mut y = b.labels().to_vec();
        y.extend_from_slice(b.labels());
        let doubled = Batch::new(x, spec.input, y, 3).unwrap();
        let a = net.loss_and_grad(&b, Mode::Eval).unwrap();
        let d = net.loss_and_grad(&doubled, Mode::Eval).unwrap();
        assert!((a.loss - d.loss).abs() < 1e-12);
        for (ga, gd) in a.grads.iter().zip(&d.grads) {
            for (x, y) in ga.iter().zip(gd) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let spec = tiny_cnn();
        let net = Network::<f64>::init(spec.clone(), 10);
        let b = batch(&spec, 40, 11);
        let size = spec.input.size();
        let mut order: Vec<usize> = (0..40).collect();
        Rng::new(1).shuffle(&mut order);
        let x = order
            .iter()
            .flat_map(|&i| b.inputs()[i * size..(i + 1) * size].to_vec())
            .collect();
        let y = order.iter().map(|&i| b.labels()[i]).collect();
        let shuffled = Batch::new(x, spec.input, y, 3).unwrap();
        let a = net.evaluate(&b).unwrap();
        let c = net.evaluate(&shuffled).unwrap();
        assert!((a.loss - c.loss).abs() < 1e-12);
        assert_eq!(a.accuracy, c.accuracy);
    }

    #[test]
    fn non_finite_loss_reports_diagnostics() {
        let spec = ModelSpec::logistic(Shape::Flat(2), 2).unwrap();
        let mut net = Network::<f64>::zeros(spec.clone());
        net.params_mut()[0][0] = f64::NAN;
        let b = Batch::new(vec![1.0, 1.0], Shape::Flat(2), vec![0], 2).unwrap();
        match net.loss_and_grad(&b, Mode::Eval) {
            Err(Error::NanLoss { batch, .. }) => assert_eq!(batch, 1),
            other => panic!("expected NanLoss, got {other:?}"),
        }
    }

    #[test]
    fn param_vector_round_trip() {
        let spec = tiny_cnn();
        let net = Network::<f64>::init(spec.clone(), 12);
        let pv = net.to_param_vectors().unwrap();
        let mut other = Network::<f64>::zeros(spec);
        other.load(&pv).unwrap();
        assert_eq!(other, net);
        assert!(other.load(&pv[1..]).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = ModelSpec::simple_cnn(10).unwrap();
        let net = Network::<f32>::init(spec, 0);
        let bound = 1.0 / 27f32.sqrt();
        assert!(net.params()[0].iter().all(|w| w.abs() <= bound));
        let bound = 1.0 / 4096f32.sqrt();
        assert!(net.params()[4].iter().all(|w| w.abs() <= bound));
        assert_ne!(net.params()[0][0], net.params()[2][0]);
    }
}
