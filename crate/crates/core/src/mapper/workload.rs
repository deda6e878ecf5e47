//! Quantized networks evaluated through the macro, and the bundled synthetic
//! classification task.
//!
//! A workload directory holds `manifest.json` plus CIMT tensor files. Inputs
//! are u4 codes; `layers[0].spec.act_scale` maps them to real values.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lower::{assemble_output, lower_layer, LayerKind, LayerSpec};
use crate::cim_macro::CimMacro;
use crate::tensor::{exact_matmul, read_tensor, write_tensor, Tensor2};
use crate::{CimError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    /// Lowered `K x N` weights.
    pub weights: Tensor2<i8>,
    /// Real-valued bias per output channel, applied after dequantization.
    pub bias: Vec<f64>,
    /// Unquantized weights for the float baseline, same layout.
    pub float_weights: Option<Tensor2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub layers: Vec<QuantLayer>,
    /// `samples x in_features` u4 codes.
    pub inputs: Tensor2<u8>,
    pub labels: Vec<u32>,
    /// Float-network test accuracy recorded at generation time.
    pub float_accuracy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLayer {
    spec: LayerSpec,
    weights: String,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    float_weights: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: String,
    inputs: String,
    labels: String,
    float_accuracy: f64,
    layers: Vec<ManifestLayer>,
}

/// Everything one forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor2<f64>,
    pub predictions: Vec<u32>,
    /// Integer accumulators per layer (`batch x out_features`).
    pub accumulators: Vec<Tensor2<i64>>,
    /// Exact accumulators for the same layer inputs.
    pub references: Vec<Tensor2<i64>>,
    /// Exact pMAC histogram per layer (empty on the exact path).
    pub pmac_histograms: Vec<Vec<u64>>,
    pub clipped: u64,
    pub readouts: u64,
}

impl ForwardPass {
    pub fn accuracy(&self, labels: &[u32]) -> f64 {
        accuracy(&self.predictions, labels)
    }
}

pub fn accuracy(predictions: &[u32], labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Real value of a layer output: dequantized accumulator plus bias.
fn dequantize(spec: &LayerSpec, acc: &Tensor2<i64>, bias: &[f64]) -> Tensor2<f64> {
    let scale = spec.act_scale * spec.weight_scale;
    let per_channel = spec.out_features() / spec.out_channels();
    Tensor2::from_fn(acc.rows(), acc.cols(), |b, f| {
        let v = acc.get(b, f) as f64 * scale + bias[f / per_channel];
        if spec.relu {
            v.max(0.0)
        } else {
            v
        }
    })
}

/// Round-half-even quantization to u4 codes.
pub fn quantize_activations(real: &Tensor2<f64>, scale: f64) -> Tensor2<u8> {
    real.map(|v| (v / scale).round_ties_even().clamp(0.0, 15.0) as u8)
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| CimError::shape("workload has no layers"))?;
        if self.inputs.cols() != first.spec.in_features() {
            return Err(CimError::shape(format!(
                "inputs have {} features, first layer expects {}",
                self.inputs.cols(),
                first.spec.in_features()
            )));
        }
        if self.inputs.data().iter().any(|&v| v > 15) {
            return Err(CimError::domain("workload inputs exceed 4 bits"));
        }
        if self.labels.len() != self.inputs.rows() {
            return Err(CimError::shape("label count differs from sample count"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.spec.validate()?;
            if l.weights.shape() != l.spec.weight_shape() {
                return Err(CimError::shape(format!("layer {}: weight shape", l.spec.name)));
            }
            if l.bias.len() != l.spec.out_channels() {
                return Err(CimError::shape(format!("layer {}: bias length", l.spec.name)));
            }
            if let Some(fw) = &l.float_weights {
                if fw.shape() != l.weights.shape() {
                    return Err(CimError::shape(format!("layer {}: float weight shape", l.spec.name)));
                }
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.spec.in_features() != l.spec.out_features() {
                    return Err(CimError::shape(format!(
                        "layer {} feeds {} features into {} expecting {}",
                        l.spec.name,
                        l.spec.out_features(),
                        next.spec.name,
                        next.spec.in_features()
                    )));
                }
            }
        }
        let classes = self.layers.last().unwrap().spec.out_features();
        if self.labels.iter().any(|&l| l as usize >= classes) {
            return Err(CimError::domain("label exceeds class count"));
        }
        Ok(())
    }

    /// Runs the quantized network. With `engine = None` every matmul is the
    /// exact integer product.
    pub fn forward(&self, engine: Option<&CimMacro>) -> Result<ForwardPass> {
        self.validate()?;
        let batch = self.inputs.rows();
        let mut acts = self.inputs.clone();
        let mut pass = ForwardPass {
            logits: Tensor2::filled(0, 0, 0.0),
            predictions: Vec::new(),
            accumulators: Vec::new(),
            references: Vec::new(),
            pmac_histograms: Vec::new(),
            clipped: 0,
            readouts: 0,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let problem = lower_layer(&layer.spec, &acts, &layer.weights)?;
            let exact = assemble_output(&layer.spec, batch, &exact_matmul(&problem.x, &problem.w)?)?;
            let acc = match engine {
                None => exact.clone(),
                Some(m) => {
                    let run = m.matmul_tagged(&problem.x, &problem.w, i as u64)?;
                    pass.readouts += run.pmac_histogram.iter().sum::<u64>();
                    pass.clipped += run.clipped;
                    pass.pmac_histograms.push(run.pmac_histogram);
                    assemble_output(&layer.spec, batch, &run.output)?
                }
            };
            let real = dequantize(&layer.spec, &acc, &layer.bias);
            pass.accumulators.push(acc);
            pass.references.push(exact);
            match self.layers.get(i + 1) {
                Some(next) => acts = quantize_activations(&real, next.spec.act_scale),
                None => pass.logits = real,
            }
        }
        pass.predictions = (0..batch).map(|b| argmax(pass.logits.row(b))).collect();
        Ok(pass)
    }

    pub fn exact_accuracy(&self) -> Result<f64> {
        Ok(self.forward(None)?.accuracy(&self.labels))
    }

    /// Float-network logits on the real-valued inputs, when float weights
    /// are present.
    pub fn float_forward(&self) -> Result<Option<Tensor2<f64>>> {
        self.validate()?;
        let mut x = self.inputs.map(|v| f64::from(v) * self.layers[0].spec.act_scale);
        for layer in &self.layers {
            let Some(fw) = &layer.float_weights else {
                return Ok(None);
            };
            if !matches!(layer.spec.kind, LayerKind::FullyConnected { .. }) {
                return Err(CimError::config("float baseline supports FC layers only"));
            }
            x = dense(&x, fw, &layer.bias, layer.spec.relu);
        }
        Ok(Some(x))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| CimError::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| CimError::Format(format!("{}: {e}", path.display())))?;
        let labels: Tensor2<i32> = read_tensor(&dir.join(&m.labels))?;
        let labels = labels
            .data()
            .iter()
            .map(|&l| u32::try_from(l).map_err(|_| CimError::domain("negative label")))
            .collect::<Result<_>>()?;
        let layers = m
            .layers
            .into_iter()
            .map(|l| {
                Ok(QuantLayer {
                    weights: read_tensor(&dir.join(&l.weights))?,
                    float_weights: l.float_weights.map(|f| read_tensor(&dir.join(f))).transpose()?,
                    spec: l.spec,
                    bias: l.bias,
                })
            })
            .collect::<Result<_>>()?;
        let w = Workload {
            name: m.name,
            layers,
            inputs: read_tensor(&dir.join(&m.inputs))?,
            labels,
            float_accuracy: m.float_accuracy,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| CimError::io(dir, e))?;
        let mut layers = Vec::new();
        for l in &self.layers {
            let weights = format!("{}.weights.cimt", l.spec.name);
            write_tensor(&dir.join(&weights), &l.weights)?;
            let float_weights = match &l.float_weights {
                Some(fw) => {
                    let f = format!("{}.float.cimt", l.spec.name);
                    write_tensor(&dir.join(&f), fw)?;
                    Some(f)
                }
                None => None,
            };
            layers.push(ManifestLayer {
                spec: l.spec.clone(),
                weights,
                bias: l.bias.clone(),
                float_weights,
            });
        }
        write_tensor(&dir.join("inputs.cimt"), &self.inputs)?;
        let labels = Tensor2::new(self.labels.len(), 1, self.labels.iter().map(|&l| l as i32).collect())?;
        write_tensor(&dir.join("labels.cimt"), &labels)?;
        let manifest = Manifest {
            name: self.name.clone(),
            inputs: "inputs.cimt".into(),
            labels: "labels.cimt".into(),
            float_accuracy: self.float_accuracy,
            layers,
        };
        let value = serde_json::to_value(&manifest).expect("manifest serializes");
        let text = serde_json::to_string_pretty(&value).expect("value serializes") + "\n";
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CimError::io(&path, e))
    }
}

fn dense(x: &Tensor2<f64>, w: &Tensor2<f64>, bias: &[f64], relu: bool) -> Tensor2<f64> {
    Tensor2::from_fn(x.rows(), w.cols(), |m, n| {
        let v = (0..x.cols()).map(|k| x.get(m, k) * w.get(k, n)).sum::<f64>() + bias[n];
        if relu {
            v.max(0.0)
        } else {
            v
        }
    })
}

/// Parameters of the bundled synthetic task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub classes: usize,
    pub side: usize,
    pub hidden: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub pixel_noise: f64,
    /// Gaussian blobs per class prototype and their width range, pixels.
    pub blobs: usize,
    pub blob_sigma: (f64, f64),
    /// Pixel level of the image background.
    pub background: f64,
    /// Quantile of hidden activations mapped to code 15.
    pub hidden_quantile: f64,
    /// Quantile of `|w|` mapped to weight code 127; larger weights saturate.
    pub weight_quantile: f64,
    /// L2 penalty on weights during fitting.
    pub weight_decay: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            seed: 7,
            classes: 10,
            side: 8,
            hidden: 256,
            train_samples: 4000,
            test_samples: 1000,
            epochs: 30,
            learning_rate: 0.02,
            pixel_noise: 0.12,
            blobs: 3,
            blob_sigma: (0.8, 1.6),
            background: 0.0,
            hidden_quantile: 0.95,
            weight_quantile: 0.99,
            weight_decay: 0.0,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
}

impl SyntheticTask {
    fn prototypes(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let s = self.side as f64;
        (0..self.classes)
            .map(|_| {
                let blobs: Vec<Blob> = (0..self.blobs)
                    .map(|_| Blob {
                        cy: rng.random_range(1.0..s - 1.0),
                        cx: rng.random_range(1.0..s - 1.0),
                        sigma: rng.random_range(self.blob_sigma.0..self.blob_sigma.1),
                    })
                    .collect();
                let img: Vec<f64> = (0..self.side * self.side)
                    .map(|i| {
                        let (y, x) = ((i / self.side) as f64, (i % self.side) as f64);
                        blobs
                            .iter()
                            .map(|b| {
                                let d2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
                                (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                            })
                            .sum()
                    })
                    .collect();
                let peak = img.iter().cloned().fold(0.0, f64::max);
                img.into_iter().map(|v| v / peak).collect()
            })
            .collect()
    }

    /// Pixels are multiples of 1/15 so u4 input quantization is exact.
    fn sample(&self, proto: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.side as isize;
        let (dy, dx) = (
            rng.random_range(-1..=1i64) as isize,
            rng.random_range(-1..=1i64) as isize,
        );
        let gain = rng.random_range(0.75..1.0);
        let noise = Normal::new(0.0, self.pixel_noise).expect("finite sigma");
        (0..n * n)
            .map(|i| {
                let (y, x) = (i / n - dy, i % n - dx);
                let base = if (0..n).contains(&y) && (0..n).contains(&x) {
                    proto[(y * n + x) as usize]
                } else {
                    0.0
                };
                let v: f64 =
                    (self.background + (1.0 - self.background) * gain * base + noise.sample(rng)).clamp(0.0, 1.0);
                (v * 15.0).round_ties_even() / 15.0
            })
            .collect()
    }

    fn dataset(&self, protos: &[Vec<f64>], count: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u32>) {
        (0..count)
            .map(|i| {
                let label = i % self.classes;
                (self.sample(&protos[label], rng), label as u32)
            })
            .unzip()
    }

    /// Generates data, fits a 2-layer MLP by plain minibatch SGD and
    /// quantizes it. Deterministic in `seed`.
    pub fn generate(&self) -> Result<Workload> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let protos = self.prototypes(&mut rng);
        let (train_x, train_y) = self.dataset(&protos, self.train_samples, &mut rng);
        let (test_x, test_y) = self.dataset(&protos, self.test_samples, &mut rng);
        let inputs = self.side * self.side;
        let mut mlp = Mlp::new(&[inputs, self.hidden, self.classes], &mut rng);
        mlp.train(
            &train_x,
            &train_y,
            self.epochs,
            self.learning_rate,
            self.weight_decay,
            &mut rng,
        );

        let to_tensor = |xs: &[Vec<f64>]| Tensor2::from_fn(xs.len(), inputs, |r, c| (xs[r][c] * 15.0).round() as u8);
        let act_scale0 = 1.0 / 15.0;
        let (w0, s0) = quantize_weights(&mlp.weights[0], self.weight_quantile);
        let (w1, s1) = quantize_weights(&mlp.weights[1], self.weight_quantile);
        let fc = |name: &str, i: usize, o: usize, act_scale: f64, weight_scale: f64, relu: bool| LayerSpec {
            name: name.into(),
            kind: LayerKind::FullyConnected { inputs: i, outputs: o },
            act_scale,
            weight_scale,
            relu,
        };
        let spec0 = fc("fc1", inputs, self.hidden, act_scale0, s0, true);

        // Hidden activation scale: calibrated on the training set so the
        // chosen quantile of the hidden layer maps to code 15.
        let train_codes = to_tensor(&train_x);
        let hidden = dequantize(&spec0, &exact_matmul(&train_codes, &w0)?, &mlp.biases[0]);
        let mut vals: Vec<f64> = hidden.data().to_vec();
        vals.sort_by(f64::total_cmp);
        let q = vals[((vals.len() - 1) as f64 * self.hidden_quantile) as usize];
        let act_scale1 = q.max(f64::MIN_POSITIVE) / 15.0;

        let layers = vec![
            QuantLayer {
                spec: spec0,
                weights: w0,
                bias: mlp.biases[0].clone(),
                float_weights: Some(mlp.weights[0].clone()),
            },
            QuantLayer {
                spec: fc("fc2", self.hidden, self.classes, act_scale1, s1, false),
                weights: w1,
                bias: mlp.biases[1].clone(),
                float_weights: Some(mlp.weights[1].clone()),
            },
        ];
        let mut w = Workload {
            name: "synthetic-mlp".into(),
            layers,
            inputs: to_tensor(&test_x),
            labels: test_y,
            float_accuracy: 0.0,
        };
        let logits = w.float_forward()?.expect("float weights present");
        let preds: Vec<u32> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
        w.float_accuracy = accuracy(&preds, &w.labels);
        Ok(w)
    }
}

/// Symmetric per-tensor i8 quantization, round-half-even, range `[-127, 127]`.
/// The `quantile` of `|w|` maps to 127 (1.0 keeps the maximum).
pub fn quantize_weights(w: &Tensor2<f64>, quantile: f64) -> (Tensor2<i8>, f64) {
    let mut mags: Vec<f64> = w.data().iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let peak = mags
        .get(((mags.len().max(1) - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize)
        .copied()
        .unwrap_or(0.0);
    let scale = if peak > 0.0 { peak / 127.0 } else { 1.0 };
    (
        w.map(|v| (v / scale).round_ties_even().clamp(-127.0, 127.0) as i8),
        scale,
    )
}

/// Minimal ReLU MLP with softmax cross-entropy, only used to produce
/// workload weights.
struct Mlp {
    weights: Vec<Tensor2<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let std = (2.0 / pair[0] as f64).sqrt();
            let init = Normal::new(0.0, std).expect("finite sigma");
            weights.push(Tensor2::from_fn(pair[0], pair[1], |_, _| init.sample(rng)));
            biases.push(vec![0.0; pair[1]]);
        }
        Mlp { weights, biases }
    }

    /// Activations of every layer; the last entry is the logits.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = acts.last().unwrap();
            let out = (0..w.cols())
                .map(|n| {
                    let v = (0..w.rows()).map(|k| input[k] * w.get(k, n)).sum::<f64>() + b[n];
                    if l < last {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn train(&mut self, xs: &[Vec<f64>], ys: &[u32], epochs: usize, lr: f64, decay: f64, rng: &mut ChaCha8Rng) {
        const BATCH: usize = 32;
        const MOMENTUM: f64 = 0.9;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut vw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.data().len()]).collect();
        let mut vb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let last = self.weights.len() - 1;
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(BATCH) {
                let mut gw: Vec<Vec<f64>> = vw.iter().map(|v| vec![0.0; v.len()]).collect();
                let mut gb: Vec<Vec<f64>> = vb.iter().map(|v| vec![0.0; v.len()]).collect();
                for &i in chunk {
                    let acts = self.activations(&xs[i]);
                    let logits = acts.last().unwrap();
                    let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|v| (v - peak).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    let mut delta: Vec<f64> = exps.iter().map(|e| e / total).collect();
                    delta[ys[i] as usize] -= 1.0;
                    for l in (0..=last).rev() {
                        let w = &self.weights[l];
                        let input = &acts[l];
                        for k in 0..w.rows() {
                            for n in 0..w.cols() {
                                gw[l][k * w.cols() + n] += input[k] * delta[n];
                            }
                        }
                        for n in 0..w.cols() {
                            gb[l][n] += delta[n];
                        }
                        if l > 0 {
                            delta = (0..w.rows())
                                .map(|k| {
                                    if input[k] <= 0.0 {
                                        0.0
                                    } else {
                                        (0..w.cols()).map(|n| w.get(k, n) * delta[n]).sum()
                                    }
                                })
                                .collect();
                        }
                    }
                }
                let step = lr / chunk.len() as f64;
                for l in 0..=last {
                    let cols = self.weights[l].cols();
                    for (j, g) in gw[l].iter().enumerate() {
                        let (k, n) = (j / cols, j % cols);
                        vw[l][j] = MOMENTUM * vw[l][j] - step * g - lr * decay * self.weights[l].get(k, n);
                        let v = self.weights[l].get(k, n) + vw[l][j];
                        self.weights[l].set(k, n, v);
                    }
                    for (n, g) in gb[l].iter().enumerate() {
                        vb[l][n] = MOMENTUM * vb[l][n] - step * g;
                        self.biases[l][n] += vb[l][n];
                    }
                }
            }
        }
    }
}
