use serde::{Deserialize, Serialize};

use crate::tensor::Tensor2;
use crate::{CimError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    /// Input features are channel-major `[C, H, W]`; weights are stored
    /// lowered as `(C_in * k * k) x C_out` with row `c * k * k + ky * k + kx`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

/// One integer layer: u4 activations times i8 weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Real value of one input activation step.
    pub act_scale: f64,
    /// Real value of one weight step.
    pub weight_scale: f64,
    pub relu: bool,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s.is_finite() && s > 0.0;
        if !ok(self.act_scale) || !ok(self.weight_scale) {
            return Err(CimError::config(format!(
                "layer {}: scales must be positive",
                self.name
            )));
        }
        match self.kind {
            LayerKind::FullyConnected { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err(CimError::shape(format!("layer {}: empty FC layer", self.name)))
            }
            LayerKind::Conv2d {
                kernel,
                stride,
                height,
                width,
                padding,
                in_channels,
                out_channels,
            } if kernel == 0
                || stride == 0
                || in_channels == 0
                || out_channels == 0
                || height + 2 * padding < kernel
                || width + 2 * padding < kernel =>
            {
                Err(CimError::shape(format!("layer {}: degenerate convolution", self.name)))
            }
            _ => Ok(()),
        }
    }

    /// Output spatial size of a convolution (1x1 for FC).
    pub fn output_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::FullyConnected { .. } => (1, 1),
            LayerKind::Conv2d {
                height,
                width,
                kernel,
                stride,
                padding,
                ..
            } => (
                (height + 2 * padding - kernel) / stride + 1,
                (width + 2 * padding - kernel) / stride + 1,
            ),
        }
    }

    pub fn in_features(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    pub fn out_features(&self) -> usize {
        let (oh, ow) = self.output_hw();
        self.out_channels() * oh * ow
    }

    /// Weight matrix shape `(K, N)` after lowering.
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::FullyConnected { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels),
        }
    }
}

/// A layer reduced to one matmul.
#[derive(Debug, Clone, PartialEq)]
pub struct MatmulProblem {
    pub x: Tensor2<u8>,
    pub w: Tensor2<i8>,
}

/// Lowers a batch (`batch x in_features`) onto one matmul. Convolutions use
/// im2col with every sample's output positions stacked as rows.
pub fn lower_layer(spec: &LayerSpec, activations: &Tensor2<u8>, weights: &Tensor2<i8>) -> Result<MatmulProblem> {
    spec.validate()?;
    if activations.cols() != spec.in_features() {
        return Err(CimError::shape(format!(
            "layer {} expects {} input features, got {}",
            spec.name,
            spec.in_features(),
            activations.cols()
        )));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(CimError::shape(format!(
            "layer {} expects weights {:?}, got {:?}",
            spec.name,
            spec.weight_shape(),
            weights.shape()
        )));
    }
    let x = match spec.kind {
        LayerKind::FullyConnected { .. } => activations.clone(),
        LayerKind::Conv2d {
            in_channels,
            height,
            width,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (oh, ow) = spec.output_hw();
            let positions = oh * ow;
            let k_dim = in_channels * kernel * kernel;
            Tensor2::from_fn(activations.rows() * positions, k_dim, |row, k| {
                let (b, p) = (row / positions, row % positions);
                let (oy, ox) = (p / ow, p % ow);
                let (c, rem) = (k / (kernel * kernel), k % (kernel * kernel));
                let (ky, kx) = (rem / kernel, rem % kernel);
                let iy = (oy * stride + ky) as isize - padding as isize;
                let ix = (ox * stride + kx) as isize - padding as isize;
                if iy < 0 || ix < 0 || iy >= height as isize || ix >= width as isize {
                    0
                } else {
                    activations.get(b, c * height * width + iy as usize * width + ix as usize)
                }
            })
        }
    };
    Ok(MatmulProblem { x, w: weights.clone() })
}

/// Reshapes the matmul result of [`lower_layer`] to `batch x out_features`
/// (channel-major for convolutions).
pub fn assemble_output(spec: &LayerSpec, batch: usize, out: &Tensor2<i64>) -> Result<Tensor2<i64>> {
    let (oh, ow) = spec.output_hw();
    let positions = oh * ow;
    if out.shape() != (batch * positions, spec.out_channels()) {
        return Err(CimError::shape(format!(
            "layer {}: matmul result {:?} does not match batch {batch}",
            spec.name,
            out.shape()
        )));
    }
    if positions == 1 {
        return Ok(out.clone());
    }
    Ok(Tensor2::from_fn(batch, spec.out_features(), |b, f| {
        let (co, p) = (f / positions, f % positions);
        out.get(b * positions + p, co)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::exact_matmul;

    fn conv_spec(c_in: usize, c_out: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> LayerSpec {
        LayerSpec {
            name: "conv".into(),
            kind: LayerKind::Conv2d {
                in_channels: c_in,
                out_channels: c_out,
                height: h,
                width: w,
                kernel: k,
                stride: s,
                padding: p,
            },
            act_scale: 1.0,
            weight_scale: 1.0,
            relu: false,
        }
    }

    /// Nested-loop convolution over `[C, H, W]` inputs with `[C_out][C_in][k][k]` weights.
    #[allow(clippy::needless_range_loop)]
    fn direct_conv(
        x: &[u8],
        w: &[Vec<Vec<Vec<i8>>>],
        (c_in, h, wd): (usize, usize, usize),
        k: usize,
        s: usize,
        p: usize,
    ) -> Vec<i64> {
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Vec::new();
        for wc in w {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0i64;
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    let xv = x[c * h * wd + iy as usize * wd + ix as usize];
                                    acc += i64::from(xv) * i64::from(wc[c][ky][kx]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn lowered_weights(w: &[Vec<Vec<Vec<i8>>>], c_in: usize, k: usize) -> Tensor2<i8> {
        Tensor2::from_fn(c_in * k * k, w.len(), |row, co| {
            let (c, rem) = (row / (k * k), row % (k * k));
            w[co][c][rem / k][rem % k]
        })
    }

    #[test]
    fn conv3x3_matches_direct() {
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let (c_in, c_out, h, wd, k) = (2, 3, 5, 5, 3);
            let spec = conv_spec(c_in, c_out, h, wd, k, stride, pad);
            let batch = 2;
            let x = Tensor2::from_fn(batch, c_in * h * wd, |b, i| ((b * 7 + i * 5) % 16) as u8);
            let w: Vec<Vec<Vec<Vec<i8>>>> = (0..c_out)
                .map(|co| {
                    (0..c_in)
                        .map(|c| {
                            (0..k)
                                .map(|ky| {
                                    (0..k)
                                        .map(|kx| ((co * 31 + c * 17 + ky * 5 + kx * 3) % 255) as i8)
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let wl = lowered_weights(&w, c_in, k);
            let prob = lower_layer(&spec, &x, &wl).unwrap();
            assert_eq!(prob.x.cols(), 9 * c_in);
            let out = assemble_output(&spec, batch, &exact_matmul(&prob.x, &prob.w).unwrap()).unwrap();
            for b in 0..batch {
                let want = direct_conv(x.row(b), &w, (c_in, h, wd), k, stride, pad);
                assert_eq!(out.row(b), &want[..], "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn one_by_one_conv_is_fc() {
        let conv = conv_spec(16, 8, 1, 1, 1, 1, 0);
        let fc = LayerSpec {
            kind: LayerKind::FullyConnected { inputs: 16, outputs: 8 },
            ..conv.clone()
        };
        let x = Tensor2::from_fn(3, 16, |b, i| ((b + i) % 16) as u8);
        let w = Tensor2::from_fn(16, 8, |k, n| (k as i8 - n as i8) * 3);
        let a = lower_layer(&conv, &x, &w).unwrap();
        let b = lower_layer(&fc, &x, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fc_is_single_unpadded_tile() {
        let fc = LayerSpec {
            name: "fc".into(),
            kind: LayerKind::FullyConnected { inputs: 16, outputs: 8 },
            act_scale: 1.0,
            weight_scale: 1.0,
            relu: true,
        };
        let x = Tensor2::filled(1, 16, 3u8);
        let p = lower_layer(&fc, &x, &Tensor2::filled(16, 8, 1i8)).unwrap();
        assert_eq!((p.x.shape(), p.w.shape()), ((1, 16), (16, 8)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = conv_spec(2, 3, 5, 5, 3, 1, 0);
        let x = Tensor2::filled(1, 49, 1u8);
        assert!(lower_layer(&spec, &x, &Tensor2::filled(18, 3, 1i8)).is_err());
        let x = Tensor2::filled(1, 50, 1u8);
        assert!(lower_layer(&spec, &x, &Tensor2::filled(18, 4, 1i8)).is_err());
        assert!(lower_layer(
            &conv_spec(1, 1, 2, 2, 3, 1, 0),
            &Tensor2::filled(1, 4, 1u8),
            &Tensor2::filled(9, 1, 1i8)
        )
        .is_err());
    }
}
