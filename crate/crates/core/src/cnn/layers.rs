//! Layer kernels: forward evaluation and reverse-mode gradients.

use super::tensor::{Shape, Tensor};

/// Gradients of one parameterised layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(weights: usize, bias: usize) -> Self {
        Self {
            weights: vec![0.0; weights],
            bias: vec![0.0; bias],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= k);
    }
}

/// Square-kernel convolution, stride 1, zero padding `kernel / 2` on each
/// side so spatial dims are preserved. Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output rows `y` for which `y + offset` lies inside `0..len`.
#[inline]
fn valid_range(len: usize, offset: isize) -> std::ops::Range<usize> {
    let lo = ((-offset).max(0) as usize).min(len);
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    lo..hi.max(lo)
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let Shape::Image { height: h, width: w, .. } = input.shape else {
            unreachable!("conv input validated by the architecture")
        };
        let pad = (self.kernel / 2) as isize;
        let plane = h * w;
        let mut out = vec![0.0; self.out_channels * plane];
        for o in 0..self.out_channels {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input.data[i * plane..(i + 1) * plane];
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let wv = self.weights[self.weight_index(o, i, ky, kx)];
                        let xs = valid_range(w, dx);
                        if xs.is_empty() {
                            continue;
                        }
                        for y in valid_range(h, dy) {
                            let sy = (y as isize + dy) as usize;
                            let s0 = (sy * w) as isize + dx;
                            let d_row = &mut dst[y * w + xs.start..y * w + xs.end];
                            let s_row = &src[(s0 + xs.start as isize) as usize..(s0 + xs.end as isize) as usize];
                            for (d, s) in d_row.iter_mut().zip(s_row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(Shape::image(self.out_channels, h, w), out)
    }

    /// Parameter gradients and, when `want_input` is set, the input gradient.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor, want_input: bool) -> (Option<Tensor>, ParamGrad) {
        let Shape::Image { height: h, width: w, .. } = input.shape else {
            unreachable!("conv input validated by the architecture")
        };
        let pad = (self.kernel / 2) as isize;
        let plane = h * w;
        let mut grad = ParamGrad::zeros(self.weights.len(), self.bias.len());
        let mut grad_in = want_input.then(|| vec![0.0; input.data.len()]);
        for o in 0..self.out_channels {
            let g = &grad_out.data[o * plane..(o + 1) * plane];
            grad.bias[o] = g.iter().sum();
            for i in 0..self.in_channels {
                let src = &input.data[i * plane..(i + 1) * plane];
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let wi = self.weight_index(o, i, ky, kx);
                        let wv = self.weights[wi];
                        let xs = valid_range(w, dx);
                        if xs.is_empty() {
                            continue;
                        }
                        let mut acc = 0.0;
                        for y in valid_range(h, dy) {
                            let sy = (y as isize + dy) as usize;
                            let s_start = (sy as isize * w as isize + dx + xs.start as isize) as usize;
                            let len = xs.end - xs.start;
                            let g_row = &g[y * w + xs.start..y * w + xs.end];
                            let s_row = &src[s_start..s_start + len];
                            acc += g_row.iter().zip(s_row).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_mut() {
                                let gi_row = &mut gi[i * plane + s_start..i * plane + s_start + len];
                                for (d, gv) in gi_row.iter_mut().zip(g_row) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        grad.weights[wi] += acc;
                    }
                }
            }
        }
        (grad_in.map(|d| Tensor::new(input.shape, d)), grad)
    }
}

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let out = (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(&input.data).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Tensor::new(Shape::Flat(self.outputs), out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor, want_input: bool) -> (Option<Tensor>, ParamGrad) {
        let mut grad = ParamGrad::zeros(self.weights.len(), self.outputs);
        let mut grad_in = want_input.then(|| vec![0.0; self.inputs]);
        for (o, &g) in grad_out.data.iter().enumerate() {
            grad.bias[o] = g;
            if g == 0.0 {
                continue;
            }
            let row = o * self.inputs..(o + 1) * self.inputs;
            for (gw, x) in grad.weights[row.clone()].iter_mut().zip(&input.data) {
                *gw = g * x;
            }
            if let Some(gi) = grad_in.as_mut() {
                for (d, wv) in gi.iter_mut().zip(&self.weights[row]) {
                    *d += g * wv;
                }
            }
        }
        (grad_in.map(|d| Tensor::new(input.shape, d)), grad)
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::new(input.shape, input.data.iter().map(|&v| v.max(0.0)).collect())
}

/// Subgradient 0 at the kink.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape, data)
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and, per output, the flat index of the winning
/// input (first maximum in row-major order).
pub fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let Shape::Image { channels, height, width } = input.shape else {
        unreachable!("pool input validated by the architecture")
    };
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = base + (2 * y + dy) * width + 2 * x + dx;
                    if input.data[k] > input.data[best] {
                        best = k;
                    }
                }
                out.push(input.data[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::new(Shape::image(channels, oh, ow), out), arg)
}

pub fn maxpool_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad = Tensor::zeros(input_shape);
    for (&k, &g) in argmax.iter().zip(&grad_out.data) {
        grad.data[k] += g;
    }
    grad
}
