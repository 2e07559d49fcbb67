//! Central finite-difference checks of the analytic gradients.
//!
//! Every check uses the probe loss `sum(c_i * out_i)` with random `c`, so the
//! upstream gradient is exactly `c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Conv2d, Dense};
use super::model::{Architecture, CnnModel};
use super::tensor::{Shape, Tensor};
use super::{Result, OUTPUTS};

/// Finite-difference step.
pub const STEP: f64 = 1e-4;

/// Outcome of one check.
#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes straddling a ReLU or pooling kink, where the loss is not
    /// differentiable.
    pub skipped: usize,
    pub worst: String,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let rel = rel_error(analytic, numeric);
        self.checked += 1;
        if self.checked == 1 || rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = format!("{}: analytic {analytic} vs numeric {numeric}", what());
        }
    }

    fn record_all(&mut self, analytic: &[f64], numeric: &[f64], what: &str) {
        assert_eq!(analytic.len(), numeric.len());
        for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            self.record(*a, *n, || format!("{what}[{k}]"));
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn probe(out: &Tensor, c: &[f64]) -> f64 {
    out.data.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn numeric_grad(params: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + STEP;
            let up = f(&p);
            p[k] = orig - STEP;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Convolution input, weight and bias gradients; the kernel size cycles
/// through 1, 3 and 5 with the seed.
pub fn check_conv(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout, k, h, w) = (2, 3, [1, 3, 5][seed as usize % 3], 5, 4);
    let mut conv = Conv2d::new(cin, cout, k);
    conv.weights = random_vec(&mut rng, conv.weights.len());
    conv.bias = random_vec(&mut rng, cout);
    let input = Tensor::new(Shape::image(cin, h, w), random_vec(&mut rng, cin * h * w));
    let c = random_vec(&mut rng, cout * h * w);
    let out = conv.forward(&input);
    let (gin, gp) = conv.backward(&input, &Tensor::new(out.shape, c.clone()), true);

    let mut report = GradCheck::default();
    let num = numeric_grad(&input.data, &mut |x| probe(&conv.forward(&Tensor::new(input.shape, x.to_vec())), &c));
    report.record_all(&gin.expect("input gradient requested").data, &num, "conv input");
    let num = numeric_grad(&conv.weights, &mut |v| {
        let mut cc = conv.clone();
        cc.weights = v.to_vec();
        probe(&cc.forward(&input), &c)
    });
    report.record_all(&gp.weights, &num, "conv weights");
    let num = numeric_grad(&conv.bias, &mut |v| {
        let mut cc = conv.clone();
        cc.bias = v.to_vec();
        probe(&cc.forward(&input), &c)
    });
    report.record_all(&gp.bias, &num, "conv bias");
    report
}

pub fn check_dense(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Dense::new(7, 4);
    d.weights = random_vec(&mut rng, 28);
    d.bias = random_vec(&mut rng, 4);
    let input = Tensor::new(Shape::Flat(7), random_vec(&mut rng, 7));
    let c = random_vec(&mut rng, 4);
    let (gin, gp) = d.backward(&input, &Tensor::new(Shape::Flat(4), c.clone()), true);

    let mut report = GradCheck::default();
    let num = numeric_grad(&input.data, &mut |x| probe(&d.forward(&Tensor::new(Shape::Flat(7), x.to_vec())), &c));
    report.record_all(&gin.expect("input gradient requested").data, &num, "dense input");
    let num = numeric_grad(&d.weights, &mut |v| {
        let mut dd = d.clone();
        dd.weights = v.to_vec();
        probe(&dd.forward(&input), &c)
    });
    report.record_all(&gp.weights, &num, "dense weights");
    let num = numeric_grad(&d.bias, &mut |v| {
        let mut dd = d.clone();
        dd.bias = v.to_vec();
        probe(&dd.forward(&input), &c)
    });
    report.record_all(&gp.bias, &num, "dense bias");
    report
}

/// ReLU and 2x2 max-pool input gradients. Inputs keep at least 0.01 away
/// from zero; pooling ties have probability zero.
pub fn check_relu_pool(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::image(2, 5, 6);
    let x: Vec<f64> = (0..shape.len())
        .map(|_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let input = Tensor::new(shape, x.clone());
    let mut report = GradCheck::default();

    let c = random_vec(&mut rng, shape.len());
    let g = layers::relu_backward(&input, &Tensor::new(shape, c.clone()));
    let num = numeric_grad(&x, &mut |v| probe(&layers::relu_forward(&Tensor::new(shape, v.to_vec())), &c));
    report.record_all(&g.data, &num, "relu");

    let (pooled, arg) = layers::maxpool_forward(&input);
    let cp = random_vec(&mut rng, pooled.data.len());
    let g = layers::maxpool_backward(shape, &arg, &Tensor::new(pooled.shape, cp.clone()));
    let num = numeric_grad(&x, &mut |v| probe(&layers::maxpool_forward(&Tensor::new(shape, v.to_vec())).0, &cp));
    report.record_all(&g.data, &num, "maxpool");
    report
}

/// Every parameter of a freshly initialised network with a random input.
/// Probes whose one-sided slopes disagree sit on a kink and are skipped.
pub fn check_network(arch: &Architecture, seed: u64) -> Result<GradCheck> {
    let model = CnnModel::new(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let x: Vec<f64> = (0..model.input_shape().len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let c: [f64; OUTPUTS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let loss = |m: &CnnModel| -> f64 { m.predict(&x).expect("input sized to model").iter().zip(&c).map(|(a, b)| a * b).sum() };

    let (_, cache) = model.forward(&x)?;
    let analytic: Vec<f64> = model.backward(&cache, &c)?.values().collect();
    let mut report = GradCheck::default();
    let mut probe_model = model.clone();
    let mut k = 0;
    for li in 0..model.layers().len() {
        let Some((w, b)) = model.layers()[li].params() else { continue };
        let nw = w.len();
        for j in 0..nw + b.len() {
            let orig = if j < nw { w[j] } else { b[j - nw] };
            let mut eval = |v: f64| {
                probe_model.update_params(|i, w, b| {
                    if i == li {
                        if j < nw {
                            w[j] = v
                        } else {
                            b[j - nw] = v
                        }
                    }
                });
                loss(&probe_model)
            };
            let up = eval(orig + STEP);
            let down = eval(orig - STEP);
            let centre = eval(orig);
            let (l, r) = ((centre - down) / STEP, (up - centre) / STEP);
            if (l - r).abs() <= 1e-6 * l.abs().max(r.abs()).max(1.0) {
                report.record(analytic[k], (up - down) / (2.0 * STEP), || format!("layer {li} param {j}"));
            } else {
                report.skipped += 1;
            }
            k += 1;
        }
    }
    assert_eq!(k, analytic.len(), "gradient count matches parameter count");
    Ok(report)
}
