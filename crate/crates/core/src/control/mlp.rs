//! Fully connected tanh networks with exact input-derivative channels.
//!
//! Alongside the activations H, the forward pass carries ∂H/∂x, ∂H/∂y and the
//! pure second derivatives through every layer:
//!
//! ```text
//! Z = H W + b,   Zx = Hx W,   Zxx = Hxx W
//! A = tanh Z,    Ax = A' Zx,  Axx = A'' Zx² + A' Zxx
//! A' = 1 − A²,   A'' = −2 A A'
//! ```
//!
//! so PDE residuals stay on the tape and can be differentiated with respect
//! to the weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdError, Shape, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    /// `weights[l]` is row-major `sizes[l] × sizes[l+1]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Uniform(−1/√fan_in, 1/√fan_in) weights and biases from a seeded stream.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            weights.push((0..sizes[l] * sizes[l + 1]).map(|_| rng.gen_range(-bound..bound)).collect());
            biases.push((0..sizes[l + 1]).map(|_| rng.gen_range(-bound..bound)).collect());
        }
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let weights = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l] * sizes[l + 1]]).collect();
        let biases = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l + 1]]).collect();
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Layer-by-layer `[W0, b0, W1, b1, …]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            b.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }
}

/// Plain forward pass on a row-major batch; returns `batch × output_dim`.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let d0 = params.input_dim();
    assert_eq!(x.len() % d0, 0, "input length is not a multiple of the input width");
    let batch = x.len() / d0;
    let mut h = x.to_vec();
    let last = params.n_layers() - 1;
    for l in 0..=last {
        let (din, dout) = (params.sizes[l], params.sizes[l + 1]);
        let (w, b) = (&params.weights[l], &params.biases[l]);
        let mut z = vec![0.0; batch * dout];
        for r in 0..batch {
            let zr = &mut z[r * dout..(r + 1) * dout];
            zr.copy_from_slice(b);
            for k in 0..din {
                let hk = h[r * din + k];
                for (zj, wj) in zr.iter_mut().zip(&w[k * dout..(k + 1) * dout]) {
                    *zj += hk * wj;
                }
            }
        }
        if l < last {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = z;
    }
    h
}

/// Tape handles for the network parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Records the parameters as leaves (`trainable`) or constants.
    pub fn record(tape: &mut Tape, params: &MlpParams, trainable: bool) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..params.n_layers() {
            let shape = Shape::Matrix(params.sizes[l], params.sizes[l + 1]);
            let (w, b) = (params.weights[l].clone(), params.biases[l].clone());
            let bs = Shape::Vector(b.len());
            if trainable {
                weights.push(tape.leaf(w, shape).expect("consistent shape"));
                biases.push(tape.leaf(b, bs).expect("consistent shape"));
            } else {
                weights.push(tape.constant(w, shape).expect("consistent shape"));
                biases.push(tape.constant(b, bs).expect("consistent shape"));
            }
        }
        Self { weights, biases }
    }

    /// Gradient in the flat `[W0, b0, …]` layout.
    pub fn flat_gradient(&self, grads: &crate::autodiff::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(grads.wrt(*w));
            out.extend(grads.wrt(*b));
        }
        out
    }
}

/// Value and optional derivative channels of a batch (`None` means identically zero).
#[derive(Debug, Clone, Copy)]
pub struct Channels {
    pub value: Var,
    pub dx: Option<Var>,
    pub dy: Option<Var>,
    pub dxx: Option<Var>,
    pub dyy: Option<Var>,
}

/// Affine map of each input coordinate from `[lo, hi]` onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn scale(&self, d: usize) -> f64 {
        2.0 / (self.hi[d] - self.lo[d])
    }

    pub fn apply(&self, pts: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pts.len() * self.lo.len());
        for p in pts {
            for (d, &x) in p.iter().enumerate() {
                out.push(self.scale(d) * (x - self.lo[d]) - 1.0);
            }
        }
        out
    }

    /// Input channels for `pts`; `first` adds ∂/∂x and ∂/∂y (2-D inputs only).
    pub fn channels(&self, tape: &mut Tape, pts: &[Vec<f64>], first: bool) -> Channels {
        let dim = self.lo.len();
        let b = pts.len();
        let value = tape.constant(self.apply(pts), Shape::Matrix(b, dim)).expect("consistent shape");
        let mut ch = Channels { value, dx: None, dy: None, dxx: None, dyy: None };
        if first {
            assert_eq!(dim, 2, "derivative channels need a 2-D input");
            let mut gx = vec![0.0; b * 2];
            let mut gy = vec![0.0; b * 2];
            for r in 0..b {
                gx[2 * r] = self.scale(0);
                gy[2 * r + 1] = self.scale(1);
            }
            ch.dx = Some(tape.constant(gx, Shape::Matrix(b, 2)).expect("consistent shape"));
            ch.dy = Some(tape.constant(gy, Shape::Matrix(b, 2)).expect("consistent shape"));
        }
        ch
    }
}

fn mm(tape: &mut Tape, h: Option<Var>, w: Var) -> Result<Option<Var>, AdError> {
    h.map(|h| tape.matmul(h, w)).transpose()
}

/// Records the network on `input`; `second` requests ∂²/∂x² and ∂²/∂y² channels.
pub fn record_forward(tape: &mut Tape, vars: &MlpVars, input: Channels, second: bool) -> Result<Channels, AdError> {
    let mut h = input;
    let last = vars.weights.len() - 1;
    for l in 0..=last {
        let w = vars.weights[l];
        let zv = tape.matmul(h.value, w)?;
        let z = tape.add_row_broadcast(zv, vars.biases[l])?;
        let zx = mm(tape, h.dx, w)?;
        let zy = mm(tape, h.dy, w)?;
        let zxx = mm(tape, h.dxx, w)?;
        let zyy = mm(tape, h.dyy, w)?;
        if l == last {
            return Ok(Channels { value: z, dx: zx, dy: zy, dxx: zxx, dyy: zyy });
        }
        let a = tape.tanh(z);
        if zx.is_none() && zy.is_none() {
            h = Channels { value: a, dx: None, dy: None, dxx: None, dyy: None };
            continue;
        }
        let a2 = tape.square(a);
        let na2 = tape.neg(a2);
        let d1 = tape.add_scalar(na2, 1.0);
        let d2 = if second {
            let t = tape.mul(a, d1)?;
            Some(tape.scale(t, -2.0))
        } else {
            None
        };
        let first = |tape: &mut Tape, zd: Option<Var>| zd.map(|zd| tape.mul(d1, zd)).transpose();
        let ax = first(tape, zx)?;
        let ay = first(tape, zy)?;
        let mut second_ch = |zd: Option<Var>, zdd: Option<Var>| -> Result<Option<Var>, AdError> {
            let (Some(d2), Some(zd)) = (d2, zd) else { return Ok(None) };
            let zd2 = tape.square(zd);
            let mut out = tape.mul(d2, zd2)?;
            if let Some(zdd) = zdd {
                let t = tape.mul(d1, zdd)?;
                out = tape.add(out, t)?;
            }
            Ok(Some(out))
        };
        let axx = second_ch(zx, zxx)?;
        let ayy = second_ch(zy, zyy)?;
        h = Channels { value: a, dx: ax, dy: ay, dxx: axx, dyy: ayy };
    }
    unreachable!("loop returns at the output layer")
}

/// Column `j` of a row-major `rows × cols` matrix var, optionally restricted to `rows_sel`.
pub fn column(tape: &mut Tape, m: Var, j: usize, rows_sel: Option<&[usize]>) -> Result<Var, AdError> {
    let (rows, cols) = match m.shape() {
        Shape::Matrix(r, c) => (r, c),
        s => return Err(AdError::Shape { op: "column", lhs: s, rhs: Shape::Scalar }),
    };
    let idx: Vec<usize> = match rows_sel {
        Some(sel) => sel.iter().map(|&r| r * cols + j).collect(),
        None => (0..rows).map(|r| r * cols + j).collect(),
    };
    tape.gather(m, std::sync::Arc::new(idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_point(params: &MlpParams, norm: &Normalizer, x: f64, y: f64) -> Vec<f64> {
        mlp_forward(params, &norm.apply(&[vec![x, y]]))
    }

    #[test]
    fn zero_weights_give_zero() {
        let p = MlpParams::zeros(&[2, 5, 5, 3]);
        assert!(mlp_forward(&p, &[0.3, -0.2, 0.9, 0.1]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut p = MlpParams::zeros(&[2, 1]);
        p.weights[0] = vec![2.0, -3.0];
        p.biases[0] = vec![0.5];
        assert_eq!(mlp_forward(&p, &[1.0, 1.0, 0.0, 2.0]), vec![-0.5, -5.5]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpParams::init(&[2, 30, 1], 7);
        let b = MlpParams::init(&[2, 30, 1], 7);
        assert_eq!(a, b);
        assert_ne!(a, MlpParams::init(&[2, 30, 1], 8));
        assert!(a.weights[1].iter().all(|w| w.abs() <= 1.0 / 30f64.sqrt()));
        assert_eq!(a.n_params(), 2 * 30 + 30 + 30 + 1);
    }

    #[test]
    fn flat_round_trip() {
        let a = MlpParams::init(&[1, 4, 2], 3);
        let mut b = MlpParams::zeros(&[1, 4, 2]);
        b.set_flat(&a.to_flat());
        assert_eq!(a, b);
    }

    #[test]
    fn tape_value_matches_plain_forward() {
        let p = MlpParams::init(&[2, 6, 6, 2], 1);
        let norm = Normalizer::new(vec![0.0, 0.0], vec![1.5, 1.0]);
        let pts = vec![vec![0.1, 0.2], vec![1.4, 0.9], vec![0.7, 0.5]];
        let mut t = Tape::new();
        let vars = MlpVars::record(&mut t, &p, false);
        let ch = norm.channels(&mut t, &pts, true);
        let out = record_forward(&mut t, &vars, ch, true).unwrap();
        let plain = mlp_forward(&p, &norm.apply(&pts));
        for (a, b) in t.value(out.value).iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_channels_match_finite_differences() {
        let p = MlpParams::init(&[2, 8, 8, 1], 11);
        let norm = Normalizer::new(vec![0.0, 0.0], vec![1.5, 1.0]);
        let pts = vec![vec![0.3, 0.4], vec![1.2, 0.1]];
        let mut t = Tape::new();
        let vars = MlpVars::record(&mut t, &p, false);
        let ch = norm.channels(&mut t, &pts, true);
        let out = record_forward(&mut t, &vars, ch, true).unwrap();
        let h = 1e-4;
        for (r, q) in pts.iter().enumerate() {
            let (x, y) = (q[0], q[1]);
            let f = |a: f64, b: f64| eval_point(&p, &norm, a, b)[0];
            let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
            let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
            assert!((t.value(out.dx.unwrap())[r] - fx).abs() < 1e-7);
            assert!((t.value(out.dy.unwrap())[r] - fy).abs() < 1e-7);
            assert!((t.value(out.dxx.unwrap())[r] - fxx).abs() < 1e-4);
            assert!((t.value(out.dyy.unwrap())[r] - fyy).abs() < 1e-4);
        }
    }

    #[test]
    fn parameter_gradient_of_laplacian_matches_fd() {
        let p = MlpParams::init(&[2, 5, 5, 1], 5);
        let norm = Normalizer::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let pts = vec![vec![0.3, 0.4], vec![0.8, 0.6], vec![0.1, 0.9]];
        let loss = |t: &mut Tape, params: &MlpParams, trainable: bool| {
            let vars = MlpVars::record(t, params, trainable);
            let ch = norm.channels(t, &pts, true);
            let out = record_forward(t, &vars, ch, true).unwrap();
            let lap = t.add(out.dxx.unwrap(), out.dyy.unwrap()).unwrap();
            let l = t.sumsq(lap);
            let v = t.sumsq(out.value);
            (vars, t.add(l, v).unwrap())
        };
        let mut t = Tape::new();
        let (vars, l) = loss(&mut t, &p, true);
        let g = vars.flat_gradient(&t.backward(l).unwrap());
        let flat = p.to_flat();
        let eval = |x: &[f64]| {
            let mut q = p.clone();
            q.set_flat(x);
            let mut t = Tape::new();
            let (_, l) = loss(&mut t, &q, false);
            Ok(t.scalar_value(l))
        };
        let rep = crate::autodiff::compare_with_fd(eval, &g, &flat, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{}", rep.max_rel_error);
    }
}
