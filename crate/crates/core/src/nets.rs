//! The four learnable components: feature extractor, bidirectional LSTM
//! encoder, decoder and binary classifier.
//!
//! Parameters live in a [`ParameterSet`] of plain arrays. A training step
//! binds them to a [`Tape`] as trainable leaves ([`ParameterSet::bind`]) and
//! runs the differentiable forward pass through [`BoundParams`].
//! Evaluation uses the tape-free [`ParameterSet::embed`] and
//! [`ParameterSet::logit`].

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub d_in: usize,
    /// Width of the feature extractor output (and of the decoder output).
    pub embed_dim: usize,
    /// Hidden size of each LSTM direction.
    pub lstm_hidden: usize,
}

impl Architecture {
    pub const EMBED_DIM: usize = 256;
    pub const LSTM_HIDDEN: usize = 128;

    /// 256 tanh units, 128 LSTM units per direction.
    pub fn standard(d_in: usize) -> Self {
        Self {
            d_in,
            embed_dim: Self::EMBED_DIM,
            lstm_hidden: Self::LSTM_HIDDEN,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.lstm_hidden
    }
}

/// Weights of one LSTM direction. Gate blocks are stored side by side in
/// the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `[embed_dim x 4H]`
    pub w_input: Array2<f64>,
    /// `[H x 4H]`
    pub w_hidden: Array2<f64>,
    /// `[1 x 4H]`
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub arch: Architecture,
    /// `[d_in x embed_dim]`
    pub phi_w: Array2<f64>,
    /// `[1 x embed_dim]`
    pub phi_b: Array2<f64>,
    pub lstm_fwd: LstmDirection,
    pub lstm_bwd: LstmDirection,
    /// `[2H x embed_dim]`
    pub dec_w: Array2<f64>,
    /// `[1 x embed_dim]`
    pub dec_b: Array2<f64>,
    /// `[embed_dim x 1]`
    pub cls_w: Array2<f64>,
    /// `[1 x 1]`
    pub cls_b: Array2<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ParameterSet;

/// Names of all parameter arrays, in the order used by
/// [`ParameterSet::named`], checkpoints and the optimizer.
pub const PARAM_NAMES: [&str; 12] = [
    "phi.w",
    "phi.b",
    "lstm.fwd.w_input",
    "lstm.fwd.w_hidden",
    "lstm.fwd.bias",
    "lstm.bwd.w_input",
    "lstm.bwd.w_hidden",
    "lstm.bwd.bias",
    "decoder.w",
    "decoder.b",
    "classifier.w",
    "classifier.b",
];

/// True for arrays that belong to the classifier and use its learning rate.
pub fn is_classifier_param(name: &str) -> bool {
    name.starts_with("classifier.")
}

fn glorot(rng: &mut rng::Rng, fan_in: usize, fan_out: usize, shape: (usize, usize)) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).unwrap();
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

impl LstmDirection {
    fn init(rng: &mut rng::Rng, input: usize, hidden: usize) -> Self {
        // Each gate block is initialized as its own [input x H] matrix.
        let mut w_input = Array2::zeros((input, 4 * hidden));
        let mut w_hidden = Array2::zeros((hidden, 4 * hidden));
        for gate in 0..4 {
            let cols = ndarray::s![.., gate * hidden..(gate + 1) * hidden];
            w_input.slice_mut(cols).assign(&glorot(rng, input, hidden, (input, hidden)));
            w_hidden.slice_mut(cols).assign(&glorot(rng, hidden, hidden, (hidden, hidden)));
        }
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self { w_input, w_hidden, bias }
    }

    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Array2::zeros((input, 4 * hidden)),
            w_hidden: Array2::zeros((hidden, 4 * hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
        }
    }
}

impl ParameterSet {
    /// Standard-width parameters, Glorot-uniform weights, zero biases and
    /// forget-gate biases of 1. Deterministic in `seed`.
    pub fn init(seed: u64, d_in: usize) -> Result<Self> {
        Self::init_with(Architecture::standard(d_in), seed)
    }

    pub fn init_with(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::INIT_STREAM);
        let (e, h) = (arch.embed_dim, arch.lstm_hidden);
        Ok(Self {
            arch,
            phi_w: glorot(&mut rng, arch.d_in, e, (arch.d_in, e)),
            phi_b: Array2::zeros((1, e)),
            lstm_fwd: LstmDirection::init(&mut rng, e, h),
            lstm_bwd: LstmDirection::init(&mut rng, e, h),
            dec_w: glorot(&mut rng, 2 * h, e, (2 * h, e)),
            dec_b: Array2::zeros((1, e)),
            cls_w: glorot(&mut rng, e, 1, (e, 1)),
            cls_b: Array2::zeros((1, 1)),
        })
    }

    /// All-zero arrays with the layout of `arch`.
    pub fn zeros(arch: Architecture) -> Self {
        let (e, h) = (arch.embed_dim, arch.lstm_hidden);
        Self {
            arch,
            phi_w: Array2::zeros((arch.d_in, e)),
            phi_b: Array2::zeros((1, e)),
            lstm_fwd: LstmDirection::zeros(e, h),
            lstm_bwd: LstmDirection::zeros(e, h),
            dec_w: Array2::zeros((2 * h, e)),
            dec_b: Array2::zeros((1, e)),
            cls_w: Array2::zeros((e, 1)),
            cls_b: Array2::zeros((1, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn named(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let arrays = [
            &self.phi_w,
            &self.phi_b,
            &self.lstm_fwd.w_input,
            &self.lstm_fwd.w_hidden,
            &self.lstm_fwd.bias,
            &self.lstm_bwd.w_input,
            &self.lstm_bwd.w_hidden,
            &self.lstm_bwd.bias,
            &self.dec_w,
            &self.dec_b,
            &self.cls_w,
            &self.cls_b,
        ];
        PARAM_NAMES.iter().copied().zip(arrays).collect()
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let arrays = [
            &mut self.phi_w,
            &mut self.phi_b,
            &mut self.lstm_fwd.w_input,
            &mut self.lstm_fwd.w_hidden,
            &mut self.lstm_fwd.bias,
            &mut self.lstm_bwd.w_input,
            &mut self.lstm_bwd.w_hidden,
            &mut self.lstm_bwd.bias,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.cls_w,
            &mut self.cls_b,
        ];
        PARAM_NAMES.iter().copied().zip(arrays).collect()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    /// Registers every array as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<BoundParams<'t>> {
        let dir = |d: &LstmDirection| -> Result<BoundLstm<'t>> {
            Ok(BoundLstm {
                w_input: tape.param(d.w_input.clone())?,
                w_hidden: tape.param(d.w_hidden.clone())?,
                bias: tape.param(d.bias.clone())?,
            })
        };
        Ok(BoundParams {
            arch: self.arch,
            phi_w: tape.param(self.phi_w.clone())?,
            phi_b: tape.param(self.phi_b.clone())?,
            lstm_fwd: dir(&self.lstm_fwd)?,
            lstm_bwd: dir(&self.lstm_bwd)?,
            dec_w: tape.param(self.dec_w.clone())?,
            dec_b: tape.param(self.dec_b.clone())?,
            cls_w: tape.param(self.cls_w.clone())?,
            cls_b: tape.param(self.cls_b.clone())?,
        })
    }

    /// `tanh(x W + b)` without recording a tape.
    pub fn embed(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.arch.d_in {
            return Err(Error::Dimension {
                op: "feature_extract",
                left: (1, x.len()),
                right: self.phi_w.dim(),
            });
        }
        let x = ndarray::ArrayView1::from(x);
        let out = (x.dot(&self.phi_w) + self.phi_b.row(0)).mapv(f64::tanh);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Numeric("non-finite embedding".into()))
        }
    }

    /// Classifier logit of an embedding, without recording a tape.
    pub fn logit(&self, embedding: &Array1<f64>) -> f64 {
        embedding.dot(&self.cls_w.column(0)) + self.cls_b[[0, 0]]
    }

    /// Probability of the positive class for raw features `x`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let e = self.embed(x)?;
        Ok(crate::autodiff::scaled_sigmoid_f64(self.logit(&e), 1.0))
    }
}

impl Architecture {
    fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.embed_dim == 0 || self.lstm_hidden == 0 {
            return Err(Error::Invalid(format!("all layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub struct BoundLstm<'t> {
    pub w_input: Var<'t>,
    pub w_hidden: Var<'t>,
    pub bias: Var<'t>,
}

/// Parameters registered on a tape.
pub struct BoundParams<'t> {
    pub arch: Architecture,
    pub phi_w: Var<'t>,
    pub phi_b: Var<'t>,
    pub lstm_fwd: BoundLstm<'t>,
    pub lstm_bwd: BoundLstm<'t>,
    pub dec_w: Var<'t>,
    pub dec_b: Var<'t>,
    pub cls_w: Var<'t>,
    pub cls_b: Var<'t>,
}

impl<'t> BoundLstm<'t> {
    /// Runs the cell over `xs` from zero state; returns the final hidden state.
    fn run<'a>(&self, hidden: usize, xs: impl Iterator<Item = &'a Var<'t>>) -> Result<Option<Var<'t>>>
    where
        't: 'a,
    {
        let mut state: Option<(Var<'t>, Var<'t>)> = None;
        for x in xs {
            let mut gates = x.matmul(self.w_input)?.add(self.bias)?;
            if let Some((h, _)) = state {
                gates = gates.add(h.matmul(self.w_hidden)?)?;
            }
            let input = gates.slice_cols(0, hidden)?.sigmoid()?;
            let cell = gates.slice_cols(2 * hidden, hidden)?.tanh()?;
            let output = gates.slice_cols(3 * hidden, hidden)?.sigmoid()?;
            let mut c = input.mul(cell)?;
            if let Some((_, c_prev)) = state {
                let forget = gates.slice_cols(hidden, hidden)?.sigmoid()?;
                c = forget.mul(c_prev)?.add(c)?;
            }
            let h = output.mul(c.tanh()?)?;
            state = Some((h, c));
        }
        Ok(state.map(|(h, _)| h))
    }
}

impl<'t> BoundParams<'t> {
    /// `tanh(x W + b)` for one instance, as a `1 x embed_dim` row.
    pub fn feature_extract(&self, tape: &'t Tape, x: &[f64]) -> Result<Var<'t>> {
        if x.len() != self.arch.d_in {
            return Err(Error::Dimension {
                op: "feature_extract",
                left: (1, x.len()),
                right: (self.arch.d_in, self.arch.embed_dim),
            });
        }
        tape.row(x)?.matmul(self.phi_w)?.add(self.phi_b)?.tanh()
    }

    /// Final forward-direction state concatenated with the final
    /// backward-direction state (the one produced after reading position 1).
    pub fn lstm_encode(&self, seq: &[Var<'t>]) -> Result<Var<'t>> {
        if seq.is_empty() {
            return Err(Error::EmptySequence("lstm_encode"));
        }
        let h = self.arch.lstm_hidden;
        let fwd = self.lstm_fwd.run(h, seq.iter())?.expect("non-empty");
        let bwd = self.lstm_bwd.run(h, seq.iter().rev())?.expect("non-empty");
        fwd.concat_cols(bwd)
    }

    /// Affine decoder from the encoder output back to embedding space.
    pub fn decode(&self, h: Var<'t>) -> Result<Var<'t>> {
        h.matmul(self.dec_w)?.add(self.dec_b)
    }

    /// Scalar logit of an embedding.
    pub fn classify(&self, e: Var<'t>) -> Result<Var<'t>> {
        e.matmul(self.cls_w)?.add(self.cls_b)
    }

    pub fn vars(&self) -> Vec<(&'static str, Var<'t>)> {
        let vars = [
            self.phi_w,
            self.phi_b,
            self.lstm_fwd.w_input,
            self.lstm_fwd.w_hidden,
            self.lstm_fwd.bias,
            self.lstm_bwd.w_input,
            self.lstm_bwd.w_hidden,
            self.lstm_bwd.bias,
            self.dec_w,
            self.dec_b,
            self.cls_w,
            self.cls_b,
        ];
        PARAM_NAMES.iter().copied().zip(vars).collect()
    }

    /// Collects leaf gradients after a backward pass; arrays that received
    /// no gradient are zero.
    pub fn gradients(&self) -> Gradients {
        let mut out = ParameterSet::zeros(self.arch);
        for ((_, var), (_, slot)) in self.vars().into_iter().zip(out.named_mut()) {
            if let Some(g) = var.grad() {
                *slot = g;
            }
        }
        out
    }
}

/// Binary cross-entropy of a scalar logit against `label` in {0, 1}.
pub fn binary_cross_entropy<'t>(logit: Var<'t>, label: u8) -> Result<Var<'t>> {
    // -ln(1 - sigmoid(z)) = -ln(sigmoid(-z))
    let z = if label == 1 { logit } else { logit.neg()? };
    z.sigmoid()?.ln()?.neg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn tiny() -> Architecture {
        Architecture { d_in: 3, embed_dim: 4, lstm_hidden: 2 }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = ParameterSet::init(7, 4).unwrap();
        let b = ParameterSet::init(7, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.phi_w.dim(), (4, 256));
        assert_eq!(a.lstm_fwd.w_input.dim(), (256, 512));
        assert_eq!(a.lstm_fwd.w_hidden.dim(), (128, 512));
        assert_eq!(a.dec_w.dim(), (256, 256));
        assert_eq!(a.cls_w.dim(), (256, 1));
        assert_ne!(a, ParameterSet::init(8, 4).unwrap());
        assert!(ParameterSet::init(0, 0).is_err());
    }

    #[test]
    fn init_biases_and_bounds() {
        let p = ParameterSet::init(3, 16).unwrap();
        assert!(p.phi_b.iter().all(|&b| b == 0.0));
        let h = 128;
        for (k, b) in p.lstm_fwd.bias.iter().enumerate() {
            let expected = if (h..2 * h).contains(&k) { 1.0 } else { 0.0 };
            assert_eq!(*b, expected);
        }
        let bound = (6.0f64 / (16.0 + 256.0)).sqrt();
        assert!(p.phi_w.iter().all(|w| w.abs() <= bound));
        let gate_bound = (6.0f64 / (256.0 + 128.0)).sqrt();
        assert!(p.lstm_bwd.w_input.iter().all(|w| w.abs() <= gate_bound));
    }

    #[test]
    fn init_mean_is_near_zero() {
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..10 {
            let p = ParameterSet::init(seed, 16).unwrap();
            total += p.phi_w.sum();
            count += p.phi_w.len();
        }
        let mean = total / count as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn feature_extract_zero_and_range() {
        let mut p = ParameterSet::zeros(tiny());
        assert_eq!(p.embed(&[1.0, 2.0, 3.0]).unwrap(), Array1::<f64>::zeros(4));
        p = ParameterSet::init_with(tiny(), 1).unwrap();
        let e = p.embed(&[5.0, -7.0, 2.0]).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1.0));
        p.phi_w.mapv_inplace(|w| w * 100.0);
        let e = p.embed(&[5.0, -7.0, 2.0]).unwrap();
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert!(p.embed(&[1.0]).is_err());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let p = ParameterSet::init(11, 5).unwrap();
        let x = [0.3, -1.2, 0.8, 0.0, 2.0];
        let tape = Tape::new();
        let bp = p.bind(&tape).unwrap();
        let e = bp.feature_extract(&tape, &x).unwrap();
        let plain = p.embed(&x).unwrap();
        let taped = e.value().row(0).to_owned();
        assert!(taped.iter().zip(&plain).all(|(a, b)| (a - b).abs() < 1e-14));
        let logit = bp.classify(e).unwrap().item();
        assert!((logit - p.logit(&plain)).abs() < 1e-12);
    }

    #[test]
    fn feature_extract_gradient() {
        let p = ParameterSet::init_with(tiny(), 2).unwrap();
        let x = [0.5, -0.4, 1.1];
        let f = |w: &Array2<f64>| -> f64 {
            let mut q = p.clone();
            q.phi_w = w.clone();
            q.embed(&x).unwrap().mapv(|v| v * v).sum()
        };
        let tape = Tape::new();
        let bp = p.bind(&tape).unwrap();
        let e = bp.feature_extract(&tape, &x).unwrap();
        let sq = e.mul(e).unwrap().sum().unwrap();
        tape.backward(sq).unwrap();
        let numeric = numeric_grad(&p.phi_w, 1e-5, f);
        assert!(max_rel_err(&bp.phi_w.grad().unwrap(), &numeric) < 1e-4);
    }

    fn encode(p: &ParameterSet, seq: &[Vec<f64>]) -> Array2<f64> {
        let tape = Tape::new();
        let bp = p.bind(&tape).unwrap();
        let vars: Vec<_> = seq.iter().map(|v| tape.row(v).unwrap()).collect();
        let out = bp.lstm_encode(&vars).unwrap();
        let v = out.value().clone();
        v
    }

    #[test]
    fn lstm_output_width_and_empty_error() {
        let p = ParameterSet::init(1, 2).unwrap();
        for len in 1..4 {
            let seq: Vec<Vec<f64>> = (0..len).map(|i| vec![0.01 * i as f64; 256]).collect();
            assert_eq!(encode(&p, &seq).dim(), (1, 256));
        }
        let tape = Tape::new();
        let bp = p.bind(&tape).unwrap();
        assert!(matches!(bp.lstm_encode(&[]), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn lstm_single_step_halves_match_with_tied_weights() {
        let mut p = ParameterSet::init_with(tiny(), 4).unwrap();
        p.lstm_bwd = p.lstm_fwd.clone();
        let out = encode(&p, &[vec![0.2, -0.3, 0.5, 0.9]]);
        assert_eq!(out.slice(ndarray::s![.., ..2]), out.slice(ndarray::s![.., 2..]));
    }

    #[test]
    fn lstm_reversal_swaps_halves_with_tied_weights() {
        let mut p = ParameterSet::init_with(tiny(), 5).unwrap();
        p.lstm_bwd = p.lstm_fwd.clone();
        let seq = vec![
            vec![0.2, -0.3, 0.5, 0.9],
            vec![-0.7, 0.1, 0.0, 0.4],
            vec![0.6, 0.6, -0.2, -0.1],
        ];
        let mut rev = seq.clone();
        rev.reverse();
        let a = encode(&p, &seq);
        let b = encode(&p, &rev);
        assert_eq!(a.slice(ndarray::s![.., ..2]), b.slice(ndarray::s![.., 2..]));
        assert_eq!(a.slice(ndarray::s![.., 2..]), b.slice(ndarray::s![.., ..2]));
        assert_ne!(a, b);
    }

    #[test]
    fn lstm_gradient_length_four() {
        let p = ParameterSet::init_with(tiny(), 6).unwrap();
        let mut rng = rng::Rng::seed_from_u64(3);
        let seq: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_simple_fn((1, 4), || rng.random_range(-1.0..1.0)))
            .collect();
        let target = array![[0.3, -0.1, 0.2, 0.5]];
        let loss = |q: &ParameterSet, seq: &[Array2<f64>]| -> (f64, Vec<Array2<f64>>, ParameterSet) {
            let tape = Tape::new();
            let bp = q.bind(&tape).unwrap();
            let xs: Vec<_> = seq.iter().map(|s| tape.param(s.clone()).unwrap()).collect();
            let h = bp.lstm_encode(&xs).unwrap();
            let out = bp.decode(h).unwrap();
            let l = out.norm_diff(tape.constant(target.clone()).unwrap()).unwrap();
            tape.backward(l).unwrap();
            (l.item(), xs.iter().map(|x| x.grad().unwrap()).collect(), bp.gradients())
        };
        let (_, xgrads, pgrads) = loss(&p, &seq);
        for (k, x) in seq.iter().enumerate() {
            let numeric = numeric_grad(x, 1e-5, |probe| {
                let mut s = seq.clone();
                s[k] = probe.clone();
                loss(&p, &s).0
            });
            assert!(max_rel_err(&xgrads[k], &numeric) < 1e-4);
        }
        for (idx, (name, analytic)) in pgrads.named().into_iter().enumerate() {
            if name.starts_with("phi") || name.starts_with("classifier") {
                continue;
            }
            let orig = p.named()[idx].1.clone();
            let numeric = numeric_grad(&orig, 1e-5, |probe| {
                let mut q = p.clone();
                *q.named_mut()[idx].1 = probe.clone();
                loss(&q, &seq).0
            });
            let err = max_rel_err(analytic, &numeric);
            assert!(err < 1e-4, "{name}: {err:e}");
        }
    }

    #[test]
    fn decode_zero_and_identity() {
        let arch = Architecture { d_in: 2, embed_dim: 4, lstm_hidden: 2 };
        let mut p = ParameterSet::zeros(arch);
        let tape = Tape::new();
        let h = tape.row(&[0.1, -0.2, 0.3, 0.4]).unwrap();
        {
            let bp = p.bind(&tape).unwrap();
            assert!(bp.decode(h).unwrap().value().iter().all(|&v| v == 0.0));
        }
        p.dec_w = Array2::eye(4);
        let bp = p.bind(&tape).unwrap();
        assert_eq!(*bp.decode(h).unwrap().value(), *h.value());
    }

    #[test]
    fn decode_gradient() {
        let arch = Architecture { d_in: 2, embed_dim: 3, lstm_hidden: 2 };
        let p = ParameterSet::init_with(arch, 9).unwrap();
        let h = array![[0.4, -0.6, 0.2, 0.9]];
        let target = array![[1.0, 0.5, -0.5]];
        let f = |w: &Array2<f64>| {
            let out = h.dot(w) + &p.dec_b;
            (&out - &target).mapv(|v| v * v).sum().sqrt()
        };
        let tape = Tape::new();
        let bp = p.bind(&tape).unwrap();
        let out = bp.decode(tape.constant(h.clone()).unwrap()).unwrap();
        let l = out.norm_diff(tape.constant(target.clone()).unwrap()).unwrap();
        tape.backward(l).unwrap();
        let numeric = numeric_grad(&p.dec_w, 1e-5, f);
        assert!(max_rel_err(&bp.dec_w.grad().unwrap(), &numeric) < 1e-4);
    }

    #[test]
    fn classify_zero_and_sign_flip() {
        let arch = Architecture { d_in: 2, embed_dim: 3, lstm_hidden: 1 };
        let mut p = ParameterSet::zeros(arch);
        let e = array![0.3, -0.2, 0.5];
        assert_eq!(p.logit(&e), 0.0);
        assert_eq!(p.predict_proba(&[1.0, 1.0]).unwrap(), 0.5);
        p.cls_w = array![[1.0], [2.0], [-0.5]];
        let l = p.logit(&e);
        p.cls_w.mapv_inplace(|w| -w);
        assert_eq!(p.logit(&e), -l);
        assert_ne!(l, 0.0);
    }

    #[test]
    fn bce_gradient() {
        for label in [0u8, 1] {
            let z = array![[0.7]];
            let f = |v: &Array2<f64>| {
                let tape = Tape::new();
                binary_cross_entropy(tape.constant(v.clone()).unwrap(), label).unwrap().item()
            };
            let tape = Tape::new();
            let zv = tape.param(z.clone()).unwrap();
            let l = binary_cross_entropy(zv, label).unwrap();
            tape.backward(l).unwrap();
            let numeric = numeric_grad(&z, 1e-5, f);
            let analytic = zv.grad().unwrap()[[0, 0]];
            assert!((analytic - numeric[[0, 0]]).abs() < 1e-6);
            // d/dz = sigmoid(z) - y
            let s = 1.0 / (1.0 + (-0.7f64).exp());
            assert!((analytic - (s - label as f64)).abs() < 1e-12);
        }
        let tape = Tape::new();
        let l = binary_cross_entropy(tape.scalar(0.0).unwrap(), 1).unwrap();
        assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
