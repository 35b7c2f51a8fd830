//! Differentiable building blocks: recurrent passes, convolution with global
//! max pooling, additive attention, capsule routing, dropout and the output
//! heads. Each function appends nodes to a [`Tape`].

use rand::Rng;

use super::tape::{Mat, Tape, Var};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Input projection `x·W_x + b` and recurrent `h·W_h` for the four LSTM
/// gates, stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

impl LstmWeights {
    pub fn from_prefix(tape: &mut Tape, prefix: &str) -> Self {
        LstmWeights {
            w_x: tape.param(&format!("{prefix}.w_x")),
            w_h: tape.param(&format!("{prefix}.w_h")),
            b: tape.param(&format!("{prefix}.b")),
        }
    }
}

/// GRU weights: `w_x` projects the input for update, reset and candidate;
/// `u_zr` is recurrent for update and reset, `u_h` for the candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_x: Var,
    pub u_zr: Var,
    pub u_h: Var,
    pub b: Var,
}

impl GruWeights {
    pub fn from_prefix(tape: &mut Tape, prefix: &str) -> Self {
        GruWeights {
            w_x: tape.param(&format!("{prefix}.w_x")),
            u_zr: tape.param(&format!("{prefix}.u_zr")),
            u_h: tape.param(&format!("{prefix}.u_h")),
            b: tape.param(&format!("{prefix}.b")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnnPass {
    /// Hidden state per timestep, in time order regardless of direction.
    pub states: Vec<Var>,
    /// State after the last step taken.
    pub last: Var,
}

fn check_input(tape: &Tape, seq: Var, w_x: Var, gates: usize, w_h: Var) -> Result<usize, NnError> {
    let (t, d) = tape.shape(seq);
    let (wd, wg) = tape.shape(w_x);
    let (hh, hg) = tape.shape(w_h);
    if t == 0 {
        return Err(NnError::Shape("empty sequence".into()));
    }
    if d != wd || wg != gates * hh || hg % hh != 0 {
        return Err(NnError::Shape(format!(
            "input {t}x{d} against input weights {wd}x{wg} and recurrent weights {hh}x{hg}"
        )));
    }
    Ok(hh)
}

fn time_order(len: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    }
}

pub fn lstm_pass(tape: &mut Tape, seq: Var, w: &LstmWeights, reverse: bool) -> Result<RnnPass, NnError> {
    let h_dim = check_input(tape, seq, w.w_x, 4, w.w_h)?;
    let len = tape.shape(seq).0;
    let xw = tape.matmul(seq, w.w_x);
    let xw = tape.add_row(xw, w.b);
    let mut h = tape.zeros(1, h_dim);
    let mut c = tape.zeros(1, h_dim);
    let mut states = vec![h; len];
    for t in time_order(len, reverse) {
        let xt = tape.slice_rows(xw, t, 1);
        let hw = tape.matmul(h, w.w_h);
        let gates = tape.add(xt, hw);
        let i = tape.slice_cols(gates, 0, h_dim);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h_dim, h_dim);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h_dim, h_dim);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h_dim, h_dim);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c);
        let write = tape.mul(i, g);
        c = tape.add(keep, write);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
        states[t] = h;
    }
    Ok(RnnPass { states, last: h })
}

pub fn gru_pass(tape: &mut Tape, seq: Var, w: &GruWeights, reverse: bool) -> Result<RnnPass, NnError> {
    let h_dim = check_input(tape, seq, w.w_x, 3, w.u_h)?;
    if tape.shape(w.u_zr) != (h_dim, 2 * h_dim) {
        return Err(NnError::Shape(format!("update/reset weights {:?}", tape.shape(w.u_zr))));
    }
    let len = tape.shape(seq).0;
    let xw = tape.matmul(seq, w.w_x);
    let xw = tape.add_row(xw, w.b);
    let mut h = tape.zeros(1, h_dim);
    let mut states = vec![h; len];
    for t in time_order(len, reverse) {
        let xt = tape.slice_rows(xw, t, 1);
        let x_zr = tape.slice_cols(xt, 0, 2 * h_dim);
        let x_h = tape.slice_cols(xt, 2 * h_dim, h_dim);
        let h_zr = tape.matmul(h, w.u_zr);
        let zr = tape.add(x_zr, h_zr);
        let zr = tape.sigmoid(zr);
        let z = tape.slice_cols(zr, 0, h_dim);
        let r = tape.slice_cols(zr, h_dim, h_dim);
        let rh = tape.mul(r, h);
        let rh_u = tape.matmul(rh, w.u_h);
        let cand = tape.add(x_h, rh_u);
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let keep = tape.mul(keep, h);
        let write = tape.mul(z, cand);
        h = tape.add(keep, write);
        states[t] = h;
    }
    Ok(RnnPass { states, last: h })
}

fn bidirectional(tape: &mut Tape, fw: RnnPass, bw: RnnPass) -> Var {
    let f = tape.concat_rows(&fw.states);
    let b = tape.concat_rows(&bw.states);
    tape.concat_cols(&[f, b])
}

/// `T x d` to `T x 2H`: forward and backward LSTM states side by side.
pub fn bilstm_forward(tape: &mut Tape, seq: Var, fw: &LstmWeights, bw: &LstmWeights) -> Result<Var, NnError> {
    let f = lstm_pass(tape, seq, fw, false)?;
    let b = lstm_pass(tape, seq, bw, true)?;
    Ok(bidirectional(tape, f, b))
}

pub fn bigru_forward(tape: &mut Tape, seq: Var, fw: &GruWeights, bw: &GruWeights) -> Result<Var, NnError> {
    let f = gru_pass(tape, seq, fw, false)?;
    let b = gru_pass(tape, seq, bw, true)?;
    Ok(bidirectional(tape, f, b))
}

/// Valid 1-D convolution over time followed by a global max over time.
/// `kernel` is `(width * C) x F`, row block `k` weighting timestep offset `k`.
pub fn conv_maxpool(tape: &mut Tape, seq: Var, kernel: Var, bias: Var, width: usize) -> Result<Var, NnError> {
    let (t, c) = tape.shape(seq);
    if t < width {
        return Err(NnError::TooShort { len: t, width });
    }
    if tape.shape(kernel).0 != width * c {
        return Err(NnError::Shape(format!("kernel {:?} for width {width} over {c} channels", tape.shape(kernel))));
    }
    let windows = tape.unfold(seq, width);
    let conv = tape.matmul(windows, kernel);
    let conv = tape.add_row(conv, bias);
    Ok(tape.max_rows(conv))
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub pooled: Var,
    pub weights: Var,
}

/// `u_i = tanh(W h_i + b)`, `alpha = softmax(u_i · u_w)`, output `sum alpha_i h_i`.
pub fn attention_pool(tape: &mut Tape, seq: Var, w: Var, b: Var, context: Var) -> Attention {
    let proj = tape.matmul(seq, w);
    let proj = tape.add_row(proj, b);
    let u = tape.tanh(proj);
    let scores = tape.matmul(u, context);
    let scores = tape.transpose(scores);
    let weights = tape.softmax_rows(scores);
    let pooled = tape.matmul(weights, seq);
    Attention { pooled, weights }
}

/// Final forward state joined with the final backward state of a
/// character-level BiLSTM, `1 x 2H_c`.
pub fn char_bilstm_word_repr(
    tape: &mut Tape,
    char_ids: &[usize],
    char_embedding: &str,
    fw: &LstmWeights,
    bw: &LstmWeights,
) -> Result<Var, NnError> {
    if char_ids.is_empty() {
        return Err(NnError::Shape("word has no characters".into()));
    }
    let chars = tape.gather(char_embedding, char_ids);
    let f = lstm_pass(tape, chars, fw, false)?;
    let b = lstm_pass(tape, chars, bw, true)?;
    Ok(tape.concat_cols(&[f.last, b.last]))
}

/// `v = |s|^2 / (1 + |s|^2) * s / |s|`, with `squash(0) = 0`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let scale = n2.sqrt() / (1.0 + n2);
    s.iter().map(|x| x * scale).collect()
}

#[derive(Debug, Clone)]
pub struct CapsuleOut {
    /// `J x D` output capsules.
    pub capsules: Var,
    /// Coupling coefficients `N x J` used at each routing iteration.
    pub couplings: Vec<Var>,
}

/// Dynamic routing from `N` input vectors to `num_caps` output capsules of
/// size `caps_dim`. The transform `weight` (`d_in x num_caps*caps_dim`) is
/// shared across input positions, since `N` varies with tweet length.
pub fn capsule_layer(
    tape: &mut Tape,
    inputs: Var,
    weight: Var,
    num_caps: usize,
    caps_dim: usize,
    iters: usize,
) -> Result<CapsuleOut, NnError> {
    let (n, d_in) = tape.shape(inputs);
    if tape.shape(weight) != (d_in, num_caps * caps_dim) {
        return Err(NnError::Shape(format!(
            "capsule transform {:?}, expected {d_in}x{}",
            tape.shape(weight),
            num_caps * caps_dim
        )));
    }
    if iters == 0 || n == 0 {
        return Err(NnError::Shape("routing needs at least one iteration and one input".into()));
    }
    let u_hat = tape.matmul(inputs, weight);
    let predictions: Vec<Var> = (0..num_caps).map(|j| tape.slice_cols(u_hat, j * caps_dim, caps_dim)).collect();
    let mut logits = tape.zeros(n, num_caps);
    let mut couplings = Vec::with_capacity(iters);
    let mut capsules = logits;
    for it in 0..iters {
        let c = tape.softmax_rows(logits);
        couplings.push(c);
        let mut weighted = Vec::with_capacity(num_caps);
        for (j, &pred) in predictions.iter().enumerate() {
            let cj = tape.slice_cols(c, j, 1);
            let cj = tape.transpose(cj);
            weighted.push(tape.matmul(cj, pred));
        }
        let s = tape.concat_rows(&weighted);
        capsules = tape.squash_rows(s);
        if it + 1 < iters {
            let mut agreement = Vec::with_capacity(num_caps);
            for (j, &pred) in predictions.iter().enumerate() {
                let vj = tape.slice_rows(capsules, j, 1);
                let vj = tape.transpose(vj);
                agreement.push(tape.matmul(pred, vj));
            }
            let delta = tape.concat_cols(&agreement);
            logits = tape.add(logits, delta);
        }
    }
    Ok(CapsuleOut { capsules, couplings })
}

/// Zeroes whole channels (columns) with probability `rate`, scaling the
/// survivors by `1 / (1 - rate)`. Identity in eval mode.
pub fn spatial_dropout(tape: &mut Tape, seq: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Var {
    if mode == Mode::Eval || rate == 0.0 {
        return seq;
    }
    let cols = tape.shape(seq).1;
    let keep = 1.0 / (1.0 - rate);
    let mask = Mat::from_shape_fn((1, cols), |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    tape.mul_const(seq, mask)
}

/// Elementwise inverted dropout. Identity in eval mode.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Var {
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Mat::from_shape_fn(tape.shape(x), |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    tape.mul_const(x, mask)
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: Var,
    pub b: Var,
}

impl Dense {
    pub fn from_prefix(tape: &mut Tape, prefix: &str) -> Self {
        Dense {
            w: tape.param(&format!("{prefix}.w")),
            b: tape.param(&format!("{prefix}.b")),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.w);
        tape.add_row(y, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadsOut {
    pub sent_logits: Var,
    pub lang_logits: Option<Var>,
}

pub fn heads_forward(tape: &mut Tape, feat: Var, sent: &Dense, lang: Option<&Dense>) -> HeadsOut {
    HeadsOut {
        sent_logits: sent.forward(tape, feat),
        lang_logits: lang.map(|l| l.forward(tape, feat)),
    }
}

pub fn softmax_xent(tape: &mut Tape, logits: Var, gold: usize) -> Result<Var, NnError> {
    let (rows, k) = tape.shape(logits);
    if rows != 1 || k < 2 {
        return Err(NnError::Shape(format!("logits must be 1 x k with k >= 2, got {rows}x{k}")));
    }
    if gold >= k {
        return Err(NnError::ClassOutOfRange { gold, k });
    }
    Ok(tape.xent(logits, gold))
}

/// `L_sent + lambda * L_lang`.
pub fn mtl_loss(tape: &mut Tape, sent_loss: Var, lang_loss: Var, lambda: f64) -> Var {
    let weighted = tape.scale(lang_loss, lambda);
    tape.add(sent_loss, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamSet;
    use crate::nn::tape::sigmoid;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lstm_params(ps: &mut ParamSet, prefix: &str, w_x: Mat, w_h: Mat, b: Mat) {
        ps.insert(&format!("{prefix}.w_x"), w_x, true);
        ps.insert(&format!("{prefix}.w_h"), w_h, true);
        ps.insert(&format!("{prefix}.b"), b, true);
    }

    fn gru_params(ps: &mut ParamSet, prefix: &str, w_x: Mat, u_zr: Mat, u_h: Mat, b: Mat) {
        ps.insert(&format!("{prefix}.w_x"), w_x, true);
        ps.insert(&format!("{prefix}.u_zr"), u_zr, true);
        ps.insert(&format!("{prefix}.u_h"), u_h, true);
        ps.insert(&format!("{prefix}.b"), b, true);
    }

    #[test]
    fn bilstm_shape_and_zero_case() {
        let (d, h) = (3, 2);
        let mut ps = ParamSet::new();
        for p in ["fw", "bw"] {
            lstm_params(&mut ps, p, Mat::from_elem((d, 4 * h), 0.1), Mat::from_elem((h, 4 * h), -0.2), Mat::zeros((1, 4 * h)));
        }
        let mut t = Tape::new(&ps);
        let (fw, bw) = (LstmWeights::from_prefix(&mut t, "fw"), LstmWeights::from_prefix(&mut t, "bw"));
        let x = t.input(Mat::from_elem((5, d), 0.5));
        let out = bilstm_forward(&mut t, x, &fw, &bw).unwrap();
        assert_eq!(t.shape(out), (5, 2 * h));

        let mut zero = ParamSet::new();
        for p in ["fw", "bw"] {
            lstm_params(&mut zero, p, Mat::zeros((d, 4 * h)), Mat::zeros((h, 4 * h)), Mat::zeros((1, 4 * h)));
        }
        let mut t = Tape::new(&zero);
        let (fw, bw) = (LstmWeights::from_prefix(&mut t, "fw"), LstmWeights::from_prefix(&mut t, "bw"));
        let x = t.zeros(4, d);
        let out = bilstm_forward(&mut t, x, &fw, &bw).unwrap();
        assert!(t.value(out).iter().all(|&v| v == 0.0));

        let bad = t.zeros(4, d + 1);
        assert!(matches!(bilstm_forward(&mut t, bad, &fw, &bw), Err(NnError::Shape(_))));
    }

    #[test]
    fn lstm_scalar_cell_by_hand() {
        // gates i, f, g, o with scalar weights
        let (wx, wh, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.9], [0.0, 1.0, 0.1, -0.2]);
        let mut ps = ParamSet::new();
        lstm_params(&mut ps, "c", array![wx], array![wh], array![b]);
        let mut t = Tape::new(&ps);
        let w = LstmWeights::from_prefix(&mut t, "c");
        let x = t.input(array![[1.5], [-0.7]]);
        let pass = lstm_pass(&mut t, x, &w, false).unwrap();

        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expect = vec![];
        for xt in [1.5, -0.7] {
            let pre = |k: usize| wx[k] * xt + wh[k] * h + b[k];
            let (i, f, g, o) = (sigmoid(pre(0)), sigmoid(pre(1)), pre(2).tanh(), sigmoid(pre(3)));
            c = f * c + i * g;
            h = o * c.tanh();
            expect.push(h);
        }
        for (s, e) in pass.states.iter().zip(&expect) {
            assert!((t.scalar(*s) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_zero_and_scalar_by_hand() {
        let mut zero = ParamSet::new();
        for p in ["fw", "bw"] {
            gru_params(&mut zero, p, Mat::zeros((2, 9)), Mat::zeros((3, 6)), Mat::zeros((3, 3)), Mat::zeros((1, 9)));
        }
        let mut t = Tape::new(&zero);
        let (fw, bw) = (GruWeights::from_prefix(&mut t, "fw"), GruWeights::from_prefix(&mut t, "bw"));
        let x = t.zeros(4, 2);
        let out = bigru_forward(&mut t, x, &fw, &bw).unwrap();
        assert_eq!(t.shape(out), (4, 6));
        assert!(t.value(out).iter().all(|&v| v == 0.0));

        let (wz, wr, wh) = (0.7, -0.4, 1.1);
        let (uz, ur, uh) = (0.3, 0.5, -0.8);
        let (bz, br, bh) = (0.1, 0.0, -0.1);
        let mut ps = ParamSet::new();
        gru_params(&mut ps, "g", array![[wz, wr, wh]], array![[uz, ur]], array![[uh]], array![[bz, br, bh]]);
        let mut t = Tape::new(&ps);
        let w = GruWeights::from_prefix(&mut t, "g");
        let x = t.input(array![[0.9], [-1.3]]);
        let pass = gru_pass(&mut t, x, &w, false).unwrap();
        let mut h = 0.0f64;
        for (step, xt) in [0.9, -1.3].into_iter().enumerate() {
            let z = sigmoid(wz * xt + uz * h + bz);
            let r = sigmoid(wr * xt + ur * h + br);
            let cand = (wh * xt + uh * (r * h) + bh).tanh();
            h = (1.0 - z) * h + z * cand;
            assert!((t.scalar(pass.states[step]) - h).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_maxpool_cases() {
        let mut ps = ParamSet::new();
        // width 1, identity over two channels
        ps.insert("k", array![[1.0, 0.0], [0.0, 1.0]], true);
        ps.insert("b", array![[0.0, 0.0]], true);
        ps.insert("kz", Mat::from_elem((4, 3), 0.7), true);
        ps.insert("bz", array![[0.5, -1.0, 2.0]], true);
        let mut t = Tape::new(&ps);
        let (k, b) = (t.param("k"), t.param("b"));
        let x = t.input(array![[1.0, -3.0], [4.0, -1.0], [2.0, -2.0]]);
        let out = conv_maxpool(&mut t, x, k, b, 1).unwrap();
        assert_eq!(t.value(out), &array![[4.0, -1.0]]);

        let (kz, bz) = (t.param("kz"), t.param("bz"));
        let zeros = t.zeros(5, 2);
        let out = conv_maxpool(&mut t, zeros, kz, bz, 2).unwrap();
        assert_eq!(t.value(out), &array![[0.5, -1.0, 2.0]]);
        assert_eq!(t.shape(out).1, 3);

        let short = t.zeros(1, 2);
        assert!(matches!(conv_maxpool(&mut t, short, kz, bz, 2), Err(NnError::TooShort { len: 1, width: 2 })));
    }

    #[test]
    fn attention_cases() {
        let mut ps = ParamSet::new();
        ps.insert("w", array![[0.5, -1.0], [2.0, 0.3]], true);
        ps.insert("b", array![[0.1, 0.2]], true);
        ps.insert("u", array![[1.0], [-0.5]], true);
        ps.insert("w1", array![[2.0]], true);
        ps.insert("b1", array![[0.0]], true);
        ps.insert("u1", array![[1.5]], true);
        let mut t = Tape::new(&ps);
        let (w, b, u) = (t.param("w"), t.param("b"), t.param("u"));
        let same = t.input(array![[0.4, -0.2], [0.4, -0.2], [0.4, -0.2]]);
        let a = attention_pool(&mut t, same, w, b, u);
        for &v in t.value(a.weights).iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((t.value(a.pooled) - &array![[0.4, -0.2]]).iter().all(|d| d.abs() < 1e-15));

        let one = t.input(array![[1.0, 2.0]]);
        let a = attention_pool(&mut t, one, w, b, u);
        assert_eq!(t.value(a.weights), &array![[1.0]]);

        // T = 2, one-dimensional states
        let (w1, b1, u1) = (t.param("w1"), t.param("b1"), t.param("u1"));
        let h = t.input(array![[0.5], [-1.0]]);
        let a = attention_pool(&mut t, h, w1, b1, u1);
        let s0 = 1.5 * (2.0f64 * 0.5).tanh();
        let s1 = 1.5 * (-2.0f64).tanh();
        let a0 = s0.exp() / (s0.exp() + s1.exp());
        let alpha = t.value(a.weights);
        assert!((alpha[[0, 0]] - a0).abs() < 1e-15);
        assert!((alpha.sum() - 1.0).abs() < 1e-12);
        assert!((t.scalar(a.pooled) - (a0 * 0.5 - (1.0 - a0))).abs() < 1e-15);
    }

    #[test]
    fn char_repr_cases() {
        let mut ps = ParamSet::new();
        ps.insert("chars", array![[0.0], [0.6], [-0.9]], true);
        let (wx, wh, b) = (array![[0.5, -0.3, 0.8, 0.2]], array![[0.1, 0.4, -0.6, 0.9]], array![[0.0, 1.0, 0.1, -0.2]]);
        lstm_params(&mut ps, "fw", wx.clone(), wh.clone(), b.clone());
        lstm_params(&mut ps, "bw", wx, wh, b);
        let mut t = Tape::new(&ps);
        let (fw, bw) = (LstmWeights::from_prefix(&mut t, "fw"), LstmWeights::from_prefix(&mut t, "bw"));
        let r = char_bilstm_word_repr(&mut t, &[1], "chars", &fw, &bw).unwrap();
        let v = t.value(r);
        assert_eq!(v.dim(), (1, 2));
        assert_eq!(v[[0, 0]], v[[0, 1]]);

        // two characters: forward reads (c1, c2), backward reads (c2, c1)
        let r = char_bilstm_word_repr(&mut t, &[1, 2], "chars", &fw, &bw).unwrap();
        let cell = |xs: [f64; 2]| {
            let (wx, wh, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.9], [0.0, 1.0, 0.1, -0.2]);
            let (mut h, mut c) = (0.0f64, 0.0f64);
            for xt in xs {
                let pre = |k: usize| wx[k] * xt + wh[k] * h + b[k];
                let (i, f, g, o) = (sigmoid(pre(0)), sigmoid(pre(1)), pre(2).tanh(), sigmoid(pre(3)));
                c = f * c + i * g;
                h = o * c.tanh();
            }
            h
        };
        let v = t.value(r);
        assert!((v[[0, 0]] - cell([0.6, -0.9])).abs() < 1e-15);
        assert!((v[[0, 1]] - cell([-0.9, 0.6])).abs() < 1e-15);

        let mut zero = ParamSet::new();
        zero.insert("chars", Mat::zeros((3, 2)), true);
        lstm_params(&mut zero, "fw", Mat::zeros((2, 8)), Mat::zeros((2, 8)), Mat::zeros((1, 8)));
        lstm_params(&mut zero, "bw", Mat::zeros((2, 8)), Mat::zeros((2, 8)), Mat::zeros((1, 8)));
        let mut t = Tape::new(&zero);
        let (fw, bw) = (LstmWeights::from_prefix(&mut t, "fw"), LstmWeights::from_prefix(&mut t, "bw"));
        let r = char_bilstm_word_repr(&mut t, &[1, 2, 0], "chars", &fw, &bw).unwrap();
        assert!(t.value(r).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn squash_values() {
        assert_eq!(squash(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = squash(&[0.6, 0.8]);
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] - 0.4).abs() < 1e-15);
        let v = squash(&[100.0, 0.0]);
        assert!((v[0] - 0.99990001).abs() < 1e-8);
    }

    #[test]
    fn capsule_routing_cases() {
        let mut ps = ParamSet::new();
        ps.insert("w", array![[1.0, -2.0], [0.5, 1.0]], true);
        ps.insert("w1", array![[0.3, -0.4, 0.2]], true);
        let mut t = Tape::new(&ps);
        let w = t.param("w");
        // N = 2 inputs of dim 2, J = 2 capsules of dim 1, one iteration
        let u = t.input(array![[1.0, 2.0], [-1.0, 0.5]]);
        let out = capsule_layer(&mut t, u, w, 2, 1, 1).unwrap();
        assert!(t.value(out.couplings[0]).iter().all(|&c| c == 0.5));
        // u_hat: input0 -> (2.0, 0.0), input1 -> (-0.75, 2.5)
        let s = [0.5 * (2.0 - 0.75), 0.5 * (0.0 + 2.5)];
        let v = t.value(out.capsules);
        assert!((v[[0, 0]] - squash(&[s[0]])[0]).abs() < 1e-15);
        assert!((v[[1, 0]] - squash(&[s[1]])[0]).abs() < 1e-15);

        // second iteration by hand
        let out2 = capsule_layer(&mut t, u, w, 2, 1, 2).unwrap();
        let v1 = [squash(&[s[0]])[0], squash(&[s[1]])[0]];
        let uh = [[2.0, 0.0], [-0.75, 2.5]];
        let mut s2 = [0.0; 2];
        for (i, row) in uh.iter().enumerate() {
            let logits = [row[0] * v1[0], row[1] * v1[1]];
            let z = logits[0].exp() + logits[1].exp();
            let c = [logits[0].exp() / z, logits[1].exp() / z];
            let got = t.value(out2.couplings[1]);
            assert!((got[[i, 0]] - c[0]).abs() < 1e-15);
            s2[0] += c[0] * row[0];
            s2[1] += c[1] * row[1];
        }
        let v2 = t.value(out2.capsules);
        assert!((v2[[0, 0]] - squash(&[s2[0]])[0]).abs() < 1e-15);
        assert!((v2[[1, 0]] - squash(&[s2[1]])[0]).abs() < 1e-15);

        // single capsule: couplings are 1 at every iteration
        let w1 = t.param("w1");
        let x = t.input(array![[1.0], [2.0], [3.0]]);
        let out = capsule_layer(&mut t, x, w1, 1, 3, 3).unwrap();
        for c in &out.couplings {
            assert!(t.value(*c).iter().all(|&v| v == 1.0));
        }
        assert!(matches!(capsule_layer(&mut t, x, w, 2, 1, 1), Err(NnError::Shape(_))));
    }

    #[test]
    fn dropout_modes() {
        let ps = ParamSet::new();
        let mut t = Tape::new(&ps);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = t.input(Mat::from_shape_fn((6, 8), |(i, j)| 1.0 + (i * 8 + j) as f64));
        assert_eq!(spatial_dropout(&mut t, x, 0.0, Mode::Train, &mut rng), x);
        assert_eq!(spatial_dropout(&mut t, x, 0.35, Mode::Eval, &mut rng), x);
        assert_eq!(dropout(&mut t, x, 0.5, Mode::Eval, &mut rng), x);
        let y = spatial_dropout(&mut t, x, 0.5, Mode::Train, &mut rng);
        let (xv, yv) = (t.value(x), t.value(y));
        let mut dropped = 0;
        for c in 0..8 {
            let col = yv.column(c);
            if col.iter().all(|&v| v == 0.0) {
                dropped += 1;
            } else {
                for r in 0..6 {
                    assert_eq!(col[r], xv[[r, c]] * 2.0);
                }
            }
        }
        assert!(dropped > 0 && dropped < 8);
    }

    #[test]
    fn heads_and_losses() {
        let mut ps = ParamSet::new();
        ps.insert("s.w", array![[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]], true);
        ps.insert("s.b", array![[0.0, 0.0, 0.0]], true);
        ps.insert("l.w", array![[1.0, -1.0], [0.0, 3.0]], true);
        ps.insert("l.b", array![[0.1, 0.2]], true);
        let mut t = Tape::new(&ps);
        let (s, l) = (Dense::from_prefix(&mut t, "s"), Dense::from_prefix(&mut t, "l"));
        let zero = t.zeros(1, 2);
        let out = heads_forward(&mut t, zero, &s, None);
        assert!(out.lang_logits.is_none());
        assert_eq!(t.value(out.sent_logits), &array![[0.0, 0.0, 0.0]]);
        let feat = t.input(array![[2.0, -1.0]]);
        let out = heads_forward(&mut t, feat, &s, Some(&l));
        assert_eq!(t.value(out.sent_logits), &array![[1.5, -2.0, -2.0]]);
        assert_eq!(t.value(out.lang_logits.unwrap()), &array![[2.1, -4.8]]);

        let uniform = t.zeros(1, 3);
        let loss = softmax_xent(&mut t, uniform, 1).unwrap();
        assert!((t.scalar(loss) - 1.0986123).abs() < 1e-7);
        assert!(matches!(softmax_xent(&mut t, uniform, 3), Err(NnError::ClassOutOfRange { gold: 3, k: 3 })));

        let a = t.input(array![[1.0986]]);
        let b = t.input(array![[0.6]]);
        let m = mtl_loss(&mut t, a, b, 0.5);
        assert!((t.scalar(m) - 1.3986).abs() < 1e-12);
        let m0 = mtl_loss(&mut t, a, b, 0.0);
        assert_eq!(t.scalar(m0), 1.0986);
        let (x, y) = (t.input(array![[0.5]]), t.input(array![[0.25]]));
        let m1 = mtl_loss(&mut t, x, y, 1.0);
        assert_eq!(t.scalar(m1), 0.75);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn squash_is_bounded_and_odd(s in prop::collection::vec(-1e3f64..1e3, 1..8)) {
                let v = squash(&s);
                let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(n < 1.0);
                let neg: Vec<f64> = s.iter().map(|x| -x).collect();
                let vn = squash(&neg);
                for (a, b) in v.iter().zip(&vn) {
                    prop_assert_eq!(*a, -*b);
                }
            }

            #[test]
            fn routing_couplings_normalize(seed in any::<u64>(), n in 1usize..6, j in 1usize..5, iters in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ps = ParamSet::new();
                ps.insert("w", crate::nn::params::uniform(&mut rng, 3, j * 2, 1.0), true);
                let mut t = Tape::new(&ps);
                let w = t.param("w");
                let x = t.input(crate::nn::params::uniform(&mut rng, n, 3, 2.0));
                let out = capsule_layer(&mut t, x, w, j, 2, iters).unwrap();
                for c in &out.couplings {
                    for row in t.value(*c).rows() {
                        prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                    }
                }
                for row in t.value(out.capsules).rows() {
                    prop_assert!(row.dot(&row).sqrt() < 1.0);
                }
            }

            #[test]
            fn attention_weights_normalize(seed in any::<u64>(), len in 1usize..9) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ps = ParamSet::new();
                ps.insert("w", crate::nn::params::uniform(&mut rng, 4, 3, 1.0), true);
                ps.insert("b", crate::nn::params::uniform(&mut rng, 1, 3, 1.0), true);
                ps.insert("u", crate::nn::params::uniform(&mut rng, 3, 1, 3.0), true);
                let mut t = Tape::new(&ps);
                let (w, b, u) = (t.param("w"), t.param("b"), t.param("u"));
                let x = t.input(crate::nn::params::uniform(&mut rng, len, 4, 5.0));
                let a = attention_pool(&mut t, x, w, b, u);
                prop_assert!((t.value(a.weights).sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
