//! Single-layer LSTM with a scalar linear head.
//!
//! Parameters live in one flat vector so the optimizer and the checkpoint
//! code can treat them uniformly:
//!
//! ```text
//! W      4H x D   input weights, gate blocks in order i, f, g, o
//! U      4H x H   recurrent weights, same gate order
//! b      4H       gate biases
//! w_out  H        head weights
//! b_out  1        head bias
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 4;
const GATES: usize = 4;

/// Where the ReLU sits relative to the output layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluPlacement {
    /// `relu(w_out . h_T + b_out)`; predictions are never negative.
    #[default]
    Output,
    /// `w_out . relu(h_T) + b_out`.
    Hidden,
}

impl ReluPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            ReluPlacement::Output => "output",
            ReluPlacement::Hidden => "hidden",
        }
    }
}

impl std::str::FromStr for ReluPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" => Ok(ReluPlacement::Output),
            "hidden" => Ok(ReluPlacement::Hidden),
            other => Err(Error::Invalid(format!("unknown relu placement `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    input: usize,
    hidden: usize,
    pub relu: ReluPlacement,
    pub params: Vec<f64>,
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    xs: Vec<Vec<f64>>,
    /// Post-activation gates per step, `[i | f | g | o]` each of length H.
    gates: Vec<Vec<f64>>,
    /// Cell states c_0 (zeros) .. c_T.
    cs: Vec<Vec<f64>>,
    /// Hidden states h_0 (zeros) .. h_T.
    hs: Vec<Vec<f64>>,
    /// Pre-activation of the ReLU.
    z: Vec<f64>,
    pub prediction: f64,
}

impl Cache {
    pub fn hidden_states(&self) -> &[Vec<f64>] {
        &self.hs
    }

    pub fn cell_states(&self) -> &[Vec<f64>] {
        &self.cs
    }

    /// Inputs to the ReLU: one value for [`ReluPlacement::Output`], H for
    /// [`ReluPlacement::Hidden`].
    pub fn relu_inputs(&self) -> &[f64] {
        &self.z
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn n_params(input: usize, hidden: usize) -> usize {
    GATES * hidden * input + GATES * hidden * hidden + GATES * hidden + hidden + 1
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize, relu: ReluPlacement) -> Self {
        assert!(input > 0 && hidden > 0, "empty LSTM");
        Lstm {
            input,
            hidden,
            relu,
            params: vec![0.0; n_params(input, hidden)],
        }
    }

    /// Every parameter uniform in `±1/sqrt(hidden)`.
    pub fn init_uniform(input: usize, hidden: usize, relu: ReluPlacement, rng: &mut impl Rng) -> Self {
        let mut m = Lstm::zeros(input, hidden, relu);
        let a = 1.0 / (hidden as f64).sqrt();
        for p in &mut m.params {
            *p = rng.gen_range(-a..a);
        }
        m
    }

    pub fn from_params(input: usize, hidden: usize, relu: ReluPlacement, params: Vec<f64>) -> Result<Self> {
        if params.len() != n_params(input, hidden) {
            return Err(Error::Invalid(format!(
                "expected {} parameters for input {input}, hidden {hidden}, got {}",
                n_params(input, hidden),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(Lstm {
            input,
            hidden,
            relu,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (d, h) = (self.input, self.hidden);
        let u = GATES * h * d;
        let b = u + GATES * h * h;
        let w_out = b + GATES * h;
        (u, b, w_out, w_out + h)
    }

    pub fn w(&self) -> &[f64] {
        &self.params[..self.offsets().0]
    }

    pub fn u(&self) -> &[f64] {
        let (u, b, _, _) = self.offsets();
        &self.params[u..b]
    }

    pub fn b(&self) -> &[f64] {
        let (_, b, w_out, _) = self.offsets();
        &self.params[b..w_out]
    }

    pub fn w_out(&self) -> &[f64] {
        let (_, _, w_out, b_out) = self.offsets();
        &self.params[w_out..b_out]
    }

    pub fn b_out(&self) -> f64 {
        self.params[self.offsets().3]
    }

    pub fn set_b_out(&mut self, v: f64) {
        let i = self.offsets().3;
        self.params[i] = v;
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<Cache> {
        let (d, h) = (self.input, self.hidden);
        if seq.is_empty() {
            return Err(Error::Invalid("empty input sequence".into()));
        }
        for x in seq {
            if x.len() != d {
                return Err(Error::Invalid(format!("input row has {} values, expected {d}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite input".into()));
            }
        }
        let (w, u, b, w_out, b_out) = (self.w(), self.u(), self.b(), self.w_out(), self.b_out());

        let mut cs = vec![vec![0.0; h]];
        let mut hs = vec![vec![0.0; h]];
        let mut gates = Vec::with_capacity(seq.len());
        for x in seq {
            let (h_prev, c_prev) = (hs.last().unwrap(), cs.last().unwrap());
            let mut a = b.to_vec();
            for (r, ar) in a.iter_mut().enumerate() {
                let wr = &w[r * d..(r + 1) * d];
                let ur = &u[r * h..(r + 1) * h];
                *ar += wr.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
                *ar += ur.iter().zip(h_prev).map(|(p, q)| p * q).sum::<f64>();
            }
            for (k, ak) in a.iter_mut().enumerate() {
                *ak = if k / h == 2 { ak.tanh() } else { sigmoid(*ak) };
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for j in 0..h {
                let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                c[j] = f * c_prev[j] + i * g;
                hn[j] = o * c[j].tanh();
            }
            gates.push(a);
            cs.push(c);
            hs.push(hn);
        }

        let h_t = hs.last().unwrap();
        let (z, prediction) = match self.relu {
            ReluPlacement::Output => {
                let z = w_out.iter().zip(h_t).map(|(p, q)| p * q).sum::<f64>() + b_out;
                (vec![z], relu(z))
            }
            ReluPlacement::Hidden => {
                let y = w_out.iter().zip(h_t).map(|(p, q)| p * relu(*q)).sum::<f64>() + b_out;
                (h_t.clone(), y)
            }
        };
        Ok(Cache {
            xs: seq.to_vec(),
            gates,
            cs,
            hs,
            z,
            prediction,
        })
    }

    pub fn predict(&self, seq: &[Vec<f64>]) -> Result<f64> {
        Ok(self.forward(seq)?.prediction)
    }

    /// Gradient of `(prediction - target)^2` with respect to every parameter.
    pub fn backward(&self, cache: &Cache, target: f64) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        self.accumulate_grads(cache, 2.0 * (cache.prediction - target), &mut grads);
        grads
    }

    /// Adds `dy * d(prediction)/d(params)` into `grads`.
    pub fn accumulate_grads(&self, cache: &Cache, dy: f64, grads: &mut [f64]) {
        let (d, h) = (self.input, self.hidden);
        let (u_off, b_off, w_out_off, b_out_off) = self.offsets();
        let u = self.u();
        let w_out = self.w_out();
        let t_len = cache.xs.len();
        let h_t = &cache.hs[t_len];

        let mut dh = vec![0.0; h];
        match self.relu {
            ReluPlacement::Output => {
                let dz = dy * relu_grad(cache.z[0]);
                if dz == 0.0 {
                    return;
                }
                for j in 0..h {
                    grads[w_out_off + j] += dz * h_t[j];
                    dh[j] = dz * w_out[j];
                }
                grads[b_out_off] += dz;
            }
            ReluPlacement::Hidden => {
                for j in 0..h {
                    grads[w_out_off + j] += dy * relu(h_t[j]);
                    dh[j] = dy * w_out[j] * relu_grad(h_t[j]);
                }
                grads[b_out_off] += dy;
            }
        }

        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; GATES * h];
        for t in (0..t_len).rev() {
            let a = &cache.gates[t];
            let (c, c_prev, h_prev, x) = (&cache.cs[t + 1], &cache.cs[t], &cache.hs[t], &cache.xs[t]);
            for j in 0..h {
                let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let tc = c[j].tanh();
                let d_o = dh[j] * tc;
                let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dc * g * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - g * g);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            for (r, &dar) in da.iter().enumerate() {
                if dar == 0.0 {
                    continue;
                }
                for (gw, xv) in grads[r * d..(r + 1) * d].iter_mut().zip(x) {
                    *gw += dar * xv;
                }
                for (gu, hv) in grads[u_off + r * h..u_off + (r + 1) * h].iter_mut().zip(h_prev) {
                    *gu += dar * hv;
                }
                grads[b_off + r] += dar;
            }
            for (k, dhk) in dh.iter_mut().enumerate() {
                *dhk = da.iter().enumerate().map(|(r, dar)| dar * u[r * h + k]).sum();
            }
        }
    }
}

pub fn squared_error(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

/// Mean squared error over `(prediction, target)` pairs.
pub fn mse(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, t)| squared_error(p, t)).sum::<f64>() / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut impl Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(n_params(19, 4), 389);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = Lstm::zeros(19, 4, ReluPlacement::Output);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=7 {
            assert_eq!(m.predict(&random_seq(&mut rng, t, 19)).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_unit_closed_form() {
        // D = 1, H = 1, T = 1: W = [wi, wf, wg, wo], U unused at t = 1
        let (x, wi, wf, wg, wo, bi, bg, w_out, b_out) = (0.5, 0.4, -0.3, 0.8, 1.2, 0.1, -0.2, 2.0, 0.5);
        let mut params = vec![wi, wf, wg, wo, 0.3, 0.3, 0.3, 0.3, bi, 0.0, bg, 0.0, w_out, b_out];
        let m = Lstm::from_params(1, 1, ReluPlacement::Output, params.clone()).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let c = s(wi * x + bi) * (wg * x + bg).tanh();
        let h = s(wo * x) * c.tanh();
        let expected = (w_out * h + b_out).max(0.0);
        assert!((m.predict(&[vec![x]]).unwrap() - expected).abs() < 1e-15);

        params[13] = -5.0;
        let dead = Lstm::from_params(1, 1, ReluPlacement::Output, params).unwrap();
        assert_eq!(dead.predict(&[vec![x]]).unwrap(), 0.0);
    }

    #[test]
    fn predictions_non_negative_and_states_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let m = Lstm::init_uniform(19, 4, ReluPlacement::Output, &mut rng);
            let t = rng.gen_range(1..=7);
            let seq: Vec<Vec<f64>> = (0..t).map(|_| (0..19).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
            let cache = m.forward(&seq).unwrap();
            assert!(cache.prediction >= 0.0);
            assert!(cache.hidden_states().iter().flatten().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = Lstm::zeros(2, 4, ReluPlacement::Output);
        assert!(m.forward(&[vec![0.0, f64::NAN]]).is_err());
        assert!(m.forward(&[]).is_err());
        assert!(m.forward(&[vec![0.0]]).is_err());
    }

    #[test]
    fn loss_values() {
        assert_eq!(squared_error(3.0, 3.0), 0.0);
        assert_eq!(squared_error(0.0, 3.0), 9.0);
        assert_eq!(mse(&[(0.0, 3.0), (3.0, 3.0)]), 4.5);
    }

    #[test]
    fn zero_residual_and_dead_relu_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Lstm::init_uniform(19, 4, ReluPlacement::Output, &mut rng);
        m.set_b_out(5.0);
        let seq = random_seq(&mut rng, 5, 19);
        let cache = m.forward(&seq).unwrap();
        assert!(m.backward(&cache, cache.prediction).iter().all(|g| *g == 0.0));

        m.set_b_out(-50.0);
        let cache = m.forward(&seq).unwrap();
        assert_eq!(cache.prediction, 0.0);
        assert!(m.backward(&cache, 10.0).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn forward_is_independent_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Lstm::init_uniform(19, 4, ReluPlacement::Output, &mut rng);
        let a = random_seq(&mut rng, 7, 19);
        let b = random_seq(&mut rng, 3, 19);
        let pa = m.predict(&a).unwrap();
        m.predict(&b).unwrap();
        assert_eq!(m.predict(&a).unwrap(), pa);
    }
}
